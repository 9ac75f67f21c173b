import json
from pathlib import Path

import pytest

from cirforge.tokenizer import ClipTokenizer, load_vocabulary

FIXTURES = Path(__file__).parent / "fixtures"
CLIP_VOCAB = FIXTURES / "clip" / "vocab.json"
CLIP_MERGES = FIXTURES / "clip" / "merges.txt"
GOLDEN_CORPUS = FIXTURES / "clip" / "golden_corpus.json"
E2E = FIXTURES / "e2e"


@pytest.fixture(scope="session")
def clip_vocab():
    return load_vocabulary(CLIP_VOCAB, CLIP_MERGES)


@pytest.fixture(scope="session")
def clip_tokenizer(clip_vocab):
    return ClipTokenizer(clip_vocab)


@pytest.fixture(scope="session")
def golden_corpus():
    return json.loads(GOLDEN_CORPUS.read_text(encoding="utf-8"))


# Toy 30-token vocabulary over the alphabet a-f (plus 0/1): big enough to
# exercise merge ranking and the end-of-word marker, small enough to reason
# about by hand.
TOY_MERGES = [
    ("a", "b"),
    ("b", "c"),
    ("ab", "c"),
    ("b", "c</w>"),
    ("ab", "c</w>"),
    ("d", "e"),
    ("e", "f"),
    ("de", "f</w>"),
    ("d", "e</w>"),
    ("c", "d"),
    ("c", "d</w>"),
    ("abc", "d"),
]


def toy_vocab_tokens() -> list[str]:
    letters = list("abcdef01")
    tokens = letters + [f"{ch}</w>" for ch in letters]
    tokens += [a + b for a, b in TOY_MERGES]
    tokens += ["<|startoftext|>", "<|endoftext|>"]
    return tokens


@pytest.fixture()
def toy_vocab_files(tmp_path):
    vocab_path = tmp_path / "toy_vocab.json"
    merges_path = tmp_path / "toy_merges.txt"
    vocab_path.write_text(
        json.dumps({tok: i for i, tok in enumerate(toy_vocab_tokens())}), encoding="utf-8"
    )
    merges_path.write_text(
        "#version: 0.2\n" + "\n".join(f"{a} {b}" for a, b in TOY_MERGES) + "\n",
        encoding="utf-8",
    )
    return vocab_path, merges_path


@pytest.fixture()
def toy_vocab(toy_vocab_files):
    return load_vocabulary(*toy_vocab_files)


@pytest.fixture(scope="session")
def e2e_images(tmp_path_factory):
    """Tiny decodable PNGs for the bundled scene fixture's corpus."""
    from PIL import Image

    image_dir = tmp_path_factory.mktemp("e2e_images")
    for idx in range(20):
        img = Image.new("L", (8, 8), color=(idx * 12) % 255)
        img.putpixel((idx % 8, (idx * 3) % 8), 255)
        img.save(image_dir / f"img{idx:02d}.png")
    return image_dir
