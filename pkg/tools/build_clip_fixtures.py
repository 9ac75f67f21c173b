#!/usr/bin/env python3
"""Build the tokenizer test fixtures from the reference BPE merge table.

Inputs: the decompressed reference merge file (``bpe_simple_vocab_16e6.txt``
as shipped with the reference CLIP model; first line is a header, then one
merge per line).  Outputs, under tests/fixtures/clip/:

  vocab.json      token -> id map reconstructed by the reference recipe
                  (256 byte tokens, 256 byte+</w> tokens, one token per
                  merge, then the two sentinels) - 49,408 entries
  merges.txt      "#version: 0.2" header + the 48,894 ranked merges
  golden_corpus.json
                  [{"text": ..., "ids": [...]}] encoded with an independent
                  oracle: the HuggingFace fast CLIP tokenizer built from
                  these same files via transformers' slow->fast converter

Run scripts/cross_check_goldens.mjs afterwards to confirm the goldens
against a second independent oracle (the clip-bpe-js port).
"""

import argparse
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
FIXDIR = REPO / "tests" / "fixtures" / "clip"

NUM_MERGES = 49152 - 256 - 2  # 48,894: reference vocab budget minus byte tokens and sentinels


def bytes_to_unicode():
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


def build_vocab_files(raw_merges: Path) -> tuple[Path, Path]:
    lines = raw_merges.read_text(encoding="utf-8").split("\n")
    merges = [tuple(m.split()) for m in lines[1 : NUM_MERGES + 1]]
    assert len(merges) == NUM_MERGES and all(len(m) == 2 for m in merges)

    vocab = list(bytes_to_unicode().values())
    vocab = vocab + [v + "</w>" for v in vocab]
    for first, second in merges:
        vocab.append(first + second)
    vocab.extend(["<|startoftext|>", "<|endoftext|>"])
    assert len(vocab) == len(set(vocab)) == 49408, len(vocab)

    FIXDIR.mkdir(parents=True, exist_ok=True)
    vocab_path = FIXDIR / "vocab.json"
    merges_path = FIXDIR / "merges.txt"
    vocab_path.write_text(
        json.dumps({tok: i for i, tok in enumerate(vocab)}, ensure_ascii=False),
        encoding="utf-8",
    )
    merges_path.write_text(
        "#version: 0.2\n" + "\n".join(f"{a} {b}" for a, b in merges) + "\n",
        encoding="utf-8",
    )
    return vocab_path, merges_path


def golden_corpus() -> list[str]:
    """>=200 strings spanning ASCII, punctuation, numerals, emoji, CJK, scripts."""
    strings: list[str] = []

    strings += [
        "",
        "a",
        "a photo of a dog",
        "A photo of a DOG",
        "the quick brown fox jumps over the lazy dog",
        "hello world",
        "Hello, World!",
    ]

    # caption-flavoured sentences
    objects = [
        "lamp", "bed", "pillow", "curtain", "mirror", "nightstand", "rug",
        "armchair", "painting", "television", "ottoman", "headboard", "vase",
        "bookshelf", "chandelier", "wardrobe", "bench", "towel", "bathtub", "sink",
    ]
    colors = ["red", "navy blue", "beige", "dark green", "off-white", "golden", "turquoise", "charcoal"]
    verbs = ["Add", "Remove", "Replace", "Move", "Swap out", "Brighten", "Darken", "Rotate"]
    for i, obj in enumerate(objects):
        strings.append(f"{verbs[i % len(verbs)]} the {colors[i % len(colors)]} {obj} near the window.")
        strings.append(f"Make the {obj} {colors[(i + 3) % len(colors)]}, and add two more {obj}s.")

    # punctuation / symbols
    strings += [
        "wait... what?!",
        "item #42 @ $19.99 (50% off)",
        "C++ and C# and F90",
        "a/b testing -- results: +12.5%",
        'she said "hello" and left',
        "it's a don't-touch situation",
        "they're, we've, I'll, you'd, I'm, can't",
        "curly quotes: ‘single’ and “double”, em—dash, ellipsis…",
        "semicolons; colons: commas, periods. done",
        "parentheses (nested (deeply)) and [brackets] {braces}",
        "slashes / back\\slashes \\ pipes | tildes ~",
        "math: 3<5 and 7>2 and x=y^2",
        "e=mc^2 :: a*b+c-d",
        "~!@#$%^&*()_+`-=[]{}|;':\",./<>?",
        "hy-phen-at-ed words work-fine",
        "urls like https://example.com/path?q=1&x=2 appear",
        "email-ish text user.name@example-host.org here",
    ]

    # numerals incl. non-decimal-digit numerics
    strings += [
        "0 1 2 3 4 5 6 7 8 9 10 11 12",
        "version 2.7.18 released 2024-03-15",
        "pi is 3.14159265358979",
        "1,000,000 dollars",
        "fractions ½ ¼ ¾ and superscripts ² ³",
        "roman numeral Ⅻ on the clock",
        "phone +1 (555) 010-9988 ext. 42",
        "२८ devanagari digits",
    ]

    # emoji
    strings += [
        "smile \U0001f600 and thumbs up \U0001f44d",
        "thumbs with tone \U0001f44d\U0001f3fd",
        "family \U0001f468‍\U0001f469‍\U0001f467‍\U0001f466 emoji",
        "flag \U0001f1fa\U0001f1f8 and heart ❤️",
        "rocket \U0001f680 to the moon \U0001f315",
        "\U0001f408‍⬛ black cat zwj",
        "mixed \U0001f9e1\U0001f49b\U0001f49a text \U0001f52e done",
    ]

    # CJK and other scripts
    strings += [
        "你好世界",
        "这是一张酒店房间的照片",
        "日本語のテキストです",
        "カタカナとひらがなと漢字",
        "안녕하세요 세계",
        "한국어 문장입니다",
        "مرحبا بالعالم",
        "שלום עולם",
        "Санкт-Петербург",
        "γεια σου κόσμε",
        "สวัสดีชาวโลก",
        "नमस्ते दुनिया",
        "mixed 中文 and English と日本語 words",
    ]

    # accented latin (NFC)
    strings += [
        "café crème brûlée",
        "naïve résumé cliché",
        "Müller straße ångström",
        "São Paulo / Curiço / Reykjavík",
        "Łódź and Gdańsk",
    ]

    # exotic scripts likely to exercise byte fallback
    strings += [
        "\U0001d518\U0001d52b\U0001d526\U0001d520\U0001d52c\U0001d521\U0001d522 fraktur",
        "ᚠᚢᚦᚨᚱᚲ runes",
        "⌨ ⌛ ☠ dingbats",
    ]

    # whitespace handling
    strings += [
        "  leading and trailing  ",
        "tabs\tbetween\twords",
        "line\nbreaks\nand\r\ncarriage returns",
        "multiple     spaces      collapse",
        "nbsp separated words",
        "ideographic　space",
    ]

    # casing
    strings += [
        "ALL CAPS SENTENCE HERE",
        "MiXeD CaSe TeXt",
        "CamelCaseIdentifiersLikeThis",
        "SCREAMING_SNAKE_CASE_CONSTANT",
    ]

    # long strings
    lorem = (
        "lorem ipsum dolor sit amet consectetur adipiscing elit sed do eiusmod tempor "
        "incididunt ut labore et dolore magna aliqua ut enim ad minim veniam quis "
        "nostrud exercitation ullamco laboris nisi ut aliquip ex ea commodo consequat "
        "duis aute irure dolor in reprehenderit in voluptate velit esse cillum dolore "
        "eu fugiat nulla pariatur excepteur sint occaecat cupidatat non proident sunt "
        "in culpa qui officia deserunt mollit anim id est laborum "
    )
    strings.append((lorem * 6).strip())  # ~400 words, far past any 77-token budget
    strings.append("repeat " * 100)
    strings.append(" ".join(f"token{i}" for i in range(80)))

    # pseudo-random word soup, deterministic
    import random

    rnd = random.Random(20240315)
    wordbank = (
        objects + colors
        + ["room", "wall", "floor", "ceiling", "window", "door", "light", "shadow",
           "pattern", "texture", "fabric", "wooden", "metallic", "glass", "marble",
           "striped", "plaid", "floral", "modern", "vintage", "ornate", "minimal"]
    )
    while len(strings) < 230:
        n = rnd.randint(3, 14)
        strings.append(" ".join(rnd.choice(wordbank) for _ in range(n)))

    # dedupe preserving order
    seen = set()
    out = []
    for s in strings:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


class _TokenizerShim:
    """Duck-typed stand-in feeding the fixture files to CLIPConverter."""

    def __init__(self, vocab_path: Path, merges_path: Path):
        self.encoder = json.loads(vocab_path.read_text(encoding="utf-8"))
        merge_lines = merges_path.read_text(encoding="utf-8").splitlines()[1:]
        self.bpe_ranks = {tuple(m.split()): i for i, m in enumerate(merge_lines) if m}
        self.unk_token = "<|endoftext|>"
        self.bos_token = "<|startoftext|>"
        self.eos_token = "<|endoftext|>"
        self.bos_token_id = self.encoder[self.bos_token]
        self.eos_token_id = self.encoder[self.eos_token]


def encode_with_reference(vocab_path: Path, merges_path: Path, corpus: list[str]):
    from transformers.convert_slow_tokenizer import CLIPConverter

    shim = _TokenizerShim(vocab_path, merges_path)
    assert len(shim.encoder) == 49408
    fast = CLIPConverter(shim).converted()
    return [{"text": s, "ids": fast.encode(s).ids} for s in corpus]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("raw_merges", type=Path, help="decompressed reference merge file")
    args = ap.parse_args()

    vocab_path, merges_path = build_vocab_files(args.raw_merges)
    print(f"wrote {vocab_path} and {merges_path}")

    corpus = golden_corpus()
    print(f"corpus: {len(corpus)} strings")
    golden = encode_with_reference(vocab_path, merges_path, corpus)
    out = FIXDIR / "golden_corpus.json"
    out.write_text(json.dumps(golden, ensure_ascii=False, indent=1), encoding="utf-8")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
