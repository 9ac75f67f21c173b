"""Byte-pair-encoding text tokenizer compatible with the reference CLIP one.

Used to enforce the 77-token caption budget: a caption only enters the
dataset if its full encoded sequence fits the text encoder's context
window.  The vocabulary and merge table are external inputs so tests can
swap in a tiny toy vocabulary; nothing is embedded in the package.
"""

from __future__ import annotations

import html
import json
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import regex

SOT_TOKEN = "<|startoftext|>"
EOT_TOKEN = "<|endoftext|>"

# Word-splitting pattern of the reference tokenizer: contractions, letter
# runs, single numerals, then runs of anything else that isn't whitespace.
_WORD_PATTERN = regex.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+""",
    regex.IGNORECASE,
)

# Whitespace collapse uses the stdlib re on purpose: its str-mode \s agrees
# with str.strip() on the \x1c-\x1f separators, where the regex module's
# Unicode White_Space definition does not.
_WHITESPACE = re.compile(r"\s+")


class VocabularyError(ValueError):
    """Raised when vocabulary/merges files violate the format contract."""


@lru_cache(maxsize=1)
def byte_encoder() -> dict[int, str]:
    """Fixed bijection byte -> printable unicode codepoint.

    Printable bytes map to themselves; the rest are displaced past U+0100
    so every byte sequence round-trips through ordinary strings.
    """
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


@dataclass
class Vocabulary:
    """Token table plus ranked merge list loaded from reference files."""

    token_to_id: dict[str, int]
    merges: list[tuple[str, str]]
    sot_id: int
    eot_id: int
    merge_ranks: dict[tuple[str, str], int] = field(init=False, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self.merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache = {}

    def __len__(self) -> int:
        return len(self.token_to_id)


@dataclass(frozen=True)
class TokenSequence:
    """Encoded ids, always bracketed by the start/end sentinels."""

    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) < 2:
            raise ValueError("token sequence must contain at least sot and eot")

    def __len__(self) -> int:
        return len(self.ids)


def _read_vocab_tokens(vocab_path: Path) -> dict[str, int]:
    raw = vocab_path.read_bytes()
    if not raw:
        raise VocabularyError(f"empty vocab file: {vocab_path}")
    if raw.lstrip()[:1] == b"{":
        def reject_dupes(pairs):
            out = {}
            for k, v in pairs:
                if k in out:
                    raise VocabularyError(f"duplicate token {k!r} in vocab file")
                out[k] = v
            return out

        table = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_dupes)
        if not all(isinstance(v, int) for v in table.values()):
            raise VocabularyError("JSON vocab values must be integer ids")
    else:
        tokens = raw.decode("utf-8").splitlines()
        while tokens and tokens[-1] == "":
            tokens.pop()
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate token in line-format vocab file")
        table = {tok: i for i, tok in enumerate(tokens)}

    ids = sorted(table.values())
    if ids != list(range(len(table))):
        raise VocabularyError("token ids must be dense and unique (0..N-1)")
    return table


def _read_merges(merges_path: Path, token_to_id: dict[str, int]) -> list[tuple[str, str]]:
    lines = merges_path.read_text(encoding="utf-8").splitlines()
    if lines and (lines[0].startswith("#") or "#version" in lines[0]):
        lines = lines[1:]
    merges: list[tuple[str, str]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 2:
            raise VocabularyError(
                f"malformed merge at {merges_path}:{lineno}: expected 2 fields, got {len(fields)}"
            )
        first, second = fields
        for part in (first, second, first + second):
            if part not in token_to_id:
                raise VocabularyError(
                    f"merge at {merges_path}:{lineno} references token {part!r} absent from vocabulary"
                )
        merges.append((first, second))
    if not merges:
        raise VocabularyError(f"malformed vocabulary: no merges in {merges_path}")
    return merges


def load_vocabulary(vocab_path: str | Path, merges_path: str | Path) -> Vocabulary:
    """Load and validate the token table and ranked merges.

    The vocab file is auto-detected by first byte: a JSON object mapping
    token -> id, or one token per line (id = line number).  The merges
    file holds one "tokenA tokenB" pair per line, rank = line order, with
    an optional header line.
    """
    vocab_path = Path(vocab_path)
    merges_path = Path(merges_path)
    for p in (vocab_path, merges_path):
        if not p.is_file():
            raise FileNotFoundError(f"vocabulary input missing: {p}")

    token_to_id = _read_vocab_tokens(vocab_path)
    merges = _read_merges(merges_path, token_to_id)
    for special in (SOT_TOKEN, EOT_TOKEN):
        if special not in token_to_id:
            raise VocabularyError(f"vocabulary lacks required token {special!r}")
    sot_id = token_to_id[SOT_TOKEN]
    eot_id = token_to_id[EOT_TOKEN]
    if sot_id == eot_id:
        raise VocabularyError("sot and eot ids must differ")
    return Vocabulary(token_to_id=token_to_id, merges=merges, sot_id=sot_id, eot_id=eot_id)


def _get_pairs(word: tuple[str, ...]) -> set[tuple[str, str]]:
    return set(zip(word[:-1], word[1:]))


def _bpe(v: Vocabulary, token: str) -> tuple[str, ...]:
    """Greedy lowest-rank merging of one byte-encoded word."""
    cached = v._cache.get(token)
    if cached is not None:
        return cached

    word = tuple(token[:-1]) + (token[-1] + "</w>",)
    pairs = _get_pairs(word)
    if not pairs:
        result = (token + "</w>",)
        v._cache[token] = result
        return result

    while True:
        bigram = min(pairs, key=lambda p: v.merge_ranks.get(p, float("inf")))
        if bigram not in v.merge_ranks:
            break
        first, second = bigram
        new_word: list[str] = []
        i = 0
        while i < len(word):
            try:
                j = word.index(first, i)
            except ValueError:
                new_word.extend(word[i:])
                break
            new_word.extend(word[i:j])
            i = j
            if word[i] == first and i < len(word) - 1 and word[i + 1] == second:
                new_word.append(first + second)
                i += 2
            else:
                new_word.append(word[i])
                i += 1
        word = tuple(new_word)
        if len(word) == 1:
            break
        pairs = _get_pairs(word)

    v._cache[token] = word
    return word


def _symbol_ids(v: Vocabulary, symbol: str) -> list[int]:
    """Id lookup with single-byte fallback for symbols outside the table."""
    sid = v.token_to_id.get(symbol)
    if sid is not None:
        return [sid]
    suffix = symbol.endswith("</w>")
    body = symbol[: -len("</w>")] if suffix else symbol
    ids = []
    for i, ch in enumerate(body):
        tok = ch + "</w>" if (suffix and i == len(body) - 1) else ch
        bid = v.token_to_id.get(tok)
        if bid is None:
            raise VocabularyError(f"token {tok!r} not representable in this vocabulary")
        ids.append(bid)
    return ids


def normalize_text(text: str) -> str:
    """Reference normalization: entity unescape, NFC, whitespace collapse, lowercase."""
    text = html.unescape(html.unescape(text))
    text = unicodedata.normalize("NFC", text)
    text = _WHITESPACE.sub(" ", text).strip()
    return text.lower()


def encode(v: Vocabulary, text: str) -> TokenSequence:
    """Encode text to ids, bracketed with the sot/eot sentinels.

    Bit-exact with the reference tokenizer: normalization, pattern word
    split, byte-to-unicode mapping, then greedy lowest-rank BPE per word
    with the end-of-word marker.
    """
    enc = byte_encoder()
    ids: list[int] = [v.sot_id]
    for word in _WORD_PATTERN.findall(normalize_text(text)):
        if word in (SOT_TOKEN, EOT_TOKEN):
            ids.append(v.token_to_id[word])
            continue
        encoded = "".join(enc[b] for b in word.encode("utf-8"))
        for symbol in _bpe(v, encoded):
            ids.extend(_symbol_ids(v, symbol))
    ids.append(v.eot_id)
    return TokenSequence(ids=tuple(ids))


def count_tokens(v: Vocabulary, text: str, include_special: bool = True) -> int:
    """Token count of the encoded text, sot/eot included by default."""
    n = len(encode(v, text))
    return n if include_special else n - 2


class ClipTokenizer:
    """Convenience wrapper binding a Vocabulary to encode/count methods."""

    def __init__(self, vocabulary: Vocabulary):
        self.vocabulary = vocabulary

    @classmethod
    def from_files(cls, vocab_path: str | Path, merges_path: str | Path) -> "ClipTokenizer":
        return cls(load_vocabulary(vocab_path, merges_path))

    def encode(self, text: str) -> TokenSequence:
        return encode(self.vocabulary, text)

    def count_tokens(self, text: str, include_special: bool = True) -> int:
        return count_tokens(self.vocabulary, text, include_special=include_special)
