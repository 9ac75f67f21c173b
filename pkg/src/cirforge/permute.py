"""Caption filtering and permutation into compound modification texts.

Atomic difference captions are first screened for verbs that describe
no actual change; survivors are kept verbatim and additionally joined into
two- and three-caption compound sentences.  Join rules: strip the previous
caption's trailing period, insert commas, lowercase the first letter of
every caption after the first, and put "and" before the final one.  Every
emitted caption must fit the tokenizer budget, each atomic caption feeds
at most one compound, and compounds stop at a per-pair cap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Protocol, Sequence

from cirforge.core import Caption, CaptionKind, ValidationConfig
from cirforge.rng import pair_rng

# Distinct random draws tried before falling back to a deterministic
# exhaustive scan for any remaining feasible combination.
_MAX_RANDOM_TRIES = 64


class TokenCounter(Protocol):
    def count_tokens(self, text: str, include_special: bool = True) -> int: ...


@dataclass(frozen=True)
class PermuteConfig:
    token_limit: int = 77
    max_compounds: int = 60
    allow_sizes: tuple[int, ...] = (2, 3)
    seed: int = 0
    count_special_tokens: bool = True

    def __post_init__(self):
        if self.token_limit < 3:
            raise ValueError("token_limit must be >= 3")
        if self.max_compounds < 0:
            raise ValueError("max_compounds must be >= 0")
        sizes = tuple(sorted(set(self.allow_sizes)))
        if not set(sizes) <= {2, 3}:
            raise ValueError("allow_sizes must be a subset of {2, 3}")
        object.__setattr__(self, "allow_sizes", sizes)


def filter_captions(
    captions: Sequence[str], cfg: ValidationConfig = ValidationConfig()
) -> list[str]:
    """Drop captions containing a forbidden verb form; keep order otherwise."""
    pattern = cfg.forbidden_verb_pattern()
    return [c for c in captions if not pattern.search(c)]


def _strip_period(text: str) -> str:
    return text[:-1] if text.endswith(".") else text


def _lower_first_alpha(text: str) -> str:
    for i, ch in enumerate(text):
        if ch.isalpha():
            return text[:i] + ch.lower() + text[i + 1 :]
    return text


def join_two(c1: str, c2: str) -> str:
    """First caption, comma, "and", second caption with its first letter lowered."""
    if not c1 or not c2:
        raise ValueError("cannot join empty captions")
    return f"{_strip_period(c1)}, and {_lower_first_alpha(c2)}"


def join_three(c1: str, c2: str, c3: str) -> str:
    """Comma-chain the first two, then "and" before the final caption."""
    if not c1 or not c2 or not c3:
        raise ValueError("cannot join empty captions")
    middle = _lower_first_alpha(_strip_period(c2))
    return f"{_strip_period(c1)}, {middle}, and {_lower_first_alpha(c3)}"


def join_combination(captions: Sequence[str]) -> str:
    if len(captions) == 2:
        return join_two(captions[0], captions[1])
    if len(captions) == 3:
        return join_three(captions[0], captions[1], captions[2])
    raise ValueError(f"combinations must have 2 or 3 captions, got {len(captions)}")


def generate_permutations(
    captions: Sequence[str],
    tokenizer: TokenCounter,
    cfg: PermuteConfig = PermuteConfig(),
    pair_id: str = "",
) -> list[Caption]:
    """Atomic captions within budget plus randomly sampled compounds.

    Compound sampling draws unordered index combinations (size uniform over
    the still-feasible sizes) from the pool of unused atomics; a draw whose
    joined text exceeds the token budget is discarded and its captions
    return to the pool.  Sampling stops at ``max_compounds`` or when no
    remaining combination can fit, whichever comes first.  Deterministic in
    (captions, cfg.seed, pair_id).
    """
    count = lambda text: tokenizer.count_tokens(
        text, include_special=cfg.count_special_tokens
    )

    out: list[Caption] = []
    pool: list[int] = []
    for i, text in enumerate(captions):
        tokens = count(text)
        if tokens <= cfg.token_limit:
            out.append(
                Caption(text=text, kind=CaptionKind.ATOMIC, source_indices=(i,), token_count=tokens)
            )
            pool.append(i)

    rng = pair_rng(cfg.seed, pair_id)
    failed: set[tuple[int, ...]] = set()
    compounds = 0

    def emit(combo: tuple[int, ...], text: str, tokens: int) -> None:
        nonlocal compounds
        kind = CaptionKind.COMPOUND2 if len(combo) == 2 else CaptionKind.COMPOUND3
        out.append(Caption(text=text, kind=kind, source_indices=combo, token_count=tokens))
        for i in combo:
            pool.remove(i)
        compounds += 1

    while compounds < cfg.max_compounds:
        feasible = [s for s in cfg.allow_sizes if s <= len(pool)]
        if not feasible:
            break

        emitted = False
        for _ in range(_MAX_RANDOM_TRIES):
            size = feasible[rng.below(len(feasible))]
            combo = tuple(sorted(rng.sample(pool, size)))
            if combo in failed:
                continue
            text = join_combination([captions[i] for i in combo])
            tokens = count(text)
            if tokens <= cfg.token_limit:
                emit(combo, text, tokens)
                emitted = True
                break
            failed.add(combo)

        if not emitted:
            # the random draws kept colliding with failures: scan every
            # remaining combination in deterministic order before giving up
            for size in feasible:
                for combo in itertools.combinations(sorted(pool), size):
                    if combo in failed:
                        continue
                    text = join_combination([captions[i] for i in combo])
                    tokens = count(text)
                    if tokens <= cfg.token_limit:
                        emit(combo, text, tokens)
                        emitted = True
                        break
                    failed.add(combo)
                if emitted:
                    break
            if not emitted:
                break  # pool cannot form another combination

    return out
