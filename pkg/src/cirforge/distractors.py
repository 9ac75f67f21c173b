"""Distractor selection: visually confusable gallery images for each pair.

A candidate distracts a pair when its similarity to the query exceeds the
query-target similarity itself, i.e. it outranks the true target in the
general-purpose embedding space.  Up to k of those are sampled uniformly
per pair with the portable per-pair RNG, so the same image may distract
many pairs but a pair's own images never distract it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cirforge.core import EmbeddingStore, ImagePair
from cirforge.rng import pair_rng


@dataclass(frozen=True)
class DistractorConfig:
    k: int = 5
    seed: int = 0
    rule: str = "query_dominance"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.rule != "query_dominance":
            raise ValueError(f"unknown distractor rule {self.rule!r}")


def candidate_ids(pair: ImagePair, store: EmbeddingStore) -> list[str]:
    """All ids x with cos(query, x) strictly above cos(query, target)."""
    q = store.vector(pair.query.id)
    t = store.vector(pair.target.id)
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(store.matrix, axis=1)
    if qn == 0 or np.any(norms == 0):
        raise ValueError("zero-norm embedding in distractor store")
    sims = (store.matrix @ (q / qn)) / norms
    threshold = float(q @ t / (qn * np.linalg.norm(t)))
    excluded = {pair.query.id, pair.target.id}
    return [
        image_id
        for image_id, sim in zip(store.ids, sims)
        if sim > threshold and image_id not in excluded
    ]


def sample_distractors(
    pair: ImagePair, store: EmbeddingStore, cfg: DistractorConfig = DistractorConfig()
) -> list[str]:
    """Up to cfg.k candidate ids, sampled without replacement, deterministic per pair."""
    candidates = candidate_ids(pair, store)  # already in ascending id order
    take = min(cfg.k, len(candidates))
    if take == 0:
        return []
    return pair_rng(cfg.seed, pair.pair_id).sample(candidates, take)
