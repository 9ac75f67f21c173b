"""Retrieval evaluation (Recall@K, mAP@K) and the reference contrastive loss.

The loss comes in two modes.  ``default`` is the standard batch-contrastive
objective: each fused query embedding must score its matched target above
every other target in the batch, through a temperature-scaled softmax and
a -log.  ``literal`` evaluates the probability-style expression whose
denominator runs over the matched similarities only; it is retained for
comparison and is provably constant (1/N) with an identically zero
gradient, which is why it cannot train anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from cirforge.core import EmbeddingStore


@dataclass(frozen=True)
class RetrievalRun:
    """Ranked galleries per query plus the relevant-target sets."""

    queries: tuple[tuple[str, tuple[str, ...]], ...]
    relevance: Mapping[str, frozenset[str]]

    def __post_init__(self):
        normalized = tuple((qid, tuple(ranked)) for qid, ranked in self.queries)
        object.__setattr__(self, "queries", normalized)
        object.__setattr__(
            self, "relevance", {q: frozenset(r) for q, r in self.relevance.items()}
        )
        for qid, ranked in self.queries:
            if len(set(ranked)) != len(ranked):
                raise ValueError(f"duplicate gallery id in ranking for query {qid!r}")
            if not self.relevance.get(qid):
                raise ValueError(f"query {qid!r} has no relevant ids")


def rank_gallery(
    query_vec: Sequence[float],
    gallery: EmbeddingStore,
    exclude: Iterable[str] = (),
) -> list[str]:
    """Gallery ids by descending cosine similarity to the query vector.

    Ties break toward the ascending id; ids in ``exclude`` (by convention
    the query image itself) never appear.
    """
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (gallery.dim,):
        raise ValueError(f"query dim {q.shape} does not match gallery dim {gallery.dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("zero-norm query vector")
    norms = np.linalg.norm(gallery.matrix, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm gallery vector")
    sims = (gallery.matrix @ (q / qn)) / norms
    order = np.argsort(-sims, kind="stable")
    excluded = set(exclude)
    return [gallery.ids[i] for i in order if gallery.ids[i] not in excluded]


def recall_at_k(run: RetrievalRun, k: int) -> float:
    """Fraction of queries whose top-k ranking hits at least one relevant id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(
        1
        for qid, ranked in run.queries
        if run.relevance[qid].intersection(ranked[:k])
    )
    return hits / len(run.queries) if run.queries else 0.0


def map_at_k(run: RetrievalRun, k: int) -> float:
    """Mean AP@k with the multi-target normalizer min(k, |relevant|).

    AP@k = (1 / min(k, R_q)) * sum_{i<=k} Precision(i) * rel(i), so a query
    whose relevant set cannot fill k slots is not penalized for that.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not run.queries:
        return 0.0
    ap_sum = 0.0
    for qid, ranked in run.queries:
        relevant = run.relevance[qid]
        hits = 0
        precision_sum = 0.0
        for rank, gallery_id in enumerate(ranked[:k], start=1):
            if gallery_id in relevant:
                hits += 1
                precision_sum += hits / rank
        ap_sum += precision_sum / min(k, len(relevant))
    return ap_sum / len(run.queries)


@dataclass
class LossBatch:
    """Fused query embeddings vs. matched target embeddings, row-aligned."""

    fused: np.ndarray
    targets: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.fused = np.asarray(self.fused, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.fused.ndim != 2 or self.fused.shape != self.targets.shape:
            raise ValueError(
                f"fused {self.fused.shape} and targets {self.targets.shape} must be matching N x D"
            )
        if not (np.isfinite(self.fused).all() and np.isfinite(self.targets).all()):
            raise ValueError("loss batch contains non-finite values")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def _unit_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm row in loss batch")
    return m / norms[:, None], norms


def info_nce_loss(batch: LossBatch, mode: str = "default") -> tuple[float, np.ndarray]:
    """Contrastive loss and its analytic gradient w.r.t. the fused rows.

    Similarities are cosine; inputs are not re-normalized destructively.
    Returns (loss, grad) where grad has the shape of ``batch.fused``.
    """
    if mode not in ("default", "literal"):
        raise ValueError(f"unknown loss mode {mode!r}")
    f_hat, f_norms = _unit_rows(batch.fused)
    t_hat, _ = _unit_rows(batch.targets)
    n = batch.fused.shape[0]
    tau = batch.temperature
    sims = f_hat @ t_hat.T  # s_ij = cos(fused_i, target_j)

    if mode == "default":
        logits = sims / tau
        logits -= logits.max(axis=1, keepdims=True)  # stabilized softmax
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), np.arange(n)])))
        grad_sims = (probs - np.eye(n)) / (n * tau)
    else:
        diag = np.diag(sims) / tau
        shifted = np.exp(diag - diag.max())
        probs_diag = shifted / shifted.sum()
        loss = float(np.mean(probs_diag))
        # d mean_j p_j / d s_ii = p_i (1 - sum_j p_j) / (N tau): zero in exact
        # arithmetic because the p_j always sum to one
        grad_sims = np.zeros((n, n))
        np.fill_diagonal(grad_sims, probs_diag * (1.0 - probs_diag.sum()) / (n * tau))

    # chain rule through s_ij = f_hat_i . t_hat_j with f_hat_i = f_i / |f_i|
    row_dot = (grad_sims * sims).sum(axis=1, keepdims=True)
    grad_fused = (grad_sims @ t_hat - row_dot * f_hat) / f_norms[:, None]
    return loss, grad_fused
