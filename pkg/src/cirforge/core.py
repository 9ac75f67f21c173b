"""Shared domain types and pure geometric/validation primitives.

Everything here is an immutable value object or a pure function; all of it
is safe to use concurrently without locking.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

# Morphological family of the excluded verbs: the filter targets the verb,
# not the literal string, so inflections are covered.
FORBIDDEN_VERB_FORMS = (
    "maintain", "maintains", "maintained", "maintaining",
    "ensure", "ensures", "ensured", "ensuring",
)

DEFAULT_TOKEN_LIMIT = 77
DEFAULT_MAX_DISTRACTORS = 5


class CaptionKind(str, Enum):
    ATOMIC = "atomic"
    COMPOUND2 = "compound2"
    COMPOUND3 = "compound3"

    @property
    def arity(self) -> int:
        return {"atomic": 1, "compound2": 2, "compound3": 3}[self.value]


@dataclass(frozen=True)
class ImageRef:
    """One corpus image: unique id, relative path, optional class identity."""

    id: str
    path: str = ""
    class_id: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("image id must be non-empty")


@dataclass(frozen=True)
class EmbeddingRecord:
    """An image id plus a fixed-dimension feature vector."""

    image_id: str
    vector: tuple[float, ...]
    dim: int

    def __post_init__(self):
        vec = tuple(float(x) for x in self.vector)
        object.__setattr__(self, "vector", vec)
        if len(vec) != self.dim:
            raise ValueError(
                f"vector length {len(vec)} != declared dim {self.dim} for {self.image_id!r}"
            )
        if not all(np.isfinite(vec)):
            raise ValueError(f"non-finite component in embedding for {self.image_id!r}")

    @classmethod
    def of(cls, image_id: str, vector: Sequence[float]) -> "EmbeddingRecord":
        vec = tuple(float(x) for x in vector)
        return cls(image_id=image_id, vector=vec, dim=len(vec))


@dataclass(frozen=True)
class ObjectEntry:
    """A labeled object with its fine-grained appearance descriptors."""

    label: str
    descriptors: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "descriptors", tuple(self.descriptors))
        if not self.label:
            raise ValueError("object label must be non-empty")
        if not self.descriptors or any(not d.strip() for d in self.descriptors):
            raise ValueError(f"object {self.label!r} needs non-empty descriptors")


@dataclass(frozen=True)
class ObjectInventory:
    """Ordered object list for one image, most to least prominent."""

    image_id: str
    objects: tuple[ObjectEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def labels(self) -> list[str]:
        return [o.label for o in self.objects]


@dataclass(frozen=True)
class ImagePair:
    """A mined (query, target) candidate with its similarity evidence."""

    pair_id: str
    query: ImageRef
    target: ImageRef
    emb_similarity: float
    hash_distance: int

    @staticmethod
    def make_id(query_id: str, target_id: str) -> str:
        # Deterministic and collision-free given unique image ids.
        return f"{query_id}__{target_id}"


@dataclass(frozen=True)
class Caption:
    """One modification text, atomic or compound, with token accounting.

    ``source_indices`` index into the pair's atomic caption list; compound
    captions record which atomics were joined to produce them.
    """

    text: str
    kind: CaptionKind
    source_indices: tuple[int, ...]
    token_count: int

    def __post_init__(self):
        object.__setattr__(self, "source_indices", tuple(self.source_indices))
        object.__setattr__(self, "kind", CaptionKind(self.kind))


@dataclass(frozen=True)
class CIRTriplet:
    """The dataset unit: query image, modification text, target image."""

    pair_id: str
    query_id: str
    target_id: str
    caption: Caption
    distractor_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "distractor_ids", tuple(self.distractor_ids))


@dataclass(frozen=True)
class ValidationConfig:
    """Rules applied by :func:`validate_triplet`."""

    token_limit: int = DEFAULT_TOKEN_LIMIT
    forbidden_verbs: tuple[str, ...] = FORBIDDEN_VERB_FORMS
    max_distractors: int = DEFAULT_MAX_DISTRACTORS

    def forbidden_verb_pattern(self) -> "re.Pattern[str]":
        alternation = "|".join(re.escape(v) for v in self.forbidden_verbs)
        return re.compile(rf"\b(?:{alternation})\b", re.IGNORECASE)


class EmbeddingStore:
    """Immutable id-ordered collection of same-dimension embeddings.

    Rows of :attr:`matrix` follow :attr:`ids`, which are sorted ascending so
    every similarity computation downstream breaks ties the same way.
    """

    def __init__(self, records: Sequence[EmbeddingRecord]):
        if not records:
            raise ValueError("embedding store cannot be empty")
        dims = {r.dim for r in records}
        if len(dims) != 1:
            raise ValueError(f"mixed embedding dims in store: {sorted(dims)}")
        ids = [r.image_id for r in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate image ids in store: {dupes[:5]}")
        order = sorted(range(len(records)), key=lambda i: ids[i])
        self.ids: tuple[str, ...] = tuple(ids[i] for i in order)
        self.dim: int = records[0].dim
        self.matrix = np.asarray(
            [records[i].vector for i in order], dtype=np.float64
        )
        self._index = {img_id: row for row, img_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def row(self, image_id: str) -> int:
        try:
            return self._index[image_id]
        except KeyError:
            raise KeyError(f"no embedding for image id {image_id!r}") from None

    def vector(self, image_id: str) -> np.ndarray:
        return self.matrix[self.row(image_id)]


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, computed in float64.

    Raises ValueError on dimension mismatch or zero-norm input.  The result
    is clamped to [-1, 1] so downstream threshold comparisons never see
    floating-point overshoot.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.clip(av.dot(bv) / (na * nb), -1.0, 1.0))


def validate_triplet(t: CIRTriplet, cfg: ValidationConfig = ValidationConfig()) -> list[str]:
    """Check every caption/triplet invariant; violations are data, not errors.

    Returns the (possibly empty) list of violation codes, one per failed
    rule.  Pure: identical input yields the identical list.
    """
    violations: list[str] = []
    cap = t.caption

    if t.query_id == t.target_id:
        violations.append("self_pair")

    if cap.token_count < 1:
        violations.append("bad_token_count")
    elif cap.token_count > cfg.token_limit:
        violations.append("token_over_limit")

    arity = cap.kind.arity
    idx = cap.source_indices
    if len(idx) != arity or len(set(idx)) != len(idx):
        violations.append("bad_source_indices")

    if cfg.forbidden_verb_pattern().search(cap.text):
        violations.append("forbidden_verb")

    if len(t.distractor_ids) > cfg.max_distractors:
        violations.append("too_many_distractors")
    if len(set(t.distractor_ids)) != len(t.distractor_ids):
        violations.append("distractor_duplicate")
    if t.query_id in t.distractor_ids or t.target_id in t.distractor_ids:
        violations.append("distractor_overlap")

    return violations
