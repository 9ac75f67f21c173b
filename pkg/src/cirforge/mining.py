"""Image-pair mining: embedding nearest neighbors gated by a perceptual-hash band.

For every image the most similar other image (by cosine in the learned
embedding space, never from the same class) becomes a candidate pair; the
pair survives only if the DCT perceptual-hash Hamming distance falls in an
inclusive [min, max] band, i.e. the two images are visually close without
being near-duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.fft import dct

from cirforge.core import EmbeddingStore, ImagePair, ImageRef

HASH_ALGORITHM = "phash_dct"

# Row-tile size for the similarity matrix; bounds peak memory at
# TILE x corpus_size float64 without changing any result.
_TILE_ROWS = 512


@dataclass(frozen=True)
class PerceptualHash:
    """64-bit (by default) DCT hash; distances only compare like with like."""

    bits: int
    algorithm: str = HASH_ALGORITHM
    hash_size: int = 8

    def __post_init__(self):
        width = self.hash_size * self.hash_size
        if not 0 <= self.bits < (1 << width):
            raise ValueError(f"hash bits out of range for {width}-bit hash")

    @property
    def bit_width(self) -> int:
        return self.hash_size * self.hash_size

    def to_hex(self) -> str:
        return format(self.bits, f"0{self.bit_width // 4}x")

    @classmethod
    def from_hex(cls, hex_str: str, algorithm: str = HASH_ALGORITHM, hash_size: int = 8) -> "PerceptualHash":
        if len(hex_str) != hash_size * hash_size // 4:
            raise ValueError(f"hex hash must be {hash_size * hash_size // 4} chars, got {len(hex_str)}")
        return cls(bits=int(hex_str, 16), algorithm=algorithm, hash_size=hash_size)


@dataclass(frozen=True)
class MiningConfig:
    hash_min: int = 25
    hash_max: int = 35
    exclude_same_class: bool = True
    neighbors_per_image: int = 1
    dedupe_symmetric: bool = False

    def __post_init__(self):
        if not 0 <= self.hash_min <= self.hash_max:
            raise ValueError("need 0 <= hash_min <= hash_max")
        if self.neighbors_per_image < 1:
            raise ValueError("neighbors_per_image must be >= 1")


def _area_resize(raster: np.ndarray, size: int) -> np.ndarray:
    """Exact area-average downsampling to size x size.

    Each output cell integrates the source over its fractional rectangle,
    so uniform brightness scaling commutes with the resize.
    """
    out = raster.astype(np.float64)
    for axis, length in enumerate(out.shape):
        edges = np.linspace(0.0, length, size + 1)
        weights = np.zeros((size, length))
        for k in range(size):
            lo, hi = edges[k], edges[k + 1]
            first, last = int(np.floor(lo)), int(np.ceil(hi))
            for src in range(first, min(last, length)):
                overlap = min(hi, src + 1) - max(lo, src)
                if overlap > 0:
                    weights[k, src] = overlap
        weights /= weights.sum(axis=1, keepdims=True)
        out = np.tensordot(weights, out, axes=(1, axis))
        out = np.moveaxis(out, 0, axis)
    return out


def compute_phash(image: np.ndarray, hash_size: int = 8) -> PerceptualHash:
    """DCT perceptual hash of a decoded grayscale raster.

    Resize to 4*hash_size per side by area averaging, 2-D type-II DCT, keep
    the top-left hash_size x hash_size coefficients with the dominating DC
    term zeroed out, threshold each strictly against their median, and pack
    row-major with the first coefficient in the most significant bit.  A
    constant image therefore hashes to all-zero bits.
    """
    raster = np.asarray(image, dtype=np.float64)
    if raster.ndim != 2 or raster.size == 0:
        raise ValueError("expected a non-empty 2-D grayscale raster")
    low_side = 4 * hash_size
    if min(raster.shape) < low_side:
        raise ValueError(f"raster must be at least {low_side}x{low_side}, got {raster.shape}")

    small = _area_resize(raster, low_side)
    freq = dct(dct(small, axis=0), axis=1)
    block = freq[:hash_size, :hash_size].copy()
    block[0, 0] = 0.0
    flat = block.ravel()
    median = np.median(flat)
    bits = 0
    for coeff in flat:
        bits = (bits << 1) | int(coeff > median)
    return PerceptualHash(bits=bits, hash_size=hash_size)


def hamming_distance(h1: PerceptualHash, h2: PerceptualHash) -> int:
    """Popcount of XOR; refuses to compare hashes of different configurations."""
    if h1.algorithm != h2.algorithm or h1.hash_size != h2.hash_size:
        raise ValueError(
            f"hash configuration mismatch: {h1.algorithm}/{h1.hash_size} vs {h2.algorithm}/{h2.hash_size}"
        )
    return bin(h1.bits ^ h2.bits).count("1")


def mine_pairs(
    embeddings: EmbeddingStore,
    classes: Mapping[str, Optional[str]],
    hashes: Mapping[str, PerceptualHash],
    cfg: MiningConfig = MiningConfig(),
    refs: Optional[Mapping[str, ImageRef]] = None,
) -> list[ImagePair]:
    """Mine (query, target) pairs from the corpus.

    For each image: rank every other image by cosine similarity, drop
    same-class candidates when configured, take the top
    ``neighbors_per_image``, then keep only pairs whose hash distance lies
    inside the inclusive band.  Ties break toward the ascending image id,
    and the result is independent of input record order.
    """
    ids = embeddings.ids
    if not ids:
        raise ValueError("empty corpus")
    for image_id in ids:
        if image_id not in classes:
            raise ValueError(f"missing class entry for image id {image_id!r}")
        if image_id not in hashes:
            raise ValueError(f"missing hash for image id {image_id!r}")

    norms = np.linalg.norm(embeddings.matrix, axis=1)
    if np.any(norms == 0):
        zero = ids[int(np.argmax(norms == 0))]
        raise ValueError(f"zero-norm embedding for image id {zero!r}")
    unit = embeddings.matrix / norms[:, None]

    def ref_for(image_id: str) -> ImageRef:
        if refs is not None and image_id in refs:
            return refs[image_id]
        return ImageRef(id=image_id, class_id=classes.get(image_id))

    class_arr = [classes[i] for i in ids]
    class_rows: dict[str, np.ndarray] = {}
    for j, cls in enumerate(class_arr):
        if cls is not None:
            class_rows.setdefault(cls, []).append(j)  # type: ignore[arg-type]
    class_rows = {cls: np.asarray(rows) for cls, rows in class_rows.items()}

    pairs: list[ImagePair] = []
    n = len(ids)
    for start in range(0, n, _TILE_ROWS):
        stop = min(start + _TILE_ROWS, n)
        sims = unit[start:stop] @ unit.T
        for local, q in enumerate(range(start, stop)):
            row = sims[local].copy()
            row[q] = -np.inf
            if cfg.exclude_same_class and class_arr[q] is not None:
                row[class_rows[class_arr[q]]] = -np.inf
            # stable argsort on the negated row: equal similarities resolve
            # to the lower index, i.e. the ascending image id
            order = np.argsort(-row, kind="stable")
            for j in order[: cfg.neighbors_per_image]:
                if row[j] == -np.inf:
                    break
                dist = hamming_distance(hashes[ids[q]], hashes[ids[j]])
                if cfg.hash_min <= dist <= cfg.hash_max:
                    pairs.append(
                        ImagePair(
                            pair_id=ImagePair.make_id(ids[q], ids[j]),
                            query=ref_for(ids[q]),
                            target=ref_for(ids[j]),
                            emb_similarity=float(np.clip(row[j], -1.0, 1.0)),
                            hash_distance=dist,
                        )
                    )

    if cfg.dedupe_symmetric:
        mined = {(p.query.id, p.target.id) for p in pairs}
        pairs = [
            p
            for p in pairs
            if (p.target.id, p.query.id) not in mined or p.query.id < p.target.id
        ]
    return pairs
