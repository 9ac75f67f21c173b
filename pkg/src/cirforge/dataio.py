"""Persistence for pipeline artifacts: JSON-lines files plus a JSON manifest.

Every bulk artifact (embeddings, hashes, pairs, generation results,
triplets, usage ledgers) is JSON-lines with a stable field order, so files
diff cleanly and re-serializing a loaded file reproduces it byte for byte.
The manifest is a single JSON document tying splits to pair ids and the
corpus, stamped with a digest of the effective run configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from cirforge.backend import UsageLedger
from cirforge.core import (
    Caption,
    CaptionKind,
    CIRTriplet,
    EmbeddingRecord,
    EmbeddingStore,
    ImagePair,
    ImageRef,
    ObjectEntry,
    ObjectInventory,
    ValidationConfig,
    validate_triplet,
)
from cirforge.mining import PerceptualHash
from cirforge.pipeline import PairGenerationResult

PathLike = Union[str, Path]


class DataFileError(ValueError):
    """A line failed schema or validation; the message carries the line number."""


def _read_jsonl(path: PathLike):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFileError(f"{path}:{lineno}: not valid JSON: {exc}") from exc


def _write_jsonl(path: PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


# -- triplets ---------------------------------------------------------------

def triplet_to_dict(t: CIRTriplet) -> dict:
    return {
        "pair_id": t.pair_id,
        "query_id": t.query_id,
        "target_id": t.target_id,
        "caption": {
            "text": t.caption.text,
            "kind": t.caption.kind.value,
            "source_indices": list(t.caption.source_indices),
            "token_count": t.caption.token_count,
        },
        "distractor_ids": list(t.distractor_ids),
    }


def triplet_from_dict(obj: Mapping) -> CIRTriplet:
    cap = obj["caption"]
    return CIRTriplet(
        pair_id=obj["pair_id"],
        query_id=obj["query_id"],
        target_id=obj["target_id"],
        caption=Caption(
            text=cap["text"],
            kind=CaptionKind(cap["kind"]),
            source_indices=tuple(cap["source_indices"]),
            token_count=int(cap["token_count"]),
        ),
        distractor_ids=tuple(obj.get("distractor_ids", ())),
    )


def write_triplets(path: PathLike, triplets: Sequence[CIRTriplet]) -> None:
    _write_jsonl(path, (triplet_to_dict(t) for t in triplets))


def read_triplets(
    path: PathLike, cfg: Optional[ValidationConfig] = ValidationConfig()
) -> list[CIRTriplet]:
    """Load triplets, rejecting any line that fails schema or validation.

    Pass ``cfg=None`` to skip invariant validation (schema still applies).
    """
    out: list[CIRTriplet] = []
    for lineno, obj in _read_jsonl(path):
        try:
            triplet = triplet_from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFileError(f"{path}:{lineno}: bad triplet record: {exc}") from exc
        if cfg is not None:
            violations = validate_triplet(triplet, cfg)
            if violations:
                raise DataFileError(f"{path}:{lineno}: invalid triplet: {violations}")
        out.append(triplet)
    return out


# -- pairs ------------------------------------------------------------------

def write_pairs(path: PathLike, pairs: Sequence[ImagePair]) -> None:
    _write_jsonl(
        path,
        (
            {
                "pair_id": p.pair_id,
                "query": p.query.id,
                "target": p.target.id,
                "emb_sim": p.emb_similarity,
                "hash_dist": p.hash_distance,
            }
            for p in pairs
        ),
    )


def read_pairs(path: PathLike, corpus: Optional[Mapping[str, ImageRef]] = None) -> list[ImagePair]:
    """Load pairs; with a corpus map the image refs carry paths and classes."""
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            qid, tid = obj["query"], obj["target"]
            if corpus is not None:
                if qid not in corpus or tid not in corpus:
                    raise DataFileError(
                        f"{path}:{lineno}: pair references image absent from corpus"
                    )
                query, target = corpus[qid], corpus[tid]
            else:
                query, target = ImageRef(id=qid), ImageRef(id=tid)
            out.append(
                ImagePair(
                    pair_id=obj["pair_id"],
                    query=query,
                    target=target,
                    emb_similarity=float(obj["emb_sim"]),
                    hash_distance=int(obj["hash_dist"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataFileError):
                raise
            raise DataFileError(f"{path}:{lineno}: bad pair record: {exc}") from exc
    return out


# -- hashes -----------------------------------------------------------------

def write_hashes(path: PathLike, hashes: Mapping[str, PerceptualHash]) -> None:
    _write_jsonl(
        path,
        (
            {"id": image_id, "phash": h.to_hex(), "alg": h.algorithm, "size": h.hash_size}
            for image_id, h in hashes.items()
        ),
    )


def read_hashes(path: PathLike) -> dict[str, PerceptualHash]:
    out: dict[str, PerceptualHash] = {}
    for lineno, obj in _read_jsonl(path):
        try:
            image_id = obj["id"]
            if image_id in out:
                raise DataFileError(f"{path}:{lineno}: duplicate hash for {image_id!r}")
            out[image_id] = PerceptualHash.from_hex(
                obj["phash"], algorithm=obj.get("alg", "phash_dct"), hash_size=int(obj.get("size", 8))
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataFileError):
                raise
            raise DataFileError(f"{path}:{lineno}: bad hash record: {exc}") from exc
    return out


# -- embeddings ---------------------------------------------------------------

def write_embeddings(path: PathLike, records: Sequence[EmbeddingRecord]) -> None:
    _write_jsonl(path, ({"id": r.image_id, "vec": list(r.vector)} for r in records))


def read_embeddings(path: PathLike) -> EmbeddingStore:
    records = []
    for lineno, obj in _read_jsonl(path):
        try:
            records.append(EmbeddingRecord.of(obj["id"], obj["vec"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFileError(f"{path}:{lineno}: bad embedding record: {exc}") from exc
    if not records:
        raise DataFileError(f"{path}: embeddings file is empty")
    try:
        return EmbeddingStore(records)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


# -- generation results -------------------------------------------------------

def _inventory_to_list(inv: Optional[ObjectInventory]) -> Optional[list[dict]]:
    if inv is None:
        return None
    return [{"label": o.label, "descriptors": list(o.descriptors)} for o in inv.objects]


def _inventory_from_list(image_id: str, data) -> Optional[ObjectInventory]:
    if data is None:
        return None
    entries = tuple(
        ObjectEntry(label=o["label"], descriptors=tuple(o["descriptors"])) for o in data
    )
    return ObjectInventory(image_id=image_id, objects=entries)


def write_results(path: PathLike, results: Sequence[PairGenerationResult]) -> None:
    rows = []
    for r in results:
        rows.append(
            {
                "pair_id": r.pair_id,
                "status": r.status,
                "failed_stage": r.failed_stage,
                "failure_reason": r.failure_reason,
                "query_inventory": _inventory_to_list(r.query_inventory),
                "target_inventory": _inventory_to_list(r.target_inventory),
                "atomic_captions": list(r.atomic_captions),
                "usage": r.usage,
            }
        )
    _write_jsonl(path, rows)


def read_results(path: PathLike) -> list[PairGenerationResult]:
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            pair_id = obj["pair_id"]
            qid, _, tid = pair_id.partition("__")
            out.append(
                PairGenerationResult(
                    pair_id=pair_id,
                    status=obj.get("status", "ok"),
                    failed_stage=obj.get("failed_stage"),
                    failure_reason=obj.get("failure_reason"),
                    query_inventory=_inventory_from_list(qid, obj.get("query_inventory")),
                    target_inventory=_inventory_from_list(tid, obj.get("target_inventory")),
                    atomic_captions=list(obj.get("atomic_captions", [])),
                    usage={k: dict(v) for k, v in obj.get("usage", {}).items()},
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFileError(f"{path}:{lineno}: bad result record: {exc}") from exc
    return out


# -- manifest -----------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    name: str
    splits: dict[str, list[str]]
    corpus: list[ImageRef]
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    config_digest: str = ""

    def __post_init__(self):
        seen: dict[str, str] = {}
        for split, pair_ids in self.splits.items():
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r}")
            for pid in pair_ids:
                if pid in seen:
                    raise ValueError(
                        f"pair {pid!r} appears in both {seen[pid]!r} and {split!r} splits"
                    )
                seen[pid] = split
        ids = [ref.id for ref in self.corpus]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in corpus")

    def corpus_by_id(self) -> dict[str, ImageRef]:
        return {ref.id: ref for ref in self.corpus}


def config_digest(config_mapping: Mapping) -> str:
    canonical = json.dumps(config_mapping, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    doc = {
        "name": manifest.name,
        "splits": manifest.splits,
        "corpus": [
            {"id": r.id, "path": r.path, "class_id": r.class_id} for r in manifest.corpus
        ],
        "created": manifest.created,
        "config_digest": manifest.config_digest,
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return DatasetManifest(
            name=doc["name"],
            splits={k: list(v) for k, v in doc["splits"].items()},
            corpus=[
                ImageRef(id=r["id"], path=r.get("path", ""), class_id=r.get("class_id"))
                for r in doc["corpus"]
            ],
            created=doc.get("created", ""),
            config_digest=doc.get("config_digest", ""),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataFileError(f"{path}: bad manifest: {exc}") from exc


# -- statistics ---------------------------------------------------------------

@dataclass
class SplitStats:
    image_pairs: int = 0
    cir_triplets: int = 0
    total_images: int = 0


@dataclass
class DatasetStats:
    """Per-split pair/triplet/image counts plus token averages per pair."""

    name: str
    splits: dict[str, SplitStats]
    avg_prompt_tokens: float = 0.0
    avg_output_tokens: float = 0.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "splits": {
                split: {
                    "image_pairs": s.image_pairs,
                    "cir_triplets": s.cir_triplets,
                    "total_images": s.total_images,
                }
                for split, s in self.splits.items()
            },
            "avg_prompt_tokens": self.avg_prompt_tokens,
            "avg_output_tokens": self.avg_output_tokens,
        }


def compute_stats(
    manifest: DatasetManifest,
    triplet_files: Mapping[str, PathLike],
    ledger: Optional[UsageLedger] = None,
    cfg: Optional[ValidationConfig] = ValidationConfig(),
) -> DatasetStats:
    """Count pairs, triplets, and unique images (distractors included) per split."""
    splits: dict[str, SplitStats] = {}
    all_pairs: set[str] = set()
    for split, path in triplet_files.items():
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        triplets = read_triplets(path, cfg)
        declared = set(manifest.splits.get(split, ()))
        undeclared = {t.pair_id for t in triplets} - declared
        if undeclared:
            raise DataFileError(
                f"{path}: pair ids not in manifest split {split!r}: {sorted(undeclared)[:5]}"
            )
        images: set[str] = set()
        for t in triplets:
            images.add(t.query_id)
            images.add(t.target_id)
            images.update(t.distractor_ids)
        splits[split] = SplitStats(
            image_pairs=len({t.pair_id for t in triplets}),
            cir_triplets=len(triplets),
            total_images=len(images),
        )
        all_pairs.update(t.pair_id for t in triplets)

    avg_prompt = avg_output = 0.0
    if ledger is not None:
        avg_prompt, avg_output = ledger.averages_per_pair(all_pairs)
    return DatasetStats(
        name=manifest.name,
        splits=splits,
        avg_prompt_tokens=avg_prompt,
        avg_output_tokens=avg_output,
    )


def format_stats_table(stats: DatasetStats) -> str:
    """Render the per-split counts in the usual dataset-statistics layout."""
    header = f"{'Split':<8}{'Image Pairs':>14}{'CIR Triplets':>14}{'Total Images':>14}"
    lines = [stats.name, header, "-" * len(header)]
    for split in SPLITS:
        if split in stats.splits:
            s = stats.splits[split]
            lines.append(
                f"{split:<8}{s.image_pairs:>14,}{s.cir_triplets:>14,}{s.total_images:>14,}"
            )
    lines.append(
        f"Avg. prompt tokens/pair: {stats.avg_prompt_tokens:,.1f}   "
        f"Avg. output tokens/pair: {stats.avg_output_tokens:,.1f}"
    )
    return "\n".join(lines)
