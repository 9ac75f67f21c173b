import json

import pytest

from cirforge import dataio
from cirforge.backend import ChatResponse, UsageLedger
from cirforge.core import (
    Caption,
    CaptionKind,
    CIRTriplet,
    EmbeddingRecord,
    ImageRef,
    ValidationConfig,
)
from cirforge.mining import PerceptualHash


def make_triplet(i: int, distractors=("d1", "d2")) -> CIRTriplet:
    return CIRTriplet(
        pair_id=f"q{i}__t{i}",
        query_id=f"q{i}",
        target_id=f"t{i}",
        caption=Caption(
            text=f"Move object {i} to the left.",
            kind=CaptionKind.ATOMIC,
            source_indices=(0,),
            token_count=9,
        ),
        distractor_ids=distractors,
    )


class TestTripletIo:
    def test_round_trip_identity(self, tmp_path):
        triplets = [make_triplet(i) for i in range(100)]
        path = tmp_path / "triplets.jsonl"
        dataio.write_triplets(path, triplets)
        loaded = dataio.read_triplets(path)
        assert loaded == triplets

    def test_rewrite_is_byte_identical(self, tmp_path):
        triplets = [make_triplet(i) for i in range(20)]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        dataio.write_triplets(a, triplets)
        dataio.write_triplets(b, dataio.read_triplets(a))
        assert a.read_bytes() == b.read_bytes()

    def test_missing_caption_field_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        rows = [dataio.triplet_to_dict(make_triplet(0))]
        broken = dataio.triplet_to_dict(make_triplet(1))
        del broken["caption"]
        rows.append(broken)
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        with pytest.raises(dataio.DataFileError, match=":2"):
            dataio.read_triplets(path)

    def test_invalid_triplet_rejected_on_read(self, tmp_path):
        bad = CIRTriplet(
            pair_id="x__x",
            query_id="x",
            target_id="x",
            caption=make_triplet(0).caption,
        )
        path = tmp_path / "bad.jsonl"
        dataio.write_triplets(path, [bad])
        with pytest.raises(dataio.DataFileError, match="self_pair"):
            dataio.read_triplets(path)
        # skipping validation still loads the schema
        assert dataio.read_triplets(path, cfg=None)[0].pair_id == "x__x"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert dataio.read_triplets(path) == []


class TestOtherArtifacts:
    def test_pairs_round_trip_with_corpus(self, tmp_path):
        from cirforge.core import ImagePair

        corpus = {
            "a": ImageRef(id="a", path="a.png", class_id="h1"),
            "b": ImageRef(id="b", path="b.png", class_id="h2"),
        }
        pair = ImagePair(
            pair_id="a__b", query=corpus["a"], target=corpus["b"],
            emb_similarity=0.75, hash_distance=28,
        )
        path = tmp_path / "pairs.jsonl"
        dataio.write_pairs(path, [pair])
        (loaded,) = dataio.read_pairs(path, corpus)
        assert loaded == pair
        (bare,) = dataio.read_pairs(path)
        assert bare.query.path == ""

    def test_pair_referencing_unknown_image(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text(
            json.dumps({"pair_id": "a__b", "query": "a", "target": "b", "emb_sim": 0.5, "hash_dist": 30})
            + "\n"
        )
        with pytest.raises(dataio.DataFileError, match="absent from corpus"):
            dataio.read_pairs(path, {"a": ImageRef(id="a")})

    def test_hashes_round_trip(self, tmp_path):
        hashes = {"a": PerceptualHash(bits=0xDEADBEEF), "b": PerceptualHash(bits=0)}
        path = tmp_path / "hashes.jsonl"
        dataio.write_hashes(path, hashes)
        assert dataio.read_hashes(path) == hashes
        first = json.loads(path.read_text().splitlines()[0])
        assert set(first) == {"id", "phash", "alg", "size"}
        assert len(first["phash"]) == 16

    def test_embeddings_round_trip_and_validation(self, tmp_path):
        records = [EmbeddingRecord.of("a", [1.0, 2.0]), EmbeddingRecord.of("b", [0.5, -1.0])]
        path = tmp_path / "emb.jsonl"
        dataio.write_embeddings(path, records)
        store = dataio.read_embeddings(path)
        assert store.ids == ("a", "b")
        assert store.dim == 2

    def test_embeddings_mixed_dims_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"id": "a", "vec": [1.0]}\n{"id": "b", "vec": [1.0, 2.0]}\n')
        with pytest.raises(dataio.DataFileError, match="mixed"):
            dataio.read_embeddings(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = dataio.DatasetManifest(
            name="demo",
            splits={"train": ["a__b"], "val": [], "test": []},
            corpus=[ImageRef(id="a", path="a.png", class_id="h1"), ImageRef(id="b", path="b.png")],
            config_digest=dataio.config_digest({"permute": {"seed": 42}}),
        )
        path = tmp_path / "manifest.json"
        dataio.write_manifest(path, manifest)
        loaded = dataio.read_manifest(path)
        assert loaded.name == "demo"
        assert loaded.splits["train"] == ["a__b"]
        assert loaded.corpus_by_id()["a"].class_id == "h1"
        assert loaded.config_digest == manifest.config_digest

    def test_split_overlap_is_an_error(self):
        with pytest.raises(ValueError, match="both"):
            dataio.DatasetManifest(
                name="demo",
                splits={"train": ["p1"], "val": ["p1"]},
                corpus=[],
            )

    def test_config_digest_is_stable(self):
        a = dataio.config_digest({"x": 1, "y": [1, 2]})
        b = dataio.config_digest({"y": [1, 2], "x": 1})
        assert a == b and len(a) == 16


class TestComputeStats:
    def make_manifest(self, pair_ids):
        return dataio.DatasetManifest(
            name="demo", splits={"train": pair_ids, "val": [], "test": []}, corpus=[]
        )

    def test_fixture_counts(self, tmp_path):
        # 3 pairs, 12 triplets, 5 distinct distractors
        triplets = []
        distractor_sets = [("d1", "d2"), ("d2", "d3"), ("d4", "d5")]
        for p in range(3):
            for c in range(4):
                t = make_triplet(p, distractors=distractor_sets[p])
                triplets.append(
                    CIRTriplet(
                        pair_id=t.pair_id,
                        query_id=t.query_id,
                        target_id=t.target_id,
                        caption=Caption(
                            text=f"Caption {c} for pair {p}.",
                            kind=CaptionKind.ATOMIC,
                            source_indices=(0,),
                            token_count=8,
                        ),
                        distractor_ids=t.distractor_ids,
                    )
                )
        path = tmp_path / "train.jsonl"
        dataio.write_triplets(path, triplets)
        manifest = self.make_manifest([f"q{p}__t{p}" for p in range(3)])
        stats = dataio.compute_stats(manifest, {"train": path})
        train = stats.splits["train"]
        assert train.image_pairs == 3
        assert train.cir_triplets == 12
        # 3 queries + 3 targets + 5 distinct distractors
        assert train.total_images == 11

    def test_recount_matches_independent_stream(self, tmp_path):
        triplets = [make_triplet(i) for i in range(7)]
        path = tmp_path / "train.jsonl"
        dataio.write_triplets(path, triplets)
        manifest = self.make_manifest([t.pair_id for t in triplets])
        stats = dataio.compute_stats(manifest, {"train": path})

        pairs, count, images = set(), 0, set()
        for line in path.read_text().splitlines():
            obj = json.loads(line)
            count += 1
            pairs.add(obj["pair_id"])
            images.add(obj["query_id"])
            images.add(obj["target_id"])
            images.update(obj["distractor_ids"])
        assert stats.splits["train"].image_pairs == len(pairs)
        assert stats.splits["train"].cir_triplets == count
        assert stats.splits["train"].total_images == len(images)

    def test_token_averages_from_ledger(self, tmp_path):
        triplets = [make_triplet(0)]
        path = tmp_path / "train.jsonl"
        dataio.write_triplets(path, triplets)
        ledger = UsageLedger()
        for stage in range(3):
            ledger.add(
                ChatResponse(request_id=f"r{stage}", text="", prompt_tokens=100, output_tokens=10),
                pair_id="q0__t0",
            )
        stats = dataio.compute_stats(self.make_manifest(["q0__t0"]), {"train": path}, ledger)
        assert stats.avg_prompt_tokens == 300.0
        assert stats.avg_output_tokens == 30.0

    def test_empty_split_is_zero_not_error(self, tmp_path):
        path = tmp_path / "val.jsonl"
        path.write_text("")
        stats = dataio.compute_stats(self.make_manifest([]), {"val": path})
        assert stats.splits["val"].image_pairs == 0
        assert stats.splits["val"].cir_triplets == 0

    def test_undeclared_pair_is_an_error(self, tmp_path):
        path = tmp_path / "train.jsonl"
        dataio.write_triplets(path, [make_triplet(9)])
        with pytest.raises(dataio.DataFileError, match="not in manifest"):
            dataio.compute_stats(self.make_manifest(["other__pair"]), {"train": path})

    def test_table_renders_all_columns(self, tmp_path):
        path = tmp_path / "train.jsonl"
        dataio.write_triplets(path, [make_triplet(i) for i in range(3)])
        manifest = self.make_manifest([f"q{i}__t{i}" for i in range(3)])
        table = dataio.format_stats_table(dataio.compute_stats(manifest, {"train": path}))
        assert "Image Pairs" in table and "CIR Triplets" in table and "Total Images" in table
        assert "train" in table

    def test_table_renders_large_counts_with_separators(self):
        stats = dataio.DatasetStats(
            name="big",
            splits={"train": dataio.SplitStats(image_pairs=65364, cir_triplets=415447, total_images=129225)},
            avg_prompt_tokens=3310.0,
            avg_output_tokens=1750.0,
        )
        table = dataio.format_stats_table(stats)
        assert "65,364" in table and "415,447" in table and "129,225" in table
        assert "3,310.0" in table and "1,750.0" in table
