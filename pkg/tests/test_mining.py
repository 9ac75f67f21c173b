import numpy as np
import pytest

from cirforge.core import EmbeddingRecord, EmbeddingStore
from cirforge.mining import (
    MiningConfig,
    PerceptualHash,
    compute_phash,
    hamming_distance,
    mine_pairs,
)

from oracles import brute_force_mine


def checkerboard_fixture():
    y, x = np.mgrid[0:64, 0:64]
    return ((x // 8 + y // 8) % 2) * 200.0 + x * 0.8


class TestComputePhash:
    def test_deterministic(self):
        img = checkerboard_fixture()
        assert compute_phash(img).bits == compute_phash(img).bits

    def test_constant_image_all_zero_bits(self):
        assert compute_phash(np.full((64, 64), 128.0)).bits == 0
        assert compute_phash(np.zeros((32, 32))).bits == 0

    def test_rotation_golden(self):
        # frozen from this implementation's own oracle run on the fixture
        h1 = compute_phash(checkerboard_fixture())
        h2 = compute_phash(np.rot90(checkerboard_fixture()))
        assert h1.to_hex() == "0a00000000000000"
        assert h2.to_hex() == "00d5d5d5d5d580d5"
        assert hamming_distance(h1, h2) == 33

    def test_brightness_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            base = rng.normal(size=(48, 48)).cumsum(axis=0).cumsum(axis=1)
            base = base - base.min() + 1.0
            scaled = base * rng.uniform(0.1, 10.0)
            assert hamming_distance(compute_phash(base), compute_phash(scaled)) == 0

    def test_rejects_small_rasters(self):
        with pytest.raises(ValueError, match="at least"):
            compute_phash(np.zeros((16, 16)))

    def test_rejects_empty_and_non_2d(self):
        with pytest.raises(ValueError):
            compute_phash(np.zeros((0, 0)))
        with pytest.raises(ValueError):
            compute_phash(np.zeros((64, 64, 3)))

    def test_hex_round_trip(self):
        h = compute_phash(checkerboard_fixture())
        again = PerceptualHash.from_hex(h.to_hex())
        assert again == h


class TestHammingDistance:
    def test_identical(self):
        h = PerceptualHash(bits=0x1234)
        assert hamming_distance(h, h) == 0

    def test_all_bits_differ(self):
        zero = PerceptualHash(bits=0)
        ones = PerceptualHash(bits=(1 << 64) - 1)
        assert hamming_distance(zero, ones) == 64

    def test_single_bit(self):
        assert hamming_distance(PerceptualHash(bits=0), PerceptualHash(bits=1 << 17)) == 1

    def test_configuration_mismatch(self):
        a = PerceptualHash(bits=0, hash_size=8)
        b = PerceptualHash(bits=0, hash_size=4)
        with pytest.raises(ValueError, match="mismatch"):
            hamming_distance(a, b)


def make_inputs(vectors, classes, hash_bits):
    store = EmbeddingStore([EmbeddingRecord.of(k, v) for k, v in vectors.items()])
    hashes = {k: PerceptualHash(bits=b) for k, b in hash_bits.items()}
    return store, classes, hashes


def bits_with_distance(d: int) -> int:
    return (1 << d) - 1


class TestMinePairs:
    def test_toy_corpus_matches_oracle(self):
        # 2-D embeddings placed by hand; classes split the plane
        vectors = {
            "a": [1.0, 0.0],
            "b": [0.9, 0.1],
            "c": [0.0, 1.0],
            "d": [-0.1, 0.9],
        }
        classes = {"a": "h1", "b": "h2", "c": "h1", "d": "h2"}
        hash_bits = {
            "a": 0,
            "b": bits_with_distance(30),
            "c": bits_with_distance(28),
            "d": bits_with_distance(60),
        }
        store, classes, hashes = make_inputs(vectors, classes, hash_bits)
        cfg = MiningConfig(hash_min=25, hash_max=35)
        got = {(p.query.id, p.target.id, p.hash_distance) for p in mine_pairs(store, classes, hashes, cfg)}
        expected = set(
            brute_force_mine(
                vectors, classes, {k: h.bits for k, h in hashes.items()}, 25, 35
            )
        )
        assert got == expected

    def test_randomized_corpora_match_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(10):
            n = int(rng.integers(5, 60))
            ids = [f"i{k:03d}" for k in range(n)]
            vectors = {i: rng.normal(size=16).tolist() for i in ids}
            classes = {i: f"c{int(rng.integers(2, 8))}" for i in ids}
            hash_bits = {i: int(rng.integers(0, 2**63)) for i in ids}
            store, _, hashes = make_inputs(vectors, classes, hash_bits)
            cfg = MiningConfig(hash_min=25, hash_max=35)
            got = {
                (p.query.id, p.target.id, p.hash_distance)
                for p in mine_pairs(store, classes, hashes, cfg)
            }
            expected = set(brute_force_mine(vectors, classes, hash_bits, 25, 35))
            assert got == expected, f"trial {trial}"

    def test_band_boundaries_inclusive(self):
        for dist, kept in ((24, False), (25, True), (35, True), (36, False)):
            vectors = {"q": [1.0, 0.0], "t": [0.9, 0.2]}
            classes = {"q": "h1", "t": "h2"}
            hash_bits = {"q": 0, "t": bits_with_distance(dist)}
            store, _, hashes = make_inputs(vectors, classes, hash_bits)
            pairs = mine_pairs(store, classes, hashes, MiningConfig(hash_min=25, hash_max=35))
            ids = {(p.query.id, p.target.id) for p in pairs}
            assert (("q", "t") in ids) is kept, f"distance {dist}"

    def test_same_class_exhausts_candidates(self):
        vectors = {"a": [1.0, 0.0], "b": [0.99, 0.01], "c": [0.98, 0.02]}
        classes = {"a": "h1", "b": "h1", "c": "h1"}
        hash_bits = {"a": 0, "b": bits_with_distance(30), "c": bits_with_distance(31)}
        store, _, hashes = make_inputs(vectors, classes, hash_bits)
        assert mine_pairs(store, classes, hashes) == []

    def test_class_exclusion_can_be_disabled(self):
        vectors = {"a": [1.0, 0.0], "b": [0.99, 0.01]}
        classes = {"a": "h1", "b": "h1"}
        hash_bits = {"a": 0, "b": bits_with_distance(30)}
        store, _, hashes = make_inputs(vectors, classes, hash_bits)
        pairs = mine_pairs(store, classes, hashes, MiningConfig(exclude_same_class=False))
        assert {(p.query.id, p.target.id) for p in pairs} == {("a", "b"), ("b", "a")}

    def test_input_order_invariance(self):
        rng = np.random.default_rng(3)
        ids = [f"x{k}" for k in range(20)]
        records = [EmbeddingRecord.of(i, rng.normal(size=4)) for i in ids]
        classes = {i: f"c{k % 3}" for k, i in enumerate(ids)}
        hashes = {i: PerceptualHash(bits=int(rng.integers(0, 2**40))) for i in ids}
        cfg = MiningConfig(hash_min=0, hash_max=64)
        forward = mine_pairs(EmbeddingStore(records), classes, hashes, cfg)
        backward = mine_pairs(EmbeddingStore(records[::-1]), classes, hashes, cfg)
        assert forward == backward

    def test_missing_hash_and_class(self):
        vectors = {"a": [1.0, 0.0], "b": [0.0, 1.0]}
        store = EmbeddingStore([EmbeddingRecord.of(k, v) for k, v in vectors.items()])
        hashes = {"a": PerceptualHash(bits=0), "b": PerceptualHash(bits=7)}
        with pytest.raises(ValueError, match="missing class"):
            mine_pairs(store, {"a": "h1"}, hashes)
        with pytest.raises(ValueError, match="missing hash"):
            mine_pairs(store, {"a": "h1", "b": "h2"}, {"a": PerceptualHash(bits=0)})

    def test_emb_similarity_and_pair_id_recorded(self):
        vectors = {"q": [1.0, 0.0], "t": [1.0, 1.0]}
        classes = {"q": None, "t": None}
        hash_bits = {"q": 0, "t": bits_with_distance(30)}
        store, _, hashes = make_inputs(vectors, classes, hash_bits)
        (pair,) = [p for p in mine_pairs(store, classes, hashes) if p.query.id == "q"]
        assert pair.pair_id == "q__t"
        assert pair.emb_similarity == pytest.approx(np.sqrt(2) / 2, abs=1e-12)
        assert pair.hash_distance == 30

    def test_tiled_evaluation_equals_sequential(self, monkeypatch):
        # shrink the tile so a 20-image corpus spans several tiles
        import cirforge.mining as mining_module

        rng = np.random.default_rng(6)
        ids = [f"t{k:02d}" for k in range(20)]
        vectors = {i: rng.normal(size=8).tolist() for i in ids}
        classes = {i: f"c{k % 4}" for k, i in enumerate(ids)}
        hash_bits = {i: int(rng.integers(0, 2**50)) for i in ids}
        store, _, hashes = make_inputs(vectors, classes, hash_bits)
        cfg = MiningConfig(hash_min=0, hash_max=64)
        whole = mine_pairs(store, classes, hashes, cfg)
        monkeypatch.setattr(mining_module, "_TILE_ROWS", 3)
        tiled = mine_pairs(store, classes, hashes, cfg)
        assert tiled == whole

    def test_dedupe_symmetric(self):
        vectors = {"a": [1.0, 0.0], "b": [0.99, 0.01]}
        classes = {"a": None, "b": None}
        hash_bits = {"a": 0, "b": bits_with_distance(30)}
        store, _, hashes = make_inputs(vectors, classes, hash_bits)
        both = mine_pairs(store, classes, hashes, MiningConfig())
        assert len(both) == 2
        deduped = mine_pairs(store, classes, hashes, MiningConfig(dedupe_symmetric=True))
        assert [(p.query.id, p.target.id) for p in deduped] == [("a", "b")]
