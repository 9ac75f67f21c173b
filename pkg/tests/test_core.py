import numpy as np
import pytest
from hypothesis import given, strategies as st

from cirforge.core import (
    Caption,
    CaptionKind,
    CIRTriplet,
    EmbeddingRecord,
    EmbeddingStore,
    ImageRef,
    ValidationConfig,
    cosine_similarity,
    validate_triplet,
)

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def vec_pair_strategy():
    return st.integers(min_value=1, max_value=8).flatmap(
        lambda d: st.tuples(
            st.lists(finite_floats, min_size=d, max_size=d),
            st.lists(finite_floats, min_size=d, max_size=d),
        )
    )


class TestCosineSimilarity:
    def test_identical_directions(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_analytic_diagonal(self):
        # analytic oracle: cos(45 deg) = sqrt(2)/2
        assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(np.sqrt(2) / 2, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            cosine_similarity([1, 0], [1, 0, 0])

    def test_zero_norm(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity([0, 0], [1, 0])

    @staticmethod
    def _usable(*vecs) -> bool:
        # squared subnormals underflow to zero norm; those are covered by
        # the explicit zero-norm error test
        return all(np.linalg.norm(v) > 0 for v in vecs)

    @given(vec_pair_strategy())
    def test_symmetry(self, pair):
        a, b = pair
        if not self._usable(a, b):
            return
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)

    @given(vec_pair_strategy(), st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariance(self, pair, c):
        a, b = pair
        if not self._usable(a, b) or not self._usable([c * x for x in a]):
            return
        scaled = [c * x for x in a]
        assert cosine_similarity(scaled, b) == pytest.approx(
            cosine_similarity(a, b), abs=1e-9
        )

    def test_range_clamped(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.normal(size=5)
            b = rng.normal(size=5)
            assert -1.0 <= cosine_similarity(a, b) <= 1.0


def _caption(text="Add a lamp.", kind=CaptionKind.ATOMIC, indices=(0,), tokens=5):
    return Caption(text=text, kind=kind, source_indices=indices, token_count=tokens)


def _triplet(**kwargs):
    defaults = dict(
        pair_id="q__t",
        query_id="q",
        target_id="t",
        caption=_caption(),
        distractor_ids=("d1", "d2", "d3"),
    )
    defaults.update(kwargs)
    return CIRTriplet(**defaults)


class TestValidateTriplet:
    def test_well_formed(self):
        assert validate_triplet(_triplet()) == []

    def test_forbidden_verb(self):
        t = _triplet(caption=_caption(text="Ensure the bed stays white."))
        assert validate_triplet(t) == ["forbidden_verb"]

    def test_forbidden_verb_inflection(self):
        t = _triplet(caption=_caption(text="Maintaining symmetry, move the bed."))
        assert "forbidden_verb" in validate_triplet(t)

    def test_forbidden_verb_is_whole_word(self):
        t = _triplet(caption=_caption(text="The insurance poster stays."))
        assert validate_triplet(t) == []

    def test_self_pair(self):
        t = _triplet(query_id="q", target_id="q", distractor_ids=())
        assert validate_triplet(t) == ["self_pair"]

    def test_token_over_limit(self):
        t = _triplet(caption=_caption(tokens=78))
        assert validate_triplet(t) == ["token_over_limit"]
        assert validate_triplet(t, ValidationConfig(token_limit=100)) == []

    def test_source_indices_arity(self):
        bad = _caption(kind=CaptionKind.COMPOUND2, indices=(1,), tokens=9)
        assert validate_triplet(_triplet(caption=bad)) == ["bad_source_indices"]
        dupe = _caption(kind=CaptionKind.COMPOUND2, indices=(1, 1), tokens=9)
        assert validate_triplet(_triplet(caption=dupe)) == ["bad_source_indices"]

    def test_distractor_rules(self):
        t = _triplet(distractor_ids=("q", "x"))
        assert validate_triplet(t) == ["distractor_overlap"]
        t = _triplet(distractor_ids=("a", "a"))
        assert validate_triplet(t) == ["distractor_duplicate"]
        t = _triplet(distractor_ids=tuple(f"d{i}" for i in range(6)))
        assert validate_triplet(t) == ["too_many_distractors"]

    def test_purity(self):
        t = _triplet(caption=_caption(text="Ensure it.", tokens=90), query_id="t")
        assert validate_triplet(t) == validate_triplet(t)


class TestEmbeddingTypes:
    def test_record_dim_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            EmbeddingRecord(image_id="a", vector=(1.0, 2.0), dim=3)

    def test_record_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            EmbeddingRecord.of("a", [1.0, float("nan")])

    def test_store_orders_ids(self):
        store = EmbeddingStore(
            [EmbeddingRecord.of("b", [1, 0]), EmbeddingRecord.of("a", [0, 1])]
        )
        assert store.ids == ("a", "b")
        assert store.vector("a").tolist() == [0, 1]

    def test_store_rejects_mixed_dims(self):
        with pytest.raises(ValueError, match="mixed"):
            EmbeddingStore([EmbeddingRecord.of("a", [1]), EmbeddingRecord.of("b", [1, 2])])

    def test_store_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            EmbeddingStore([EmbeddingRecord.of("a", [1]), EmbeddingRecord.of("a", [2])])

    def test_image_ref_requires_id(self):
        with pytest.raises(ValueError):
            ImageRef(id="")
