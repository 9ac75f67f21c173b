import json

import pytest
from hypothesis import given, settings, strategies as st

from cirforge.tokenizer import (
    EOT_TOKEN,
    SOT_TOKEN,
    VocabularyError,
    byte_encoder,
    count_tokens,
    encode,
    load_vocabulary,
)


class TestByteEncoder:
    def test_bijection_over_all_bytes(self):
        enc = byte_encoder()
        assert len(enc) == 256
        assert len(set(enc.values())) == 256

    def test_printable_ascii_maps_to_itself(self):
        enc = byte_encoder()
        assert enc[ord("a")] == "a"
        assert enc[ord("!")] == "!"
        assert enc[ord(" ")] != " "  # space is displaced past U+0100


class TestLoadVocabulary:
    def test_reference_files(self, clip_vocab):
        assert len(clip_vocab) == 49408
        assert clip_vocab.sot_id == 49406
        assert clip_vocab.eot_id == 49407
        assert len(clip_vocab.merges) == 48894

    def test_toy_round_trip(self, toy_vocab):
        assert len(toy_vocab) == 30
        assert toy_vocab.token_to_id[SOT_TOKEN] == toy_vocab.sot_id

    def test_line_format_vocab(self, tmp_path, toy_vocab_files):
        _, merges_path = toy_vocab_files
        tokens = json.loads(toy_vocab_files[0].read_text())
        ordered = sorted(tokens, key=tokens.get)
        line_path = tmp_path / "vocab.txt"
        line_path.write_text("\n".join(ordered) + "\n", encoding="utf-8")
        v = load_vocabulary(line_path, merges_path)
        assert v.token_to_id == tokens

    def test_missing_file(self, toy_vocab_files):
        with pytest.raises(FileNotFoundError):
            load_vocabulary("/nonexistent/vocab.json", toy_vocab_files[1])

    def test_empty_merges_rejected(self, tmp_path, toy_vocab_files):
        empty = tmp_path / "empty_merges.txt"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(VocabularyError, match="no merges"):
            load_vocabulary(toy_vocab_files[0], empty)

    def test_malformed_merge_line(self, tmp_path, toy_vocab_files):
        bad = tmp_path / "bad_merges.txt"
        bad.write_text("a b c\n", encoding="utf-8")
        with pytest.raises(VocabularyError, match="expected 2 fields"):
            load_vocabulary(toy_vocab_files[0], bad)

    def test_merge_referencing_unknown_token(self, tmp_path, toy_vocab_files):
        bad = tmp_path / "unknown_merges.txt"
        bad.write_text("a z\n", encoding="utf-8")
        with pytest.raises(VocabularyError, match="absent from vocabulary"):
            load_vocabulary(toy_vocab_files[0], bad)

    def test_duplicate_token_rejected(self, tmp_path, toy_vocab_files):
        dupe = tmp_path / "dupe_vocab.txt"
        dupe.write_text("a\nb\na\n", encoding="utf-8")
        with pytest.raises(VocabularyError, match="duplicate"):
            load_vocabulary(dupe, toy_vocab_files[1])

    def test_non_dense_ids_rejected(self, tmp_path, toy_vocab_files):
        sparse = tmp_path / "sparse_vocab.json"
        sparse.write_text(json.dumps({"a": 0, "b": 5}), encoding="utf-8")
        with pytest.raises(VocabularyError, match="dense"):
            load_vocabulary(sparse, toy_vocab_files[1])


class TestToyBpe:
    """Merge mechanics on the hand-checkable toy vocabulary."""

    def test_full_merge_chain(self, toy_vocab):
        ids = encode(toy_vocab, "abc").ids
        assert ids == (
            toy_vocab.sot_id,
            toy_vocab.token_to_id["abc</w>"],
            toy_vocab.eot_id,
        )

    def test_unmergeable_pair_stays_split(self, toy_vocab):
        ids = encode(toy_vocab, "ab").ids
        assert ids == (
            toy_vocab.sot_id,
            toy_vocab.token_to_id["a"],
            toy_vocab.token_to_id["b</w>"],
            toy_vocab.eot_id,
        )

    def test_lowest_rank_merge_wins_first(self, toy_vocab):
        # (a,b) outranks (b,c): "abcd" must go a+b -> ab+c -> abc, then stall
        ids = encode(toy_vocab, "abcd").ids
        assert ids == (
            toy_vocab.sot_id,
            toy_vocab.token_to_id["abc"],
            toy_vocab.token_to_id["d</w>"],
            toy_vocab.eot_id,
        )

    def test_words_tokenize_independently(self, toy_vocab):
        ids = encode(toy_vocab, "abc def").ids
        assert ids == (
            toy_vocab.sot_id,
            toy_vocab.token_to_id["abc</w>"],
            toy_vocab.token_to_id["def</w>"],
            toy_vocab.eot_id,
        )

    def test_unrepresentable_character(self, toy_vocab):
        with pytest.raises(VocabularyError, match="not representable"):
            encode(toy_vocab, "z")


class TestReferenceEquivalence:
    def test_golden_corpus_bit_exact(self, clip_vocab, golden_corpus):
        assert len(golden_corpus) >= 200
        for item in golden_corpus:
            got = list(encode(clip_vocab, item["text"]).ids)
            assert got == item["ids"], f"mismatch on {item['text']!r}"

    def test_empty_string(self, clip_vocab):
        seq = encode(clip_vocab, "")
        assert seq.ids == (clip_vocab.sot_id, clip_vocab.eot_id)
        assert count_tokens(clip_vocab, "") == 2

    def test_lowercase_normalization(self, clip_vocab):
        assert encode(clip_vocab, "CAT").ids == encode(clip_vocab, "cat").ids

    def test_long_lorem_exceeds_budget(self, clip_vocab, golden_corpus):
        lorem = max(golden_corpus, key=lambda item: len(item["text"]))
        assert count_tokens(clip_vocab, lorem["text"]) > 77
        assert count_tokens(clip_vocab, lorem["text"]) == len(lorem["ids"])

    def test_count_equals_encode_length(self, clip_vocab, golden_corpus):
        for item in golden_corpus[:50]:
            assert count_tokens(clip_vocab, item["text"]) == len(
                encode(clip_vocab, item["text"]).ids
            )

    def test_count_without_specials(self, clip_vocab):
        text = "a photo of a dog"
        assert count_tokens(clip_vocab, text, include_special=False) == (
            count_tokens(clip_vocab, text) - 2
        )


text_strategy = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=80
).filter(lambda s: "&" not in s)  # entity unescape is covered by the goldens


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(text_strategy)
    def test_determinism(self, clip_vocab, text):
        assert encode(clip_vocab, text).ids == encode(clip_vocab, text).ids

    @settings(max_examples=150, deadline=None)
    @given(text_strategy, text_strategy)
    def test_monotone_concatenation_bound(self, clip_vocab, a, b):
        combined = count_tokens(clip_vocab, f"{a} {b}", include_special=False)
        separate = count_tokens(clip_vocab, a, include_special=False) + count_tokens(
            clip_vocab, b, include_special=False
        )
        assert combined <= separate

    @settings(max_examples=100, deadline=None)
    @given(text_strategy)
    def test_sequence_bracketing(self, clip_vocab, text):
        seq = encode(clip_vocab, text)
        assert seq.ids[0] == clip_vocab.sot_id
        assert seq.ids[-1] == clip_vocab.eot_id
        assert len(seq) >= 2
