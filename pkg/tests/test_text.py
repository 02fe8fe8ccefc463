"""Tests for vocabulary construction, tokenization, and masking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dreamnet import text as tx
from dreamnet.errors import InputError


@pytest.fixture(scope="module")
def fixture_vocab():
    corpus = [
        "i was flying over the city",
        "i was falling into dark water",
        "the dog was chasing me through school",
    ]
    return tx.build_vocab(corpus, min_freq=1)


class TestBuildVocab:
    def test_min_freq_filters(self):
        v = tx.build_vocab(["a a b"], min_freq=2)
        assert len(v) == 5  # 4 reserved + "a"
        assert v.id("a") == 4
        assert v.id("b") == tx.UNK_ID

    def test_single_token_corpus(self):
        v = tx.build_vocab(["x"], min_freq=1)
        assert len(v) == 5

    def test_empty_corpus_rejected(self):
        with pytest.raises(InputError):
            tx.build_vocab([], min_freq=1)

    def test_ordering_frequency_then_lexicographic(self):
        v = tx.build_vocab(["b b a a c"], min_freq=1)
        assert [v.token(i) for i in (4, 5, 6)] == ["a", "b", "c"]

    def test_deterministic_across_builds(self):
        rng = np.random.default_rng(42)
        words = [f"w{int(i)}" for i in rng.integers(0, 60, size=2000)]
        corpus = [" ".join(words[i:i + 20]) for i in range(0, 2000, 20)]
        v1 = tx.build_vocab(corpus, min_freq=2)
        v2 = tx.build_vocab(corpus, min_freq=2)
        assert v1 == v2

    def test_save_load_roundtrip(self, fixture_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        fixture_vocab.save(path)
        assert tx.Vocab.load(path) == fixture_vocab
        # line number == id
        lines = path.read_text().splitlines()
        assert lines[0] == "<pad>" and lines[3] == "<mask>"


class TestTokenize:
    def test_empty_text(self, fixture_vocab):
        seq = tx.tokenize("", fixture_vocab, max_len=8)
        assert seq.ids[0] == tx.CLS_ID
        assert seq.true_len == 1
        assert all(i == tx.PAD_ID for i in seq.ids[1:])

    def test_known_words(self, fixture_vocab):
        seq = tx.tokenize("I was flying.", fixture_vocab, max_len=8)
        expected = [tx.CLS_ID, fixture_vocab.id("i"), fixture_vocab.id("was"),
                    fixture_vocab.id("flying")]
        assert seq.ids[:4] == expected
        assert seq.true_len == 4

    def test_truncation_to_max_len(self, fixture_vocab):
        long_text = " ".join(["word"] * 300)
        seq = tx.tokenize(long_text, fixture_vocab, max_len=256)
        assert len(seq.ids) == 256
        assert seq.true_len == 256

    def test_unknown_maps_to_unk(self, fixture_vocab):
        seq = tx.tokenize("zzzunseen", fixture_vocab, max_len=4)
        assert seq.ids[1] == tx.UNK_ID

    def test_roundtrip_known_vocabulary(self, fixture_vocab):
        original = "i was flying over the water"
        seq = tx.tokenize(original, fixture_vocab, max_len=32)
        assert tx.detokenize(seq, fixture_vocab) == original


class TestMaskTokens:
    def _seq(self, vocab, n_words=20):
        return tx.tokenize(" ".join(["flying"] * n_words), vocab, max_len=32)

    def test_rate_zero_unchanged(self, fixture_vocab):
        seq = self._seq(fixture_vocab)
        masked, targets = tx.mask_tokens(seq, rate=0.0, rng=np.random.default_rng(0))
        assert masked.ids == seq.ids
        assert targets == []

    def test_rate_one_masks_all_eligible(self, fixture_vocab):
        seq = self._seq(fixture_vocab)
        masked, targets = tx.mask_tokens(seq, rate=1.0, rng=np.random.default_rng(0))
        assert len(targets) == seq.true_len - 1
        assert all(masked.ids[p] == tx.MASK_ID for p, _ in targets)

    def test_rate_out_of_range(self, fixture_vocab):
        with pytest.raises(InputError):
            tx.mask_tokens(self._seq(fixture_vocab), rate=1.5)

    def test_special_positions_never_masked(self, fixture_vocab):
        seq = self._seq(fixture_vocab, n_words=10)
        masked, _ = tx.mask_tokens(seq, rate=1.0, rng=np.random.default_rng(1))
        assert masked.ids[0] == tx.CLS_ID
        assert all(i == tx.PAD_ID for i in masked.ids[seq.true_len:])

    def test_targets_record_originals(self, fixture_vocab):
        seq = self._seq(fixture_vocab)
        masked, targets = tx.mask_tokens(seq, rate=0.5, rng=np.random.default_rng(2))
        for pos, orig in targets:
            assert seq.ids[pos] == orig
            assert masked.ids[pos] == tx.MASK_ID

    def test_reproducible_given_seed(self, fixture_vocab):
        seq = self._seq(fixture_vocab)
        m1, t1 = tx.mask_tokens(seq, rate=0.15, rng=np.random.default_rng(7))
        m2, t2 = tx.mask_tokens(seq, rate=0.15, rng=np.random.default_rng(7))
        assert m1.ids == m2.ids and t1 == t2

    def test_empirical_rate_concentrates(self, fixture_vocab):
        rng = np.random.default_rng(3)
        eligible = masked_count = 0
        seq = self._seq(fixture_vocab, n_words=31)
        while eligible < 10_000:
            _, targets = tx.mask_tokens(seq, rate=0.15, rng=rng)
            eligible += seq.true_len - 1
            masked_count += len(targets)
        frac = masked_count / eligible
        assert 0.14 <= frac <= 0.16


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from("flying water dog city school over".split()), min_size=1, max_size=20))
def test_roundtrip_property(words):
    vocab = tx.build_vocab(["flying water dog city school over"], min_freq=1)
    original = " ".join(words)
    seq = tx.tokenize(original, vocab, max_len=32)
    assert tx.detokenize(seq, vocab) == original
