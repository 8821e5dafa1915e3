"""Tests for teacher-forcing batch construction and prefetching."""

from collections.abc import Iterator

import numpy as np
import pytest

from nmt_transformer.batching import (
    Batch,
    EncodedPair,
    batches_from_encoded,
    collate,
    encode_corpus,
    make_batches,
    prefetch,
)
from nmt_transformer.preprocess import ParallelCorpus, SentencePair
from nmt_transformer.vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary


@pytest.fixture
def numbered_corpus() -> ParallelCorpus:
    """130 pairs of varying length over a tiny vocabulary."""
    words = ["a", "b", "c", "d", "e"]
    return ParallelCorpus.from_pairs(
        SentencePair(
            tuple(words[j % 5] for j in range(1 + i % 4)),
            tuple(words[(j + 1) % 5] for j in range(1 + i % 6)),
        )
        for i in range(130)
    )


@pytest.fixture
def letter_vocab() -> Vocabulary:
    """Vocabulary covering a-e."""
    return Vocabulary.build([["a", "b", "c", "d", "e"]])


class TestCollate:
    """Test padding and label alignment."""

    def test_hand_built_alignment(self) -> None:
        batch = collate([EncodedPair(source=(BOS_ID, 7, EOS_ID), target=(4, 5, 6))])
        np.testing.assert_array_equal(batch.tgt_in, [[BOS_ID, 4, 5, 6]])
        np.testing.assert_array_equal(batch.labels, [[4, 5, 6, EOS_ID]])
        # label[t] is what follows decoder input[0..t]
        assert batch.labels[0, 0] == batch.tgt_in[0, 1]

    def test_pads_to_longest(self) -> None:
        batch = collate(
            [
                EncodedPair(source=(BOS_ID, 4, EOS_ID), target=(4,)),
                EncodedPair(source=(BOS_ID, 4, 5, 6, EOS_ID), target=(4, 5, 6)),
            ]
        )
        assert batch.src.shape == (2, 5)
        np.testing.assert_array_equal(batch.src[0], [BOS_ID, 4, EOS_ID, PAD_ID, PAD_ID])
        np.testing.assert_array_equal(batch.labels[0], [4, EOS_ID, PAD_ID, PAD_ID])
        assert batch.n_tokens == 2 + 4
        assert len(batch) == 2

    def test_empty_batch(self) -> None:
        with pytest.raises(ValueError, match="empty"):
            collate([])


class TestMakeBatches:
    """Test encoding, batching and shuffling of whole corpora."""

    def test_batch_sizes(self, numbered_corpus: ParallelCorpus, letter_vocab: Vocabulary) -> None:
        batches = list(make_batches(numbered_corpus, letter_vocab, letter_vocab, 64, seed=0))
        assert [len(batch) for batch in batches] == [64, 64, 2]

    def test_every_pair_once_per_epoch(
        self, numbered_corpus: ParallelCorpus, letter_vocab: Vocabulary
    ) -> None:
        batches = list(make_batches(numbered_corpus, letter_vocab, letter_vocab, 16, seed=5))
        assert sum(len(batch) for batch in batches) == 130
        assert sum(batch.n_tokens for batch in batches) == sum(len(p.target) + 1 for p in numbered_corpus)

    def test_seed_controls_order(self, numbered_corpus: ParallelCorpus, letter_vocab: Vocabulary) -> None:
        def first_src(seed: int) -> np.ndarray:
            return next(make_batches(numbered_corpus, letter_vocab, letter_vocab, 130, seed=seed)).src

        np.testing.assert_array_equal(first_src(1), first_src(1))
        assert not np.array_equal(first_src(1), first_src(2))

    def test_no_seed_keeps_corpus_order(self) -> None:
        encoded = [EncodedPair(source=(BOS_ID, 4 + i, EOS_ID), target=(4,)) for i in range(4)]
        batch = next(batches_from_encoded(encoded, 4, seed=None))
        np.testing.assert_array_equal(batch.src[:, 1], [4, 5, 6, 7])

    def test_overlong_pairs_skipped(self, letter_vocab: Vocabulary, caplog: pytest.LogCaptureFixture) -> None:
        corpus = ParallelCorpus.from_pairs(
            [SentencePair(("a",) * 8, ("b",)), SentencePair(("a",), ("b",) * 9), SentencePair(("a",), ("b",))]
        )
        encoded = encode_corpus(corpus, letter_vocab, letter_vocab, max_seq_len=10)
        assert len(encoded) == 2
        assert "Skipping overlong pair - index: 1" in caplog.text

    def test_unknown_tokens_map_to_unk(self, letter_vocab: Vocabulary) -> None:
        corpus = ParallelCorpus.from_pairs([SentencePair(("zz",), ("a",))])
        encoded = encode_corpus(corpus, letter_vocab, letter_vocab, max_seq_len=10)
        assert encoded[0].source == (BOS_ID, 3, EOS_ID)

    def test_invalid_batch_size(self) -> None:
        with pytest.raises(ValueError, match="batch_size"):
            list(batches_from_encoded([], 0, seed=None))


class TestPrefetch:
    """Test the background batch producer."""

    def test_preserves_order(self, numbered_corpus: ParallelCorpus, letter_vocab: Vocabulary) -> None:
        direct = list(make_batches(numbered_corpus, letter_vocab, letter_vocab, 8, seed=4))
        prefetched = list(prefetch(make_batches(numbered_corpus, letter_vocab, letter_vocab, 8, seed=4), 2))
        assert len(prefetched) == len(direct)
        for left, right in zip(direct, prefetched, strict=True):
            np.testing.assert_array_equal(left.src, right.src)
            np.testing.assert_array_equal(left.labels, right.labels)

    def test_producer_error_reaches_consumer(self) -> None:
        def broken() -> Iterator[Batch]:
            yield collate([EncodedPair(source=(BOS_ID, 4, EOS_ID), target=(4,))])
            msg = "corrupt shard"
            raise RuntimeError(msg)

        consumed = prefetch(broken(), 1)
        assert len(next(consumed)) == 1
        with pytest.raises(RuntimeError, match="corrupt shard"):
            next(consumed)

    def test_early_exit_stops_worker(self, numbered_corpus: ParallelCorpus, letter_vocab: Vocabulary) -> None:
        consumed = prefetch(make_batches(numbered_corpus, letter_vocab, letter_vocab, 1, seed=0), 1)
        next(consumed)
        consumed.close()
