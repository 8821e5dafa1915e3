# pyright: strict
"""Teacher-forcing batches: encoding, seeded shuffling, padding and prefetch."""

import logging
import queue
import threading
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from typing import cast

import numpy as np

from .preprocess import ParallelCorpus
from .tensor import IdArray
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

logger = logging.getLogger(__name__)

# Room reserved for bos/eos in every encoded sequence.
SPECIALS_MARGIN = 2


@dataclass(frozen=True)
class EncodedPair:
    """One sentence pair as ids; ``source`` carries bos/eos, ``target`` does not."""

    source: tuple[int, ...]
    target: tuple[int, ...]


@dataclass(frozen=True)
class Batch:
    """Padded arrays for one optimizer step.

    Attributes:
        src: Source ids ``bos + source + eos``, ``[batch, src_len]``.
        tgt_in: Decoder input ``bos + target``, ``[batch, tgt_len]``.
        labels: Prediction targets ``target + eos``, aligned with ``tgt_in``.

    """

    src: IdArray
    tgt_in: IdArray
    labels: IdArray

    def __len__(self) -> int:
        """Number of sentence pairs."""
        return int(self.src.shape[0])

    @property
    def n_tokens(self) -> int:
        """Number of non-pad label positions."""
        return int(np.count_nonzero(self.labels != PAD_ID))


def encode_corpus(
    corpus: ParallelCorpus,
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    max_seq_len: int,
) -> list[EncodedPair]:
    """Encode every pair, skipping any whose side exceeds ``max_seq_len - 2`` tokens."""
    limit = max_seq_len - SPECIALS_MARGIN
    encoded: list[EncodedPair] = []
    skipped = 0
    for index, pair in enumerate(corpus):
        if len(pair.source) > limit or len(pair.target) > limit:
            skipped += 1
            logger.warning(
                "Skipping overlong pair - index: %d, src_len: %d, tgt_len: %d, limit: %d",
                index,
                len(pair.source),
                len(pair.target),
                limit,
            )
            continue
        encoded.append(
            EncodedPair(
                source=tuple(vocab_src.encode(pair.source, add_bos_eos=True)),
                target=tuple(vocab_tgt.encode(pair.target)),
            )
        )
    if skipped:
        logger.info("Encoded corpus - kept: %d, skipped: %d", len(encoded), skipped)
    return encoded


def _pad(rows: Sequence[Sequence[int]]) -> IdArray:
    width = max(len(row) for row in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def collate(pairs: Sequence[EncodedPair]) -> Batch:
    """Pad a group of pairs into a :class:`Batch`.

    Raises:
        ValueError: If ``pairs`` is empty

    """
    if not pairs:
        msg = "Cannot collate an empty batch"
        raise ValueError(msg)
    return Batch(
        src=_pad([pair.source for pair in pairs]),
        tgt_in=_pad([(BOS_ID, *pair.target) for pair in pairs]),
        labels=_pad([(*pair.target, EOS_ID) for pair in pairs]),
    )


def batches_from_encoded(
    encoded: Sequence[EncodedPair],
    batch_size: int,
    seed: int | None,
) -> Iterator[Batch]:
    """Yield batches in a seeded random order; ``seed=None`` keeps corpus order."""
    if batch_size < 1:
        msg = f"batch_size must be at least 1, got {batch_size}"
        raise ValueError(msg)
    order = (
        np.random.default_rng(seed).permutation(len(encoded))
        if seed is not None
        else np.arange(len(encoded))
    )
    for start in range(0, len(order), batch_size):
        yield collate([encoded[int(i)] for i in order[start : start + batch_size]])


def make_batches(
    corpus: ParallelCorpus,
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    batch_size: int,
    seed: int | None,
    max_seq_len: int = 100,
) -> Iterator[Batch]:
    """Encode ``corpus`` and yield shuffled, padded teacher-forcing batches.

    Args:
        corpus: Tokenized sentence pairs
        vocab_src: Source vocabulary
        vocab_tgt: Target vocabulary
        batch_size: Pairs per batch; the last batch may be smaller
        seed: Shuffle seed for this epoch, or None for corpus order
        max_seq_len: Model length limit; longer pairs are skipped

    """
    encoded = encode_corpus(corpus, vocab_src, vocab_tgt, max_seq_len)
    yield from batches_from_encoded(encoded, batch_size, seed)


_DONE = object()


def prefetch(batches: Iterable[Batch], depth: int = 2) -> Iterator[Batch]:
    """Prepare batches on a background thread through a bounded queue.

    Order is preserved, so results match iterating ``batches`` directly.
    Exceptions raised while producing are re-raised in the consumer.
    """
    buffer: queue.Queue[object] = queue.Queue(maxsize=max(1, depth))
    cancelled = threading.Event()

    def produce() -> None:
        try:
            for batch in batches:
                while not cancelled.is_set():
                    try:
                        buffer.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if cancelled.is_set():
                    return
            buffer.put(_DONE)
        except Exception as err:  # noqa: BLE001
            buffer.put(err)

    worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield cast("Batch", item)
    finally:
        cancelled.set()
        worker.join(timeout=1.0)
