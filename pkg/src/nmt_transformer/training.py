# pyright: strict
"""Training loop with validation, early stopping and per-epoch loss logs."""

import csv
import logging
import math
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .batching import Batch, EncodedPair, batches_from_encoded, encode_corpus, prefetch
from .config import TrainConfig
from .decode import greedy_translate
from .model import TransformerModel
from .optim import AdamState, NonFiniteGradientError, adam_step, clip_grad_norm, gradients_of
from .preprocess import ParallelCorpus
from .tensor import FloatArray, backward, cross_entropy, no_grad
from .vocab import PAD_ID, Vocabulary

logger = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "train_loss", "valid_loss", "seconds", "run_label")


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite.

    The model has already been restored to the parameters it had at the
    start of the failing epoch.
    """

    def __init__(self, message: str, epoch: int, log: "TrainLog | None" = None) -> None:
        """Record the epoch that diverged and the epochs completed before it."""
        super().__init__(message)
        self.epoch = epoch
        self.log = log


@dataclass(frozen=True)
class EpochRecord:
    """Losses of one finished epoch."""

    epoch: int
    train_loss: float
    valid_loss: float
    seconds: float
    run_label: str = "base"


@dataclass
class TrainLog:
    """Ordered epoch records of one run.

    Attributes:
        run_label: Dataset composition label, e.g. ``base`` or ``base+mixed``.
        records: One record per completed epoch.
        best_epoch: Epoch with the lowest validation loss, 0 before any epoch.
        stop_reason: Why training ended (``completed``, ``early_stopping`` or
            a reason passed to :meth:`Trainer.stop`).

    """

    run_label: str = "base"
    records: list[EpochRecord] = field(default_factory=list[EpochRecord])
    best_epoch: int = 0
    stop_reason: str = "completed"

    def append(self, record: EpochRecord) -> None:
        """Add a record, keeping epochs strictly increasing and losses finite.

        Raises:
            ValueError: If the record breaks either rule

        """
        if self.records and record.epoch <= self.records[-1].epoch:
            msg = f"Epoch {record.epoch} does not follow epoch {self.records[-1].epoch}"
            raise ValueError(msg)
        if not (math.isfinite(record.train_loss) and math.isfinite(record.valid_loss)):
            msg = f"Epoch {record.epoch} has a non-finite loss"
            raise ValueError(msg)
        self.records.append(record)

    def __len__(self) -> int:
        """Number of recorded epochs."""
        return len(self.records)

    @property
    def best_valid_loss(self) -> float:
        """Lowest validation loss seen, or infinity before any epoch."""
        return min((r.valid_loss for r in self.records), default=math.inf)

    def write_csv(self, path: Path) -> None:
        """Write the plottable ``epoch,train_loss,valid_loss,seconds,run_label`` file."""
        write_records(path, self.records)


def write_records(path: Path, records: Iterable[EpochRecord]) -> None:
    """Write epoch records as CSV with the loss-log header."""
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow(
                [r.epoch, f"{r.train_loss:.6f}", f"{r.valid_loss:.6f}", f"{r.seconds:.3f}", r.run_label]
            )


def read_train_log(path: Path) -> list[EpochRecord]:
    """Read a loss-log CSV.

    Raises:
        ValueError: If the header or a row is malformed

    """
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != LOG_HEADER:
            msg = f"{path}: expected header {','.join(LOG_HEADER)}"
            raise ValueError(msg)
        records: list[EpochRecord] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(LOG_HEADER):
                msg = f"{path}:{lineno}: expected {len(LOG_HEADER)} fields, got {len(row)}"
                raise ValueError(msg)
            records.append(
                EpochRecord(
                    epoch=int(row[0]),
                    train_loss=float(row[1]),
                    valid_loss=float(row[2]),
                    seconds=float(row[3]),
                    run_label=row[4],
                )
            )
    return records


def merge_train_logs(logs: Iterable[Sequence[EpochRecord]]) -> list[EpochRecord]:
    """Combine several runs into one table ordered by run label, then epoch.

    Raises:
        ValueError: If two rows share a run label and epoch

    """
    seen: set[tuple[str, int]] = set()
    merged: list[EpochRecord] = []
    for records in logs:
        for record in records:
            key = (record.run_label, record.epoch)
            if key in seen:
                msg = f"Duplicate epoch {record.epoch} for run {record.run_label!r}"
                raise ValueError(msg)
            seen.add(key)
            merged.append(record)
    merged.sort(key=lambda r: (r.run_label, r.epoch))
    return merged


EpochHandler = Callable[[EpochRecord], Any]


class ProbeTranslations:
    """Epoch handler that greedily translates fixed probe sentences.

    Tracks how the translation of the same inputs evolves as training
    proceeds. Results are kept in :attr:`history` keyed by epoch.
    """

    def __init__(
        self,
        model: TransformerModel,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        sentences: Sequence[Sequence[str]],
    ) -> None:
        """Store the probe inputs."""
        self.model = model
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.sentences = [list(s) for s in sentences]
        self.history: dict[int, list[str]] = {}

    def __call__(self, record: EpochRecord) -> None:
        """Translate every probe sentence with the current parameters."""
        outputs: list[str] = []
        for tokens in self.sentences:
            result = greedy_translate(self.model, self.src_vocab, self.tgt_vocab, tokens)
            outputs.append(" ".join(result.tokens))
        self.history[record.epoch] = outputs
        for source, output in zip(self.sentences, outputs, strict=True):
            logger.info(
                "Probe translation - epoch: %d, source: %s, output: %s",
                record.epoch,
                " ".join(source),
                output,
            )


@dataclass(frozen=True)
class RandomStreams:
    """Independent generators of one run, all derived from its seed."""

    init: np.random.Generator
    dropout: np.random.Generator
    shuffle: np.random.Generator


def random_streams(seed: int) -> RandomStreams:
    """Spawn the parameter-initialization, dropout and shuffle streams of ``seed``."""
    init, drop, order = (
        np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(3)
    )
    return RandomStreams(init=init, dropout=drop, shuffle=order)


class Trainer:
    """Runs epochs of teacher-forced training on a model.

    Each epoch shuffles the training batches with a seed derived from the
    run seed, takes one Adam step per batch on the mean cross-entropy over
    non-pad label tokens, then measures validation loss with dropout off.
    Handlers registered with :meth:`subscribe` receive every
    :class:`EpochRecord`; a failing handler is logged and skipped.

    Attributes:
        model: Model being trained; its parameters are updated in place.
        config: Optimization settings.
        optimizer: Adam moments, carried across :meth:`fit` calls.
        is_stopping: True once :meth:`stop` has been called during the current
            :meth:`fit`.

    """

    def __init__(
        self,
        model: TransformerModel,
        config: TrainConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        *,
        prefetch_depth: int = 0,
    ) -> None:
        """Bind a model to its settings and vocabularies.

        Args:
            model: Model to optimize
            config: Optimization settings
            src_vocab: Vocabulary built from the training sources
            tgt_vocab: Vocabulary built from the training targets
            prefetch_depth: Batches prepared ahead on a worker thread; 0 disables

        """
        self.model = model
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.prefetch_depth = prefetch_depth
        self.optimizer = AdamState()
        self.is_stopping = False
        self.stop_reason: str | None = None
        self._subscribers: list[EpochHandler] = []
        streams = random_streams(config.seed)
        self._dropout_rng = streams.dropout
        self._shuffle_rng = streams.shuffle
        model.dropout_p = config.dropout

    def subscribe(self, handler: EpochHandler) -> None:
        """Register a callback invoked with each finished epoch's record.

        Handlers run in subscription order after validation. A handler may
        call :meth:`stop` to end training after the current epoch.
        """
        if handler in self._subscribers:
            logger.warning("Handler already subscribed, ignoring duplicate subscription")
            return
        self._subscribers.append(handler)
        logger.info("Added epoch subscriber - total_subscribers: %d", len(self._subscribers))

    def unsubscribe(self, handler: EpochHandler) -> None:
        """Remove a previously registered handler."""
        if handler not in self._subscribers:
            logger.warning("Handler not found in subscribers, ignoring unsubscribe request")
            return
        self._subscribers.remove(handler)
        logger.info("Removed epoch subscriber - total_subscribers: %d", len(self._subscribers))

    @property
    def subscriber_count(self) -> int:
        """Number of registered epoch handlers."""
        return len(self._subscribers)

    def stop(self, reason: str | None = None) -> None:
        """Request that training end once the current epoch finishes."""
        if self.is_stopping:
            return
        self.is_stopping = True
        self.stop_reason = reason or "stopped"
        logger.info("Stop requested - reason: %s", self.stop_reason)

    def _notify_subscribers(self, record: EpochRecord) -> None:
        for subscriber in list(self._subscribers):
            try:
                subscriber(record)
            except Exception as e:  # noqa: BLE001
                logger.warning(
                    "Subscriber failed to process epoch - error: %s, error_type: %s",
                    str(e),
                    type(e).__name__,
                )

    def _encode(self, corpus: ParallelCorpus) -> list[EncodedPair]:
        return encode_corpus(corpus, self.src_vocab, self.tgt_vocab, self.model.config.max_seq_len)

    def _batch_stream(self, batches: Iterable[Batch]) -> Iterable[Batch]:
        return prefetch(batches, self.prefetch_depth) if self.prefetch_depth > 0 else batches

    def evaluate(self, corpus: ParallelCorpus | Sequence[EncodedPair]) -> float:
        """Token-weighted mean cross-entropy with dropout off.

        Raises:
            ValueError: If the corpus contains no usable pairs

        """
        encoded = self._encode(corpus) if isinstance(corpus, ParallelCorpus) else corpus
        if not encoded:
            msg = "Cannot evaluate on an empty corpus"
            raise ValueError(msg)
        total = 0.0
        tokens = 0
        with no_grad():
            for batch in batches_from_encoded(encoded, self.config.batch_size, None):
                logits = self.model.forward(batch.src, batch.tgt_in, training=False)
                loss = cross_entropy(logits, batch.labels, PAD_ID).item()
                total += loss * batch.n_tokens
                tokens += batch.n_tokens
        return total / tokens

    def train_step(self, batch: Batch) -> float:
        """Forward, backward and one optimizer update on ``batch``.

        Returns:
            The batch's mean loss before the update

        Raises:
            NonFiniteGradientError: If the loss or a gradient is not finite

        """
        params = self.model.named_parameters()
        self.model.zero_grad()
        logits = self.model.forward(batch.src, batch.tgt_in, training=True, rng=self._dropout_rng)
        loss = cross_entropy(logits, batch.labels, PAD_ID)
        value = loss.item()
        if not math.isfinite(value):
            msg = f"Non-finite loss {value} at step {self.optimizer.step + 1}"
            raise NonFiniteGradientError(msg)
        backward(loss)
        grads = gradients_of(params)
        clip_grad_norm(grads, self.config.clip_norm)
        adam_step(
            params,
            grads,
            self.optimizer,
            lr=self.config.learning_rate,
            beta1=self.config.beta1,
            beta2=self.config.beta2,
            eps=self.config.adam_eps,
        )
        return value

    def train_epoch(self, encoded: Sequence[EncodedPair]) -> float:
        """Run one shuffled pass over ``encoded``.

        Returns:
            Token-weighted mean training loss of the epoch

        """
        seed = int(self._shuffle_rng.integers(0, 2**63 - 1))
        total = 0.0
        tokens = 0
        for batch in self._batch_stream(
            batches_from_encoded(encoded, self.config.batch_size, seed)
        ):
            loss = self.train_step(batch)
            total += loss * batch.n_tokens
            tokens += batch.n_tokens
        return total / tokens

    def fit(
        self,
        train_corpus: ParallelCorpus,
        valid_corpus: ParallelCorpus,
        *,
        epochs: int | None = None,
    ) -> TrainLog:
        """Train for up to ``epochs`` epochs (default from the config).

        With early stopping enabled, training halts after ``patience``
        epochs without a validation improvement and the parameters of the
        best epoch are restored.

        Returns:
            The loss log of this run

        Raises:
            TrainingDivergedError: If a loss or gradient becomes non-finite
            ValueError: If either corpus has no usable pairs

        """
        self.is_stopping = False
        self.stop_reason = None
        max_epochs = epochs if epochs is not None else self.config.epochs
        train_encoded = self._encode(train_corpus)
        valid_encoded = self._encode(valid_corpus)
        if not train_encoded:
            msg = "Cannot train on an empty corpus"
            raise ValueError(msg)
        if not valid_encoded:
            msg = "Cannot validate on an empty corpus"
            raise ValueError(msg)

        log = TrainLog(run_label=self.config.run_label)
        best_state: dict[str, FloatArray] | None = None
        best_loss = math.inf
        last_epoch = 0
        epochs_without_improvement = 0
        logger.info(
            "Training started - run_label: %s, train_pairs: %d, valid_pairs: %d, max_epochs: %d",
            self.config.run_label,
            len(train_encoded),
            len(valid_encoded),
            max_epochs,
        )

        for epoch in range(1, max_epochs + 1):
            last_good = self.model.state_dict()
            started = time.perf_counter()
            try:
                train_loss = self.train_epoch(train_encoded)
                valid_loss = self.evaluate(valid_encoded)
                if not math.isfinite(valid_loss):
                    msg = f"Non-finite validation loss {valid_loss}"
                    raise NonFiniteGradientError(msg)  # noqa: TRY301
            except NonFiniteGradientError as err:
                self.model.load_state_dict(last_good)
                logger.error(  # noqa: TRY400
                    "Training diverged, restored last good parameters - epoch: %d, error: %s",
                    epoch,
                    str(err),
                )
                msg = f"Training diverged in epoch {epoch}: {err}"
                raise TrainingDivergedError(msg, epoch, log) from err

            record = EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                valid_loss=valid_loss,
                seconds=time.perf_counter() - started,
                run_label=self.config.run_label,
            )
            log.append(record)
            logger.info(
                "Epoch finished - epoch: %d, train_loss: %.4f, valid_loss: %.4f, seconds: %.1f",
                epoch,
                train_loss,
                valid_loss,
                record.seconds,
            )

            last_epoch = epoch
            if valid_loss < best_loss:
                best_loss = valid_loss
                best_state = self.model.state_dict()
                log.best_epoch = epoch
                epochs_without_improvement = 0
            else:
                epochs_without_improvement += 1

            self._notify_subscribers(record)

            if self.is_stopping:
                log.stop_reason = self.stop_reason or "stopped"
                break
            if self.config.early_stopping and epochs_without_improvement >= self.config.patience:
                logger.info(
                    "Early stopping - epoch: %d, best_epoch: %d, patience: %d",
                    epoch,
                    log.best_epoch,
                    self.config.patience,
                )
                log.stop_reason = "early_stopping"
                break

        if self.config.early_stopping and best_state is not None and log.best_epoch != last_epoch:
            self.model.load_state_dict(best_state)
            logger.info("Restored best parameters - best_epoch: %d", log.best_epoch)
        return log


def train(
    model: TransformerModel,
    train_corpus: ParallelCorpus,
    valid_corpus: ParallelCorpus,
    config: TrainConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
) -> tuple[TransformerModel, TrainLog]:
    """Train ``model`` in place and return it with its loss log."""
    trainer = Trainer(model, config, src_vocab, tgt_vocab)
    log = trainer.fit(train_corpus, valid_corpus)
    return model, log
