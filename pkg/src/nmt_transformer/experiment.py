# pyright: strict
"""Domain-augmentation experiment: base-only versus base plus general-domain data."""

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path

from .bleu import bleu_corpus
from .config import ModelConfig, TrainConfig, with_vocab_sizes
from .decode import greedy_translate
from .model import InputLengthError, TransformerModel
from .preprocess import ParallelCorpus, mix
from .training import EpochRecord, TrainLog, Trainer, merge_train_logs, random_streams
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

REPORT_HEADER = ("composition", "epochs", "bleu", "train_pairs", "epochs_run", "best_valid_loss")


class Composition(StrEnum):
    """Which data a run trains on."""

    BASE = "base"
    MIXED = "base+mixed"


@dataclass(frozen=True)
class ExperimentRun:
    """One requested cell: a data composition trained for a number of epochs."""

    composition: Composition
    epochs: int


@dataclass(frozen=True)
class ExperimentRow:
    """Result of one run.

    Attributes:
        composition: Training data composition.
        epochs: Requested epoch cap.
        bleu: Test BLEU scaled to 0-100.
        train_pairs: Size of the training set.
        epochs_run: Epochs actually completed.
        best_valid_loss: Lowest validation loss of the run.

    """

    composition: Composition
    epochs: int
    bleu: float
    train_pairs: int
    epochs_run: int
    best_valid_loss: float


@dataclass
class ExperimentReport:
    """Rows in request order plus the loss log of every run."""

    rows: list[ExperimentRow] = field(default_factory=list[ExperimentRow])
    logs: list[TrainLog] = field(default_factory=list[TrainLog])

    def format_table(self) -> str:
        """Render a fixed-width table with one line per run."""
        lines = [f"{'Dataset':<12} {'Epochs':>6} {'BLEU':>6} {'Pairs':>8}"]
        lines.extend(
            f"{row.composition.value:<12} {row.epochs:>6} {row.bleu:>6.1f} {row.train_pairs:>8}"
            for row in self.rows
        )
        return "\n".join(lines)

    def write_csv(self, path: Path) -> None:
        """Write the rows as CSV."""
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(REPORT_HEADER)
            for row in self.rows:
                writer.writerow(
                    [
                        row.composition.value,
                        row.epochs,
                        f"{row.bleu:.2f}",
                        row.train_pairs,
                        row.epochs_run,
                        f"{row.best_valid_loss:.6f}",
                    ]
                )

    def merged_records(self) -> list[EpochRecord]:
        """Every run's epochs, labelled by composition and epoch cap."""
        return merge_train_logs(log.records for log in self.logs)


def experiment_grid(epoch_settings: Sequence[int]) -> list[ExperimentRun]:
    """Both compositions for every epoch setting, base first."""
    return [
        ExperimentRun(composition, epochs)
        for epochs in epoch_settings
        for composition in (Composition.BASE, Composition.MIXED)
    ]


def evaluate_bleu(
    model: TransformerModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    corpus: ParallelCorpus,
) -> float:
    """Greedy-translate every source of ``corpus`` and score against its targets (0-100).

    A source the model cannot encode is logged and scored as an empty
    candidate.
    """
    hypotheses: list[list[str]] = []
    for index, pair in enumerate(corpus, start=1):
        try:
            result = greedy_translate(model, src_vocab, tgt_vocab, pair.source)
        except InputLengthError as e:
            logger.warning("Scoring empty translation - pair: %d, error: %s", index, str(e))
            hypotheses.append([])
            continue
        hypotheses.append(list(result.tokens))
    references = [list(pair.target) for pair in corpus]
    return bleu_corpus(hypotheses, references).score


def run_experiment(
    base: ParallelCorpus,
    general: ParallelCorpus,
    valid: ParallelCorpus,
    test: ParallelCorpus,
    runs: Sequence[ExperimentRun],
    *,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    min_freq: int = 1,
) -> ExperimentReport:
    """Train and test one model per requested run.

    Every run shares the same in-domain validation and test sets. The mixed
    composition trains on ``base`` plus ``general``; vocabularies are built
    from each composition's own training set. The epoch count of a run is a
    cap: early stopping still applies when enabled in ``train_config``.

    Args:
        base: In-domain training pairs
        general: General-domain pairs added in the mixed composition
        valid: In-domain validation pairs
        test: In-domain test pairs
        runs: Requested (composition, epochs) cells, reported in this order
        model_config: Architecture; vocabulary sizes are replaced per run
        train_config: Base optimization settings
        min_freq: Vocabulary frequency cutoff

    """
    base_model = model_config or ModelConfig()
    base_train = train_config or TrainConfig()
    corpora = {
        Composition.BASE: base,
        Composition.MIXED: mix(base, general, seed=base_train.seed),
    }
    vocabularies: dict[Composition, tuple[Vocabulary, Vocabulary]] = {}
    report = ExperimentReport()

    for run in runs:
        train_set = corpora[run.composition]
        if run.composition not in vocabularies:
            vocabularies[run.composition] = (
                Vocabulary.build(train_set.sources(), min_freq),
                Vocabulary.build(train_set.targets(), min_freq),
            )
        src_vocab, tgt_vocab = vocabularies[run.composition]
        config = with_vocab_sizes(base_model, len(src_vocab), len(tgt_vocab))
        settings = replace(
            base_train,
            epochs=run.epochs,
            run_label=f"{run.composition.value}/{run.epochs}",
        )
        logger.info(
            "Experiment run started - composition: %s, epochs: %d, train_pairs: %d",
            run.composition,
            run.epochs,
            len(train_set),
        )
        model = TransformerModel(config, rng=random_streams(settings.seed).init)
        trainer = Trainer(model, settings, src_vocab, tgt_vocab)
        log = trainer.fit(train_set, valid)
        score = evaluate_bleu(model, src_vocab, tgt_vocab, test)
        report.logs.append(log)
        report.rows.append(
            ExperimentRow(
                composition=run.composition,
                epochs=run.epochs,
                bleu=score,
                train_pairs=len(train_set),
                epochs_run=len(log),
                best_valid_loss=log.best_valid_loss,
            )
        )
        logger.info(
            "Experiment run finished - composition: %s, epochs: %d, bleu: %.2f",
            run.composition,
            run.epochs,
            score,
        )
    return report
