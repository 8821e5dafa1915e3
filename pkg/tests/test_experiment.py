"""Tests for the domain-augmentation experiment driver."""

from pathlib import Path
from unittest.mock import patch

import pytest
from pytest_mock import MockerFixture

from nmt_transformer import experiment
from nmt_transformer.config import ModelConfig, TrainConfig, with_vocab_sizes
from nmt_transformer.experiment import (
    REPORT_HEADER,
    Composition,
    ExperimentRun,
    evaluate_bleu,
    experiment_grid,
    run_experiment,
)
from nmt_transformer.model import TransformerModel
from nmt_transformer.preprocess import Origin, ParallelCorpus, SentencePair
from nmt_transformer.vocab import Vocabulary


@pytest.fixture
def general_corpus() -> ParallelCorpus:
    """General-domain pairs that add new words."""
    raw = [
        ("die sonne scheint .", "the sun shines ."),
        ("der baum ist gross .", "the tree is big ."),
        ("das buch ist rot .", "the book is red ."),
    ]
    return ParallelCorpus.from_pairs(
        SentencePair(tuple(s.split()), tuple(t.split()), Origin.GENERAL_DOMAIN) for s, t in raw
    )


@pytest.fixture
def experiment_configs(tiny_model_config: ModelConfig) -> tuple[ModelConfig, TrainConfig]:
    """Tiny architecture and short training."""
    return tiny_model_config, TrainConfig(
        learning_rate=1e-3, batch_size=4, dropout=0.0, early_stopping=False, seed=2
    )


class TestExperimentGrid:
    """Test run planning."""

    def test_both_compositions_per_setting(self) -> None:
        assert experiment_grid([5, 20]) == [
            ExperimentRun(Composition.BASE, 5),
            ExperimentRun(Composition.MIXED, 5),
            ExperimentRun(Composition.BASE, 20),
            ExperimentRun(Composition.MIXED, 20),
        ]


class TestRunExperiment:
    """Test end-to-end comparison on tiny corpora."""

    def test_rows_and_logs(
        self,
        small_corpus: ParallelCorpus,
        general_corpus: ParallelCorpus,
        experiment_configs: tuple[ModelConfig, TrainConfig],
    ) -> None:
        model_config, train_config = experiment_configs
        report = run_experiment(
            small_corpus,
            general_corpus,
            small_corpus,
            small_corpus,
            experiment_grid([1, 2]),
            model_config=model_config,
            train_config=train_config,
        )
        assert [(r.composition, r.epochs) for r in report.rows] == [
            (Composition.BASE, 1),
            (Composition.MIXED, 1),
            (Composition.BASE, 2),
            (Composition.MIXED, 2),
        ]
        assert [r.train_pairs for r in report.rows] == [6, 9, 6, 9]
        assert [r.epochs_run for r in report.rows] == [1, 1, 2, 2]
        assert all(0.0 <= r.bleu <= 100.0 for r in report.rows)
        assert [log.run_label for log in report.logs] == ["base/1", "base+mixed/1", "base/2", "base+mixed/2"]
        assert len(report.merged_records()) == 6

    def test_all_runs_share_test_set(
        self,
        small_corpus: ParallelCorpus,
        general_corpus: ParallelCorpus,
        experiment_configs: tuple[ModelConfig, TrainConfig],
    ) -> None:
        model_config, train_config = experiment_configs
        test_set = ParallelCorpus.from_pairs(small_corpus.pairs[:2])
        with patch("nmt_transformer.experiment.evaluate_bleu", return_value=12.5) as mock_bleu:
            report = run_experiment(
                small_corpus,
                general_corpus,
                small_corpus,
                test_set,
                experiment_grid([1]),
                model_config=model_config,
                train_config=train_config,
            )
        assert mock_bleu.call_count == 2
        assert all(call.args[3] is test_set for call in mock_bleu.call_args_list)
        assert [r.bleu for r in report.rows] == [12.5, 12.5]

    def test_mixed_vocabulary_covers_general_words(
        self,
        small_corpus: ParallelCorpus,
        general_corpus: ParallelCorpus,
        experiment_configs: tuple[ModelConfig, TrainConfig],
    ) -> None:
        model_config, train_config = experiment_configs
        with patch("nmt_transformer.experiment.evaluate_bleu", return_value=0.0) as mock_bleu:
            run_experiment(
                small_corpus,
                general_corpus,
                small_corpus,
                small_corpus,
                experiment_grid([1]),
                model_config=model_config,
                train_config=train_config,
            )
        base_call, mixed_call = mock_bleu.call_args_list
        assert "sonne" not in base_call.args[1]
        assert "sonne" in mixed_call.args[1]
        assert mixed_call.args[0].config.src_vocab_size == len(mixed_call.args[1])


class TestReportFiles:
    """Test the report table and CSV."""

    def test_table_and_csv(
        self,
        tmp_path: Path,
        small_corpus: ParallelCorpus,
        general_corpus: ParallelCorpus,
        experiment_configs: tuple[ModelConfig, TrainConfig],
    ) -> None:
        model_config, train_config = experiment_configs
        with patch("nmt_transformer.experiment.evaluate_bleu", return_value=25.8):
            report = run_experiment(
                small_corpus,
                general_corpus,
                small_corpus,
                small_corpus,
                [ExperimentRun(Composition.MIXED, 1)],
                model_config=model_config,
                train_config=train_config,
            )
        table = report.format_table().splitlines()
        assert table[0].split() == ["Dataset", "Epochs", "BLEU", "Pairs"]
        assert table[1].split() == ["base+mixed", "1", "25.8", "9"]

        path = tmp_path / "report.csv"
        report.write_csv(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert lines[1].startswith("base+mixed,1,25.80,9,1,")


@pytest.fixture
def long_source_test_set(small_corpus: ParallelCorpus) -> ParallelCorpus:
    """Small test set whose last source is too long for the tiny model."""
    long_pair = SentencePair(
        tuple("das haus ist klein und das auto ist rot .".split()),
        tuple("the house is small and the car is red .".split()),
    )
    return ParallelCorpus.from_pairs([*small_corpus.pairs[:2], long_pair])


class TestEvaluateBleu:
    """Test test-set scoring."""

    def test_unencodable_source_scores_empty(
        self,
        tiny_model_config: ModelConfig,
        small_vocabs: tuple[Vocabulary, Vocabulary],
        long_source_test_set: ParallelCorpus,
        mocker: MockerFixture,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        src_vocab, tgt_vocab = small_vocabs
        model = TransformerModel(with_vocab_sizes(tiny_model_config, len(src_vocab), len(tgt_vocab)), rng=0)
        spy = mocker.spy(experiment, "bleu_corpus")
        score = evaluate_bleu(model, src_vocab, tgt_vocab, long_source_test_set)
        assert 0.0 <= score <= 100.0
        hypotheses, references = spy.call_args.args
        assert len(hypotheses) == len(references) == 3
        assert hypotheses[2] == []
        assert "Scoring empty translation - pair: 3" in caplog.text

    def test_experiment_completes_with_long_test_source(
        self,
        small_corpus: ParallelCorpus,
        general_corpus: ParallelCorpus,
        experiment_configs: tuple[ModelConfig, TrainConfig],
        long_source_test_set: ParallelCorpus,
    ) -> None:
        model_config, train_config = experiment_configs
        report = run_experiment(
            small_corpus,
            general_corpus,
            small_corpus,
            long_source_test_set,
            [ExperimentRun(Composition.BASE, 1)],
            model_config=model_config,
            train_config=train_config,
        )
        assert len(report.rows) == 1
        assert 0.0 <= report.rows[0].bleu <= 100.0
