"""Shared test fixtures for nmt-transformer tests."""

from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest

from nmt_transformer.config import ModelConfig, TrainConfig
from nmt_transformer.model import TransformerModel
from nmt_transformer.preprocess import ParallelCorpus, SentencePair
from nmt_transformer.tensor import precision
from nmt_transformer.vocab import Vocabulary


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """1-layer, 2-head, d_model=8 configuration used by structural tests."""
    return ModelConfig(
        src_vocab_size=11,
        tgt_vocab_size=13,
        d_model=8,
        n_heads=2,
        n_encoder_layers=1,
        n_decoder_layers=1,
        max_seq_len=10,
        expansion=4,
        dropout_p=0.0,
    )


@pytest.fixture
def tiny_model(tiny_model_config: ModelConfig) -> TransformerModel:
    """Seeded model built from the tiny configuration."""
    return TransformerModel(tiny_model_config, rng=0)


@pytest.fixture
def float64() -> Iterator[None]:
    """Create tensors in 64-bit precision for the duration of a test."""
    with precision(np.float64):
        yield


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def copy_corpus() -> ParallelCorpus:
    """50 pairs whose target equals the source, over a 12-word vocabulary."""
    words = [f"w{i}" for i in range(12)]
    generator = np.random.default_rng(7)
    pairs: list[SentencePair] = []
    seen: set[tuple[str, ...]] = set()
    while len(pairs) < 50:
        length = int(generator.integers(2, 6))
        sentence = tuple(words[int(i)] for i in generator.integers(0, len(words), size=length))
        if sentence in seen:
            continue
        seen.add(sentence)
        pairs.append(SentencePair(sentence, sentence))
    return ParallelCorpus.from_pairs(pairs)


@pytest.fixture
def small_corpus() -> ParallelCorpus:
    """A handful of short German-English style pairs."""
    raw = [
        ("das haus ist klein .", "the house is small ."),
        ("das haus ist gross .", "the house is big ."),
        ("der hund ist klein .", "the dog is small ."),
        ("die katze schlaeft .", "the cat sleeps ."),
        ("der hund schlaeft .", "the dog sleeps ."),
        ("das auto ist rot .", "the car is red ."),
    ]
    return ParallelCorpus.from_pairs(
        SentencePair(tuple(src.split()), tuple(tgt.split())) for src, tgt in raw
    )


@pytest.fixture
def small_vocabs(small_corpus: ParallelCorpus) -> tuple[Vocabulary, Vocabulary]:
    """Source and target vocabularies of the small corpus."""
    return Vocabulary.build(small_corpus.sources()), Vocabulary.build(small_corpus.targets())


@pytest.fixture
def fast_train_config() -> TrainConfig:
    """Settings for short, deterministic training runs."""
    return TrainConfig(
        epochs=2,
        learning_rate=1e-3,
        batch_size=4,
        dropout=0.0,
        early_stopping=False,
        seed=3,
    )


@pytest.fixture
def twenty_line_fixture(tmp_path: Path) -> tuple[Path, Path]:
    """Raw 20-line corpus with 2 empty pairs, 1 overlong pair and 1 repeated pair.

    Stage counts are raw 20, preprocessed 20, cleaned 17, unique 16.
    """
    source: list[str] = []
    target: list[str] = []
    for i in range(15):
        source.append(f"Satz Nummer {i} ist „gut“.")
        target.append(f"Sentence number {i} is “good”.")
    source.append("Satz Nummer 0 ist „gut“.")  # repeats line 1
    target.append("Sentence number 0 is “good”.")
    source.extend(["", "   "])
    target.extend(["Orphan target.", ""])
    source.append(" ".join(["lang"] * 90))
    target.append(" ".join(["long"] * 90))
    source.append("Letzter Satz.")
    target.append("Last sentence.")
    src_path = tmp_path / "raw.de"
    tgt_path = tmp_path / "raw.en"
    src_path.write_text("\n".join(source) + "\n", encoding="utf-8")
    tgt_path.write_text("\n".join(target) + "\n", encoding="utf-8")
    return src_path, tgt_path
