"""Transformer neural machine translation toolkit."""

from .bleu import BleuReport, bleu_corpus
from .config import ConfigurationError, ModelConfig, PipelineConfig, TrainConfig
from .decode import TranslationResult, greedy_translate, translate_file, translate_lines
from .model import TransformerModel
from .preprocess import ParallelCorpus, SentencePair, run_pipeline
from .tensor import Tensor
from .training import EpochRecord, Trainer, TrainLog, train
from .vocab import Vocabulary

__version__ = "1.0.0"

__all__ = [
    "BleuReport",
    "ConfigurationError",
    "EpochRecord",
    "ModelConfig",
    "ParallelCorpus",
    "PipelineConfig",
    "SentencePair",
    "Tensor",
    "TrainConfig",
    "TrainLog",
    "Trainer",
    "TransformerModel",
    "TranslationResult",
    "Vocabulary",
    "__version__",
    "bleu_corpus",
    "greedy_translate",
    "run_pipeline",
    "train",
    "translate_file",
    "translate_lines",
]
