"""Parallel-corpus ingestion, cleaning, deduplication, splitting and mixing.

The pipeline re-implements the subset of Moses preprocessing the toolkit
needs: punctuation normalization, a rule-based tokenizer, length/ratio
cleaning and pair-level deduplication. The exact rule table is documented
in ``docs/TOKENIZER_RULES.md``.
"""

import logging
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path

import numpy as np

from .config import ConfigurationError, PipelineConfig

logger = logging.getLogger(__name__)

Tokens = tuple[str, ...]

_PUNCTUATION_MAP = str.maketrans(
    {
        "“": '"',  # left double quotation mark
        "”": '"',  # right double quotation mark
        "„": '"',  # double low-9 quotation mark
        "‟": '"',
        "«": '"',  # guillemets
        "»": '"',
        "‘": "'",
        "’": "'",
        "‚": "'",
        "‛": "'",
        "–": "-",  # en dash
        "—": "-",  # em dash
        "―": "-",
        "−": "-",  # minus sign
        "\u00a0": " ",  # no-break space
        "\u202f": " ",  # narrow no-break space
        "\u2009": " ",  # thin space
        "…": "...",
    }
)
_WHITESPACE = re.compile(r"\s+")

DETACHABLE = frozenset('.,!?;:"()[]')
_OPENING = frozenset("([")
_CLOSING = frozenset(".,!?;:)]")


class MisalignedCorpusError(ValueError):
    """Raised when source and target files have different line counts."""


class Origin(StrEnum):
    """Which corpus a sentence pair came from."""

    IN_DOMAIN = "in-domain"
    GENERAL_DOMAIN = "general-domain"


@dataclass(frozen=True)
class SentencePair:
    """Aligned source (German) and target (English) token sequences."""

    source: Tokens
    target: Tokens
    origin: Origin = Origin.IN_DOMAIN

    @property
    def key(self) -> tuple[Tokens, Tokens]:
        """Deduplication key: the exact token sequences of both sides."""
        return self.source, self.target


@dataclass(frozen=True)
class CorpusStats:
    """Pair counts after each pipeline stage."""

    raw: int = 0
    preprocessed: int = 0
    cleaned: int = 0
    unique: int = 0

    @classmethod
    def uniform(cls, count: int) -> "CorpusStats":
        """Stats for a corpus that passed every stage unchanged."""
        return cls(raw=count, preprocessed=count, cleaned=count, unique=count)

    def rows(self) -> list[tuple[str, int]]:
        """Stage name and count, in pipeline order."""
        return [
            ("raw", self.raw),
            ("preprocessed", self.preprocessed),
            ("cleaned", self.cleaned),
            ("unique", self.unique),
        ]


@dataclass(frozen=True)
class ParallelCorpus:
    """An ordered collection of sentence pairs with stage statistics."""

    pairs: tuple[SentencePair, ...] = ()
    stats: CorpusStats = field(default_factory=CorpusStats)

    @classmethod
    def from_pairs(cls, pairs: Iterable[SentencePair]) -> "ParallelCorpus":
        """Build a corpus whose stats all equal its size."""
        materialized = tuple(pairs)
        return cls(pairs=materialized, stats=CorpusStats.uniform(len(materialized)))

    def __len__(self) -> int:
        """Number of pairs."""
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        """Iterate over pairs in order."""
        return iter(self.pairs)

    def sources(self) -> list[Tokens]:
        """Source side token sequences."""
        return [pair.source for pair in self.pairs]

    def targets(self) -> list[Tokens]:
        """Target side token sequences."""
        return [pair.target for pair in self.pairs]


@dataclass(frozen=True)
class SplitSpec:
    """Held-out sizes and shuffle seed for a train/valid/test split."""

    valid_size: int = 1000
    test_size: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate sizes after initialization."""
        if self.valid_size < 0 or self.test_size < 0:
            msg = f"Split sizes must be non-negative, got {self.valid_size}/{self.test_size}"
            raise ConfigurationError(msg)


def normalize_punctuation(line: str) -> str:
    """Map typographic punctuation to ASCII and collapse whitespace.

    Curly quotes and guillemets become straight quotes, dashes become
    hyphen-minus, non-breaking spaces become spaces and the ellipsis
    character becomes three periods.
    """
    return _WHITESPACE.sub(" ", line.translate(_PUNCTUATION_MAP)).strip()


def tokenize(line: str) -> list[str]:
    """Split on whitespace and detach edge punctuation into separate tokens.

    Only ``. , ! ? ; : " ( ) [ ]`` are detached, and only from the edges of a
    whitespace-delimited word; internal hyphens, apostrophes and periods stay
    attached.
    """
    tokens: list[str] = []
    for word in line.split():
        start, end = 0, len(word)
        while start < end and word[start] in DETACHABLE:
            start += 1
        while end > start and word[end - 1] in DETACHABLE:
            end -= 1
        tokens.extend(word[:start])
        if start < end:
            tokens.append(word[start:end])
        tokens.extend(word[end:])
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    """Join tokens, reattaching punctuation the tokenizer detached.

    Closing punctuation attaches to the previous token, opening brackets to
    the next one; straight double quotes alternate between opening and
    closing.
    """
    parts: list[str] = []
    attach_next = False
    quote_open = False
    for token in tokens:
        glue = "" if not parts or attach_next else " "
        attach_next = False
        if token in _CLOSING:
            glue = ""
        elif token in _OPENING:
            attach_next = True
        elif token == '"':
            if quote_open:
                glue = ""
            else:
                attach_next = True
            quote_open = not quote_open
        parts.append(glue + token)
    return "".join(parts)


def preprocess_lines(
    source_lines: Sequence[str],
    target_lines: Sequence[str],
    origin: Origin = Origin.IN_DOMAIN,
) -> ParallelCorpus:
    """Normalize and tokenize aligned raw lines.

    Raises:
        MisalignedCorpusError: If the two sides differ in line count

    """
    if len(source_lines) != len(target_lines):
        msg = f"Source has {len(source_lines)} lines but target has {len(target_lines)}"
        raise MisalignedCorpusError(msg)
    pairs = tuple(
        SentencePair(
            source=tuple(tokenize(normalize_punctuation(src))),
            target=tuple(tokenize(normalize_punctuation(tgt))),
            origin=origin,
        )
        for src, tgt in zip(source_lines, target_lines, strict=True)
    )
    raw = len(source_lines)
    return ParallelCorpus(pairs=pairs, stats=CorpusStats(raw=raw, preprocessed=len(pairs)))


def _lifted(stats: CorpusStats, count: int) -> CorpusStats:
    """Raise earlier stage counts to at least ``count`` for corpora that skipped them."""
    return replace(
        stats,
        raw=max(stats.raw, count),
        preprocessed=max(stats.preprocessed, count),
        cleaned=max(stats.cleaned, count),
    )


def _keeps(pair: SentencePair, min_len: int, max_len: int, max_ratio: float) -> bool:
    src_len, tgt_len = len(pair.source), len(pair.target)
    if src_len == 0 or tgt_len == 0:
        return False
    if not (min_len <= src_len <= max_len and min_len <= tgt_len <= max_len):
        return False
    return max(src_len, tgt_len) / min(src_len, tgt_len) <= max_ratio


def clean(
    corpus: ParallelCorpus,
    min_len: int = 1,
    max_len: int = 80,
    max_ratio: float = 9.0,
) -> ParallelCorpus:
    """Drop empty, too short, too long and length-ratio-misaligned pairs."""
    kept = tuple(pair for pair in corpus if _keeps(pair, min_len, max_len, max_ratio))
    stats = replace(_lifted(corpus.stats, len(corpus)), cleaned=len(kept), unique=len(kept))
    logger.debug("Cleaned corpus - before: %d, after: %d", len(corpus), len(kept))
    return ParallelCorpus(pairs=kept, stats=stats)


def dedup(corpus: ParallelCorpus) -> ParallelCorpus:
    """Keep the first occurrence of each exact (source, target) pair."""
    seen: set[tuple[Tokens, Tokens]] = set()
    kept: list[SentencePair] = []
    for pair in corpus:
        if pair.key in seen:
            continue
        seen.add(pair.key)
        kept.append(pair)
    logger.debug("Deduplicated corpus - before: %d, after: %d", len(corpus), len(kept))
    stats = replace(_lifted(corpus.stats, len(corpus)), unique=len(kept))
    return ParallelCorpus(pairs=tuple(kept), stats=stats)


def shuffle(corpus: ParallelCorpus, seed: int | np.random.Generator) -> ParallelCorpus:
    """Return the corpus in a seeded random order, stats unchanged."""
    order = np.random.default_rng(seed).permutation(len(corpus))
    return ParallelCorpus(pairs=tuple(corpus.pairs[i] for i in order), stats=corpus.stats)


def split(
    corpus: ParallelCorpus, spec: SplitSpec
) -> tuple[ParallelCorpus, ParallelCorpus, ParallelCorpus]:
    """Shuffle with ``spec.seed`` and slice into train, valid and test.

    The last ``test_size`` pairs form the test set, the preceding
    ``valid_size`` pairs the validation set and the rest the training set.

    Raises:
        ConfigurationError: If the held-out sizes leave no training pairs

    """
    total = len(corpus)
    held_out = spec.valid_size + spec.test_size
    if held_out >= total:
        msg = (
            f"Valid ({spec.valid_size}) + test ({spec.test_size}) must be smaller "
            f"than the corpus ({total} pairs)"
        )
        raise ConfigurationError(msg)
    pairs = shuffle(corpus, spec.seed).pairs
    train_end = total - held_out
    valid_end = train_end + spec.valid_size
    return (
        ParallelCorpus.from_pairs(pairs[:train_end]),
        ParallelCorpus.from_pairs(pairs[train_end:valid_end]),
        ParallelCorpus.from_pairs(pairs[valid_end:]),
    )


def mix(
    in_domain_train: ParallelCorpus,
    general_domain: ParallelCorpus,
    seed: int | None = None,
) -> ParallelCorpus:
    """Concatenate a training set with general-domain pairs.

    Origin tags are preserved. With ``seed`` set the result is shuffled;
    training reshuffles every epoch regardless.
    """
    mixed = ParallelCorpus.from_pairs((*in_domain_train.pairs, *general_domain.pairs))
    logger.info(
        "Mixed corpora - in_domain: %d, general_domain: %d, total: %d",
        len(in_domain_train),
        len(general_domain),
        len(mixed),
    )
    return shuffle(mixed, seed) if seed is not None else mixed


def run_pipeline(
    source_lines: Sequence[str],
    target_lines: Sequence[str],
    config: PipelineConfig | None = None,
    origin: Origin = Origin.IN_DOMAIN,
) -> ParallelCorpus:
    """Normalize, tokenize, clean and deduplicate aligned raw lines."""
    cfg = config or PipelineConfig()
    corpus = preprocess_lines(source_lines, target_lines, origin)
    corpus = dedup(clean(corpus, cfg.min_len, cfg.max_len, cfg.max_ratio))
    logger.info(
        "Preprocessed corpus - raw: %d, preprocessed: %d, cleaned: %d, unique: %d",
        corpus.stats.raw,
        corpus.stats.preprocessed,
        corpus.stats.cleaned,
        corpus.stats.unique,
    )
    return corpus


def read_lines(path: Path) -> list[str]:
    """Read a UTF-8 file as a list of lines without terminators."""
    with path.open(encoding="utf-8", newline="") as handle:
        return [line.rstrip("\r\n") for line in handle]


def read_parallel(source_path: Path, target_path: Path) -> tuple[list[str], list[str]]:
    """Read two line-aligned raw files.

    Raises:
        MisalignedCorpusError: If the files differ in line count

    """
    source_lines = read_lines(source_path)
    target_lines = read_lines(target_path)
    if len(source_lines) != len(target_lines):
        msg = (
            f"{source_path} has {len(source_lines)} lines but "
            f"{target_path} has {len(target_lines)}"
        )
        raise MisalignedCorpusError(msg)
    return source_lines, target_lines


def load_tokenized(
    source_path: Path,
    target_path: Path,
    origin: Origin = Origin.IN_DOMAIN,
) -> ParallelCorpus:
    """Load an already preprocessed corpus (space-separated tokens per line)."""
    source_lines, target_lines = read_parallel(source_path, target_path)
    return ParallelCorpus.from_pairs(
        SentencePair(tuple(src.split()), tuple(tgt.split()), origin)
        for src, tgt in zip(source_lines, target_lines, strict=True)
    )


def write_corpus(corpus: ParallelCorpus, source_path: Path, target_path: Path) -> None:
    """Write pairs as space-separated tokens, one sentence per line."""
    source_path.write_text(
        "".join(" ".join(pair.source) + "\n" for pair in corpus), encoding="utf-8"
    )
    target_path.write_text(
        "".join(" ".join(pair.target) + "\n" for pair in corpus), encoding="utf-8"
    )


def write_stats(path: Path, rows: Iterable[tuple[str, int]]) -> None:
    """Write ``key<TAB>value`` stage counts."""
    path.write_text("".join(f"{key}\t{value}\n" for key, value in rows), encoding="utf-8")


def read_stats(path: Path) -> dict[str, int]:
    """Read a ``key<TAB>value`` stats file."""
    stats: dict[str, int] = {}
    for line in read_lines(path):
        if not line:
            continue
        key, _, value = line.partition("\t")
        stats[key] = int(value)
    return stats
