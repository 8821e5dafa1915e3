"""Corpus-level BLEU with clipped n-gram precision and brevity penalty."""

import logging
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

logger = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 4

Tokens = Sequence[str]


@dataclass(frozen=True)
class BleuReport:
    """Corpus BLEU and the statistics it was computed from.

    Attributes:
        bleu: Score in [0, 1].
        precisions: Clipped precision p_n for n = 1..max_order.
        matches: Clipped n-gram matches per order.
        totals: Candidate n-gram counts per order.
        brevity_penalty: BP in [0, 1].
        candidate_length: Total candidate tokens c.
        reference_length: Total reference tokens r.
        max_order: Highest n-gram order N.
        weights: Per-order weights w_n, summing to 1.
        smoothed: Whether add-one smoothing was applied for n > 1.

    """

    bleu: float
    precisions: tuple[float, ...]
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    brevity_penalty: float
    candidate_length: int
    reference_length: int
    max_order: int
    weights: tuple[float, ...]
    smoothed: bool = False

    @property
    def score(self) -> float:
        """BLEU scaled to 0-100."""
        return 100.0 * self.bleu

    def format(self) -> str:
        """Render the report one field per line."""
        orders = "/".join(f"p{n}" for n in range(1, self.max_order + 1))
        values = "/".join(f"{p:.4f}" for p in self.precisions)
        return "\n".join(
            [
                f"BLEU = {self.score:.2f}",
                f"{orders} = {values}",
                f"BP = {self.brevity_penalty:.4f}",
                f"c/r = {self.candidate_length}/{self.reference_length}",
            ]
        )


def ngrams(tokens: Tokens, n: int) -> Counter[tuple[str, ...]]:
    """Count every contiguous n-gram of ``tokens``."""
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> None:
    if len(candidates) != len(references):
        msg = f"Got {len(candidates)} candidates but {len(references)} references"
        raise ValueError(msg)


def clipped_precision(
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    n: int,
) -> tuple[int, int]:
    """Corpus totals of clipped n-gram matches and candidate n-grams.

    Each candidate n-gram counts at most as often as it occurs in the paired
    reference.

    Returns:
        ``(matched, total)``; the precision is ``matched / total`` when
        ``total > 0`` and undefined otherwise

    Raises:
        ValueError: If n < 1 or the lists differ in length

    """
    if n < 1:
        msg = f"N-gram order must be at least 1, got {n}"
        raise ValueError(msg)
    _check_pairs(candidates, references)
    matched = 0
    total = 0
    for candidate, reference in zip(candidates, references, strict=True):
        cand_counts = ngrams(candidate, n)
        ref_counts = ngrams(reference, n)
        matched += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total += sum(cand_counts.values())
    return matched, total


def brevity_penalty(c: int, r: int) -> float:
    """``1`` if ``c > r``, else ``exp(1 - r / c)``; 0 for an empty candidate side.

    Raises:
        ValueError: If c is negative or r is below one

    """
    if c < 0 or r < 1:
        msg = f"Brevity penalty needs c >= 0 and r >= 1, got c={c}, r={r}"
        raise ValueError(msg)
    if c == 0:
        return 0.0
    if c > r:
        return 1.0
    return math.exp(1.0 - r / c)


def bleu_corpus(
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    max_order: int = DEFAULT_MAX_ORDER,
    weights: Sequence[float] | None = None,
    *,
    smooth: bool = False,
) -> BleuReport:
    """Score tokenized candidates against one reference each.

    Precisions are aggregated over the whole corpus before combining. An
    order with no candidate n-grams has precision 0, which makes the score 0
    unless ``smooth`` adds one to the numerator and denominator of every
    order above 1.

    Args:
        candidates: Tokenized system outputs
        references: Tokenized references, paired by position
        max_order: Highest n-gram order N
        weights: Per-order weights; uniform ``1/N`` by default
        smooth: Apply add-one smoothing for n > 1

    Raises:
        ValueError: On an empty corpus, mismatched lengths, bad weights or a
            reference side with no tokens

    """
    if not candidates:
        msg = "BLEU is undefined for an empty corpus"
        raise ValueError(msg)
    _check_pairs(candidates, references)
    if max_order < 1:
        msg = f"max_order must be at least 1, got {max_order}"
        raise ValueError(msg)
    w = tuple(weights) if weights is not None else (1.0 / max_order,) * max_order
    if len(w) != max_order or any(x < 0 for x in w) or not math.isclose(sum(w), 1.0):
        msg = f"Weights must be {max_order} non-negative values summing to 1, got {w}"
        raise ValueError(msg)

    matches: list[int] = []
    totals: list[int] = []
    precisions: list[float] = []
    for n in range(1, max_order + 1):
        matched, total = clipped_precision(candidates, references, n)
        matches.append(matched)
        totals.append(total)
        if smooth and n > 1:
            precisions.append((matched + 1) / (total + 1))
        else:
            precisions.append(matched / total if total else 0.0)

    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    bp = brevity_penalty(c, r)
    if all(p > 0 for p in precisions):
        score = bp * math.exp(sum(wn * math.log(pn) for wn, pn in zip(w, precisions, strict=True)))
    else:
        score = 0.0
    report = BleuReport(
        bleu=min(1.0, score),
        precisions=tuple(precisions),
        matches=tuple(matches),
        totals=tuple(totals),
        brevity_penalty=bp,
        candidate_length=c,
        reference_length=r,
        max_order=max_order,
        weights=w,
        smoothed=smooth,
    )
    logger.debug("Computed BLEU - score: %.2f, c: %d, r: %d", report.score, c, r)
    return report
