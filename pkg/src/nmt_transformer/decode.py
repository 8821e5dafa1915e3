# pyright: strict
"""Greedy autoregressive translation."""

import asyncio
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np

from .model import AttentionMask, TransformerModel
from .preprocess import detokenize, normalize_punctuation, tokenize
from .tensor import FloatArray, Tensor, no_grad
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 4

# Never produced by the decoder.
_INELIGIBLE = (PAD_ID, BOS_ID)


class StopReason(StrEnum):
    """Why decoding ended."""

    EOS = "eos"
    MAX_LEN = "max_len"


@dataclass(frozen=True)
class TranslationResult:
    """Outcome of translating one sentence.

    Attributes:
        source: Source tokens as given.
        tokens: Output tokens with specials stripped.
        ids: Output ids, excluding the final eos.
        probabilities: Probability of the chosen token at every step,
            including the step that chose eos.
        stop_reason: Whether eos was produced or the length cap was hit.

    """

    source: tuple[str, ...]
    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    probabilities: tuple[float, ...]
    stop_reason: StopReason


def default_max_len(model: TransformerModel, source_len: int) -> int:
    """Decode length cap: ``min(max_seq_len, 2 * source_len + 5)``."""
    return min(model.config.max_seq_len, 2 * source_len + 5)


def next_token_distribution(
    model: TransformerModel,
    enc_out: Tensor,
    src_pad_mask: AttentionMask,
    prefix: Sequence[int],
) -> FloatArray:
    """Probabilities over the target vocabulary after decoder input ``prefix``.

    pad and bos receive probability 0.
    """
    logits = model.decode(np.asarray([prefix]), enc_out, src_pad_mask, training=False)
    last = logits.data[0, -1].astype(np.float64)
    last[list(_INELIGIBLE)] = -np.inf
    shifted = np.exp(last - last.max())
    return shifted / shifted.sum()


def greedy_translate(
    model: TransformerModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    source: Sequence[str],
    max_len: int | None = None,
) -> TranslationResult:
    """Translate ``source`` by repeatedly appending the most probable token.

    Decoding starts from bos and re-runs the decoder over the whole prefix at
    every step. Ties are broken towards the lowest id. Dropout is always off.

    Args:
        model: Trained model
        src_vocab: Source vocabulary of the model
        tgt_vocab: Target vocabulary of the model
        source: Tokenized source sentence
        max_len: Cap on generated tokens; defaults to :func:`default_max_len` and
            never exceeds the model's max_seq_len

    Returns:
        The translation and per-step probabilities

    Raises:
        InputLengthError: If the encoded source exceeds the model's max_seq_len

    """
    limit = default_max_len(model, len(source)) if max_len is None else max_len
    limit = min(limit, model.config.max_seq_len)
    src_ids = src_vocab.encode(source, add_bos_eos=True)
    prefix = [BOS_ID]
    chosen: list[int] = []
    probabilities: list[float] = []
    stop = StopReason.MAX_LEN
    with no_grad():
        enc_out, src_pad_mask = model.encode(np.asarray([src_ids]), training=False)
        while len(chosen) < limit:
            probs = next_token_distribution(model, enc_out, src_pad_mask, prefix)
            token = int(np.argmax(probs))
            probabilities.append(float(probs[token]))
            if token == EOS_ID:
                stop = StopReason.EOS
                break
            chosen.append(token)
            prefix.append(token)
    return TranslationResult(
        source=tuple(source),
        tokens=tuple(tgt_vocab.decode(chosen, strip_specials=True)),
        ids=tuple(chosen),
        probabilities=tuple(probabilities),
        stop_reason=stop,
    )


def translate_line(
    model: TransformerModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    line: str,
) -> str:
    """Normalize, tokenize, translate and detokenize one raw line."""
    tokens = tokenize(normalize_punctuation(line))
    if not tokens:
        return ""
    return detokenize(greedy_translate(model, src_vocab, tgt_vocab, tokens).tokens)


async def translate_lines(
    model: TransformerModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    lines: Sequence[str],
    *,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> list[str]:
    """Translate lines concurrently on worker threads, preserving order.

    A line that fails is logged and translated as an empty string.
    """
    semaphore = asyncio.Semaphore(max(1, concurrency))

    async def worker(index: int, line: str) -> str:
        async with semaphore:
            try:
                return await asyncio.to_thread(translate_line, model, src_vocab, tgt_vocab, line)
            except Exception as e:  # noqa: BLE001
                logger.warning(
                    "Translation failed - line: %d, error: %s, error_type: %s",
                    index + 1,
                    str(e),
                    type(e).__name__,
                )
                return ""

    return list(await asyncio.gather(*(worker(i, line) for i, line in enumerate(lines))))


def translate_file(
    model: TransformerModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    input_path: Path,
    output_path: Path,
    *,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> int:
    """Translate a UTF-8 file line by line into ``output_path``.

    Returns:
        Number of lines written

    """
    lines = input_path.read_text(encoding="utf-8").splitlines()
    outputs = asyncio.run(
        translate_lines(model, src_vocab, tgt_vocab, lines, concurrency=concurrency)
    )
    output_path.write_text("".join(f"{line}\n" for line in outputs), encoding="utf-8")
    logger.info(
        "Translated file - input: %s, output: %s, lines: %d", input_path, output_path, len(outputs)
    )
    return len(outputs)
