"""Tests for greedy decoding and file translation."""

import threading
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any
from unittest.mock import patch

import numpy as np
import pytest
from pytest_mock import MockerFixture

from nmt_transformer.config import ModelConfig, with_vocab_sizes
from nmt_transformer.decode import (
    StopReason,
    default_max_len,
    greedy_translate,
    next_token_distribution,
    translate_file,
    translate_line,
    translate_lines,
)
from nmt_transformer.model import InputLengthError, TransformerModel
from nmt_transformer.vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

Vocabs = tuple[Vocabulary, Vocabulary]


@pytest.fixture
def small_model(tiny_model_config: ModelConfig, small_vocabs: Vocabs) -> TransformerModel:
    """Untrained tiny model sized to the small corpus vocabularies."""
    src_vocab, tgt_vocab = small_vocabs
    return TransformerModel(with_vocab_sizes(tiny_model_config, len(src_vocab), len(tgt_vocab)), rng=3)


def _scripted(tokens: Sequence[int], vocab_size: int) -> Callable[..., np.ndarray]:
    """Distribution stub that picks ``tokens`` in order."""
    steps = iter(tokens)

    def distribution(*_args: object) -> np.ndarray:
        probs = np.full(vocab_size, 0.01)
        probs[next(steps)] = 1.0
        return probs / probs.sum()

    return distribution


class TestGreedyTranslate:
    """Test the decoding loop."""

    def test_stops_at_eos(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        src_vocab, tgt_vocab = small_vocabs
        ids = [tgt_vocab.id_of("the"), tgt_vocab.id_of("dog"), EOS_ID]
        with patch(
            "nmt_transformer.decode.next_token_distribution",
            side_effect=_scripted(ids, len(tgt_vocab)),
        ):
            result = greedy_translate(small_model, src_vocab, tgt_vocab, ["der", "hund"])
        assert result.tokens == ("the", "dog")
        assert result.ids == tuple(ids[:2])
        assert result.stop_reason is StopReason.EOS
        assert len(result.probabilities) == 3

    def test_stops_at_length_cap(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        src_vocab, tgt_vocab = small_vocabs
        word = tgt_vocab.id_of("the")
        with patch(
            "nmt_transformer.decode.next_token_distribution",
            side_effect=_scripted([word] * 10, len(tgt_vocab)),
        ):
            result = greedy_translate(small_model, src_vocab, tgt_vocab, ["der"], max_len=3)
        assert result.tokens == ("the", "the", "the")
        assert result.stop_reason is StopReason.MAX_LEN

    def test_length_cap_never_exceeds_max_seq_len(
        self, small_model: TransformerModel, small_vocabs: Vocabs, mocker: MockerFixture
    ) -> None:
        src_vocab, tgt_vocab = small_vocabs
        word = tgt_vocab.id_of("the")
        mocker.patch(
            "nmt_transformer.decode.next_token_distribution",
            side_effect=_scripted([word] * 30, len(tgt_vocab)),
        )
        result = greedy_translate(small_model, src_vocab, tgt_vocab, ["der"], max_len=20)
        assert len(result.ids) == small_model.config.max_seq_len
        assert result.stop_reason is StopReason.MAX_LEN

    def test_large_max_len_runs_real_decoder(
        self, small_model: TransformerModel, small_vocabs: Vocabs, mocker: MockerFixture
    ) -> None:
        src_vocab, tgt_vocab = small_vocabs

        def without_eos(*args: Any) -> np.ndarray:
            probs = next_token_distribution(*args)
            probs[EOS_ID] = 0.0
            return probs / probs.sum()

        stub = mocker.patch("nmt_transformer.decode.next_token_distribution", side_effect=without_eos)
        result = greedy_translate(small_model, src_vocab, tgt_vocab, ["das", "haus"], max_len=50)
        assert len(result.ids) == small_model.config.max_seq_len
        assert stub.call_count == small_model.config.max_seq_len
        assert result.stop_reason is StopReason.MAX_LEN

    def test_default_length_cap(self, small_model: TransformerModel) -> None:
        assert default_max_len(small_model, 1) == 7
        assert default_max_len(small_model, 4) == 10

    def test_output_is_prefix_stable(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        src_vocab, tgt_vocab = small_vocabs
        source = ["das", "haus", "ist", "klein", "."]
        full = greedy_translate(small_model, src_vocab, tgt_vocab, source)
        for cap in range(len(full.ids) + 1):
            shorter = greedy_translate(small_model, src_vocab, tgt_vocab, source, max_len=cap)
            assert shorter.ids == full.ids[:cap]

    def test_never_emits_pad_or_bos(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        src_vocab, _ = small_vocabs
        enc_out, mask = small_model.encode(np.asarray([src_vocab.encode(["das", "auto"], add_bos_eos=True)]))
        probs = next_token_distribution(small_model, enc_out, mask, [BOS_ID])
        assert probs[PAD_ID] == 0.0
        assert probs[BOS_ID] == 0.0
        assert probs.sum() == pytest.approx(1.0)

    def test_overlong_source(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        src_vocab, tgt_vocab = small_vocabs
        with pytest.raises(InputLengthError):
            greedy_translate(small_model, src_vocab, tgt_vocab, ["das"] * 9)


class TestTranslateLines:
    """Test raw-line translation and concurrency."""

    def test_empty_line_translates_to_empty(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        assert translate_line(small_model, *small_vocabs, "   ") == ""

    async def test_preserves_input_order(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        def slow_echo(_model: object, _src: object, _tgt: object, line: str) -> str:
            time.sleep(0.02 * (5 - len(line)))
            return line.upper()

        with patch("nmt_transformer.decode.translate_line", side_effect=slow_echo):
            outputs = await translate_lines(small_model, *small_vocabs, ["a", "bb", "ccc", "dddd"], concurrency=4)
        assert outputs == ["A", "BB", "CCC", "DDDD"]

    async def test_concurrency_limit(self, small_model: TransformerModel, small_vocabs: Vocabs) -> None:
        active = 0
        peak = 0
        lock = threading.Lock()

        def tracked(_model: object, _src: object, _tgt: object, line: str) -> str:
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.01)
            with lock:
                active -= 1
            return line

        with patch("nmt_transformer.decode.translate_line", side_effect=tracked):
            await translate_lines(small_model, *small_vocabs, [str(i) for i in range(8)], concurrency=2)
        assert peak <= 2

    async def test_failed_line_becomes_empty(
        self, small_model: TransformerModel, small_vocabs: Vocabs, caplog: pytest.LogCaptureFixture
    ) -> None:
        def flaky(_model: object, _src: object, _tgt: object, line: str) -> str:
            if line == "bad":
                msg = "too long"
                raise InputLengthError(msg)
            return line

        with patch("nmt_transformer.decode.translate_line", side_effect=flaky):
            outputs = await translate_lines(small_model, *small_vocabs, ["ok", "bad", "fine"])
        assert outputs == ["ok", "", "fine"]
        assert "Translation failed - line: 2" in caplog.text


class TestTranslateFile:
    """Test whole-file translation with a real model."""

    def test_one_output_line_per_input(
        self, tmp_path: Path, small_model: TransformerModel, small_vocabs: Vocabs
    ) -> None:
        source = tmp_path / "input.de"
        target = tmp_path / "output.en"
        source.write_text("Das Haus ist klein.\n\nDer Hund schläft.\n", encoding="utf-8")
        written = translate_file(small_model, *small_vocabs, source, target, concurrency=2)
        lines = target.read_text(encoding="utf-8").split("\n")
        assert written == 3
        assert len(lines) == 4
        assert lines[1] == ""
        assert lines[3] == ""
