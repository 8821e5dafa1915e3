"""Tests for the binary checkpoint container."""

import struct
from pathlib import Path

import numpy as np
import pytest

from nmt_transformer.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from nmt_transformer.config import ModelConfig, TrainConfig
from nmt_transformer.model import TransformerModel
from nmt_transformer.optim import AdamState
from nmt_transformer.vocab import BOS_ID, Vocabulary


def _vocab(size: int) -> Vocabulary:
    return Vocabulary.build([[f"t{i}" for i in range(size - 4)]])


@pytest.fixture
def saved(tmp_path: Path, tiny_model: TransformerModel) -> tuple[Path, TransformerModel]:
    """Tiny model written to disk with matching vocabularies."""
    path = tmp_path / "model.ckpt"
    state = AdamState(step=3)
    for name, array in tiny_model.state_dict().items():
        state.m[name] = np.full_like(array, 0.5)
        state.v[name] = np.full_like(array, 0.25)
    save_checkpoint(
        path,
        tiny_model,
        train_config=TrainConfig(epochs=7, seed=11, run_label="base+mixed/7"),
        epoch=4,
        src_vocab=_vocab(11),
        tgt_vocab=_vocab(13),
        optimizer=state,
    )
    return path, tiny_model


class TestRoundTrip:
    """Test that a saved model behaves identically when reloaded."""

    def test_forward_is_bitwise_identical(self, saved: tuple[Path, TransformerModel]) -> None:
        path, model = saved
        restored = load_checkpoint(path).build_model()
        src = np.array([[BOS_ID, 5, 6, 7, 2], [BOS_ID, 8, 2, 0, 0]])
        tgt = np.array([[BOS_ID, 4, 9], [BOS_ID, 10, 0]])
        np.testing.assert_array_equal(restored(src, tgt).data, model(src, tgt).data)

    def test_metadata_restored(self, saved: tuple[Path, TransformerModel]) -> None:
        path, model = saved
        checkpoint = load_checkpoint(path)
        assert checkpoint.model_config == model.config
        assert checkpoint.epoch == 4
        assert checkpoint.train_config.epochs == 7
        assert checkpoint.train_config.run_label == "base+mixed/7"
        assert len(checkpoint.src_vocab) == 11
        assert checkpoint.tgt_vocab == _vocab(13)

    def test_optimizer_state_restored(self, saved: tuple[Path, TransformerModel]) -> None:
        path, model = saved
        state = load_checkpoint(path).optimizer
        assert state.step == 3
        assert set(state.m) == set(model.named_parameters())
        np.testing.assert_array_equal(state.v["output.weight"], 0.25)

    def test_no_temporary_file_left(self, saved: tuple[Path, TransformerModel]) -> None:
        path, _ = saved
        assert sorted(p.name for p in path.parent.iterdir()) == ["model.ckpt"]

    def test_header_layout(self, saved: tuple[Path, TransformerModel]) -> None:
        path, _ = saved
        blob = path.read_bytes()
        assert blob[:4] == MAGIC
        assert struct.unpack("<I", blob[4:8]) == (FORMAT_VERSION,)
        assert struct.unpack("<8q", blob[8:72]) == (11, 13, 8, 2, 1, 1, 10, 4)


class TestMalformedCheckpoints:
    """Test rejection of corrupt or inconsistent files."""

    def test_bad_magic(self, saved: tuple[Path, TransformerModel]) -> None:
        blob = b"NOPE" + saved[0].read_bytes()[4:]
        with pytest.raises(CheckpointError, match="bad magic"):
            loads_checkpoint(blob)

    def test_unsupported_version(self, saved: tuple[Path, TransformerModel]) -> None:
        blob = saved[0].read_bytes()
        with pytest.raises(CheckpointError, match="Unsupported checkpoint version 9"):
            loads_checkpoint(blob[:4] + struct.pack("<I", 9) + blob[8:])

    def test_truncated(self, saved: tuple[Path, TransformerModel]) -> None:
        blob = saved[0].read_bytes()
        with pytest.raises(CheckpointError, match="truncated"):
            loads_checkpoint(blob[:-10])

    def test_trailing_bytes(self, saved: tuple[Path, TransformerModel]) -> None:
        with pytest.raises(CheckpointError, match="trailing"):
            loads_checkpoint(saved[0].read_bytes() + b"\x00")

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestVocabularyChecks:
    """Test that models and vocabularies must agree."""

    def test_save_rejects_mismatched_vocab(self, tmp_path: Path, tiny_model: TransformerModel) -> None:
        with pytest.raises(CheckpointError, match="do not match"):
            save_checkpoint(
                tmp_path / "m.ckpt",
                tiny_model,
                train_config=TrainConfig(),
                epoch=1,
                src_vocab=_vocab(12),
                tgt_vocab=_vocab(13),
            )
        assert not (tmp_path / "m.ckpt").exists()

    def test_external_vocab_check(self, tiny_model_config: ModelConfig, tiny_model: TransformerModel) -> None:
        checkpoint = Checkpoint(
            model_config=tiny_model_config,
            train_config=TrainConfig(),
            epoch=0,
            params=tiny_model.state_dict(),
            src_vocab=_vocab(11),
            tgt_vocab=_vocab(13),
        )
        assert loads_checkpoint(dumps_checkpoint(checkpoint)).epoch == 0
        with pytest.raises(CheckpointError):
            checkpoint.check_vocabularies(_vocab(11), _vocab(20))

    def test_parameters_must_fit_architecture(
        self, tiny_model_config: ModelConfig, tiny_model: TransformerModel
    ) -> None:
        params = tiny_model.state_dict()
        params["output.renamed"] = params.pop("output.weight")
        checkpoint = Checkpoint(
            model_config=tiny_model_config,
            train_config=TrainConfig(),
            epoch=1,
            params=params,
            src_vocab=_vocab(11),
            tgt_vocab=_vocab(13),
        )
        with pytest.raises(CheckpointError, match="do not fit its architecture"):
            checkpoint.build_model()
