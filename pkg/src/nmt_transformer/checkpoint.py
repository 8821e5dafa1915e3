# pyright: strict
"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"MTRX"  u32 version
    8 x i64  ModelConfig integers (src/tgt vocab, d_model, heads, enc/dec layers,
             max_seq_len, expansion)
    f64      dropout_p
    i64      epoch
    u32 len + UTF-8 JSON  TrainConfig
    u32 len + UTF-8       source vocabulary file text
    u32 len + UTF-8       target vocabulary file text
    u32 count, then per parameter: u16 name length, name, u8 rank, rank x u32 dims,
             raw float32 data
    i64      optimizer step
    u32 count, then per parameter: name blob as above for m, then for v
"""

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .config import ConfigurationError, ModelConfig, TrainConfig
from .model import StateDictError, TransformerModel
from .optim import AdamState
from .tensor import FloatArray
from .vocab import Vocabulary, VocabularyFormatError

logger = logging.getLogger(__name__)

MAGIC = b"MTRX"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sI8qdq")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")
_U8 = struct.Struct("<B")


class CheckpointError(ValueError):
    """Raised when a checkpoint is malformed or does not fit its vocabularies."""


@dataclass
class Checkpoint:
    """Everything needed to resume training or translate.

    Attributes:
        model_config: Architecture of the stored model.
        train_config: Settings the model was trained with.
        epoch: Last completed epoch.
        params: Parameter arrays keyed by name.
        optimizer: Adam moments at the time of saving.
        src_vocab: Source vocabulary the model was trained with.
        tgt_vocab: Target vocabulary the model was trained with.

    """

    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    params: dict[str, FloatArray]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    optimizer: AdamState = field(default_factory=AdamState)

    def build_model(self) -> TransformerModel:
        """Instantiate a model and load the stored parameters into it.

        Raises:
            CheckpointError: If the stored parameters do not fit the stored architecture

        """
        model = TransformerModel(self.model_config)
        try:
            model.load_state_dict(self.params)
        except StateDictError as e:
            msg = f"Checkpoint parameters do not fit its architecture: {e}"
            raise CheckpointError(msg) from e
        return model

    def check_vocabularies(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> None:
        """Ensure external vocabularies match the model's embedding tables.

        Raises:
            CheckpointError: If either size differs

        """
        expected = (self.model_config.src_vocab_size, self.model_config.tgt_vocab_size)
        actual = (len(src_vocab), len(tgt_vocab))
        if expected != actual:
            msg = (
                f"Vocabulary sizes {actual[0]}/{actual[1]} do not match "
                f"checkpoint sizes {expected[0]}/{expected[1]}"
            )
            raise CheckpointError(msg)


def _write_bytes(out: BinaryIO, blob: bytes) -> None:
    out.write(_U32.pack(len(blob)))
    out.write(blob)


def _write_array(out: BinaryIO, name: str, array: FloatArray) -> None:
    encoded = name.encode("utf-8")
    out.write(_U16.pack(len(encoded)))
    out.write(encoded)
    out.write(_U8.pack(array.ndim))
    for dim in array.shape:
        out.write(_U32.pack(dim))
    out.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_exact(buf: BinaryIO, size: int) -> bytes:
    data = buf.read(size)
    if len(data) != size:
        msg = f"Checkpoint truncated: wanted {size} bytes, got {len(data)}"
        raise CheckpointError(msg)
    return data


def _read_struct(buf: BinaryIO, fmt: struct.Struct) -> tuple[int, ...]:
    return fmt.unpack(_read_exact(buf, fmt.size))


def _read_bytes(buf: BinaryIO) -> bytes:
    (size,) = _read_struct(buf, _U32)
    return _read_exact(buf, size)


def _read_array(buf: BinaryIO) -> tuple[str, FloatArray]:
    (name_len,) = _read_struct(buf, _U16)
    name = _read_exact(buf, name_len).decode("utf-8")
    (rank,) = _read_struct(buf, _U8)
    shape = tuple(_read_struct(buf, _U32)[0] for _ in range(rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(buf, 4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def dumps_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize a checkpoint to bytes."""
    cfg = checkpoint.model_config
    out = io.BytesIO()
    out.write(
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            cfg.src_vocab_size,
            cfg.tgt_vocab_size,
            cfg.d_model,
            cfg.n_heads,
            cfg.n_encoder_layers,
            cfg.n_decoder_layers,
            cfg.max_seq_len,
            cfg.expansion,
            cfg.dropout_p,
            checkpoint.epoch,
        )
    )
    _write_bytes(out, json.dumps(asdict(checkpoint.train_config), sort_keys=True).encode())
    _write_bytes(out, checkpoint.src_vocab.dumps().encode("utf-8"))
    _write_bytes(out, checkpoint.tgt_vocab.dumps().encode("utf-8"))
    out.write(_U32.pack(len(checkpoint.params)))
    for name, array in checkpoint.params.items():
        _write_array(out, name, array)
    state = checkpoint.optimizer
    out.write(_I64.pack(state.step))
    out.write(_U32.pack(len(state.m)))
    for name, m in state.m.items():
        _write_array(out, name, m)
        _write_array(out, name, state.v[name])
    return out.getvalue()


def loads_checkpoint(blob: bytes) -> Checkpoint:
    """Parse bytes produced by :func:`dumps_checkpoint`.

    Raises:
        CheckpointError: On a bad magic, unsupported version, truncation or
            inconsistent contents

    """
    buf = io.BytesIO(blob)
    header = _read_exact(buf, _HEADER.size)
    magic, version, *ints, dropout_p, epoch = _HEADER.unpack(header)
    if magic != MAGIC:
        msg = f"Not a checkpoint: bad magic {magic!r}"
        raise CheckpointError(msg)
    if version != FORMAT_VERSION:
        msg = f"Unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        raise CheckpointError(msg)
    try:
        model_config = ModelConfig(*ints, dropout_p=dropout_p)
        train_config = TrainConfig(**json.loads(_read_bytes(buf).decode("utf-8")))
        src_vocab = Vocabulary.loads(_read_bytes(buf).decode("utf-8"))
        tgt_vocab = Vocabulary.loads(_read_bytes(buf).decode("utf-8"))
    except (ConfigurationError, VocabularyFormatError, TypeError, UnicodeDecodeError) as err:
        msg = f"Corrupt checkpoint metadata: {err}"
        raise CheckpointError(msg) from err

    (count,) = _read_struct(buf, _U32)
    params = dict(_read_array(buf) for _ in range(count))
    (step,) = _read_struct(buf, _I64)
    (moments,) = _read_struct(buf, _U32)
    state = AdamState(step=step)
    for _ in range(moments):
        name, m = _read_array(buf)
        _, v = _read_array(buf)
        state.m[name] = m
        state.v[name] = v
    if buf.read(1):
        msg = "Checkpoint has trailing bytes"
        raise CheckpointError(msg)

    checkpoint = Checkpoint(
        model_config=model_config,
        train_config=train_config,
        epoch=epoch,
        params=params,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        optimizer=state,
    )
    checkpoint.check_vocabularies(src_vocab, tgt_vocab)
    return checkpoint


def save_checkpoint(
    path: Path,
    model: TransformerModel,
    *,
    train_config: TrainConfig,
    epoch: int,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    optimizer: AdamState | None = None,
) -> Checkpoint:
    """Write the model and its training context to ``path``.

    The file is written to a sibling temporary path and renamed into place.

    Returns:
        The checkpoint that was written

    """
    checkpoint = Checkpoint(
        model_config=model.config,
        train_config=train_config,
        epoch=epoch,
        params=model.state_dict(),
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        optimizer=optimizer if optimizer is not None else AdamState(),
    )
    checkpoint.check_vocabularies(src_vocab, tgt_vocab)
    blob = dumps_checkpoint(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.info(
        "Saved checkpoint - path: %s, epoch: %d, bytes: %d, parameters: %d",
        path,
        epoch,
        len(blob),
        model.parameter_count(),
    )
    return checkpoint


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: If the file is malformed
        OSError: If the file cannot be read

    """
    checkpoint = loads_checkpoint(path.read_bytes())
    logger.info(
        "Loaded checkpoint - path: %s, epoch: %d, d_model: %d",
        path,
        checkpoint.epoch,
        checkpoint.model_config.d_model,
    )
    return checkpoint
