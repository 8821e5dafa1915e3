# pyright: strict
"""Transformer encoder-decoder built on the autograd tensor engine.

Layout follows the post-norm architecture: every sublayer output passes
through dropout, is added to its input and then layer-normalized. Token and
learned positional embeddings are summed without scaling. ``forward``
returns pre-softmax logits; the softmax is fused into the loss during
training and applied explicitly during decoding.
"""

import contextlib
import logging
import math
from collections.abc import Iterator
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import ModelConfig
from .tensor import (
    FloatArray,
    Tensor,
    dropout,
    embedding_gather,
    layer_norm,
    masked_fill,
    matmul,
    relu,
    softmax_lastdim,
)
from .vocab import PAD_ID

logger = logging.getLogger(__name__)

AttentionMask = NDArray[np.bool_]
"""Boolean mask broadcastable to attention scores; True marks an attendable key."""


class InputLengthError(ValueError):
    """Raised when a sequence exceeds the model's maximum length."""


class StateDictError(ValueError):
    """Raised when a parameter snapshot does not fit the model."""


def make_pad_mask(ids: ArrayLike, pad_id: int = PAD_ID) -> AttentionMask:
    """Mask of shape ``[batch, 1, 1, len]`` that is False exactly at pad positions."""
    index = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    return (index != pad_id)[:, np.newaxis, np.newaxis, :]


def make_lookahead_mask(length: int) -> AttentionMask:
    """Lower-triangular mask of shape ``[1, 1, len, len]``; ``[i, j]`` is True iff ``j <= i``.

    Raises:
        ValueError: If length is below one

    """
    if length < 1:
        msg = f"Look-ahead mask length must be at least 1, got {length}"
        raise ValueError(msg)
    return np.tril(np.ones((length, length), dtype=np.bool_))[np.newaxis, np.newaxis]


def make_decoder_mask(tgt_ids: ArrayLike, pad_id: int = PAD_ID) -> AttentionMask:
    """Conjunction of the look-ahead mask and the target pad mask."""
    index = np.atleast_2d(np.asarray(tgt_ids, dtype=np.int64))
    return make_lookahead_mask(index.shape[1]) & make_pad_mask(index, pad_id)


def attention_weights(q: Tensor, k: Tensor, mask: AttentionMask | None) -> Tensor:
    """Softmax of ``QK^T / sqrt(d_k)`` with masked keys excluded."""
    scores = matmul(q, k.transpose()) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = masked_fill(scores, ~mask, -np.inf)
    return softmax_lastdim(scores)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask | None) -> Tensor:
    """``softmax(QK^T / sqrt(d_k)) V`` over the last two dimensions."""
    return matmul(attention_weights(q, k, mask), v)


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> FloatArray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map ``x @ W (+ b)`` with uniform(+-sqrt(1/d_in)) weights and zero bias."""

    def __init__(
        self,
        name: str,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        *,
        bias: bool,
    ) -> None:
        """Create the weight (and optional bias) parameters."""
        self.weight = Tensor(
            _uniform(rng, d_in, (d_in, d_out)), requires_grad=True, name=f"{name}.weight"
        )
        self.bias = (
            Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.bias")
            if bias
            else None
        )

    def parameters(self) -> list[Tensor]:
        """Weight and bias, if any."""
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        """Apply the map to the last dimension of ``x``."""
        out = matmul(x, self.weight)
        return out if self.bias is None else out + self.bias


class LayerNorm:
    """Layer normalization with learned gain (init 1) and bias (init 0)."""

    def __init__(self, name: str, width: int, eps: float = 1e-5) -> None:
        """Create gain and bias parameters."""
        self.gain = Tensor(np.ones(width), requires_grad=True, name=f"{name}.gain")
        self.bias = Tensor(np.zeros(width), requires_grad=True, name=f"{name}.bias")
        self.eps = eps

    def parameters(self) -> list[Tensor]:
        """Gain and bias."""
        return [self.gain, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        """Normalize the last dimension of ``x``."""
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention:
    """Projected attention split into ``n_heads`` heads of size ``d_model / n_heads``."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator) -> None:
        """Create the W_Q, W_K, W_V and W_O projections."""
        d_model = config.d_model
        self.n_heads = config.n_heads
        self.max_seq_len = config.max_seq_len
        self.w_q = Linear(f"{name}.w_q", d_model, d_model, rng, bias=False)
        self.w_k = Linear(f"{name}.w_k", d_model, d_model, rng, bias=False)
        self.w_v = Linear(f"{name}.w_v", d_model, d_model, rng, bias=False)
        self.w_o = Linear(f"{name}.w_o", d_model, d_model, rng, bias=False)

    def parameters(self) -> list[Tensor]:
        """All projection weights."""
        return [
            *self.w_q.parameters(),
            *self.w_k.parameters(),
            *self.w_v.parameters(),
            *self.w_o.parameters(),
        ]

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, d_model = x.shape
        return x.reshape(batch, length, self.n_heads, d_model // self.n_heads).permute(0, 2, 1, 3)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask: AttentionMask | None) -> Tensor:
        """Attend from ``x_q`` positions over ``x_kv`` positions.

        Raises:
            InputLengthError: If either sequence is longer than max_seq_len

        """
        longest = max(x_q.shape[1], x_kv.shape[1])
        if longest > self.max_seq_len:
            msg = f"Sequence length {longest} exceeds max_seq_len {self.max_seq_len}"
            raise InputLengthError(msg)
        q = self._split_heads(self.w_q(x_q))
        k = self._split_heads(self.w_k(x_kv))
        v = self._split_heads(self.w_v(x_kv))
        heads = scaled_dot_attention(q, k, v, mask)
        batch, _, length, _ = heads.shape
        merged = heads.permute(0, 2, 1, 3).reshape(batch, length, x_q.shape[2])
        return self.w_o(merged)


class FeedForward:
    """Position-wise ``W2 relu(W1 x + b1) + b2`` with inner width ``expansion * d_model``."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator) -> None:
        """Create both affine layers."""
        inner = config.expansion * config.d_model
        self.w1 = Linear(f"{name}.w1", config.d_model, inner, rng, bias=True)
        self.w2 = Linear(f"{name}.w2", inner, config.d_model, rng, bias=True)

    def parameters(self) -> list[Tensor]:
        """Weights and biases of both layers."""
        return [*self.w1.parameters(), *self.w2.parameters()]

    def __call__(self, x: Tensor) -> Tensor:
        """Apply the two-layer network to every position."""
        return self.w2(relu(self.w1(x)))


class EncoderLayer:
    """Self-attention then feed-forward, each followed by dropout, residual and norm."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator) -> None:
        """Create the sublayers."""
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", config, rng)
        self.ffn = FeedForward(f"{name}.ffn", config, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", config.d_model)
        self.norm2 = LayerNorm(f"{name}.norm2", config.d_model)

    def parameters(self) -> list[Tensor]:
        """Parameters of every sublayer."""
        return [
            *self.self_attn.parameters(),
            *self.ffn.parameters(),
            *self.norm1.parameters(),
            *self.norm2.parameters(),
        ]

    def __call__(self, x: Tensor, pad_mask: AttentionMask, ctx: "_Context") -> Tensor:
        """Contextualize source positions; pad keys are never attended."""
        x = self.norm1(x + ctx.dropout(self.self_attn(x, x, pad_mask)))
        return self.norm2(x + ctx.dropout(self.ffn(x)))


class DecoderLayer:
    """Masked self-attention, cross-attention over the encoder, then feed-forward."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator) -> None:
        """Create the sublayers."""
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", config, rng)
        self.cross_attn = MultiHeadAttention(f"{name}.cross_attn", config, rng)
        self.ffn = FeedForward(f"{name}.ffn", config, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", config.d_model)
        self.norm2 = LayerNorm(f"{name}.norm2", config.d_model)
        self.norm3 = LayerNorm(f"{name}.norm3", config.d_model)

    def parameters(self) -> list[Tensor]:
        """Parameters of every sublayer."""
        return [
            *self.self_attn.parameters(),
            *self.cross_attn.parameters(),
            *self.ffn.parameters(),
            *self.norm1.parameters(),
            *self.norm2.parameters(),
            *self.norm3.parameters(),
        ]

    def __call__(
        self,
        y: Tensor,
        enc_out: Tensor,
        self_mask: AttentionMask,
        cross_pad_mask: AttentionMask,
        ctx: "_Context",
    ) -> Tensor:
        """Update target positions from earlier targets and the encoded source."""
        y = self.norm1(y + ctx.dropout(self.self_attn(y, y, self_mask)))
        y = self.norm2(y + ctx.dropout(self.cross_attn(y, enc_out, cross_pad_mask)))
        return self.norm3(y + ctx.dropout(self.ffn(y)))


class _Context:
    """Per-call dropout settings, so concurrent calls never share mutable state."""

    def __init__(self, p: float, *, training: bool, rng: np.random.Generator | None) -> None:
        self.p = p
        self.training = training
        self.rng = rng

    def dropout(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, training=self.training, rng=self.rng)


class TransformerModel:
    """Encoder-decoder Transformer with learned positional embeddings.

    Parameters are created from a seeded generator and exposed by name through
    :meth:`named_parameters`. The parameter count is a pure function of the
    configuration.

    Attributes:
        config: Hyperparameters the model was built with.
        training: Default mode for :meth:`forward` (enables dropout).
        dropout_p: Dropout probability used in training mode.
        rng: Default generator for dropout masks.

    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0) -> None:
        """Initialize every parameter from ``rng``.

        Embedding and positional tables are drawn from normal(0, d_model^-1/2);
        linear layers from uniform(+-sqrt(1/d_in)).
        """
        generator = np.random.default_rng(rng)
        self.config = config
        self.training = False
        self.dropout_p = config.dropout_p
        self.rng = generator
        d_model = config.d_model
        std = d_model**-0.5

        self.src_embedding = Tensor(
            generator.normal(0.0, std, (config.src_vocab_size, d_model)),
            requires_grad=True,
            name="src_embedding",
        )
        self.tgt_embedding = Tensor(
            generator.normal(0.0, std, (config.tgt_vocab_size, d_model)),
            requires_grad=True,
            name="tgt_embedding",
        )
        self.src_positions = Tensor(
            generator.normal(0.0, std, (config.max_seq_len, d_model)),
            requires_grad=True,
            name="src_positions",
        )
        self.tgt_positions = Tensor(
            generator.normal(0.0, std, (config.max_seq_len, d_model)),
            requires_grad=True,
            name="tgt_positions",
        )
        self.encoder_layers = [
            EncoderLayer(f"encoder.{i}", config, generator) for i in range(config.n_encoder_layers)
        ]
        self.decoder_layers = [
            DecoderLayer(f"decoder.{i}", config, generator) for i in range(config.n_decoder_layers)
        ]
        self.output = Linear("output", d_model, config.tgt_vocab_size, generator, bias=False)
        self._parameters = {tensor.name: tensor for tensor in self._collect()}
        logger.info(
            "Initialized transformer - d_model: %d, heads: %d, layers: %d/%d, parameters: %d",
            config.d_model,
            config.n_heads,
            config.n_encoder_layers,
            config.n_decoder_layers,
            self.parameter_count(),
        )

    def _collect(self) -> list[Tensor]:
        tensors = [self.src_embedding, self.tgt_embedding, self.src_positions, self.tgt_positions]
        for enc in self.encoder_layers:
            tensors.extend(enc.parameters())
        for dec in self.decoder_layers:
            tensors.extend(dec.parameters())
        tensors.extend(self.output.parameters())
        return tensors

    def named_parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor keyed by its dotted name."""
        return dict(self._parameters)

    def parameter_count(self) -> int:
        """Total number of learnable scalars."""
        return sum(tensor.size for tensor in self._parameters.values())

    def zero_grad(self) -> None:
        """Drop accumulated gradients of every parameter."""
        for tensor in self._parameters.values():
            tensor.zero_grad()

    def state_dict(self) -> dict[str, FloatArray]:
        """Copies of every parameter array."""
        return {name: tensor.data.copy() for name, tensor in self._parameters.items()}

    def load_state_dict(self, state: dict[str, FloatArray]) -> None:
        """Overwrite parameters with arrays of matching names and shapes.

        Nothing is written unless every name and shape matches.

        Raises:
            StateDictError: If a name is missing or unexpected, or a shape differs

        """
        missing = sorted(set(self._parameters) - set(state))
        if missing:
            msg = f"State is missing parameters: {', '.join(missing)}"
            raise StateDictError(msg)
        unexpected = sorted(set(state) - set(self._parameters))
        if unexpected:
            msg = f"State has unexpected parameters: {', '.join(unexpected)}"
            raise StateDictError(msg)
        for name, tensor in self._parameters.items():
            shape = np.shape(state[name])
            if shape != tensor.shape:
                msg = f"Shape mismatch for {name}: expected {tensor.shape}, got {shape}"
                raise StateDictError(msg)
        for name, tensor in self._parameters.items():
            tensor.data = np.array(state[name], dtype=tensor.data.dtype)

    @contextlib.contextmanager
    def training_mode(self, *, enabled: bool = True) -> Iterator[None]:
        """Temporarily switch the default mode."""
        previous = self.training
        self.training = enabled
        try:
            yield
        finally:
            self.training = previous

    def _check_length(self, length: int, side: str) -> None:
        if length > self.config.max_seq_len:
            msg = f"{side} length {length} exceeds max_seq_len {self.config.max_seq_len}"
            raise InputLengthError(msg)

    def _context(self, training: bool | None, rng: np.random.Generator | None) -> _Context:
        mode = self.training if training is None else training
        return _Context(self.dropout_p, training=mode, rng=rng if rng is not None else self.rng)

    def _embed(self, table: Tensor, positions: Tensor, ids: NDArray[Any], ctx: _Context) -> Tensor:
        length = ids.shape[1]
        pos = embedding_gather(positions, np.arange(length))
        return ctx.dropout(embedding_gather(table, ids) + pos)

    def encode(
        self,
        src_ids: ArrayLike,
        *,
        training: bool | None = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, AttentionMask]:
        """Run the encoder stack.

        Returns:
            Encoder states ``[batch, src_len, d_model]`` and the source pad mask

        Raises:
            InputLengthError: If the source is longer than max_seq_len

        """
        ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        self._check_length(ids.shape[1], "Source")
        ctx = self._context(training, rng)
        pad_mask = make_pad_mask(ids)
        x = self._embed(self.src_embedding, self.src_positions, ids, ctx)
        for layer in self.encoder_layers:
            x = layer(x, pad_mask, ctx)
        return x, pad_mask

    def decode(
        self,
        tgt_ids: ArrayLike,
        enc_out: Tensor,
        src_pad_mask: AttentionMask,
        *,
        training: bool | None = None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Run the decoder stack and output projection.

        Returns:
            Logits ``[batch, tgt_len, tgt_vocab]``

        Raises:
            InputLengthError: If the decoder input is longer than max_seq_len

        """
        ids = np.atleast_2d(np.asarray(tgt_ids, dtype=np.int64))
        self._check_length(ids.shape[1], "Target")
        ctx = self._context(training, rng)
        self_mask = make_decoder_mask(ids)
        y = self._embed(self.tgt_embedding, self.tgt_positions, ids, ctx)
        for layer in self.decoder_layers:
            y = layer(y, enc_out, self_mask, src_pad_mask, ctx)
        return self.output(y)

    def forward(
        self,
        src_ids: ArrayLike,
        tgt_ids: ArrayLike,
        *,
        training: bool | None = None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Compute logits for decoder input ``tgt_ids`` (bos-prefixed, shifted right).

        Args:
            src_ids: Source id batch ``[batch, src_len]``
            tgt_ids: Decoder input batch ``[batch, tgt_len]``
            training: Override of the model's default mode for this call
            rng: Dropout generator for this call; threads must not share one

        Returns:
            Pre-softmax logits ``[batch, tgt_len, tgt_vocab]``

        """
        enc_out, src_pad_mask = self.encode(src_ids, training=training, rng=rng)
        return self.decode(tgt_ids, enc_out, src_pad_mask, training=training, rng=rng)

    __call__ = forward
