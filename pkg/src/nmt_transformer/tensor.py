# pyright: strict
"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to one gradient per parent.
:func:`backward` walks the recorded graph in reverse topological order and
accumulates gradients into leaves created with ``requires_grad=True``.

Broadcasting is deliberately narrow: an operand may only be extended along
leading dimensions (missing or of size 1), which covers bias rows, positional
tables and shared weight matrices.
"""

import contextlib
import logging
from collections.abc import Callable, Iterator, Sequence
from contextvars import ContextVar
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, DTypeLike, NDArray

from .config import ConfigurationError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.floating[Any]]
IdArray = NDArray[np.int64]
BackwardFn = Callable[[FloatArray], Sequence[FloatArray | None]]

_default_dtype: ContextVar[np.dtype[Any]] = ContextVar(
    "default_dtype", default=np.dtype(np.float32)
)
_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class BackwardError(RuntimeError):
    """Raised when backward is invoked on an unsuitable root."""


class FullyMaskedRowError(AssertionError):
    """Raised when a softmax row has no finite entry."""


class UndefinedLossError(ValueError):
    """Raised when every position of a loss is ignored."""


@contextlib.contextmanager
def precision(dtype: DTypeLike) -> Iterator[None]:
    """Create new tensors with ``dtype`` inside the block.

    float32 is the training and inference default; float64 exists for
    finite-difference gradient checks.
    """
    token = _default_dtype.set(np.dtype(dtype))
    try:
        yield
    finally:
        _default_dtype.reset(token)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def default_dtype() -> np.dtype[Any]:
    """Return the dtype new tensors are created with."""
    return _default_dtype.get()


class Tensor:
    """An n-dimensional array with an optional gradient slot.

    Tensors are immutable after construction apart from gradient
    accumulation and optimizer updates of leaf parameters.

    Attributes:
        data: Row-major values.
        grad: Accumulated gradient of the same shape, or None.
        requires_grad: Whether gradients flow into this tensor.
        name: Optional label, used for parameters.

    """

    __slots__ = ("_backward", "_parents", "data", "grad", "name", "op", "requires_grad")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str = "",
        dtype: DTypeLike | None = None,
    ) -> None:
        """Wrap ``data`` as a leaf tensor."""
        self.data: FloatArray = np.array(
            data, dtype=_default_dtype.get() if dtype is None else dtype
        )
        self.grad: FloatArray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _from_op(
        cls,
        data: FloatArray,
        parents: tuple["Tensor", ...],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out.op = op
        out.requires_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        """Dimension sizes."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        """Whether the tensor was created directly rather than by an op."""
        return self._backward is None

    @property
    def parents(self) -> tuple["Tensor", ...]:
        """Inputs of the op that produced this tensor."""
        return self._parents

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> FloatArray:
        """Return the underlying array."""
        return self.data

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def detach(self) -> "Tensor":
        """Return a leaf copy that does not track gradients."""
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self) -> str:
        """Summarize shape, dtype and grad tracking."""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self.op}{label})"

    def __add__(self, other: "Tensor | float") -> "Tensor":
        return add(self, _as_tensor(other, self))

    def __radd__(self, other: float) -> "Tensor":
        return add(_as_tensor(other, self), self)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other: float) -> "Tensor":
        return add(_as_tensor(other, self), neg(self))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other: float) -> "Tensor":
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other: float) -> "Tensor":
        return mul(self, _as_tensor(1.0 / other, self))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        """Return a view with a new shape."""
        return reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        """Reorder dimensions."""
        return permute(self, axes)

    def transpose(self) -> "Tensor":
        """Swap the last two dimensions."""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return permute(self, tuple(axes))

    def sum(self) -> "Tensor":
        """Sum of all elements as a scalar tensor."""
        return total(self)

    def mean(self) -> "Tensor":
        """Mean of all elements as a scalar tensor."""
        return total(self) / float(max(self.size, 1))


def _as_tensor(value: "Tensor | float", like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.data.dtype)


def _strip_leading_ones(shape: tuple[int, ...]) -> tuple[int, ...]:
    index = 0
    while index < len(shape) and shape[index] == 1:
        index += 1
    return shape[index:]


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Return the result shape of a leading-dimension broadcast.

    Raises:
        ShapeError: If neither shape extends the other along leading dimensions

    """
    if a == b:
        return a
    for small, big in ((a, b), (b, a)):
        core = _strip_leading_ones(small)
        if len(small) <= len(big) and big[len(big) - len(core) :] == core:
            return big
    msg = f"Cannot broadcast shapes {a} and {b}: only leading size-1 dimensions broadcast"
    raise ShapeError(msg)


def _unbroadcast(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    """Sum ``grad`` back down to ``shape`` after a leading broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with leading-dimension broadcasting."""
    broadcast_shape(a.shape, b.shape)

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def neg(x: Tensor) -> Tensor:
    """Elementwise negation."""

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (-grad,)

    return Tensor._from_op(-x.data, (x,), backward, "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with leading-dimension broadcasting."""
    broadcast_shape(a.shape, b.shape)

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def total(x: Tensor) -> Tensor:
    """Sum of every element as a scalar tensor."""

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (np.broadcast_to(grad, x.shape).astype(x.data.dtype),)

    return Tensor._from_op(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward, "sum")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Reshape without copying data."""
    original = x.shape

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad.reshape(original),)

    return Tensor._from_op(x.data.reshape(tuple(shape)), (x,), backward, "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Reorder dimensions."""
    order = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(order))

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (np.transpose(grad, inverse),)

    return Tensor._from_op(np.transpose(x.data, order), (x,), backward, "permute")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``.

    Batch dimensions must agree or broadcast from size 1 along leading
    dimensions.

    Raises:
        ShapeError: If inner or batch dimensions do not agree

    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        msg = f"matmul dimension mismatch: {a.shape} @ {b.shape}"
        raise ShapeError(msg)
    try:
        broadcast_shape(a.shape[:-2], b.shape[:-2])
    except ShapeError as err:
        msg = f"matmul batch dimension mismatch: {a.shape} @ {b.shape}"
        raise ShapeError(msg) from err

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray]:
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor._from_op(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the gradient at exactly 0 is 0."""
    positive = x.data > 0

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * positive,)

    return Tensor._from_op(np.where(positive, x.data, 0).astype(x.data.dtype), (x,), backward, "relu")


def masked_fill(x: Tensor, fill: NDArray[np.bool_], value: float) -> Tensor:
    """Replace entries where ``fill`` is true with ``value``.

    ``fill`` must broadcast to ``x.shape`` under numpy rules; filled entries
    receive no gradient.
    """
    try:
        where = np.broadcast_to(fill, x.shape)
    except ValueError as err:
        msg = f"Mask of shape {fill.shape} does not broadcast to {x.shape}"
        raise ShapeError(msg) from err
    keep = ~where

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * keep,)

    filled = np.where(where, np.asarray(value, dtype=x.data.dtype), x.data)
    return Tensor._from_op(filled, (x,), backward, "masked_fill")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last dimension, stabilized by max subtraction.

    Raises:
        ShapeError: If the last dimension is empty
        FullyMaskedRowError: If a row contains no finite value

    """
    if x.ndim == 0 or x.shape[-1] < 1:
        msg = f"softmax needs a non-empty last dimension, got shape {x.shape}"
        raise ShapeError(msg)
    row_max = x.data.max(axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        msg = "softmax row is fully masked; every query needs at least one attendable key"
        raise FullyMaskedRowError(msg)
    exps = np.exp(x.data - row_max)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(probs, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-dimension slice, then scale by ``gain`` and shift by ``bias``.

    Raises:
        ShapeError: If gain or bias do not match the last dimension of x

    """
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        msg = f"layer_norm gain {gain.shape} and bias {bias.shape} must both be ({width},)"
        raise ShapeError(msg)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        grad_gain = (grad * normed).reshape(-1, width).sum(axis=0)
        grad_bias = grad.reshape(-1, width).sum(axis=0)
        grad_normed = grad * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias

    out = (normed * gain.data + bias.data).astype(x.data.dtype)
    return Tensor._from_op(out, (x, gain, bias), backward, "layer_norm")


def embedding_gather(table: Tensor, ids: ArrayLike) -> Tensor:
    """Look up rows of ``table`` for each id; output shape is ``ids.shape + (d,)``.

    Raises:
        IndexError: If an id is negative or not below the table size

    """
    index: IdArray = np.asarray(ids, dtype=np.int64)
    vocab_size = table.shape[0]
    if index.size:
        bad = index[(index < 0) | (index >= vocab_size)]
        if bad.size:
            msg = f"Token id {int(bad[0])} out of range for vocabulary of size {vocab_size}"
            raise IndexError(msg)

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, index.reshape(-1), grad.reshape(-1, table.shape[1]))
        return (grad_table,)

    return Tensor._from_op(table.data[index], (table,), backward, "embedding")


def dropout(x: Tensor, p: float, *, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero each element with probability ``p`` and rescale survivors.

    In inference mode, or with ``p == 0``, the input itself is returned.

    Raises:
        ConfigurationError: If p is outside [0, 1), or training needs a generator

    """
    if not (0.0 <= p < 1.0):
        msg = f"Dropout probability must be in [0, 1), got {p}"
        raise ConfigurationError(msg)
    if not training or p == 0.0:
        return x
    if rng is None:
        msg = "Dropout in training mode requires a random generator"
        raise ConfigurationError(msg)
    scale = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * scale,)

    return Tensor._from_op(x.data * scale, (x,), backward, "dropout")


def cross_entropy(logits: Tensor, targets: ArrayLike, ignore_id: int) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-ignored positions.

    ``logits`` has shape ``[..., v]`` and ``targets`` the matching leading
    shape. Positions whose target equals ``ignore_id`` contribute nothing to
    the loss or its gradient.

    Raises:
        ShapeError: If logits and targets disagree in leading shape
        UndefinedLossError: If every position is ignored
        IndexError: If a target id is outside the vocabulary

    """
    vocab_size = logits.shape[-1]
    flat_targets: IdArray = np.asarray(targets, dtype=np.int64).reshape(-1)
    flat_logits = logits.data.reshape(-1, vocab_size)
    if flat_logits.shape[0] != flat_targets.shape[0]:
        msg = f"cross_entropy logits {logits.shape} do not match targets of {flat_targets.shape[0]}"
        raise ShapeError(msg)
    keep = flat_targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        msg = "cross_entropy is undefined when every position is ignored"
        raise UndefinedLossError(msg)
    rows = np.nonzero(keep)[0]
    picked = flat_targets[rows]
    if ((picked < 0) | (picked >= vocab_size)).any():
        bad = int(picked[(picked < 0) | (picked >= vocab_size)][0])
        msg = f"Target id {bad} out of range for vocabulary of size {vocab_size}"
        raise IndexError(msg)

    row_max = flat_logits.max(axis=-1, keepdims=True)
    shifted = flat_logits - row_max
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    loss = -log_probs[rows, picked].sum() / count

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        grad_logits = np.exp(log_probs)
        grad_logits[~keep] = 0.0
        grad_logits[rows, picked] -= 1.0
        grad_logits *= grad / count
        return (grad_logits.reshape(logits.shape).astype(logits.data.dtype),)

    out = np.asarray(loss, dtype=logits.data.dtype)
    return Tensor._from_op(out, (logits,), backward, "cross_entropy")


def topological_order(root: Tensor) -> list[Tensor]:
    """Return every node reachable from ``root`` with parents before consumers.

    Reversing the list yields a valid order for gradient propagation: each
    node appears after all of its consumers.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        stack.extend((parent, False) for parent in node.parents if id(parent) not in visited)
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable leaf.

    Accumulation is additive: calling this twice without zeroing doubles the
    gradients. Leaves with ``requires_grad=False`` are never touched.

    Raises:
        BackwardError: If root is not a scalar or does not depend on any leaf
            that requires gradients

    """
    if root.size != 1:
        msg = f"backward requires a scalar root, got shape {root.shape}"
        raise BackwardError(msg)
    if not root.requires_grad:
        msg = "backward root does not depend on any tensor that requires grad"
        raise BackwardError(msg)

    pending: dict[int, FloatArray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topological_order(root)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        backward_fn = node._backward  # noqa: SLF001
        if backward_fn is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node.parents, backward_fn(grad), strict=True):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad
