# pyright: strict
"""Adam with bias correction and global-norm gradient clipping."""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .tensor import FloatArray, Tensor

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient contains NaN or infinity."""


@dataclass
class AdamState:
    """First and second moment estimates keyed by parameter name.

    Attributes:
        step: Number of updates applied so far.
        m: First-moment (mean) estimates.
        v: Second-moment (uncentered variance) estimates.

    """

    step: int = 0
    m: dict[str, FloatArray] = field(default_factory=dict[str, FloatArray])
    v: dict[str, FloatArray] = field(default_factory=dict[str, FloatArray])


def gradients_of(params: Mapping[str, Tensor]) -> dict[str, FloatArray]:
    """Collect gradients, substituting zeros for parameters that received none."""
    return {
        name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for name, tensor in params.items()
    }


def clip_grad_norm(grads: dict[str, FloatArray], max_norm: float) -> float:
    """Scale every gradient in place so the global L2 norm is at most ``max_norm``.

    A ``max_norm`` of 0 disables clipping.

    Returns:
        The global norm before clipping

    """
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name, grad in grads.items():
            grads[name] = grad * grad.dtype.type(scale)
    return total


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, FloatArray],
    state: AdamState,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-9,
) -> None:
    """Apply one bias-corrected Adam update to every parameter in place.

    Gradients are checked before any parameter changes, so a rejected step
    leaves both parameters and state untouched.

    Raises:
        NonFiniteGradientError: If any gradient is NaN or infinite
        ValueError: If a gradient's shape differs from its parameter's

    """
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            msg = f"Gradient shape {grad.shape} does not match parameter {name} {params[name].shape}"
            raise ValueError(msg)
        if not np.isfinite(grad).all():
            msg = f"Non-finite gradient for parameter {name} at step {state.step + 1}"
            raise NonFiniteGradientError(msg)

    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, grad in grads.items():
        param = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * grad if m is None else beta1 * m + (1.0 - beta1) * grad
        v = (1.0 - beta2) * grad * grad if v is None else beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data = (param.data - update).astype(param.data.dtype)
