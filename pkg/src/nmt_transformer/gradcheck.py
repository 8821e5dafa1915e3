"""Finite-difference verification of autograd gradients."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .tensor import FloatArray, Tensor, backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientMismatch:
    """Worst disagreement found for one tensor.

    Attributes:
        name: Tensor label (parameter name or positional index).
        index: Flat index of the worst element.
        analytic: Autograd value at that element.
        numeric: Central-difference value at that element.
        relative_error: ``|analytic - numeric| / max(1, |numeric|)``.

    """

    name: str
    index: int
    analytic: float
    numeric: float
    relative_error: float


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    *,
    eps: float = 1e-6,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, FloatArray]:
    """Estimate d(loss)/d(tensor) by central differences.

    The tensor's data is perturbed in place and restored afterwards. With
    ``max_elements`` set, a random subset of elements is probed.

    Returns:
        The probed flat indices and the estimated derivative at each

    """
    if not tensor.data.flags.c_contiguous:
        tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    if max_elements is not None and flat.size > max_elements:
        generator = rng if rng is not None else np.random.default_rng(0)
        indices = np.sort(generator.choice(flat.size, size=max_elements, replace=False))
    else:
        indices = np.arange(flat.size)
    estimates = np.empty(indices.size, dtype=np.float64)
    for slot, index in enumerate(indices):
        original = flat[index]
        flat[index] = original + eps
        upper = loss_fn().item()
        flat[index] = original - eps
        lower = loss_fn().item()
        flat[index] = original
        estimates[slot] = (upper - lower) / (2.0 * eps)
    return indices, estimates


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    *,
    eps: float = 1e-6,
    max_elements: int | None = None,
    seed: int = 0,
) -> list[GradientMismatch]:
    """Compare autograd against central differences for every tensor.

    Run inside ``precision(np.float64)``; finite differences are unreliable at
    32-bit precision. ``loss_fn`` must be deterministic (dropout off).

    Returns:
        The worst mismatch per tensor, in input order

    """
    for tensor in tensors:
        tensor.zero_grad()
    backward(loss_fn())
    rng = np.random.default_rng(seed)
    report: list[GradientMismatch] = []
    for position, tensor in enumerate(tensors):
        analytic_all = (
            tensor.grad.reshape(-1)
            if tensor.grad is not None
            else np.zeros(tensor.size, dtype=np.float64)
        )
        indices, numeric = numerical_gradient(
            loss_fn, tensor, eps=eps, max_elements=max_elements, rng=rng
        )
        analytic = analytic_all[indices].astype(np.float64)
        errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = int(np.argmax(errors)) if errors.size else 0
        mismatch = GradientMismatch(
            name=tensor.name or str(position),
            index=int(indices[worst]) if errors.size else 0,
            analytic=float(analytic[worst]) if errors.size else 0.0,
            numeric=float(numeric[worst]) if errors.size else 0.0,
            relative_error=float(errors[worst]) if errors.size else 0.0,
        )
        logger.debug(
            "Gradient checked - tensor: %s, probed: %d, max_relative_error: %.3e",
            mismatch.name,
            indices.size,
            mismatch.relative_error,
        )
        report.append(mismatch)
    return report


def max_relative_error(report: Sequence[GradientMismatch]) -> float:
    """Largest relative error across a report."""
    return max((item.relative_error for item in report), default=0.0)
