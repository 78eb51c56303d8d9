"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, index, h: float = 1e-4) -> float:
    orig = t.data[index]
    t.data[index] = orig + h
    fp = float(fn().data)
    t.data[index] = orig - h
    fm = float(fn().data)
    t.data[index] = orig
    return (fp - fm) / (2 * h)


def max_relative_error(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: int | None = 40,
    seed: int = 0,
) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    ``fn`` must build a scalar from ``inputs`` each call. Large tensors are
    probed on ``max_entries`` random coordinates. Each entry is compared as
    ``|a - n| / max(|a|, |n|, floor)`` with ``floor = 1e-6 * max(1, G)`` and
    ``G`` the largest numeric gradient magnitude over all probed entries:
    gradients far below the loss scale are resolved only to roundoff.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    pairs = []
    for t, ga in zip(inputs, analytic):
        flat = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, size=max_entries, replace=False)
        idxs = [np.unravel_index(i, t.shape) for i in flat]
        num = np.array([numerical_grad(fn, t, i, h) for i in idxs])
        ana = np.array([ga[i] for i in idxs])
        pairs.append((ana, num))
    scale = max((np.abs(n).max(initial=0.0) for _, n in pairs), default=0.0)
    floor = 1e-6 * max(1.0, scale)
    worst = 0.0
    for ana, num in pairs:
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        worst = max(worst, float(np.max(np.abs(ana - num) / denom, initial=0.0)))
    return worst


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar probe ``sum(out * weights)`` so every output entry is exercised."""
    from .tensor import mul_const, sum_

    return sum_(mul_const(out, weights))
