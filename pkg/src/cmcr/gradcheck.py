"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_grad(
    fn: Callable[[], Tensor],
    t: Tensor,
    h: float = 1e-5,
    indices: Sequence[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """d fn() / d t by central differences; only at ``indices`` if given."""
    grad = np.zeros_like(t.data)
    idx_iter = indices if indices is not None else list(np.ndindex(t.shape))
    with no_grad():
        for idx in idx_iter:
            orig = t.data[idx]
            t.data[idx] = orig + h
            fp = float(fn().data.sum())
            t.data[idx] = orig - h
            fm = float(fn().data.sum())
            t.data[idx] = orig
            grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, zero_tol: float = 1e-8) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both norms are below ``zero_tol``.

    Gradients that vanish in theory (a bias ahead of batch norm, a bias that
    shifts a softmax row uniformly) come out as rounding noise on both
    sides; a plain ratio would turn that noise into error ~1.
    """
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < zero_tol:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and numerical gradients.

    ``fn`` must return a scalar built from ``inputs`` (all float64, requiring
    grad). With ``max_entries`` only that many randomly chosen coordinates of
    each input are perturbed.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
        t.grad = None
    out = fn()
    backward(out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        all_idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            idx = [all_idx[i] for i in sorted(pick)]
        else:
            idx = all_idx
        num = numerical_grad(fn, t, h, idx)
        sel = tuple(np.array(idx).T)
        worst = max(worst, relative_error(analytic[sel], num[sel]))
        t.grad = None
    return worst
