"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam over a fixed, ordered list of named parameters.

    Moment buffers are zero-initialized and shape-matched to each parameter;
    ``step`` clears gradients after applying the update.
    """

    def __init__(
        self,
        params: Iterable[tuple[str, Tensor]] | Iterable[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        named = []
        for i, p in enumerate(params):
            named.append(p if isinstance(p, tuple) else (f"param{i}", p))
        self.names = [n for n, _ in named]
        self.params = [p for _, p in named]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [n for n, p in zip(self.names, self.params) if p.grad is None]
        if missing:
            raise ValueError(f"no gradient for registered parameter(s): {', '.join(missing)}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / p.dtype.type(bc1)
            v_hat = v / p.dtype.type(bc2)
            p.data -= p.dtype.type(self.lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(self.eps))
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n, m, v in zip(self.names, self.m, self.v):
            out[f"adam.m.{n}"] = m
            out[f"adam.v.{n}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for i, n in enumerate(self.names):
            self.m[i][...] = arrays[f"adam.m.{n}"]
            self.v[i][...] = arrays[f"adam.v.{n}"]
        self.step_count = int(step_count)
