"""Collaboration module: contrastive attention plus interactive attention.

Attention runs over the frequency axis of a [B, C, T_h, F_h] map, with the
time axis contracted, so every channel has an F_h x F_h score matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import ChannelAttention, DepthwiseSeparableConv, Module, Pointwise, parameter
from .tensor import Tensor


@dataclass(frozen=True)
class CmConfig:
    n_r: float = 0.08  # fraction of each sorted row treated as relevant
    n_i: float = 0.16  # start of the irrelevant window, as a fraction of the row
    r: float = 0.0
    num_cm: int = 3

    def __post_init__(self):
        if not self.n_r > 0:
            raise ValueError("n_r must be positive")
        if self.n_r + self.n_i > 1 + 1e-12 or self.n_i < 0:
            raise ValueError("need 0 <= n_i and n_r + n_i <= 1")
        if self.num_cm < 1:
            raise ValueError("num_cm must be >= 1")


def window_indices(n_bins: int, cfg: CmConfig) -> tuple[int, int]:
    """(k, m): the top window is [0, k), the irrelevant window [m, m + k)."""
    # rounding first keeps products like 0.08 * 25 from landing just above an integer
    k = max(1, math.ceil(round(cfg.n_r * n_bins, 9)))
    m = math.floor(round(cfg.n_i * n_bins, 9))
    if m + k > n_bins:
        raise ValueError(f"contrastive windows overflow: m + k = {m} + {k} > F_h = {n_bins}")
    return k, m


def contrastive_scores(q: Tensor, k: Tensor, amp: Tensor) -> Tensor:
    """S = A * (Q^T K) / sqrt(T_h) per channel; [B, C, T, F] -> [B, C, F, F]."""
    t_h = q.shape[2]
    return (q.transpose(0, 1, 3, 2) @ k) * (1.0 / math.sqrt(t_h)) * amp


def contrastive_loss(scores: Tensor, cfg: CmConfig) -> Tensor:
    """Mean over rows (and leading axes) of -log(top-window mass / irrelevant mass) + r."""
    k, m = window_indices(scores.shape[-1], cfg)
    ordered, _ = T.sort_rows_desc(scores)
    per_row = T.logsumexp(ordered[..., m : m + k]) - T.logsumexp(ordered[..., :k])
    return per_row.mean() + cfg.r


def window_gap(scores: np.ndarray, cfg: CmConfig) -> np.ndarray:
    """Per-row gap between top-window and irrelevant-window means of sorted scores."""
    k, m = window_indices(scores.shape[-1], cfg)
    ordered = -np.sort(-scores, axis=-1)
    return ordered[..., :k].mean(axis=-1) - ordered[..., m : m + k].mean(axis=-1)


class ContrastiveAttention(Module):
    """Splits features into relevant/irrelevant aggregates via amplified scores."""

    def __init__(self, channels: int, freq_bins: int, rng: np.random.Generator):
        if freq_bins < 2:
            raise ValueError("contrastive attention needs at least 2 frequency bins")
        self.q_proj = Pointwise(channels, channels, rng)
        self.k_proj = Pointwise(channels, channels, rng)
        self.amp = parameter(np.ones((channels, freq_bins, freq_bins)))
        self.last_S = self.last_M_r = self.last_M_i = None

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if x.ndim != 4 or x.shape[3] != self.amp.shape[-1] or x.shape[1] != self.amp.shape[0]:
            raise ValueError(f"expected [B, {self.amp.shape[0]}, T, {self.amp.shape[-1]}], got {x.shape}")
        f_h = x.shape[3]
        scores = contrastive_scores(self.q_proj(x), self.k_proj(x), self.amp)
        m_rel = T.softmax_rows(scores)
        m_irr = 1.0 - m_rel
        x_rel = x @ m_rel.transpose(0, 1, 3, 2)
        x_irr = (x @ m_irr.transpose(0, 1, 3, 2)) * (1.0 / (f_h - 1))
        self.last_S, self.last_M_r, self.last_M_i = scores.data, m_rel.data, m_irr.data
        return x_rel, x_irr, scores


class InteractiveAttention(Module):
    """Cross-attention from X onto X_irr, fused with X_rel, plus a residual.

    The separable convolution's pointwise stage is zero-initialized by
    default, so a fresh block is the identity map.
    """

    def __init__(self, channels: int, rng: np.random.Generator, zero_init: bool = True):
        self.wq = Pointwise(channels, channels, rng)
        self.wk = Pointwise(channels, channels, rng)
        self.wv = Pointwise(channels, channels, rng)
        self.dsc = DepthwiseSeparableConv(2 * channels, channels, rng, zero_init_pointwise=zero_init)
        self.ca = ChannelAttention(channels, rng)

    def forward(self, x: Tensor, x_rel: Tensor, x_irr: Tensor) -> Tensor:
        if not (x.shape == x_rel.shape == x_irr.shape):
            raise ValueError(f"shape mismatch: {x.shape}, {x_rel.shape}, {x_irr.shape}")
        t_h = x.shape[2]
        q, k, v = self.wq(x), self.wk(x_irr), self.wv(x_irr)
        att = T.softmax_rows((q.transpose(0, 1, 3, 2) @ k) * (1.0 / math.sqrt(t_h)))
        cross = v @ att.transpose(0, 1, 3, 2)
        fused = self.ca(self.dsc(T.concat([cross, x_rel], axis=1)))
        return x + fused


class CollaborationModule(Module):
    def __init__(self, channels: int, freq_bins: int, rng: np.random.Generator, zero_init: bool = True):
        self.contrastive = ContrastiveAttention(channels, freq_bins, rng)
        self.interactive = InteractiveAttention(channels, rng, zero_init=zero_init)

    def forward(self, x: Tensor, cfg: CmConfig) -> tuple[Tensor, Tensor]:
        x_rel, x_irr, scores = self.contrastive(x)
        loss = contrastive_loss(scores, cfg)
        return self.interactive(x, x_rel, x_irr), loss


class CmStack(Module):
    """Sequential collaboration modules; their contrastive losses are averaged."""

    def __init__(self, channels: int, freq_bins: int, cfg: CmConfig, rng: np.random.Generator, zero_init: bool = True):
        self.cfg = cfg
        self.blocks = [CollaborationModule(channels, freq_bins, rng, zero_init) for _ in range(cfg.num_cm)]

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        losses = []
        for block in self.blocks:
            x, loss = block(x, self.cfg)
            losses.append(loss)
        return x, T.stack(losses).mean()

    def attention_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, block in enumerate(self.blocks):
            ca = block.contrastive
            if ca.last_S is None:
                continue
            out[f"cm{i}.S"] = ca.last_S
            out[f"cm{i}.M_r"] = ca.last_M_r
            out[f"cm{i}.M_i"] = ca.last_M_i
        return out
