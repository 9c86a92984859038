"""Contrastive regularization in the embedding space of a frozen encoder.

The loss pulls the enhanced waveform's embedding toward the clean one and
pushes it away from the noisy input's embedding. It only shapes training;
inference never touches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from . import tensor as T
from .tensor import Tensor, no_grad

ENCODER_SEED = 0xC3C5
EMBED_DIM = 64
N_MELS = 40


@dataclass(frozen=True)
class CrConfig:
    eps: float = 1e-7
    # "ratio" is the full loss; the other two drop one side for ablations
    mode: str = "ratio"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mode not in ("ratio", "no_negative", "no_positive"):
            raise ValueError(f"unknown CR mode {self.mode!r}")


class FrozenEncoder:
    """Deterministic feature encoder with no trainable state.

    ``logmel_proj`` maps a waveform to log-mel frames times a fixed random
    [40, 64] projection. ``linear_stub`` returns the samples themselves and
    exists for closed-form tests.
    """

    def __init__(self, kind: str = "logmel_proj", stft: dsp.StftConfig = dsp.DEFAULT_STFT):
        if kind not in ("logmel_proj", "linear_stub"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        self.kind = kind
        self.stft = stft
        proj = np.random.default_rng(ENCODER_SEED).standard_normal((N_MELS, EMBED_DIM)) / np.sqrt(N_MELS)
        self.projection = Tensor(proj, requires_grad=False, dtype=np.float64)

    def parameters(self) -> list[Tensor]:
        return []

    def encode(self, w: Tensor) -> Tensor:
        w = T.as_tensor(w)
        if self.kind == "linear_stub":
            return T.reshape(w, w.shape + (1,))
        if w.shape[-1] < self.stft.win_len:
            raise ValueError(f"encoder input of {w.shape[-1]} samples is shorter than one window")
        feats = dsp.log_mel(w, self.stft, N_MELS)
        return feats @ T.as_tensor(self.projection.data.astype(w.dtype))


def mean_abs_distance(a: Tensor, b: Tensor) -> Tensor:
    return T.absolute(a - b).mean()


def cr_loss(s, y, s_hat: Tensor, enc: FrozenEncoder, cfg: CrConfig = CrConfig()) -> Tensor:
    """d(E(s), E(s_hat)) / (d(E(y), E(s_hat)) + eps) with d = mean absolute difference."""
    s_hat = T.as_tensor(s_hat)
    if np.shape(s) != s_hat.shape or np.shape(y) != s_hat.shape:
        raise ValueError(f"length mismatch: {np.shape(s)}, {np.shape(y)}, {s_hat.shape}")
    with no_grad():
        e_s = enc.encode(T.as_tensor(np.asarray(getattr(s, "data", s), dtype=s_hat.dtype)))
        e_y = enc.encode(T.as_tensor(np.asarray(getattr(y, "data", y), dtype=s_hat.dtype)))
    e_hat = enc.encode(s_hat)
    pull = mean_abs_distance(e_s, e_hat)
    push = mean_abs_distance(e_y, e_hat) + cfg.eps
    if cfg.mode == "no_negative":
        return pull
    if cfg.mode == "no_positive":
        return 1.0 / push
    return pull / push
