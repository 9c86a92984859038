"""Fast built-in checks: finite-difference gradients and core invariants.

Runs at 64-bit in a few seconds; ``cmcr selftest`` reports one line per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dsp
from . import functional as F
from . import tensor as T
from .attention import CmConfig, ContrastiveAttention, contrastive_loss
from .data import Item, make_batch
from .dsp import StftConfig, Waveform
from .gradcheck import gradcheck
from .metrics import ssnr
from .model import CMCRNet, ModelConfig, total_loss
from .regularizer import CrConfig, FrozenEncoder, cr_loss
from .tensor import Tensor

GRAD_TOL = 1e-6
TINY_STFT = StftConfig(win_len=24, hop=16, fft_size=32)  # 17 bins


def tiny_config(**changes) -> ModelConfig:
    """Channels {2,4,4,4,4} on a 17-bin STFT; small enough for full gradient checks."""
    base = {"enc_channels": (2, 4, 4, 4, 4), "stft": TINY_STFT, "batch_size": 2}
    return ModelConfig(**{**base, **changes})


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _param(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def tiny_batch(rng: np.random.Generator, n_items: int = 2, n_frames: int = 8) -> "object":
    n = TINY_STFT.win_len + (n_frames - 1) * TINY_STFT.hop
    items = []
    for _ in range(n_items):
        clean = 0.3 * rng.standard_normal(n)
        items.append(Item(Waveform(clean + 0.3 * rng.standard_normal(n)), Waveform(clean)))
    return make_batch(items, TINY_STFT, dtype=np.float64)


def _grad_checks(rng: np.random.Generator) -> list[tuple[str, Callable[[], float]]]:
    def op(fn, *shapes):
        ins = [_param(rng, *s) for s in shapes]
        return lambda: gradcheck(lambda: fn(*ins), ins)

    w = rng.standard_normal((3, 4))
    w_soft = T.as_tensor(rng.standard_normal((3, 5)))
    mask = rng.random((3, 4)) > 0.5
    checks = [
        (
            "arithmetic",
            op(lambda a, b, c: ((a + b) * c - a / (T.exp(b) + 1.0) + T.relu(c) ** 3 + 2.0 / (c * c + 1.0)).mean(), (3, 4), (4,), (3, 4)),
        ),
        (
            "shape_ops",
            op(
                lambda a, b: (
                    T.concat([a.transpose(1, 0), b[:, 1:3]], axis=1).reshape(2, -1).sum(axis=0)
                    * T.stack([a[0, :2], a[1, 1:3] * b[0, 0]]).sum()
                ).sum()
                + T.einsum("ij,kj->ik", a, b[1:, :]).sum()
                + (T.pad(a, ((1, 0), (0, 2))) ** 2).sum()
                + T.where(mask, a * a, b[:3, :4]).sum(),
                (3, 4),
                (4, 4),
            ),
        ),
        ("matmul", op(lambda a, b: (a @ b).sum() * 1.0, (2, 3, 4), (4, 5))),
        ("softmax", op(lambda a: (T.softmax_rows(a) * w_soft).sum(), (3, 5))),
        ("logsumexp", op(lambda a: T.logsumexp(a).sum(), (4, 6))),
        ("elu_sigmoid", op(lambda a: (T.elu(a) * T.sigmoid(a)).sum(), (5, 5))),
        ("abs_log_sqrt", op(lambda a: (T.absolute(a) + T.log(a * a + 1.0) + T.sqrt(a * a + 2.0)).sum(), (6,))),
        ("sort_rows", op(lambda a: (T.sort_rows_desc(a)[0] * T.as_tensor(w)).sum(), (3, 4))),
        ("conv2d", op(lambda x, k, b: (F.conv2d(x, k, b, (1, 2), ((1, 0), (1, 1))) ** 2).sum(), (2, 3, 4, 7), (4, 3, 2, 3), (4,))),
        ("conv_transpose2d", op(lambda x, k: (F.conv_transpose2d(x, k, None, (1, 2), ((0, 1), (1, 1)), (4, 7)) ** 2).sum(), (2, 3, 4, 4), (3, 2, 2, 3))),
        ("depthwise_conv2d", op(lambda x, k: (F.depthwise_conv2d(x, k) ** 2).sum(), (2, 3, 4, 5), (3, 3, 3))),
        ("batch_norm", op(lambda x, g, b: (F.batch_norm_train(x, g, b)[0] ** 3).sum(), (3, 2, 3, 4), (2,), (2,))),
        ("stft_istft", op(lambda x: (dsp.istft(dsp.stft(x, TINY_STFT) * 1.5, TINY_STFT, 56) ** 2).sum(), (56,))),
    ]

    def contrastive():
        with T.default_dtype(np.float64):
            ca = ContrastiveAttention(2, 16, np.random.default_rng(1)).to(np.float64)
        x = _param(rng, 1, 2, 3, 16)

        def fn():
            _, _, s = ca(x)
            return contrastive_loss(s, CmConfig())

        return gradcheck(fn, [x, ca.amp])

    def tiny_model():
        cfg = tiny_config()
        with T.default_dtype(np.float64):
            model = CMCRNet(cfg).to(np.float64)
        batch = tiny_batch(np.random.default_rng(2))
        enc = FrozenEncoder(stft=cfg.stft)
        params = model.parameters()
        return gradcheck(lambda: total_loss(batch, model, enc)[0], params, max_entries=6)

    checks += [("contrastive_loss", contrastive), ("tiny_model_total_loss", tiny_model)]
    return checks


def run_selftest(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    with T.default_dtype(np.float64):
        for name, check in _grad_checks(rng):
            err = check()
            results.append(CheckResult(f"grad.{name}", err < GRAD_TOL, f"rel_err={err:.2e}"))

        s = T.as_tensor(rng.standard_normal((2, 16, 16)))
        m_r = T.softmax_rows(s).data
        results.append(CheckResult("cm.rows_sum_to_one", bool(np.abs(m_r.sum(-1) - 1).max() < 1e-6), ""))
        row = np.zeros((1, 16))
        row[0, :4] = [4.0, 3.0, 2.0, 1.0]
        # k = 2, m = 2: -log((e^4 + e^3) / (e^2 + e^1)) = -2
        val = contrastive_loss(T.as_tensor(row[:, [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]]), CmConfig()).item()
        results.append(CheckResult("cm.hand_example", abs(val + 2.0) < 1e-9, f"L={val:.12f}"))
        const = contrastive_loss(T.as_tensor(np.full((3, 16, 16), 0.7)), CmConfig(r=0.25)).item()
        results.append(CheckResult("cm.constant_scores", const == 0.25, f"L={const}"))

        x = rng.standard_normal(16000)
        results.append(CheckResult("cr.identity_zero", cr_loss(x, x + rng.standard_normal(16000), x, FrozenEncoder(), CrConfig()).item() == 0.0, ""))

        y = dsp.istft(dsp.stft(x), out_len=len(x))
        mask = dsp.valid_sample_mask(dsp.DEFAULT_STFT, dsp.DEFAULT_STFT.n_frames(len(x)), len(x))
        snr = 10 * math.log10(np.sum(x[mask] ** 2) / np.sum((x[mask] - y[mask]) ** 2))
        results.append(CheckResult("dsp.roundtrip", snr >= 50.0, f"snr={snr:.1f} dB"))
        tone = np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)
        spec = dsp.stft(tone)
        peak = int(np.argmax((spec[..., 0] ** 2 + spec[..., 1] ** 2).mean(axis=0)))
        results.append(CheckResult("dsp.tone_bin", peak == 32 and spec.shape[0] == 61, f"bin={peak} frames={spec.shape[0]}"))
        results.append(CheckResult("metrics.ssnr_ceiling", ssnr(x, x) == 35.0, ""))
    return results
