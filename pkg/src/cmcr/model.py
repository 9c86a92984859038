"""Encoder / collaboration-module / decoder network and its training loss."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from . import tensor as T
from .attention import CmConfig, CmStack
from .data import Batch
from .dsp import StftConfig
from .layers import BatchNorm2d, ComplexConv2d, ComplexDeconv2d, Module, complex_cat
from .regularizer import CrConfig, FrozenEncoder, cr_loss
from .tensor import Tensor

DEFAULT_CHANNELS = (2, 16, 32, 64, 128)


@dataclass(frozen=True)
class ModelConfig:
    # real channel counts per encoder boundary; complex channels are half of these
    enc_channels: tuple[int, ...] = DEFAULT_CHANNELS
    kernel: tuple[int, int] = (2, 3)
    cm: CmConfig = field(default_factory=CmConfig)
    cr: CrConfig = field(default_factory=CrConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    alpha: float = 0.1
    beta: float = 0.05
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    seed: int = 0
    loss_domain: str = "wave"
    zero_init_cm: bool = True
    checkpoint_every: int = 50

    def __post_init__(self):
        ch = tuple(int(c) for c in self.enc_channels)
        object.__setattr__(self, "enc_channels", ch)
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if len(ch) != 5 or ch[0] != 2 or any(c % 2 for c in ch):
            raise ValueError(f"enc_channels must be 5 even counts starting at 2, got {ch}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.loss_domain not in ("wave", "spec"):
            raise ValueError(f"loss_domain must be 'wave' or 'spec', got {self.loss_domain!r}")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size >= 1 and lr > 0 required")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        nested = {"cm": CmConfig, "cr": CrConfig, "stft": StftConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub_known = {f.name for f in dataclasses.fields(typ)}
                bad = set(d[key]) - sub_known
                if bad:
                    raise ValueError(f"unknown {key} config keys: {sorted(bad)}")
                d[key] = typ(**d[key])
        for key in ("enc_channels", "kernel"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        """Hash of everything that fixes parameter shapes and signal framing."""
        arch = {
            "enc_channels": list(self.enc_channels),
            "kernel": list(self.kernel),
            "num_cm": self.cm.num_cm,
            "stft": dataclasses.asdict(self.stft),
            "zero_init_cm": self.zero_init_cm,
        }
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))


def stage_bins(n_bins: int, stages: int = 4) -> list[int]:
    """Frequency sizes after each stride-2 encoder stage."""
    sizes = [n_bins]
    for _ in range(stages):
        sizes.append((sizes[-1] - 1) // 2 + 1)
    return sizes


class CMCRNet(Module):
    """Complex conv encoder -> stacked collaboration modules -> complex deconv decoder.

    Decoder stage j consumes the previous output concatenated with the
    matching encoder output; the last stage is linear.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = cfg.enc_channels
        self.bins = stage_bins(cfg.stft.n_bins)
        self.encoders = [ComplexConv2d(ch[i], ch[i + 1], rng, cfg.kernel) for i in range(4)]
        self.enc_norms = [BatchNorm2d(ch[i + 1]) for i in range(4)]
        self.cms = CmStack(ch[4], self.bins[-1], cfg.cm, rng, zero_init=cfg.zero_init_cm)
        self.decoders = [ComplexDeconv2d(2 * ch[4 - j], ch[3 - j], rng, cfg.kernel) for j in range(4)]
        self.dec_norms = [BatchNorm2d(ch[3 - j]) for j in range(3)]

    def forward(self, spec: Tensor) -> tuple[Tensor, Tensor]:
        """[B, T, F, 2] noisy spectrogram -> (enhanced spectrogram, contrastive loss)."""
        spec = T.as_tensor(spec)
        if spec.ndim != 4 or spec.shape[2] != self.bins[0] or spec.shape[3] != 2:
            raise ValueError(f"expected [B, T, {self.bins[0]}, 2], got {spec.shape}")
        x = spec.transpose(0, 3, 1, 2)
        sizes, skips = [], []
        for conv, bn in zip(self.encoders, self.enc_norms):
            sizes.append(x.shape[2:])
            x = T.elu(bn(conv(x)))
            skips.append(x)
        x, l_ca = self.cms(x)
        for j, deconv in enumerate(self.decoders):
            x = deconv(complex_cat([x, skips[3 - j]]), output_size=sizes[3 - j])
            if j < 3:
                x = T.elu(self.dec_norms[j](x))
        return x.transpose(0, 2, 3, 1), l_ca

    def attention_arrays(self) -> dict[str, np.ndarray]:
        return self.cms.attention_arrays()


def forward_enhance(noisy_spec, model: CMCRNet) -> tuple[Tensor, Tensor]:
    return model(noisy_spec)


def loss_from_outputs(
    batch: Batch,
    enhanced: Tensor,
    l_ca: Tensor,
    cfg: ModelConfig,
    encoder: FrozenEncoder | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """mse + alpha * ca + beta * cr over the valid (unpadded) region of each item."""
    encoder = encoder or FrozenEncoder(stft=cfg.stft)
    sq_terms, counts, cr_terms = [], 0, []
    for b in range(batch.size):
        n, t = int(batch.lengths[b]), int(batch.frames[b])
        est = dsp.istft(enhanced[b, :t], cfg.stft, n)
        clean = batch.clean_wav[b, :n]
        if cfg.loss_domain == "wave":
            mask = dsp.valid_sample_mask(cfg.stft, t, n)
            diff = T.where(mask, est - clean.astype(enhanced.dtype), 0.0)
            sq_terms.append((diff * diff).sum())
            counts += int(mask.sum())
        else:
            diff = enhanced[b, :t] - batch.clean_spec[b, :t].astype(enhanced.dtype)
            sq_terms.append((diff * diff).sum())
            counts += diff.size
        cr_terms.append(cr_loss(clean.astype(enhanced.dtype), batch.noisy_wav[b, :n].astype(enhanced.dtype), est, encoder, cfg.cr))
    mse = T.stack(sq_terms).sum() * (1.0 / counts)
    cr = T.stack(cr_terms).mean()
    total = mse + cfg.alpha * l_ca + cfg.beta * cr
    comps = {"total": total.item(), "mse": mse.item(), "ca": l_ca.item(), "cr": cr.item()}
    return total, comps


def total_loss(batch: Batch, model: CMCRNet, encoder: FrozenEncoder | None = None) -> tuple[Tensor, dict[str, float]]:
    dtype = model.encoders[0].w_real.dtype
    enhanced, l_ca = model(T.as_tensor(batch.noisy_spec.astype(dtype)))
    return loss_from_outputs(batch, enhanced, l_ca, model.cfg, encoder)
