"""Waveform I/O, resampling, STFT/iSTFT and log-mel features.

``stft``, ``istft`` and ``log_mel`` accept either numpy arrays (returning
arrays) or Tensors (returning Tensors on the gradient tape).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import functional as F
from . import tensor as T
from .tensor import Tensor, no_grad

SAMPLE_RATE = 16000
MEL_FLOOR = 1e-8
# iSTFT leaves samples whose squared-window sum is below this at zero
WSUM_FLOOR = 1e-2


class AudioError(ValueError):
    """Unreadable, malformed or unsupported audio."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"invalid sample rate {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 400
    hop: int = 256
    fft_size: int = 512
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not (0 < self.hop < self.win_len <= self.fft_size):
            raise ValueError(f"need 0 < hop < win_len <= fft_size, got {self}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            raise ValueError(f"{n_samples} samples is shorter than the {self.win_len}-sample window")
        return 1 + (n_samples - self.win_len) // self.hop


DEFAULT_STFT = StftConfig()


# -- WAV I/O ----------------------------------------------------------------------
def load_wav(path, target_sr: int = SAMPLE_RATE) -> Waveform:
    """Read PCM16/PCM32/float32 WAV, downmix to mono, resample to ``target_sr``."""
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioError(f"{path}: no such file") from None
    except (ValueError, EOFError) as exc:
        raise AudioError(f"{path}: malformed or unsupported WAV ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    w = Waveform(x, int(sr))
    return resample(w, target_sr)


def save_wav(path, wave: Waveform) -> None:
    """Write 16-bit PCM; samples are clipped to [-1, 1)."""
    if len(wave) == 0:
        raise AudioError("refusing to write zero-length audio")
    q = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, wave.sample_rate, q)


def resample(wave: Waveform, target_hz: int) -> Waveform:
    """Band-limited polyphase resampling."""
    if wave.sample_rate == target_hz:
        return Waveform(wave.samples.copy(), target_hz)
    ratio = Fraction(target_hz, wave.sample_rate)
    y = resample_poly(wave.samples, ratio.numerator, ratio.denominator, window=("kaiser", 14.0))
    return Waveform(y, target_hz)


# -- STFT -------------------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@functools.lru_cache(maxsize=None)
def _analysis_basis(cfg: StftConfig) -> np.ndarray:
    # windowed frame [win] -> [re(F) | im(F)]; frames are zero-padded to fft_size
    n = np.arange(cfg.win_len)[:, None]
    k = np.arange(cfg.n_bins)[None, :]
    ang = 2 * np.pi * n * k / cfg.fft_size
    w = hann(cfg.win_len)[:, None]
    return np.concatenate([w * np.cos(ang), -w * np.sin(ang)], axis=1)


@functools.lru_cache(maxsize=None)
def _synthesis_basis(cfg: StftConfig) -> np.ndarray:
    # [re(F) ; im(F)] -> first win_len samples of the inverse real DFT, times window
    k = np.arange(cfg.n_bins)[:, None]
    n = np.arange(cfg.win_len)[None, :]
    ang = 2 * np.pi * k * n / cfg.fft_size
    c = np.full((cfg.n_bins, 1), 2.0)
    c[0] = 1.0
    if cfg.fft_size % 2 == 0:
        c[-1] = 1.0
    w = hann(cfg.win_len)[None, :]
    return np.concatenate([c * np.cos(ang), -c * np.sin(ang)], axis=0) * w / cfg.fft_size


@functools.lru_cache(maxsize=None)
def window_sum(cfg: StftConfig, n_frames: int, n_samples: int) -> np.ndarray:
    """Overlap-added squared window; the WOLA normalizer."""
    w2 = np.broadcast_to(hann(cfg.win_len) ** 2, (n_frames, cfg.win_len))
    return F._ola(np.ascontiguousarray(w2), cfg.hop, n_samples)


def valid_sample_mask(cfg: StftConfig, n_frames: int, n_samples: int) -> np.ndarray:
    """Samples that iSTFT can reconstruct (nonzero window sum)."""
    return window_sum(cfg, n_frames, n_samples) > WSUM_FLOOR


def _arrays_or_tensors(fn):
    @functools.wraps(fn)
    def wrapper(x, *args, **kwargs):
        if isinstance(x, Tensor):
            return fn(x, *args, **kwargs)
        arr = np.asarray(x)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        with no_grad():
            return fn(Tensor._wrap(arr), *args, **kwargs).data

    return wrapper


@_arrays_or_tensors
def stft(x: Tensor, cfg: StftConfig = DEFAULT_STFT) -> Tensor:
    """[..., N] -> [..., T, F, 2] (no centering: T = 1 + (N - win_len) // hop)."""
    cfg.n_frames(x.shape[-1])
    frames = F.frame(x, cfg.win_len, cfg.hop)
    basis = _analysis_basis(cfg).astype(x.dtype)
    spec = frames @ T.as_tensor(basis)
    nb = cfg.n_bins
    return T.stack([spec[..., :nb], spec[..., nb:]], axis=-1)


@_arrays_or_tensors
def istft(spec: Tensor, cfg: StftConfig = DEFAULT_STFT, out_len: int | None = None) -> Tensor:
    """Weighted overlap-add inverse of ``stft``; linear in ``spec``."""
    if spec.ndim < 3 or spec.shape[-1] != 2 or spec.shape[-2] != cfg.n_bins:
        raise ValueError(f"spectrogram shape {spec.shape} inconsistent with {cfg}")
    n_frames = spec.shape[-3]
    n_cover = (n_frames - 1) * cfg.hop + cfg.win_len
    out_len = n_cover if out_len is None else out_len
    flat = T.concat([spec[..., 0], spec[..., 1]], axis=-1)
    frames = flat @ T.as_tensor(_synthesis_basis(cfg).astype(spec.dtype))
    wav = F.overlap_add(frames, cfg.hop, out_len)
    wsum = window_sum(cfg, n_frames, out_len)
    inv = np.where(wsum > WSUM_FLOOR, 1.0 / np.maximum(wsum, WSUM_FLOOR), 0.0).astype(spec.dtype)
    return wav * inv


# -- mel features -----------------------------------------------------------------
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=None)
def mel_filterbank(n_mels: int = 40, fft_size: int = 512, sample_rate: int = SAMPLE_RATE, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """HTK-scale triangular filters, shape [n_mels, fft_size // 2 + 1]."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_centers(n_mels: int = 40, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))[1:-1]


@_arrays_or_tensors
def log_mel(x: Tensor, cfg: StftConfig = DEFAULT_STFT, n_mels: int = 40) -> Tensor:
    """log(mel energies + 1e-8) on the STFT grid: [..., N] -> [..., T, n_mels]."""
    spec = stft(x, cfg)
    power = spec[..., 0] * spec[..., 0] + spec[..., 1] * spec[..., 1]
    fb = mel_filterbank(n_mels, cfg.fft_size, cfg.sample_rate).T.astype(x.dtype)
    return T.log(power @ T.as_tensor(fb) + MEL_FLOOR)
