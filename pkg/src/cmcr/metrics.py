"""Segmental SNR and short-time objective intelligibility (STOI)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

SSNR_FRAME = 256
SSNR_MIN, SSNR_MAX = -10.0, 35.0

# STOI constants of the standard formulation
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames per envelope segment (384 ms)
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def ssnr(clean, test, frame: int = SSNR_FRAME) -> float:
    """Mean of per-frame SNRs clipped to [-10, 35] dB; silent clean frames are skipped."""
    c, t = _as_array(clean), _as_array(test)
    if c.shape != t.shape:
        raise ValueError(f"length mismatch: {c.shape} vs {t.shape}")
    n = len(c) // frame
    if n == 0:
        raise ValueError(f"need at least {frame} samples")
    c = c[: n * frame].reshape(n, frame)
    e = c - t[: n * frame].reshape(n, frame)
    sig = (c * c).sum(axis=1)
    err = (e * e).sum(axis=1)
    keep = sig > 0
    if not keep.any():
        raise ValueError("clean signal is silent in every frame")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig[keep] / err[keep])
    return float(np.clip(snr, SSNR_MIN, SSNR_MAX).mean())


def _third_octave_bands(fs: int, nfft: int, num_bands: int, min_freq: float) -> np.ndarray:
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(f)))
    for i in range(num_bands):
        l_ind = int(np.argmin((f - lo[i]) ** 2))
        h_ind = int(np.argmin((f - hi[i]) ** 2))
        obm[i, l_ind:h_ind] = 1.0
    return obm


def _frames(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    w = np.hanning(win + 2)[1:-1]
    starts = range(0, len(x) - win, hop)
    return np.array([w * x[i : i + win] for i in starts]).reshape(-1, win)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n, win = frames.shape
    out = np.zeros((n - 1) * hop + win)
    for i in range(n):
        out[i * hop : i * hop + win] += frames[i]
    return out


def _remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float, win: int, hop: int):
    xf, yf = _frames(x, win, hop), _frames(y, win, hop)
    energies = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    mask = (energies.max() - dyn_range - energies) < 0
    return _overlap_add(xf[mask], hop), _overlap_add(yf[mask], hop)


def _spectrum(x: np.ndarray) -> np.ndarray:
    return np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2), n=STOI_NFFT, axis=1).T


def stoi(clean, test, fs: int = 16000) -> float:
    """Short-time objective intelligibility in [0, 1] (non-extended)."""
    x, y = _as_array(clean), _as_array(test)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 0.384 * fs:
        raise ValueError("STOI needs at least 384 ms of audio")
    if fs != STOI_FS:
        ratio = Fraction(STOI_FS, fs)
        x = resample_poly(x, ratio.numerator, ratio.denominator)
        y = resample_poly(y, ratio.numerator, ratio.denominator)
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE, STOI_FRAME, STOI_FRAME // 2)
    if len(x) < STOI_FRAME:
        raise ValueError("signal is silent after voice-activity trimming")
    obm = _third_octave_bands(STOI_FS, STOI_NFFT, STOI_BANDS, STOI_MIN_FREQ)
    x_tob = np.sqrt(obm @ np.abs(_spectrum(x)) ** 2)
    y_tob = np.sqrt(obm @ np.abs(_spectrum(y)) ** 2)
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(f"only {n_frames} active frames; STOI needs {STOI_SEGMENT} (384 ms)")
    xs = np.stack([x_tob[:, m - STOI_SEGMENT : m] for m in range(STOI_SEGMENT, n_frames + 1)])
    ys = np.stack([y_tob[:, m - STOI_SEGMENT : m] for m in range(STOI_SEGMENT, n_frames + 1)])
    norm = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    y_norm = ys * norm
    clip = 10 ** (-STOI_BETA / 20)
    y_prime = np.minimum(y_norm, xs * (1 + clip))
    y_prime = y_prime - y_prime.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    y_prime /= np.linalg.norm(y_prime, axis=2, keepdims=True) + _EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + _EPS
    d = float(np.sum(y_prime * xs) / (xs.shape[0] * xs.shape[1]))
    return float(np.clip(d, 0.0, 1.0))


@dataclass
class EvalReport:
    files: list[dict] = field(default_factory=list)

    def add(self, name: str, clean, test) -> dict:
        rec = {"file": name, "ssnr_db": ssnr(clean, test), "stoi": stoi(clean, test)}
        self.files.append(rec)
        return rec

    @property
    def count(self) -> int:
        return len(self.files)

    @property
    def mean_ssnr(self) -> float:
        return float(np.mean([r["ssnr_db"] for r in self.files])) if self.files else float("nan")

    @property
    def mean_stoi(self) -> float:
        return float(np.mean([r["stoi"] for r in self.files])) if self.files else float("nan")

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.files]
        lines.append(json.dumps({"aggregate": True, "count": self.count, "ssnr_db": self.mean_ssnr, "stoi": self.mean_stoi}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        width = max([len(r["file"]) for r in self.files] + [4])
        rows = [f"{'file':<{width}}  {'SSNR dB':>8}  {'STOI':>6}"]
        rows += [f"{r['file']:<{width}}  {r['ssnr_db']:8.3f}  {r['stoi']:6.4f}" for r in self.files]
        rows.append(f"{'mean':<{width}}  {self.mean_ssnr:8.3f}  {self.mean_stoi:6.4f}  (n={self.count})")
        return "\n".join(rows)
