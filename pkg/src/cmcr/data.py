"""Noisy/clean pair synthesis at controlled SNR, manifests and batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .dsp import SAMPLE_RATE, StftConfig, Waveform

logger = logging.getLogger(__name__)

DEFAULT_SNRS = (-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 5.0)
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class MixSpec:
    clean_dir: str | None = None
    noise_dir: str | None = None
    snr_levels_db: tuple[float, ...] = DEFAULT_SNRS
    clip_seconds: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.snr_levels_db:
            raise ValueError("snr_levels_db must be nonempty")
        if self.clip_seconds * SAMPLE_RATE <= dsp.DEFAULT_STFT.win_len:
            raise ValueError("clip_seconds must exceed one analysis window")


def power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def measured_snr(clean, noisy) -> float:
    """10 log10(P_clean / P_(noisy - clean)) in dB."""
    c = getattr(clean, "samples", clean)
    n = getattr(noisy, "samples", noisy)
    return 10.0 * np.log10(power(c) / power(np.asarray(n) - np.asarray(c)))


def fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Loop (random circular offset) or crop (random start) noise to n samples."""
    if len(noise) >= n:
        start = 0 if rng is None else int(rng.integers(0, len(noise) - n + 1))
        return noise[start : start + n]
    offset = 0 if rng is None else int(rng.integers(0, len(noise)))
    idx = (offset + np.arange(n)) % len(noise)
    return noise[idx]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator | None = None) -> tuple[Waveform, float]:
    """Return (clean + gain * noise, gain) with the requested clean-to-noise ratio."""
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    p_clean = power(clean.samples)
    if p_clean == 0.0:
        raise ValueError("clean signal is silent; SNR undefined")
    nz = fit_noise(noise.samples, len(clean), rng)
    p_noise = power(nz)
    if p_noise == 0.0:
        raise ValueError("noise signal is silent; SNR undefined")
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    return Waveform(clean.samples + gain * nz, clean.sample_rate), gain


# -- synthetic sources ------------------------------------------------------------
def synth_clean(rng: np.random.Generator, n: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Harmonic 'voiced' signal with gliding pitch and syllable-rate envelope."""
    t = np.arange(n) / sr
    f0 = rng.uniform(110.0, 240.0) * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(rng.integers(4, 10))
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        if h * f0.max() >= sr / 2:
            break
        x += rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(2.5, 5.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 0.7
    x *= 0.2 + 0.8 * env
    return 0.1 * x / np.sqrt(np.mean(x * x))


def synth_noise(rng: np.random.Generator, n: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """White noise, or babble-like noise from modulated low-passed noise bands."""
    if rng.random() < 0.5:
        return rng.standard_normal(n)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sr)
    spec *= 1.0 / (1.0 + (freqs / 1000.0) ** 2)
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / sr
    mod = np.zeros(n)
    for _ in range(4):
        mod += 1.0 + np.sin(2 * np.pi * rng.uniform(2.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    return x * mod


# -- corpus -----------------------------------------------------------------------
def item_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _wav_files(d: str | None) -> list[Path]:
    if d is None:
        return []
    return sorted(p for p in Path(d).rglob("*") if p.suffix.lower() == ".wav")


def _crop(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(x) <= n:
        return x
    start = int(rng.integers(0, len(x) - n + 1))
    return x[start : start + n]


def synth_corpus(spec: MixSpec, n_items: int, out_dir, synthetic: bool = False) -> Path:
    """Write clean/ and noisy/ WAV pairs plus a manifest; returns the manifest path.

    Each item's randomness is derived from (seed, index) alone.
    """
    clean_files, noise_files = _wav_files(spec.clean_dir), _wav_files(spec.noise_dir)
    if not synthetic and (not clean_files or not noise_files):
        raise ValueError("no clean or noise WAV files found; pass synthetic=True to generate sources")
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    n = int(round(spec.clip_seconds * SAMPLE_RATE))
    records = []
    for i in range(n_items):
        iseed = item_seed(spec.seed, i)
        rng = np.random.default_rng(iseed)
        snr = float(spec.snr_levels_db[int(rng.integers(0, len(spec.snr_levels_db)))])
        if synthetic:
            clean = Waveform(synth_clean(rng, n))
            noise = Waveform(synth_noise(rng, n))
        else:
            clean = dsp.load_wav(clean_files[int(rng.integers(0, len(clean_files)))])
            clean = Waveform(_crop(clean.samples, n, rng))
            noise = dsp.load_wav(noise_files[int(rng.integers(0, len(noise_files)))])
        noisy, _ = mix_at_snr(clean, noise, snr, rng)
        peak = max(np.abs(noisy.samples).max(), np.abs(clean.samples).max())
        if peak > 0.99:
            scale = 0.99 / peak
            clean = Waveform(clean.samples * scale)
            noisy = Waveform(noisy.samples * scale)
        name = f"{i:05d}.wav"
        dsp.save_wav(out / "clean" / name, clean)
        dsp.save_wav(out / "noisy" / name, noisy)
        records.append({"clean_path": f"clean/{name}", "noisy_path": f"noisy/{name}", "snr_db": snr, "item_seed": iseed})
    manifest = out / MANIFEST_NAME
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    logger.info("wrote %d pairs to %s", n_items, out)
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            missing = {"clean_path", "noisy_path", "snr_db", "item_seed"} - rec.keys()
            if missing:
                raise ValueError(f"{path}:{line_no}: record missing {sorted(missing)}")
            records.append(rec)
    return records


@dataclass
class Item:
    noisy: Waveform
    clean: Waveform
    snr_db: float = float("nan")
    name: str = ""


def load_items(manifest) -> list[Item]:
    root = Path(manifest).parent
    return [
        Item(dsp.load_wav(root / r["noisy_path"]), dsp.load_wav(root / r["clean_path"]), float(r["snr_db"]), r["noisy_path"])
        for r in read_manifest(manifest)
    ]


# -- batching ---------------------------------------------------------------------
@dataclass
class Batch:
    noisy_spec: np.ndarray  # [B, T_max, F, 2]
    clean_spec: np.ndarray
    noisy_wav: np.ndarray  # [B, N_max]
    clean_wav: np.ndarray
    frames: np.ndarray  # valid frames per item
    lengths: np.ndarray  # valid samples per item
    stft: StftConfig = field(default=dsp.DEFAULT_STFT)

    @property
    def size(self) -> int:
        return self.noisy_wav.shape[0]

    pad_mask = property(lambda self: self.frames)


def make_batch(items: Sequence[Item], cfg: StftConfig = dsp.DEFAULT_STFT, dtype=np.float32) -> Batch:
    """Stack items, zero-padding waveforms and spectrograms to the longest item."""
    if not items:
        raise ValueError("cannot batch zero items")
    lengths = np.array([len(it.clean) for it in items])
    for it in items:
        if len(it.noisy) != len(it.clean):
            raise ValueError(f"{it.name}: noisy/clean length mismatch")
    n_max = int(lengths.max())
    frames = np.array([cfg.n_frames(n) for n in lengths])
    t_max = int(frames.max())
    b = len(items)
    noisy_wav = np.zeros((b, n_max), dtype=dtype)
    clean_wav = np.zeros((b, n_max), dtype=dtype)
    noisy_spec = np.zeros((b, t_max, cfg.n_bins, 2), dtype=dtype)
    clean_spec = np.zeros((b, t_max, cfg.n_bins, 2), dtype=dtype)
    for i, it in enumerate(items):
        n, t = lengths[i], frames[i]
        noisy_wav[i, :n] = it.noisy.samples
        clean_wav[i, :n] = it.clean.samples
        noisy_spec[i, :t] = dsp.stft(it.noisy.samples, cfg)
        clean_spec[i, :t] = dsp.stft(it.clean.samples, cfg)
    return Batch(noisy_spec, clean_spec, noisy_wav, clean_wav, frames, lengths, cfg)


def batch_order(n_items: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_items)


def make_batches(items: Sequence[Item], batch_size: int, seed: int = 0, epoch: int = 0, cfg: StftConfig = dsp.DEFAULT_STFT) -> list[Batch]:
    """One epoch of batches; the shuffle is a pure function of (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = batch_order(len(items), seed, epoch)
    return [make_batch([items[j] for j in order[i : i + batch_size]], cfg) for i in range(0, len(order), batch_size)]
