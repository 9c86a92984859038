"""Training loop, checkpointing and inference."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .data import load_items, make_batches
from .dsp import Waveform
from .model import CMCRNet, ModelConfig, total_loss
from .optim import Adam
from .regularizer import FrozenEncoder

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.jsonl"
FINAL_NAME = "model.ckpt"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_log: Path
    steps: int
    history: list[dict]


def _step_record(step: int, comps: dict[str, float]) -> dict:
    return {"step": step, "L_total": comps["total"], "L_mse": comps["mse"], "L_ca": comps["ca"], "L_cr": comps["cr"]}


def _check_finite(step: int, comps: dict[str, float]) -> None:
    bad = [f"L_{k}={v}" for k, v in comps.items() if not math.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite loss at step {step}: {', '.join(bad)}")


def step_checkpoint_name(step: int) -> str:
    return f"step_{step:06d}.ckpt"


def train(
    manifest,
    cfg: ModelConfig,
    out_dir,
    max_steps: int | None = None,
    resume=None,
) -> TrainResult:
    """Adam training on a manifest; batch order is a pure function of (seed, epoch).

    ``max_steps`` defaults to ``cfg.epochs`` full passes. ``resume`` names a
    checkpoint whose model, optimizer and step counter are restored; the
    metrics log is cut back to that step so a resumed run reproduces an
    unbroken one line for line.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = load_items(manifest)
    if not items:
        raise TrainingError(f"manifest {manifest} has no records")
    per_epoch = math.ceil(len(items) / cfg.batch_size)
    total_steps = max_steps if max_steps is not None else cfg.epochs * per_epoch

    model = CMCRNet(cfg)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    encoder = FrozenEncoder(stft=cfg.stft)
    start = 0
    history: list[dict] = []
    log_path = out / METRICS_NAME
    if resume is not None:
        meta = load_checkpoint(resume, model, opt)
        start = int(meta["step"])
        if log_path.exists():
            with open(log_path) as fh:
                history = [r for r in map(json.loads, filter(str.strip, fh)) if r["step"] <= start]
        logger.info("resumed from %s at step %d", resume, start)

    with open(log_path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    model.train()
    epoch_cache: tuple[int, list] | None = None
    ckpt = out / FINAL_NAME
    for step in range(start + 1, total_steps + 1):
        epoch, idx = divmod(step - 1, per_epoch)
        if epoch_cache is None or epoch_cache[0] != epoch:
            epoch_cache = (epoch, make_batches(items, cfg.batch_size, cfg.seed, epoch, cfg.stft))
        batch = epoch_cache[1][idx]
        loss, comps = total_loss(batch, model, encoder)
        _check_finite(step, comps)
        loss.backward()
        if encoder.projection.grad is not None or encoder.parameters():
            raise TrainingError(f"frozen encoder received a gradient at step {step}")
        opt.step()
        rec = _step_record(step, comps)
        history.append(rec)
        with open(log_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if step % 10 == 0 or step == start + 1:
            logger.info("step %d  total %.5f  mse %.6f  ca %.4f  cr %.4f", step, *(comps[k] for k in ("total", "mse", "ca", "cr")))
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out / step_checkpoint_name(step), model, opt, step)
    save_checkpoint(ckpt, model, opt, max(total_steps, start))
    return TrainResult(ckpt, log_path, max(total_steps, start), history)


def model_from_checkpoint(path, cfg: ModelConfig | None = None) -> CMCRNet:
    """Build a network from a checkpoint's stored config (or ``cfg`` if given)."""
    _, meta = read_checkpoint(path)
    if cfg is None:
        try:
            cfg = ModelConfig.from_dict(meta["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: unusable stored config ({exc})") from None
    model = CMCRNet(cfg)
    load_checkpoint(path, model)
    return model.eval()


def _padding(n: int, cfg: dsp.StftConfig) -> tuple[int, int]:
    # leading zeros move the first real sample under a full-weight window;
    # trailing zeros complete the last frame
    front = cfg.win_len
    total = front + n + cfg.win_len
    back = cfg.win_len + (-(total - cfg.win_len)) % cfg.hop
    return front, back


def enhance(wave: Waveform, model: CMCRNet) -> Waveform:
    """Enhance one waveform; output has the input's length, clamped to [-1, 1]."""
    cfg = model.cfg.stft
    if wave.sample_rate != cfg.sample_rate:
        wave = dsp.resample(wave, cfg.sample_rate)
    n = len(wave)
    if n == 0:
        raise dsp.AudioError("cannot enhance an empty waveform")
    front, back = _padding(n, cfg)
    x = np.pad(wave.samples, (front, back))
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            dtype = model.encoders[0].w_real.dtype
            spec = dsp.stft(x, cfg).astype(dtype)
            enhanced, _ = model(T.as_tensor(spec[None]))
            y = dsp.istft(enhanced.data[0], cfg, len(x))
    finally:
        model.train(was_training)
    return Waveform(np.clip(y[front : front + n], -1.0, 1.0), cfg.sample_rate)


def enhance_file(in_wav, checkpoint, out_wav) -> Path:
    wave = dsp.load_wav(in_wav)
    model = model_from_checkpoint(checkpoint)
    out = enhance(wave, model)
    dsp.save_wav(out_wav, out)
    return Path(out_wav)
