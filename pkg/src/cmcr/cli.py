"""Command-line entry point: ``cmcr {mix,train,enhance,eval,dump-attention,selftest}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every failure
prints one line of the form ``error: <command>: <reason>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp
from . import tensor as T
from .checkpoint import CheckpointError, save_arrays
from .data import DEFAULT_SNRS, MixSpec, load_items, synth_corpus
from .metrics import EvalReport
from .model import ModelConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _snr_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty SNR list")
    return vals


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file mirroring ModelConfig")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmcr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("mix", help="synthesize a noisy/clean corpus")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--snr", type=_snr_list, default=DEFAULT_SNRS)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--clean-dir")
    p.add_argument("--noise-dir")
    p.add_argument("--seconds", type=float, default=1.0)

    p = sub.add_parser("train", help="train on a manifest")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, help="stop after this many steps (default: all epochs)")
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")

    p = sub.add_parser("enhance", help="enhance one WAV file")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="SSNR/STOI over a manifest")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="score enhanced output instead of the noisy input")
    p.add_argument("--out", type=Path, help="write per-file records as JSONL")

    p = sub.add_parser("dump-attention", help="save S, M_r and M_i of every collaboration module")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("selftest", help="gradient checks and invariants")
    _common(p)
    return parser


def _config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def _cmd_mix(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not args.synthetic and not (args.clean_dir and args.noise_dir):
        raise UsageError("give --clean-dir and --noise-dir, or --synthetic")
    seed = args.seed if args.seed is not None else _config(args).seed
    spec = MixSpec(args.clean_dir, args.noise_dir, args.snr, args.seconds, seed)
    manifest = synth_corpus(spec, args.n, args.out, synthetic=args.synthetic)
    print(manifest)
    return EXIT_OK


def _cmd_train(args) -> int:
    from .train import train

    _require_file(args.manifest, "manifest")
    if args.checkpoint is not None:
        _require_file(args.checkpoint, "checkpoint")
    res = train(args.manifest, _config(args), args.out, max_steps=args.steps, resume=args.checkpoint)
    last = res.history[-1] if res.history else {}
    print(f"checkpoint={res.checkpoint} steps={res.steps} L_total={last.get('L_total', float('nan')):.6g}")
    return EXIT_OK


def _cmd_enhance(args) -> int:
    from .train import enhance_file

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.input, "input WAV")
    print(enhance_file(args.input, args.checkpoint, args.out))
    return EXIT_OK


def _cmd_eval(args) -> int:
    _require_file(args.manifest, "manifest")
    model = None
    if args.checkpoint is not None:
        _require_file(args.checkpoint, "checkpoint")
        from .train import enhance, model_from_checkpoint

        model = model_from_checkpoint(args.checkpoint)
    report = EvalReport()
    for item in load_items(args.manifest):
        test = item.noisy if model is None else enhance(item.noisy, model)
        report.add(item.name, item.clean, test)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report.to_jsonl())
    print(report.summary())
    return EXIT_OK


def _cmd_dump_attention(args) -> int:
    from .train import _padding, model_from_checkpoint

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.input, "input WAV")
    model = model_from_checkpoint(args.checkpoint)
    wave = dsp.load_wav(args.input, model.cfg.stft.sample_rate)
    front, back = _padding(len(wave), model.cfg.stft)
    x = np.pad(wave.samples, (front, back))
    with T.no_grad():
        spec = dsp.stft(x, model.cfg.stft).astype(model.encoders[0].w_real.dtype)
        model(T.as_tensor(spec[None]))
    arrays = model.attention_arrays()
    save_arrays(args.out, arrays, {"kind": "attention", "input": args.input.name, "fingerprint": model.cfg.fingerprint()})
    print(f"{args.out} ({len(arrays)} arrays)")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed if args.seed is not None else 0)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}")
    if failed:
        raise RuntimeError(f"{len(failed)} selftest check(s) failed: {', '.join(r.name for r in failed)}")
    return EXIT_OK


COMMANDS = {
    "mix": _cmd_mix,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "eval": _cmd_eval,
    "dump-attention": _cmd_dump_attention,
    "selftest": _cmd_selftest,
}


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in argv if a in COMMANDS), "cmcr")
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {command}: usage: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {args.command}: usage: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, dsp.AudioError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
