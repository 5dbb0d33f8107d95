"""drd command line: synth, train, derain, eval, analyze-rf, inspect-se.

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O error,
4 numeric failure during training, 5 checkpoint/config incompatibility.

DRD_THREADS (default 1) sets the worker count for dataset synthesis; every
other path is single-threaded and bit-deterministic for a given seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint
from .config import (build_run_config, flatten_run_config, parse_config_file,
                     parse_config_text, run_config_from_checkpoint)
from .errors import (CheckpointError, CompatibilityError, ConfigurationError,
                     DataError, DivergenceError, UsageError)
from .metrics import evaluate_pairs, report_lines
from .networks import DRDNet
from .pngio import load_image, save_image
from .rain import (PRESETS, load_dataset, make_dataset, preset_from_file,
                   write_dataset)
from .tensor import Tensor
from .training import train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_COMPAT = 5


def _threads() -> int:
    raw = os.environ.get("DRD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DRD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"DRD_THREADS must be >= 1, got {n}")
    return n


def _entries_from_args(args) -> dict:
    """Config-file entries with --set overrides applied on top, in order."""
    entries = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        for key, value in parse_config_text(item, source="--set").items():
            entries[key] = value
    return entries


def _model_from_checkpoint(ckpt: Checkpoint):
    rc = run_config_from_checkpoint(ckpt.config)
    model = DRDNet(rc.net, seed=rc.train.seed,
                   with_detail_branch=rc.train.detail_branch)
    ckpt.apply_to(model)
    model.set_training(False)
    return model, rc


def _clip01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def _parse_trace(path) -> list:
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        return rows
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append(tuple(float(v) for v in line.split()))
    return rows


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    workers = _threads()
    bg_dir = Path(args.backgrounds)
    if not bg_dir.is_dir():
        raise DataError(f"background directory not found: {bg_dir}")
    paths = sorted(bg_dir.glob("*.png"))
    if not paths:
        raise DataError(f"no PNG backgrounds under {bg_dir}")
    backgrounds = [load_image(p).astype(np.float64) for p in paths]
    if args.preset == "custom":
        if not args.preset_file:
            raise UsageError("--preset custom requires --preset-file")
        preset = preset_from_file(args.preset_file)
    else:
        if args.preset_file:
            raise UsageError("--preset-file only applies with --preset custom")
        preset = PRESETS[args.preset]
    samples, manifest = make_dataset(backgrounds, preset, args.count,
                                     args.seed, workers)
    write_dataset(samples, manifest, args.out)
    print(f"wrote {len(samples)} sample(s) to {args.out} "
          f"(preset {preset.name}, seed {args.seed}, workers {workers})")
    return EXIT_OK


_RESUME_MUTABLE = {"train.epochs", "train.checkpoint_every"}


def cmd_train(args) -> int:
    entries = _entries_from_args(args)
    resume_ckpt = None
    if args.resume:
        resume_ckpt = load_checkpoint(args.resume)
        rc = run_config_from_checkpoint(resume_ckpt.config)
        if entries:
            merged = dict(flatten_run_config(rc))
            merged.update(entries)
            requested = build_run_config(merged)
            # only the run length and snapshot cadence may change on resume;
            # anything else would silently train a different model
            stored, asked = flatten_run_config(rc), flatten_run_config(requested)
            for key, value in stored.items():
                if key not in _RESUME_MUTABLE and asked[key] != value:
                    raise CompatibilityError(
                        f"resume config mismatch for {key}: checkpoint has "
                        f"{value}, requested {asked[key]}")
            rc = requested
    else:
        rc = build_run_config(entries)

    triples = load_dataset(args.data)
    pairs = [(rainy, clean) for _, rainy, clean in triples]
    trace_path = f"{args.out}.trace"
    result = train(pairs, rc, resume=resume_ckpt, trace_path=trace_path,
                   checkpoint_path=args.out, log=print)

    from . import figures
    figures.save_loss_curve(_parse_trace(trace_path), f"{args.out}.loss.png")
    print(f"checkpoint written to {args.out} "
          f"(epoch {result.checkpoint.epoch}, iteration {result.checkpoint.iteration})")
    return EXIT_OK


def cmd_derain(args) -> int:
    model, _ = _model_from_checkpoint(load_checkpoint(args.ckpt))
    in_path = Path(args.input)
    if in_path.is_dir():
        inputs = sorted(in_path.glob("*.png"))
        if not inputs:
            raise DataError(f"no PNG images under {in_path}")
    elif in_path.is_file():
        inputs = [in_path]
    else:
        raise DataError(f"input not found: {in_path}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = 0
    for p in inputs:
        x = Tensor(load_image(p)[None], requires_grad=False)
        with T.no_grad():
            outs = model(x)
        final = _clip01(outs.final.data[0])
        save_image(final, out_dir / f"{p.stem}.png")
        wrote += 1
        if args.dump:
            save_image(_clip01(outs.rain.data[0]), out_dir / f"{p.stem}.R.png")
            save_image(_clip01(outs.derained.data[0]), out_dir / f"{p.stem}.Ip.png")
            detail = (outs.detail.data[0] if outs.detail is not None
                      else np.zeros_like(final))
            # inverted min-max view: detail prints dark on white
            save_image(1.0 - analysis.normalize_map(detail),
                       out_dir / f"{p.stem}.YmX.png")
            wrote += 3
    print(f"wrote {wrote} file(s) to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    root = Path(args.pairs)
    if not root.is_dir():
        raise DataError(f"pair directory not found: {root}")
    a_name = args.a or ("derained" if (root / "derained").is_dir() else "rain")
    b_name = args.b or "norain"
    a_dir, b_dir = root / a_name, root / b_name
    for d in (a_dir, b_dir):
        if not d.is_dir():
            raise DataError(f"missing directory: {d}")
    a_ids = {p.stem for p in a_dir.glob("*.png")}
    b_ids = {p.stem for p in b_dir.glob("*.png")}
    if not a_ids:
        raise DataError(f"no PNG images under {a_dir}")
    if a_ids != b_ids:
        only_a = sorted(a_ids - b_ids)[:5]
        only_b = sorted(b_ids - a_ids)[:5]
        raise UsageError(f"pair mismatch between {a_name}/ and {b_name}/: "
                         f"only in {a_name}: {only_a}; only in {b_name}: {only_b}")

    report = evaluate_pairs(
        (sid, load_image(a_dir / f"{sid}.png"), load_image(b_dir / f"{sid}.png"))
        for sid in sorted(a_ids))
    Path(args.out).write_text("\n".join(report_lines(report)) + "\n",
                              encoding="ascii")

    from . import figures
    figures.save_metric_chart(report, f"{args.out}.png")
    print(f"{a_name} vs {b_name}: count {len(report.ids)} "
          f"mean_psnr_db {report.mean_psnr_db:.6f} mean_ssim {report.mean_ssim:.6f}")
    return EXIT_OK


def cmd_analyze_rf(args) -> int:
    rc = build_run_config(_entries_from_args(args))
    rows = analysis.rf_table(rc.net)
    print(analysis.render_rf_table(rows))
    if args.figure:
        from . import figures
        figures.save_rf_plot(rows, args.figure)
        print(f"figure written to {args.figure}")
    return EXIT_OK


def cmd_inspect_se(args) -> int:
    model, _ = _model_from_checkpoint(load_checkpoint(args.ckpt))
    image = load_image(args.image)
    report = analysis.se_gate_report(model, image, args.block, args.topk)
    if report.clamped:
        print(f"warning: --topk {args.topk} exceeds the {report.gates.size} "
              "available channels, clamped", file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"# se gates, block {report.block_index}", "# channel gate"]
    for ch in range(report.gates.size):
        lines.append(f"{ch} {report.gates[ch]:.9e}")
    lines.append("# summary")
    lines.append(f"block = {report.block_index}")
    lines.append("top = " + ",".join(str(c) for c, _ in report.top))
    lines.append("bottom = " + ",".join(str(c) for c, _ in report.bottom))
    (out_dir / "gates.txt").write_text("\n".join(lines) + "\n", encoding="ascii")

    for tag, ranked in (("top", report.top), ("bottom", report.bottom)):
        for rank, (ch, _) in enumerate(ranked):
            m = analysis.normalize_map(report.features[ch])
            save_image(np.repeat(m[None], 3, axis=0),
                       out_dir / f"{tag}{rank}_ch{ch:03d}.png")

    from . import figures
    figures.save_gate_chart(report, out_dir / "gates.png")
    print(f"block {report.block_index}: strongest "
          + " ".join(f"{c}:{g:.4f}" for c, g in report.top)
          + " | weakest "
          + " ".join(f"{c}:{g:.4f}" for c, g in report.bottom))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="drd", description="two-branch single-image deraining toolkit")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sp = sub.add_parser("synth", help="generate a synthetic rain dataset")
    sp.add_argument("--backgrounds", required=True,
                    help="directory of clean background PNGs")
    sp.add_argument("--out", required=True, help="dataset directory to create")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--preset", choices=("light", "heavy", "custom"),
                    default="light")
    sp.add_argument("--preset-file", dest="preset_file",
                    help="key = value ranges for --preset custom")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train on a synthesized dataset")
    tp.add_argument("--data", required=True, help="dataset directory")
    tp.add_argument("--out", required=True,
                    help="checkpoint path; .trace and .loss.png sit next to it")
    tp.add_argument("--config", help="key = value config file")
    tp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    tp.add_argument("--resume", help="checkpoint to continue from")
    tp.set_defaults(func=cmd_train)

    dp = sub.add_parser("derain", help="run a checkpoint on images")
    dp.add_argument("--ckpt", required=True)
    dp.add_argument("--in", dest="input", required=True,
                    help="PNG file or directory")
    dp.add_argument("--out", required=True, help="output directory")
    dp.add_argument("--dump-intermediates", dest="dump", action="store_true",
                    help="also write the rain map (.R), the rain-subtracted "
                         "base (.Ip) and the inverted detail map (.YmX)")
    dp.set_defaults(func=cmd_derain)

    ep = sub.add_parser("eval", help="PSNR/SSIM over paired directories")
    ep.add_argument("--pairs", required=True,
                    help="directory holding the paired subdirectories")
    ep.add_argument("--a", help="candidate subdirectory "
                                "(default: derained/ if present, else rain/)")
    ep.add_argument("--b", help="reference subdirectory (default: norain)")
    ep.add_argument("--out", required=True,
                    help="report path; a metric chart is written next to it")
    ep.set_defaults(func=cmd_eval)

    ap = sub.add_parser("analyze-rf",
                        help="print the detail-branch receptive-field table")
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE")
    ap.add_argument("--figure", help="optional growth-plot path")
    ap.set_defaults(func=cmd_analyze_rf)

    ip = sub.add_parser("inspect-se",
                        help="report SE channel gates for one image")
    ip.add_argument("--ckpt", required=True)
    ip.add_argument("--image", required=True)
    ip.add_argument("--block", type=int, default=0)
    ip.add_argument("--topk", type=int, default=8)
    ip.add_argument("--out", required=True, help="output directory")
    ip.set_defaults(func=cmd_inspect_se)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry():
    raise SystemExit(main())
