"""Command-line front door: make blurred test data, run restorations, score results.

Three subcommands cover the loop of an experiment:

    msdeblur synth  sharp.png --kernel motion:7,45
    msdeblur deblur blurred.png --kernel-size 7 --preset desk --out runs/a
    msdeblur eval   restored.png reference.png

Configuration is layered: ``--preset`` picks a named constant set,
``--config FILE`` (plain key=value lines) overrides it, and explicit
flags override both.  Exit codes: 0 success, 1 bad invocation, 2 runtime
abort — a diverged run still writes its partial trace and summary before
exiting.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .imgmath import read_kernel_txt, read_png, write_kernel_txt, write_png
from .metrics import kernel_ncc, metric_report
from .optimizer import PRESET_NAMES, DivergenceError, RunConfig, preset, run
from .synth import parse_kernel_spec, synthesize


class UsageError(Exception):
    """Bad invocation caught before any real work starts (exit code 1)."""


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_kernel_size(text):
    """Parse ``7`` or ``5x7`` / ``5,7`` into an odd (rows, cols) pair."""
    toks = str(text).replace("x", ",").split(",")
    if len(toks) == 1:
        size = (int(toks[0]), int(toks[0]))
    elif len(toks) == 2:
        size = (int(toks[0]), int(toks[1]))
    else:
        raise ValueError(f"expected SIZE or ROWSxCOLS, got {text!r}")
    if any(s < 1 or s % 2 == 0 for s in size):
        raise ValueError(f"kernel size must be odd and positive, got {text!r}")
    return size


# Every key the config file (and the flag layer) may set, with its home
# inside RunConfig and the parser used for string values.
_OVERRIDE_KEYS = {
    "top": {
        "max_iters": int,
        "lr": float,
        "lr_halve_every": int,
        "kernel_every": int,
        "checkpoint_every": int,
        "min_side": int,
        "seed": int,
        "timing": _parse_bool,
        "kernel_size": parse_kernel_size,
    },
    "solver": {
        "lambda_h": float,
        "gamma": float,
        "keep_fraction": float,
        "refine_threshold": float,
    },
    "loss": {
        "lambda_x": float,
        "charbonnier_eps": float,
        "isotropic": _parse_bool,
    },
    "generator": {
        "scales": int,
        "input_channels": int,
        "base_width": int,
        "width_cap": int,
        "fe_depth": int,
        "converter_depth": int,
        "lff_depth": int,
        "cfn_depth": int,
        "depth": int,
    },
}


def read_config_file(path):
    """Parse a plain-text ``key=value`` file (blank lines and # comments ok)."""
    items = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        items[key.strip()] = value.strip()
    return items


def apply_overrides(cfg, items):
    """Route a key -> value mapping onto the right config sections.

    String values are cast per the key table; already-typed values (from
    argparse) pass through.  Unknown keys are rejected.
    """
    per_section = {section: {} for section in _OVERRIDE_KEYS}
    for key, raw in items.items():
        for section, table in _OVERRIDE_KEYS.items():
            if key in table:
                break
        else:
            known = sorted(k for table in _OVERRIDE_KEYS.values() for k in table)
            raise UsageError(f"unknown config key {key!r} (known: {', '.join(known)})")
        try:
            value = table[key](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc
        per_section[section][key] = value

    try:
        if per_section["solver"]:
            cfg = replace(cfg, solver=replace(cfg.solver, **per_section["solver"]))
        if per_section["loss"]:
            cfg = replace(cfg, loss=replace(cfg.loss, **per_section["loss"]))
        if per_section["generator"]:
            cfg = replace(
                cfg, generator=replace(cfg.generator, **per_section["generator"])
            )
        if per_section["top"]:
            cfg = replace(cfg, **per_section["top"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def resolve_run_config(args, flag_items):
    """preset -> config file -> explicit flags, later layers winning."""
    try:
        cfg = preset(args.preset) if args.preset else RunConfig()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.config is not None:
        cfg = apply_overrides(cfg, read_config_file(args.config))
    if args.seed is not None:
        flag_items = {**flag_items, "seed": args.seed}
    return apply_overrides(cfg, {k: v for k, v in flag_items.items() if v is not None})


def _load_image(path):
    try:
        return read_png(path)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc
    except Exception as exc:  # PIL raises its own hierarchy for bad files
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    sharp = _load_image(args.sharp)
    try:
        kernel = parse_kernel_spec(args.kernel)
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad kernel spec {args.kernel!r}: {exc}") from exc
    seed = args.seed if args.seed is not None else 0
    blurred = synthesize(sharp, kernel, noise_sigma=args.noise_sigma, seed=seed)

    out = _out_dir(args)
    prefix = args.prefix or Path(args.sharp).stem
    paths = {
        "blurred": out / f"{prefix}_blurred.png",
        "kernel": out / f"{prefix}_kernel.txt",
        "manifest": out / f"{prefix}_manifest.json",
    }
    write_png(paths["blurred"], blurred)
    write_kernel_txt(paths["kernel"], kernel)
    if args.dump_float:
        paths["blurred_f32"] = out / f"{prefix}_blurred.npy"
        np.save(paths["blurred_f32"], blurred.astype(np.float32))
    manifest = {
        "command": "synth",
        "sharp": str(args.sharp),
        "kernel_spec": args.kernel,
        "kernel_size": list(kernel.shape),
        "noise_sigma": args.noise_sigma,
        "seed": seed,
        "outputs": {name: str(p) for name, p in paths.items() if name != "manifest"},
    }
    _write_json(paths["manifest"], manifest)
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_deblur(args):
    blurred = _load_image(args.blurred)
    flag_items = {
        "max_iters": args.iters,
        "lr": args.lr,
        "lr_halve_every": args.lr_halve_every,
        "kernel_every": args.kernel_every,
        "checkpoint_every": args.checkpoint_every,
        "kernel_size": args.kernel_size,
        "lambda_h": args.lambda_h,
        "gamma": args.gamma,
        "lambda_x": args.lambda_x,
        "scales": args.scales,
        "base_width": args.base_width,
        "width_cap": args.width_cap,
    }
    if args.no_timing:
        flag_items["timing"] = False
    cfg = resolve_run_config(args, flag_items)

    out = _out_dir(args)
    prefix = args.prefix or Path(args.blurred).stem
    trace_path = out / f"{prefix}_trace.csv"
    summary_path = out / f"{prefix}_summary.json"
    summary = {
        "command": "deblur",
        "input": str(args.blurred),
        "preset": cfg.preset_name,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "outputs": {"trace": str(trace_path)},
    }

    checkpoint_dir = None
    if cfg.checkpoint_every > 0:
        checkpoint_dir = out / f"{prefix}_checkpoints"
        checkpoint_dir.mkdir(exist_ok=True)

    started = time.perf_counter()
    try:
        result = run(blurred, cfg, checkpoint_dir=checkpoint_dir)
    except DivergenceError as exc:
        exc.trace.write_csv(trace_path)
        summary["aborted"] = True
        summary["iteration"] = exc.iteration
        summary["error"] = str(exc)
        _write_json(summary_path, summary)
        print(f"error: {exc} (partial trace at {trace_path})", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - started

    paths = {
        "deblurred": out / f"{prefix}_deblurred.png",
        "kernel_png": out / f"{prefix}_kernel.png",
        "kernel_txt": out / f"{prefix}_kernel.txt",
    }
    write_png(paths["deblurred"], result.image)
    write_png(paths["kernel_png"], result.kernel / result.kernel.max())
    write_kernel_txt(paths["kernel_txt"], result.kernel)
    result.trace.write_csv(trace_path)
    if args.save_scales:
        for s, (img, ker) in enumerate(zip(result.scale_images, result.scale_kernels)):
            img_path = out / f"{prefix}_scale{s}.png"
            ker_path = out / f"{prefix}_scale{s}_kernel.txt"
            write_png(img_path, img)
            write_kernel_txt(ker_path, ker)
            paths[f"scale{s}"] = img_path
            paths[f"scale{s}_kernel"] = ker_path
    if args.dump_float:
        paths["deblurred_f32"] = out / f"{prefix}_deblurred.npy"
        paths["kernel_f32"] = out / f"{prefix}_kernel.npy"
        np.save(paths["deblurred_f32"], result.image.astype(np.float32))
        np.save(paths["kernel_f32"], result.kernel.astype(np.float32))

    records = result.trace.records
    summary["outputs"].update({name: str(p) for name, p in paths.items()})
    summary["n_iters"] = len(records)
    summary["final_loss"] = records[-1].loss
    summary["delta_fallbacks"] = result.trace.delta_fallbacks
    summary["refine_fell_back"] = result.refine_fell_back
    summary["elapsed_seconds"] = elapsed
    summary["mean_iter_ms"] = (
        float(np.mean([r.ms for r in records])) if cfg.timing else None
    )

    if args.reference is not None:
        reference = _load_image(args.reference)
        restored_report = metric_report(result.image, reference)
        blurred_report = metric_report(blurred, reference)
        summary["psnr_restored"] = restored_report.psnr
        summary["ssim_restored"] = restored_report.ssim
        summary["psnr_blurred"] = blurred_report.psnr
        summary["psnr_gain_db"] = restored_report.psnr - blurred_report.psnr
        print(f"PSNR gain: {summary['psnr_gain_db']:+.2f} dB")
    if args.true_kernel is not None:
        try:
            true_kernel = read_kernel_txt(args.true_kernel)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read kernel {args.true_kernel}: {exc}") from exc
        summary["kernel_ncc"] = kernel_ncc(result.kernel, true_kernel)
        print(f"kernel NCC: {summary['kernel_ncc']:.3f}")

    _write_json(summary_path, summary)
    for p in [*paths.values(), trace_path, summary_path]:
        print(f"wrote {p}")
    return 0


def _eval_pair(result_path, reference_path, aggregation, report_path):
    result = _load_image(result_path)
    reference = _load_image(reference_path)
    if result.shape != reference.shape:
        raise UsageError(
            f"dimension mismatch: {result_path} is {result.shape}, "
            f"{reference_path} is {reference.shape}"
        )
    report = metric_report(result, reference, aggregation=aggregation)
    print(report.to_json())
    if report_path is not None:
        _write_json(report_path, json.loads(report.to_json()))
    return 0


def _eval_batch(result_dir, reference_dir, aggregation, report_path):
    names = sorted(p.name for p in result_dir.iterdir() if p.suffix.lower() == ".png")
    if not names:
        raise UsageError(f"{result_dir}: no PNG files to evaluate")
    lines = ["name,psnr,ssim,status"]
    scored = []
    failures = 0
    for name in names:
        reference_path = reference_dir / name
        if not reference_path.exists():
            lines.append(f"{name},,,missing-reference")
            failures += 1
            continue
        result = read_png(result_dir / name)
        reference = read_png(reference_path)
        if result.shape != reference.shape:
            lines.append(f"{name},,,dim-mismatch")
            failures += 1
            continue
        report = metric_report(result, reference, aggregation=aggregation)
        lines.append(f"{name},{report.psnr!r},{report.ssim!r},ok")
        scored.append(report)
    if scored:
        psnr_avg = float(np.mean([r.psnr for r in scored]))
        ssim_avg = float(np.mean([r.ssim for r in scored]))
        lines.append(f"average,{psnr_avg!r},{ssim_avg!r},{len(scored)}/{len(names)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if report_path is not None:
        Path(report_path).write_text(text, encoding="utf-8")
    return 2 if failures else 0


def cmd_eval(args):
    result, reference = Path(args.result), Path(args.reference)
    aggregation = "luminance" if args.luminance else "rgb-mean"
    report_path = args.report
    if result.is_dir() and reference.is_dir():
        return _eval_batch(result, reference, aggregation, report_path)
    if result.is_dir() or reference.is_dir():
        raise UsageError("eval needs two files or two directories, not a mix")
    return _eval_pair(result, reference, aggregation, report_path)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract here reserves 2
    for runtime aborts, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument(
        "--preset", choices=PRESET_NAMES, default=None, help="named constant set"
    )
    common.add_argument(
        "--config", type=Path, default=None, help="key=value file overriding the preset"
    )
    common.add_argument(
        "--out", type=Path, default=Path("."), help="output directory (default .)"
    )

    parser = _Parser(prog="msdeblur", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="blur a sharp image")
    p.add_argument("sharp", type=Path, help="sharp input PNG")
    p.add_argument(
        "--kernel",
        required=True,
        help="file:<path> | motion:<length>,<angle> | gauss:<sigma>,<size> | walk:<steps>,<seed>",
    )
    p.add_argument("--noise-sigma", type=float, default=0.01, help="noise level on [0,1]")
    p.add_argument("--prefix", default=None, help="output name prefix (default: input stem)")
    p.add_argument("--dump-float", action="store_true", help="also write float32 .npy dumps")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("deblur", parents=[common], help="restore a blurred image")
    p.add_argument("blurred", type=Path, help="blurred input PNG")
    p.add_argument(
        "--kernel-size",
        required=True,
        type=parse_kernel_size,
        help="odd kernel support, SIZE or ROWSxCOLS",
    )
    p.add_argument("--iters", type=int, default=None, help="override iteration count")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-halve-every", type=int, default=None)
    p.add_argument("--kernel-every", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--lambda-h", type=float, default=None, help="kernel ridge weight")
    p.add_argument("--gamma", type=float, default=None, help="kernel centering weight")
    p.add_argument("--lambda-x", type=float, default=None, help="smoothness weight")
    p.add_argument("--scales", type=int, default=None, help="pyramid levels (1 = single-scale)")
    p.add_argument("--base-width", type=int, default=None)
    p.add_argument("--width-cap", type=int, default=None)
    p.add_argument("--save-scales", action="store_true", help="write per-scale outputs")
    p.add_argument("--dump-float", action="store_true", help="also write float32 .npy dumps")
    p.add_argument("--no-timing", action="store_true", help="zero the ms trace column")
    p.add_argument("--reference", type=Path, default=None, help="sharp reference for PSNR gain")
    p.add_argument("--true-kernel", type=Path, default=None, help="kernel text file for NCC")
    p.add_argument("--prefix", default=None, help="output name prefix (default: input stem)")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", parents=[common], help="score a result against a reference")
    p.add_argument("result", type=Path, help="restored PNG or directory")
    p.add_argument("reference", type=Path, help="reference PNG or directory")
    p.add_argument("--luminance", action="store_true", help="score on luminance only")
    p.add_argument("--report", type=Path, default=None, help="write the report here")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime abort: report, don't traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
