"""Command-line entry point: ``anra {simulate,estimate,compare,validate}``.

Exit codes: 0 success, 2 parameter/validation error, 3 data/format error,
4 estimation impossible.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .analysis import deviation_field, deviation_kde, prediction_error_report
from .attention import compute_rtc
from .errors import AnraError, ParameterError
from .estimator import (
    ANRA,
    BASELINES,
    EstimatorConfig,
    baseline_sequence,
    estimate_sequence,
    estimate_windowed,
)
from .field import FrameStack
from .filters import apply_temporal
from .simulator import ScenarioConfig, load_scenario, predict, simulate

log = logging.getLogger("anra")


def _window(text: str):
    try:
        hw, stride = text.split(":")
        h, w = hw.lower().split("x")
        return int(h), int(w), int(stride)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like HxW:S, got {text!r}") from None


def _add_estimator_flags(p):
    d = EstimatorConfig()
    p.add_argument("--filter-temporal-len", type=int, default=d.temporal_length, help="backward kernel length (4-8)")
    p.add_argument("--filter-spatial-len", type=int, default=d.spatial_length, help="second-derivative length (5, 7, 9)")
    p.add_argument("--second-form", choices=("direct", "product"), default=d.second_form)
    p.add_argument("--quantile", type=float, default=d.quantile, help="RTC confidence quantile in (0,1)")
    p.add_argument("--no-threshold", action="store_true", help="skip the confidence cut")
    p.add_argument("--eps-den", type=float, default=None, help="absolute denominator guard (overrides --eps-factor)")
    p.add_argument("--eps-factor", type=float, default=d.eps_factor, help="guard as a multiple of median |laplacian|")
    p.add_argument("--aggregation", choices=("mass", "mean"), default=d.aggregation)


def _estimator_config(args) -> EstimatorConfig:
    return EstimatorConfig(
        temporal_length=args.filter_temporal_len,
        spatial_length=args.filter_spatial_len,
        second_form=args.second_form,
        quantile=None if args.no_threshold else args.quantile,
        eps_factor=args.eps_factor,
        eps_den=args.eps_den,
        aggregation=args.aggregation,
    )


def _scenario(arg: str, seed) -> ScenarioConfig:
    cfg = ScenarioConfig.reference() if arg == "reference" else load_scenario(arg)
    if seed is not None:
        cfg = replace(cfg, rng_seed=int(seed))
    return cfg


def _out_dir(args) -> Path | None:
    if args.out_dir is None:
        return None
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _scenario(args.scenario, args.seed)
    stack = simulate(cfg)
    io.write_stack(stack, args.out)
    io.write_kv(str(args.out) + ".cfg", cfg.describe())
    print(f"wrote {len(stack)} frames {cfg.grid.height}x{cfg.grid.width} to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    stack = io.read_stack(args.stack)
    cfg = _estimator_config(args)
    report = estimate_sequence(stack, cfg)
    sys.stdout.write(report.to_text())
    out = _out_dir(args)
    if out is not None:
        (out / "report.txt").write_text(report.to_text())
        (out / "per_frame.csv").write_text(report.to_csv())
    if args.windowed:
        if out is None:
            raise ParameterError("--windowed needs --out-dir")
        dfield = estimate_windowed(stack, args.window, cfg)
        io.write_field_csv(out / "diffusivity.csv", dfield.field)
        io.write_pgm(out / "diffusivity.pgm", dfield.values, dfield.mask)
        vals = dfield.values[dfield.mask]
        print(f"windowed.window={args.window[0]}x{args.window[1]}:{args.window[2]}")
        print(f"windowed.valid_pixels={vals.size}")
        if vals.size:
            print(f"windowed.median={float(np.median(vals)):.10g}")
    if args.rtc_dump:
        if out is None:
            raise ParameterError("--rtc-dump needs --out-dir")
        kt, _ = cfg.kernels()
        for k in range(kt.history, len(stack)):
            rtc = compute_rtc(apply_temporal(stack, kt, k))
            io.write_pgm(out / f"rtc_{k:04d}.pgm", rtc.weights.values, rtc.weights.mask)
    return 0


def _compare_one(stack: FrameStack, cfg: EstimatorConfig):
    reports = {ANRA: estimate_sequence(stack, cfg)}
    for v in BASELINES:
        reports[v] = baseline_sequence(stack, v)
    return reports


def cmd_compare(args) -> int:
    if (args.stack is None) == (args.scenario is None):
        raise ParameterError("give exactly one of STACK or --scenario")
    cfg = _estimator_config(args)
    out = _out_dir(args)
    methods = (ANRA,) + BASELINES
    summary = {}
    if args.seed_sweep:
        if args.scenario is None:
            raise ParameterError("--seed-sweep needs --scenario")
        base = _scenario(args.scenario, args.seed)
        a_true = args.a_true if args.a_true is not None else float(base.a_true)
        rows = ["seed," + ",".join(methods)]
        samples = {m: [] for m in methods}
        for i in range(args.seed_sweep):
            seed = base.rng_seed + i
            reps = _compare_one(simulate(replace(base, rng_seed=seed)), cfg)
            for m in methods:
                samples[m].append(reps[m].a_hat)
            rows.append(f"{seed}," + ",".join(f"{reps[m].a_hat:.10g}" for m in methods))
        if out is not None:
            (out / "per_seed.csv").write_text("\n".join(rows) + "\n")
    else:
        if args.stack is not None:
            stack = io.read_stack(args.stack)
        else:
            stack = simulate(_scenario(args.scenario, args.seed))
        if args.a_true is None:
            raise ParameterError("--a-true is required")
        a_true = args.a_true
        reps = _compare_one(stack, cfg)
        frames = [f.index for f in reps[ANRA].per_frame]
        by_frame = {m: {f.index: f.a_hat for f in reps[m].per_frame} for m in methods}
        samples = {m: [by_frame[m][k] for k in frames if k in by_frame[m]] for m in methods}
        rows = ["frame," + ",".join(methods) + "," + ",".join(f"dev_{m}" for m in methods)]
        for k in frames:
            vals = [by_frame[m].get(k, np.nan) for m in methods]
            rows.append(f"{k}," + ",".join(f"{v:.10g}" for v in vals) + "," + ",".join(f"{v - a_true:.10g}" for v in vals))
        if out is not None:
            (out / "per_frame.csv").write_text("\n".join(rows) + "\n")
        for m in methods:
            summary[f"{m}.a_hat"] = f"{reps[m].a_hat:.10g}"
    for m in methods:
        s = np.asarray(samples[m])
        summary[f"{m}.samples"] = s.size
        summary[f"{m}.mean"] = f"{np.mean(s):.10g}"
        if s.size >= 2:
            kde = deviation_kde(s, a_true)
            summary[f"{m}.kde_bandwidth"] = f"{kde.bandwidth:.6g}"
            summary[f"{m}.mass_within_0.05"] = f"{kde.mass_between(-0.05, 0.05):.6g}"
            if out is not None:
                (out / f"kde_{_slug(m)}.csv").write_text(kde.to_csv())
    summary["a_true"] = a_true
    text = "".join(f"{k}={v}\n" for k, v in summary.items())
    sys.stdout.write(text)
    if out is not None:
        (out / "summary.txt").write_text(text)
    return 0


def _slug(method: str) -> str:
    return method.lower().replace("+", "_")


def _a_hat(arg: str, grid):
    try:
        return float(arg)
    except ValueError:
        return io.read_field_csv(arg, grid)


def cmd_validate(args) -> int:
    stack = io.read_stack(args.stack)
    dt = stack.grid.dt
    if not args.horizon > 0:
        raise ParameterError("horizon must be positive")
    k = int(round(args.horizon / dt))
    if k > len(stack) - 1 or args.horizon > stack.duration + 1e-9 * dt:
        raise ParameterError(f"horizon {args.horizon:g}s exceeds the stack duration {stack.duration:g}s")
    a_hat = _a_hat(args.a_hat, stack.grid)
    err = prediction_error_report(stack, a_hat, frames=k + 1)
    pred = predict(stack[0], a_hat, k * dt, stack.grid)
    dev = deviation_field(stack[k], pred[k])
    kv = {
        "horizon_s": f"{k * dt:.10g}",
        "horizon_frame": k,
        "e_raw": f"{err.raw:.10g}",
        "e_normalized": f"{err.normalized:.10g}",
        "terms": err.pixels,
        "deviation_rms": f"{np.sqrt(np.mean(dev.values[dev.mask] ** 2)):.10g}",
        "deviation_max_abs": f"{np.max(np.abs(dev.values[dev.mask])):.10g}",
    }
    text = "".join(f"{key}={v}\n" for key, v in kv.items())
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        (out / "validate.txt").write_text(text)
        io.write_pgm(out / "observed_0.pgm", stack[0].values, stack[0].mask)
        io.write_pgm(out / "observed_t.pgm", stack[k].values, stack[k].mask)
        io.write_pgm(out / "predicted_t.pgm", pred[k].values, pred[k].mask)
        io.write_pgm(out / "deviation_t.pgm", dev.values, dev.mask)
        io.write_field_csv(out / "deviation_t.csv", dev)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anra", description="Attention-based noise-robust diffusivity estimation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario file into a frame-stack file")
    p.add_argument("scenario", help="key=value scenario file, or 'reference'")
    p.add_argument("out", help="output .anra file")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("estimate", help="global ANRA estimate of a frame stack")
    p.add_argument("stack")
    _add_estimator_flags(p)
    p.add_argument("--windowed", action="store_true", help="also emit a diffusivity field")
    p.add_argument("--window", type=_window, default=(32, 32, 8), help="HxW:S (default 32x32:8)")
    p.add_argument("--rtc-dump", action="store_true", help="write per-frame RTC heatmaps")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("compare", help="ANRA vs. non-robust baselines, with deviation KDEs")
    p.add_argument("stack", nargs="?", default=None)
    p.add_argument("--scenario", default=None, help="simulate this scenario instead of reading a stack")
    p.add_argument("--a-true", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seed-sweep", type=int, default=0, help="Monte-Carlo over this many noise seeds")
    _add_estimator_flags(p)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("validate", help="forward-predict from frame 0 and report the deviation")
    p.add_argument("stack")
    p.add_argument("--a-hat", required=True, help="scalar diffusivity or a diffusivity-field CSV")
    p.add_argument("--horizon", type=float, required=True, help="prediction horizon in seconds")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.fn(args)
    except AnraError as exc:
        counts = getattr(exc, "counts", None)
        print(f"error: {exc}", file=sys.stderr)
        if counts:
            for key, v in counts.items():
                print(f"  {key}={v}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
