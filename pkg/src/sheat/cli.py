"""Batch front end: ``sheat run | validate | oracle``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .estimator import RateReport, error_ladders, get_functional, moment_probe, reference_dt
from .nemytskii import validate_model
from .oracles import oracle_table

log = logging.getLogger("sheat")

EXIT_OK = 0
EXIT_FAILED = 1  # statistical assertion failed or nothing to fit
EXIT_CONFIG = 2


def emit_summary(reports: Sequence[RateReport], stream: TextIO | None = None) -> int:
    """Print an aligned table per report, then the weak/strong slope ratio.

    Returns nonzero when no report has any resolved point.
    """
    out = stream or sys.stdout
    reports = list(reports)
    if not reports or all(len(r.dts) == 0 or not r.resolved.any() for r in reports):
        print("no resolved points", file=out)
        return EXIT_FAILED
    slopes = {}
    for r in reports:
        label = r.kind
        if r.meta.get("phi"):
            label += f" ({r.meta['phi']})"
        print(f"{label} error, {r.n_samples} samples, reference dt = {r.ref_dt:.6g}", file=out)
        print(f"  {'dt':>12}  {'error':>12}  {'stderr':>12}", file=out)
        for dt, e, s, ok in zip(r.dts, r.errors, r.stderrs, r.resolved):
            mark = " " if ok else "*"
            print(f"  {dt:12.6g}  {e:12.5e}  {s:12.5e} {mark}", file=out)
        if r.fitted:
            lo, hi = r.slope_ci
            print(f"  slope {r.slope:.4f}  95% CI [{lo:.4f}, {hi:.4f}]  r^2 {r.r_squared:.4f}", file=out)
            slopes[r.kind] = r.slope
        else:
            print(f"  slope not fitted: {r.meta.get('fit_note', 'too few resolved points')}", file=out)
        print(f"  excluded (unresolved, marked *): {r.excluded}", file=out)
    if "weak" in slopes and "strong" in slopes and slopes["strong"] != 0:
        print(f"weak/strong slope ratio: {slopes['weak'] / slopes['strong']:.2f}", file=out)
    return EXIT_OK


def _manifest(cfg: ExperimentConfig, ref: float) -> dict:
    return {
        "library": {"name": "sheat", "version": __version__, "numpy": np.__version__},
        "experiment_seed": cfg.experiment_seed,
        "reference_dt": ref,
        "config": cfg.to_dict(),
        "model": cfg.model().params | {"name": cfg.model().name},
    }


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def run_experiment(cfg: ExperimentConfig, expect_weak: float | None = None,
                   expect_strong: float | None = None, stream: TextIO | None = None) -> int:
    """Run both ladders and the moment probe, write artifacts, print the summary."""
    out = stream or sys.stdout
    cfg.validate()
    model = cfg.model()
    x0 = cfg.initial_field()
    phi = get_functional(cfg.phi)
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write(outdir / "manifest.json",
           json.dumps(_manifest(cfg, reference_dt(cfg.dts, cfg.ref_refine)), indent=2, sort_keys=True) + "\n")

    weak, strong = error_ladders(model, x0, cfg.T, phi, cfg.dts, cfg.M_weak, cfg.M_strong,
                                 cfg.ref_refine, cfg.experiment_seed, cfg.P, cfg.workers, cfg.chunk)
    for r in (weak, strong):
        _write(outdir / f"{r.kind}_rate.json", r.to_json() + "\n")
        _write(outdir / f"{r.kind}_rate.csv", r.to_csv())
    prof = moment_probe(model, x0, cfg.T, cfg.resolved_moment_dt, cfg.moment_paths, cfg.moment_order,
                        cfg.experiment_seed, cfg.P, cfg.workers, cfg.chunk)
    _write(outdir / "moments.csv", prof.to_csv())

    status = emit_summary([weak, strong], out)
    for r, target in ((weak, expect_weak), (strong, expect_strong)):
        if target is None:
            continue
        if not r.fitted:
            print(f"FAIL: {r.kind} slope not fitted, cannot check {target}", file=out)
            status = EXIT_FAILED
        elif not r.slope_ci[0] <= target <= r.slope_ci[1]:
            print(f"FAIL: {r.kind} slope CI [{r.slope_ci[0]:.4f}, {r.slope_ci[1]:.4f}] excludes {target}",
                  file=out)
            status = EXIT_FAILED
        else:
            print(f"ok: {r.kind} slope CI contains {target}", file=out)
    return status


def _cmd_run(args, cfg: ExperimentConfig) -> int:
    return run_experiment(cfg, args.expect_weak_slope, args.expect_strong_slope)


def _cmd_validate(args, cfg: ExperimentConfig) -> int:
    ref = reference_dt(cfg.dts, cfg.ref_refine)
    print(f"config ok: m={cfg.m} P={cfg.P} T={cfg.T:g} rungs={len(cfg.dts)} "
          f"(N = {', '.join(str(round(cfg.T / dt)) for dt in cfg.dts)}) reference dt={ref:.6g}")
    model = cfg.model()
    report = validate_model(model, R=cfg.validate_radius, n_samples=cfg.validate_samples)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    if not report.curvature_condition:
        print(f"note: sigma of model {model.name} does not satisfy the vanishing-curvature condition; "
              "rates are still measured but the weak-rate estimate is not covered by it")
    if report.passed:
        print(f"model {model.name}: Lipschitz bounds hold on [-{cfg.validate_radius:g}, {cfg.validate_radius:g}]")
        return EXIT_OK
    for v in report.violations:
        print(f"violation: {v}")
    return EXIT_FAILED


def _cmd_oracle(args, cfg: ExperimentConfig) -> int:
    model = cfg.model()
    level = model.additive_level
    if not model.drift_is_zero or level is None:
        print(f"oracle tables need f = 0 and additive noise; model is {model.name}", file=sys.stderr)
        return EXIT_CONFIG
    rows = oracle_table(cfg.basis(), cfg.initial_field().coeffs, cfg.T, cfg.dts,
                        reference_dt(cfg.dts, cfg.ref_refine), level**2)
    cols = list(rows[0])
    print("  ".join(f"{c:>16}" for c in cols))
    for row in rows:
        print("  ".join(f"{row[c]:16d}" if isinstance(row[c], int) else f"{row[c]:16.9e}" for c in cols))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([row[c] if isinstance(row[c], int) else f"{row[c]:.17g}" for c in cols])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sheat", description="Convergence-rate experiments for the "
                                "implicit Euler scheme of a semilinear stochastic heat equation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", help="config file (default: the shipped default.ini)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry; repeatable")
        sp.add_argument("--seed", type=int, help="shorthand for --set run.seed=...")
        sp.add_argument("--workers", type=int, help="shorthand for --set run.workers=...")
        sp.add_argument("--output", help="shorthand for --set run.output=...")

    sp = sub.add_parser("run", help="run weak and strong ladders and the moment probe")
    common(sp)
    sp.add_argument("--expect-weak-slope", type=float, help="fail unless the weak slope CI contains this")
    sp.add_argument("--expect-strong-slope", type=float, help="fail unless the strong slope CI contains this")
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("validate", help="check the config and the model assumptions")
    common(sp)
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("oracle", help="closed-form tables for the linear additive case")
    common(sp)
    sp.add_argument("--csv", help="also write the table to this CSV file")
    sp.set_defaults(func=_cmd_oracle)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = list(args.overrides)
    for key, flag in (("run.seed", args.seed), ("run.workers", args.workers), ("run.output", args.output)):
        if flag is not None:
            overrides.append(f"{key}={flag}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args, cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
