"""Command-line front end: CSV in, estimate and table files out.

Two ingestion commands run the estimation pipeline on user data
(estimate-iv, estimate-rdd) and a third reruns the Monte Carlo harness
(simulate). Every command writes its artifacts into --out together with
a run.json recording the fully resolved configuration; feeding that
run.json back through --config reproduces the artifacts byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 estimation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .core import EstimationError, ObservationSet, StepCdf, evaluate, substream, tail_view
from .inference import SubsampleConfig, estimate_qte_batch
from .pipeline import EstimatorSettings, FittedPipeline, fit_pipeline
from .simulate import McConfig, McReport, format_report, run_mc


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Input file missing, malformed, or violating the column schema."""


@dataclasses.dataclass
class RunConfig:
    """Fully resolved invocation: defaults, then config file, then flags.

    The same flat field set serves all three commands; n and reps only
    matter for simulate, input and tail_side only for estimation.
    """

    command: str
    input: str | None = None
    design: str | None = None
    tail_side: str = "lower"
    q: tuple[float, ...] = ()
    omega: float = 1.0
    ymin_level: float = 0.975
    trim: float = 0.01
    b: int | None = None
    B: int = 500
    ci_level: float = 0.95
    seed: int = 0
    out: str = "."
    n: tuple[int, ...] = ()
    reps: int = 0


_CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _fmt(x: float) -> str:
    """17 significant digits: parses back to the identical float."""
    return format(float(x), ".17g")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xqte",
        description="Extreme quantile treatment effects: estimation and simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", default=None, metavar="FILE",
                        help="JSON file with run fields; explicit flags override it")
        sp.add_argument("--q", type=float, nargs="+", default=None,
                        help="quantile levels to estimate")
        sp.add_argument("--omega", type=float, default=None,
                        help="tail weight exponent (default 1)")
        sp.add_argument("--ymin-level", dest="ymin_level", type=float, default=None,
                        help="CDF level fixing the tail threshold (default 0.975)")
        sp.add_argument("--trim", type=float, default=None,
                        help="propensity clipping margin, instrument designs only")
        sp.add_argument("--b", type=int, default=None,
                        help="subsample size (default ceil(n^0.7))")
        sp.add_argument("--B", dest="B", type=int, default=None,
                        help="number of subsample draws (default 500)")
        sp.add_argument("--ci-level", dest="ci_level", type=float, default=None,
                        help="two-sided interval level (default 0.95)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed for the subsample index streams (default 0)")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default current directory)")

    for name, blurb in (
        ("estimate-iv", "binary-instrument design, CSV columns y,d,z,x1,...,xk"),
        ("estimate-rdd", "discontinuity design, CSV columns y,d,r"),
    ):
        sp = sub.add_parser(name, help=blurb)
        shared(sp)
        sp.add_argument("--input", default=None, metavar="FILE", help="input CSV")
        sp.add_argument("--tail-side", dest="tail_side", default=None,
                        choices=("lower", "upper"),
                        help="which tail the q levels target (default lower)")

    sp = sub.add_parser("simulate", help="rerun the Monte Carlo harness")
    shared(sp)
    sp.add_argument("--design", default=None, choices=("iv", "rdd"),
                    help="simulated design")
    sp.add_argument("--n", type=int, nargs="+", default=None,
                    help="sample sizes")
    sp.add_argument("--reps", type=int, default=None,
                    help="replications per sample size")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional JSON config file, and explicit flags."""
    values: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        raw.pop("_meta", None)
        written_by = raw.pop("command", None)
        if written_by is not None and written_by != args.command:
            raise ConfigError(
                f"config file was written by {written_by!r} but this run is {args.command!r}"
            )
        unknown = sorted(set(raw) - set(_CONFIG_FIELDS))
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        values.update(raw)
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    values["command"] = args.command
    if args.command == "estimate-iv":
        values["design"] = "iv"
    elif args.command == "estimate-rdd":
        values["design"] = "rdd"
    if values.get("q") is not None:
        values["q"] = tuple(float(v) for v in values["q"])
    if values.get("n") is not None:
        values["n"] = tuple(int(v) for v in values["n"])
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))


def validate_config(cfg: RunConfig) -> None:
    """All checks that need no data; raises ConfigError before any work."""
    if cfg.command == "simulate":
        if cfg.design not in ("iv", "rdd"):
            raise ConfigError(f"unknown design {cfg.design!r}")
        if not cfg.n:
            raise ConfigError("simulate needs at least one sample size (--n)")
        if cfg.reps < 1:
            raise ConfigError("simulate needs a positive replication count (--reps)")
        if not cfg.q:
            raise ConfigError("the q-list must not be empty")
    else:
        if not cfg.input:
            raise ConfigError("an input CSV is required (--input)")
        if cfg.tail_side not in ("lower", "upper"):
            raise ConfigError(f"tail_side must be 'lower' or 'upper', got {cfg.tail_side!r}")
        if not cfg.q:
            raise ConfigError("the q-list must not be empty")
        for q in cfg.q:
            if not 0.0 < q < 1.0:
                raise ConfigError(f"quantile level {q} outside (0, 1)")
    try:
        EstimatorSettings(omega=cfg.omega, ymin_level=cfg.ymin_level, trim=cfg.trim)
    except ValueError as exc:
        raise ConfigError(str(exc))
    if cfg.B < 100:
        raise ConfigError("need at least 100 subsample draws")
    if not 0.0 < cfg.ci_level < 1.0:
        raise ConfigError("ci_level must lie in (0, 1)")
    if cfg.b is not None and cfg.b < 2:
        raise ConfigError("subsample size b must be at least 2")
    if cfg.command == "simulate":
        try:
            McConfig(
                design=cfg.design,
                n_list=tuple(cfg.n),
                q_list=tuple(cfg.q),
                reps=cfg.reps,
                seed=cfg.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc))


def read_estimation_csv(path: str, design: str) -> ObservationSet:
    """Parse an input CSV against the design's column schema.

    Schema violations name the offending file line (the header is
    line 1). Fields must be plain '.'-decimal numbers; d and z must be
    0 or 1; everything must be finite.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read input file: {exc}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("input file is empty")
        if design == "iv":
            k = len(header) - 3
            expected = ["y", "d", "z"] + [f"x{i}" for i in range(1, k + 1)]
            if k < 1 or header != expected:
                raise DataError(
                    "instrument input needs header y,d,z,x1,...,xk with k >= 1; "
                    f"got {','.join(header)}"
                )
        else:
            if header != ["y", "d", "r"]:
                raise DataError(f"discontinuity input needs header y,d,r; got {','.join(header)}")
        ncol = len(header)
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise DataError(f"line {lineno}: expected {ncol} fields, found {len(row)}")
            vals = []
            for name, text in zip(header, row):
                try:
                    v = float(text)
                except ValueError:
                    raise DataError(
                        f"line {lineno}: column {name} has non-numeric value {text!r}"
                    )
                if not math.isfinite(v):
                    raise DataError(f"line {lineno}: column {name} must be finite, got {text!r}")
                if name in ("d", "z") and v not in (0.0, 1.0):
                    raise DataError(f"line {lineno}: column {name} must be 0 or 1, got {text!r}")
                vals.append(v)
            rows.append(vals)
        if not rows:
            raise DataError("input file has a header but no data rows")
    arr = np.asarray(rows, dtype=float)
    try:
        if design == "iv":
            return ObservationSet(design="iv", y=arr[:, 0], d=arr[:, 1],
                                  z=arr[:, 2], x=arr[:, 3:])
        return ObservationSet(design="rdd", y=arr[:, 0], d=arr[:, 1], r=arr[:, 2])
    except ValueError as exc:
        raise DataError(str(exc))


def write_cdf_csv(path: Path, pipe: FittedPipeline) -> None:
    """Estimated counterfactual CDFs on their shared outcome grid.

    Values are the raw ratio estimates, exactly as the pipeline holds
    them before rearrangement; knots are on the analysis scale (negated
    when the run targeted the lower tail)."""
    c1, c0 = pipe.cdf1, pipe.cdf0
    if not np.array_equal(c1.knots, c0.knots):
        raise EstimationError("arms returned different knot grids")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "beta0", "beta1"])
        for y, b0, b1 in zip(c1.knots, c0.values, c1.values):
            w.writerow([_fmt(y), _fmt(b0), _fmt(b1)])


def read_cdf_csv(path: Path | str, flipped: bool = False) -> tuple[StepCdf, StepCdf]:
    """Re-ingest a cdf.csv; returns (beta1, beta0) bit-identical to the
    pair that wrote it."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["y", "beta0", "beta1"]:
            raise DataError(f"not a cdf.csv: header {','.join(header)}")
        cols = [[float(c) for c in row] for row in reader if row]
    arr = np.asarray(cols, dtype=float)
    knots = arr[:, 0]
    return StepCdf(knots, arr[:, 2], flipped), StepCdf(knots, arr[:, 1], flipped)


def write_paretofit_csv(path: Path, pipe: FittedPipeline) -> None:
    """Fitted tail survival next to the empirical one, per arm.

    Rows live on each fit's working scale (analysis scale plus the
    arm's positivity shift, recorded in run.json), starting at the
    threshold where the fitted survival equals s_min by construction.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "y", "survival_emp", "survival_fit"])
        for arm, cdf, fit in ((1, pipe.cdf1, pipe.fit1), (0, pipe.cdf0, pipe.fit0)):
            view = tail_view(cdf)
            if fit.shift != 0.0:
                view = view.shifted(fit.shift)
            grid = np.concatenate(([fit.y_min], view.knots[view.knots > fit.y_min]))
            emp = 1.0 - np.asarray(evaluate(view, grid), dtype=float)
            with np.errstate(over="ignore"):
                fitted = fit.s_min * (grid / fit.y_min) ** (-fit.alpha_hat)
            for y, se, sf in zip(grid, emp, fitted):
                w.writerow([str(arm), _fmt(y), _fmt(se), _fmt(sf)])


def write_qte_csv(path: Path, results) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "estimate", "ci_lo", "ci_hi"])
        for res in results:
            w.writerow([_fmt(res.q), _fmt(res.estimate),
                        _fmt(res.ci.lo), _fmt(res.ci.hi)])


def write_table_csv(path: Path, report: McReport) -> None:
    """Monte Carlo summary in the simulation-table layout: one block of
    rows per sample size, one column per quantile level."""
    qs = list(report.config.q_list)
    stats = ["bias", "sd", "rmse", "cov95"]
    if report.truth_alt is not None:
        stats.append("cov95_alt")
    cells = {(c.n, c.q): c for c in report.cells}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "stat"] + [f"q={q:g}" for q in qs])
        for n in report.config.n_list:
            for stat in stats:
                row = [str(n), stat]
                for q in qs:
                    c = cells[(n, q)]
                    v = {"bias": c.bias, "sd": c.sd, "rmse": c.rmse,
                         "cov95": c.coverage, "cov95_alt": c.coverage_alt}[stat]
                    row.append("" if v is None else _fmt(v))
                w.writerow(row)


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_run_json(path: Path, cfg: RunConfig, meta: dict) -> None:
    """Resolved configuration plus run facts. The file doubles as a
    --config payload: the loader ignores _meta and checks command."""
    payload = {"command": cfg.command}
    for name in _CONFIG_FIELDS:
        if name == "command":
            continue
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = list(value)
        payload[name] = value
    payload["_meta"] = _jsonable(meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _arm_summary(fit) -> dict:
    return {
        "alpha_hat": fit.alpha_hat,
        "y_min": fit.y_min,
        "s_min": fit.s_min,
        "c_hat": fit.c_hat,
        "shift": fit.shift,
    }


def cmd_estimate(cfg: RunConfig) -> None:
    data = read_estimation_csv(cfg.input, cfg.design)
    settings = EstimatorSettings(omega=cfg.omega, ymin_level=cfg.ymin_level, trim=cfg.trim)
    sub = SubsampleConfig(b=cfg.b, draws=cfg.B, ci_level=cfg.ci_level)
    try:
        sub.validate(data.n)
    except ValueError as exc:
        raise ConfigError(str(exc))
    pipe = fit_pipeline(data, settings, tail_side=cfg.tail_side)
    results = estimate_qte_batch(pipe, list(cfg.q), sub,
                                 lambda t: substream(cfg.seed, t))
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_cdf_csv(outdir / "cdf.csv", pipe)
    write_paretofit_csv(outdir / "paretofit.csv", pipe)
    write_qte_csv(outdir / "qte.csv", results)
    meta = {
        "n_rows": data.n,
        "resolved_b": sub.resolve_b(data.n),
        "rate_exponent": pipe.rate.exponent,
        "flipped": pipe.flipped,
        "discarded_draws": results[0].ci.n_failed,
        "arm1": _arm_summary(pipe.fit1),
        "arm0": _arm_summary(pipe.fit0),
        "design_meta": {k: v for k, v in pipe.meta.items()
                        if k not in ("design", "tail_side")},
        "outputs": ["cdf.csv", "paretofit.csv", "qte.csv"],
    }
    write_run_json(outdir / "run.json", cfg, meta)


def cmd_simulate(cfg: RunConfig) -> None:
    mc = McConfig(
        design=cfg.design,
        n_list=tuple(cfg.n),
        q_list=tuple(cfg.q),
        reps=cfg.reps,
        seed=cfg.seed,
        settings=EstimatorSettings(omega=cfg.omega, ymin_level=cfg.ymin_level, trim=cfg.trim),
        subsample=SubsampleConfig(b=cfg.b, draws=cfg.B, ci_level=cfg.ci_level),
    )
    report = run_mc(mc)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_table_csv(outdir / "table.csv", report)
    (outdir / "report.txt").write_text(format_report(report) + "\n", encoding="utf-8")
    meta = {
        "truth": report.truth,
        "truth_alt": report.truth_alt,
        "cells": [
            {"n": c.n, "q": c.q, "n_used": c.n_used, "n_failed": c.n_failed}
            for c in report.cells
        ],
        "outputs": ["table.csv", "report.txt"],
    }
    write_run_json(outdir / "run.json", cfg, meta)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = resolve_config(args)
        validate_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if cfg.command == "simulate":
            cmd_simulate(cfg)
        else:
            cmd_estimate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"estimation error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 4
    return 0


def entry() -> None:
    raise SystemExit(main())
