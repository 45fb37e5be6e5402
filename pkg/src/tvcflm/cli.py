"""Command-line frontend: fit, simulate, and predict.

Exit codes: 0 success, 1 numerical failure, 2 input error. All tabular
output is RFC-4180 CSV in UTF-8; fit artifacts are JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .basis import make_basis
from .design import build_design_row, eval_surface_grid, vec
from .pipeline import FitSettings, fit_vcflm
from .selection import write_selection_table
from .simulate import SimConfig, run_study, save_study
from .smoothing import LongitudinalRecord, smooth_curve

__all__ = ["main"]

SURFACE_GRID_POINTS = 101
EXPORT_FLUSH = 1e-12


class InputError(Exception):
    """Malformed input files or flag values (exit code 2)."""


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


def _parse_grid(text: str, name: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise InputError(f"invalid {name}: {text!r} (expected comma-separated floats)") from exc
    if not values:
        raise InputError(f"{name} must be nonempty")
    return values


def _read_table(path: Path, columns: tuple[str, ...]) -> list[dict]:
    """Read a CSV with the given float columns, reporting line numbers."""
    if not path.exists():
        raise InputError(f"{path}: file not found")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("subject_id", *columns) if c not in header]
        if missing:
            raise InputError(f"{path}:1: missing column(s) {', '.join(missing)}")
        for lineno, raw in enumerate(reader, start=2):
            row = {"subject_id": raw["subject_id"]}
            for col in columns:
                cell = raw[col]
                try:
                    value = float(cell)
                except (TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{lineno}: bad {col} value {cell!r}") from exc
                if math.isnan(value) or math.isinf(value):
                    raise InputError(f"{path}:{lineno}: non-finite {col} value")
                row[col] = value
            row["_line"] = lineno
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def _load_records(pred_path: Path, resp_path: Path, s_domain, t_domain) -> list[LongitudinalRecord]:
    pred_rows = _read_table(pred_path, ("s", "x"))
    resp_rows = _read_table(resp_path, ("t", "y"))

    responses: dict[str, dict] = {}
    for row in resp_rows:
        sid = row["subject_id"]
        if sid in responses:
            raise InputError(f"{resp_path}:{row['_line']}: duplicate subject {sid!r}")
        responses[sid] = row

    curves: dict[str, list[dict]] = {}
    for row in pred_rows:
        curves.setdefault(row["subject_id"], []).append(row)

    missing = sorted(set(curves) - set(responses))
    if missing:
        first = curves[missing[0]][0]
        raise InputError(
            f"{pred_path}:{first['_line']}: subject {missing[0]!r} has no response row"
        )
    extra = sorted(set(responses) - set(curves))
    if extra:
        row = responses[extra[0]]
        raise InputError(
            f"{resp_path}:{row['_line']}: subject {extra[0]!r} has no predictor rows"
        )

    records = []
    for sid, rows in curves.items():
        for row in rows:
            if s_domain is not None and not s_domain[0] <= row["s"] <= s_domain[1]:
                raise InputError(
                    f"{pred_path}:{row['_line']}: s={row['s']} outside domain {list(s_domain)}"
                )
        resp = responses[sid]
        if t_domain is not None and not t_domain[0] <= resp["t"] <= t_domain[1]:
            raise InputError(
                f"{resp_path}:{resp['_line']}: t={resp['t']} outside domain {list(t_domain)}"
            )
        if len(rows) < 2:
            raise InputError(
                f"{pred_path}:{rows[0]['_line']}: subject {sid!r} needs at least 2 observations"
            )
        records.append(
            LongitudinalRecord(
                subject_id=sid,
                s_obs=np.array([r["s"] for r in rows]),
                x_obs=np.array([r["x"] for r in rows]),
                t=resp["t"],
                y=resp["y"],
            )
        )
    return records


def _write_surface_csv(path: Path, surface, flushed_B: np.ndarray) -> None:
    s_lo, s_hi = surface.s_basis.domain
    t_lo, t_hi = surface.t_basis.domain
    s_grid = np.linspace(s_lo, s_hi, SURFACE_GRID_POINTS)
    t_grid = np.linspace(t_lo, t_hi, SURFACE_GRID_POINTS)
    export = type(surface)(B=flushed_B, s_basis=surface.s_basis, t_basis=surface.t_basis)
    values = eval_surface_grid(export, s_grid, t_grid)
    lines = ["s,t,beta"]
    for i, s in enumerate(s_grid):
        for j, t in enumerate(t_grid):
            lines.append(f"{_fmt(s)},{_fmt(t)},{_fmt(values[i, j])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_fit(args) -> int:
    pred_path, resp_path = Path(args.predictors), Path(args.responses)
    s_domain = tuple(args.s_domain) if args.s_domain else None
    t_domain = tuple(args.t_domain) if args.t_domain else None
    records = _load_records(pred_path, resp_path, s_domain, t_domain)

    settings = FitSettings(
        m1=args.m1,
        m2=args.m2,
        gamma=args.gamma,
        kappa_grid=_parse_grid(args.kappa_grid, "--kappa-grid"),
        tau_grid=_parse_grid(args.tau_grid, "--tau-grid"),
        s_domain=s_domain,
        t_domain=t_domain,
        smoothing_roughness=args.smoothing_roughness,
        use_log_n_bic=args.bic_logn,
    )
    result = fit_vcflm(records, settings)
    fit = result.fit

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    flushed = np.where(np.abs(fit.surface.B) < EXPORT_FLUSH, 0.0, fit.surface.B)
    payload = {
        "m1": result.s_basis.num_basis,
        "m2": result.t_basis.num_basis,
        "s_order": result.s_basis.order,
        "t_order": result.t_basis.order,
        "s_domain": list(result.s_basis.domain),
        "t_domain": list(result.t_basis.domain),
        "gamma": args.gamma,
        "kappa": fit.config.kappa,
        "tau": fit.config.tau,
        "lambda": fit.config.lam,
        "b": flushed.tolist(),
        "sigma2": fit.sigma2,
        "active": [int(i) for i in fit.active],
        "truncation_points": [int(k) for k in fit.truncation],
        "edf": fit.edf,
        "bic": fit.bic,
        "loglik": fit.loglik,
        "converged": bool(fit.converged),
        "w_offset": [float(v) for v in fit.w_offset],
        "y_offset": fit.y_offset,
        "smoothing_roughness": result.smoothing_roughness,
    }
    (outdir / "fit.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _write_surface_csv(outdir / "surface.csv", fit.surface, flushed)
    write_selection_table(result.selection_rows, outdir / "selection.csv")
    return 0


def _cmd_simulate(args) -> int:
    if args.r < 0:
        raise InputError(f"--r must be >= 0, got {args.r}")
    if args.n < 2:
        raise InputError(f"--n must be >= 2, got {args.n}")
    if args.reps < 1:
        raise InputError(f"--reps must be >= 1, got {args.reps}")
    config = SimConfig(
        n=args.n,
        noise_ratio=args.r,
        reps=args.reps,
        seed=args.seed,
        jobs=args.jobs,
    )
    result = run_study(config)
    save_study(result, Path(args.out))
    return 0


def _cmd_predict(args) -> int:
    fit_path = Path(args.fit)
    if not fit_path.exists():
        raise InputError(f"{fit_path}: file not found")
    try:
        payload = json.loads(fit_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{fit_path}: invalid JSON ({exc})") from exc

    s_basis = make_basis(tuple(payload["s_domain"]), payload["m1"], payload["s_order"])
    t_basis = make_basis(tuple(payload["t_domain"]), payload["m2"], payload["t_order"])
    B = np.asarray(payload["b"], dtype=float)
    b = vec(B)
    w_offset = np.asarray(payload["w_offset"], dtype=float)
    y_offset = float(payload["y_offset"])
    roughness = float(payload["smoothing_roughness"])

    pred_rows = _read_table(Path(args.predictors), ("s", "x"))
    target_rows = _read_table(Path(args.targets), ("t",))

    curves: dict[str, list[dict]] = {}
    for row in pred_rows:
        s_lo, s_hi = s_basis.domain
        if not s_lo <= row["s"] <= s_hi:
            raise InputError(
                f"{args.predictors}:{row['_line']}: s={row['s']} outside fit domain "
                f"[{s_lo}, {s_hi}]"
            )
        curves.setdefault(row["subject_id"], []).append(row)

    coef_cache: dict[str, np.ndarray] = {}
    lines = ["subject_id,t,y_hat"]
    for row in target_rows:
        sid = row["subject_id"]
        if sid not in curves:
            raise InputError(
                f"{args.targets}:{row['_line']}: subject {sid!r} has no predictor rows"
            )
        t_lo, t_hi = t_basis.domain
        if not t_lo <= row["t"] <= t_hi:
            raise InputError(
                f"{args.targets}:{row['_line']}: t={row['t']} outside fit domain "
                f"[{t_lo}, {t_hi}]"
            )
        if sid not in coef_cache:
            rows = curves[sid]
            record = LongitudinalRecord(
                subject_id=sid,
                s_obs=np.array([r["s"] for r in rows]),
                x_obs=np.array([r["x"] for r in rows]),
                t=row["t"],
            )
            coef_cache[sid] = smooth_curve(record, s_basis, roughness)
        z = build_design_row(coef_cache[sid] - w_offset, row["t"], s_basis.gram0, t_basis)
        lines.append(f"{sid},{_fmt(row['t'])},{_fmt(float(z @ b) + y_offset)}")

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvcflm",
        description="Truncated estimation for varying-coefficient functional linear models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the model to longitudinal CSV data")
    fit.add_argument("predictors", help="long-format CSV: subject_id,s,x")
    fit.add_argument("responses", help="CSV: subject_id,t,y")
    fit.add_argument("--m1", type=int, default=15, help="basis size for the s direction")
    fit.add_argument("--m2", type=int, default=10, help="basis size for the t direction")
    fit.add_argument("--gamma", type=float, default=0.5, help="bridge exponent in (0, 1)")
    fit.add_argument(
        "--kappa-grid",
        default=",".join(_fmt(v) for v in np.logspace(-8, 0, 9)),
        help="comma-separated roughness grid",
    )
    fit.add_argument(
        "--tau-grid",
        default=",".join(_fmt(v) for v in np.logspace(-6, 1, 15)),
        help="comma-separated sparsity grid",
    )
    fit.add_argument("--s-domain", type=float, nargs=2, metavar=("A", "B"))
    fit.add_argument("--t-domain", type=float, nargs=2, metavar=("A", "B"))
    fit.add_argument(
        "--smoothing-roughness",
        type=float,
        default=None,
        help="fixed smoothing weight (default: GCV-selected)",
    )
    fit.add_argument("--bic-logn", action="store_true", help="use log(n)*edf instead of 2*edf")
    fit.add_argument("--seed", type=int, default=0, help="unused; fitting is deterministic")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(func=_cmd_fit)

    sim = sub.add_parser("simulate", help="run the replication study")
    sim.add_argument("--n", type=int, default=200, help="sample size per replication")
    sim.add_argument("--r", type=float, default=0.1, help="noise-to-signal-range ratio")
    sim.add_argument("--reps", type=int, default=100, help="number of replications")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--jobs", type=int, default=1, help="parallel replication workers")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=_cmd_simulate)

    pred = sub.add_parser("predict", help="predict responses for new curves")
    pred.add_argument("fit", help="fit.json from a previous fit run")
    pred.add_argument("predictors", help="long-format CSV: subject_id,s,x")
    pred.add_argument("targets", help="CSV: subject_id,t (one prediction per row)")
    pred.add_argument("--out", required=True, help="output predictions.csv path")
    pred.set_defaults(func=_cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
