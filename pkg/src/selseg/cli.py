"""Command-line front end: detect | fit | forecast | simulate | mc.

Reads delimited text with a header row (comma, tab or semicolon, auto
detected), runs the requested pipeline stage, and writes both a
human-readable table dump and one JSON document per run containing the
config echo, package version, seed, and every emitted number at full
precision.  Exit codes: 0 success, 2 parse failure, 3 rank/singularity
failure, 4 convergence failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bayes import posterior_params
from .detect import ScanConfig, detect_breaks, dp_mdl_segmentation
from .dream import DreamConfig, sample_break_posterior
from .exceptions import (
    ConvergenceError,
    InsufficientObservationsError,
    InvalidSegmentationError,
    ParseError,
    SelsegError,
    SingularDesignError,
    WindowTooShortError,
)
from .model_select import GridConfig, exhaustive_select, lasso_baseline, run_grid, top_candidate
from .regress_core import Dataset, Segmentation
from .selo import DaemConfig
from .simbench import (
    PipelineConfig,
    ForecastConfig,
    FORECAST_METHODS,
    dgp_j_spec,
    dgp_spec,
    empirical_dgp_spec,
    forecast_eval,
    run_monte_carlo,
    simulate,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_RANK = 3
EXIT_CONVERGENCE = 4

DELIMITERS = (",", "\t", ";")


@dataclass
class RunConfig:
    """Flags shared by the data-driven subcommands."""

    input: Optional[str] = None
    response: Optional[str] = None
    covariates: Optional[list] = None   # default: every other column
    lags: int = 0                       # AR order q; lagged responses appended
    constant: bool = True
    breaks: Optional[list] = None       # skip detection when given
    exhaustive: bool = False
    lasso: bool = False
    mcmc: bool = False
    mcmc_iter: int = 4000
    n_lambda: int = 50
    kappas: list = field(default_factory=lambda: [0.1, 1.0])
    lambda_max: Optional[float] = None
    n_init: Optional[int] = None
    max_breaks: int = 10
    methods: list = field(default_factory=lambda: list(FORECAST_METHODS))
    t_start: Optional[int] = None
    dgp: str = "A"
    garch: bool = False
    T: int = 1024
    n_cps: int = 0
    reps: int = 10
    seed: int = 0
    threads: int = 1
    output: str = "."


def read_table(path: str):
    """Parse a delimited text file with a header row; missing or non-numeric
    cells are rejected with their line number."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n\r") for ln in fh]
    except OSError as exc:
        raise ParseError(str(exc))
    lines = [ln for ln in lines if ln.strip() != ""]
    if len(lines) < 2:
        raise ParseError("need a header row and at least one data row")
    header = lines[0]
    delim = max(DELIMITERS, key=lambda d: header.count(d))
    if header.count(delim) == 0:
        delim = None  # single column
    names = [c.strip() for c in (header.split(delim) if delim else [header])]
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in (ln.split(delim) if delim else [ln])]
        if len(cells) != len(names):
            raise ParseError(f"expected {len(names)} fields, found {len(cells)}", line=i)
        row = []
        for name, cell in zip(names, cells):
            if cell == "" or cell.lower() in ("na", "nan"):
                raise ParseError(f"missing value in column {name!r}", line=i)
            try:
                row.append(float(cell))
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r} in column {name!r}", line=i)
        rows.append(row)
    return names, np.asarray(rows)


def build_dataset(cfg: RunConfig):
    """Assemble (y, X) from the input table: named response, named covariates
    (default all others), optional constant, and q lagged responses; the
    first q rows are dropped."""
    names, table = read_table(cfg.input)
    if cfg.response is None:
        raise ParseError("a response column name is required (--response)")
    if cfg.response not in names:
        raise ParseError(f"response column {cfg.response!r} not in header {names}")
    cov_names = cfg.covariates if cfg.covariates else [n for n in names if n != cfg.response]
    for c in cov_names:
        if c not in names:
            raise ParseError(f"covariate column {c!r} not in header {names}")
    y = table[:, names.index(cfg.response)]
    X_cols, out_names = [], []
    if cfg.constant:
        X_cols.append(np.ones_like(y))
        out_names.append("const")
    for c in cov_names:
        X_cols.append(table[:, names.index(c)])
        out_names.append(c)
    q = int(cfg.lags)
    if q < 0:
        raise ParseError("lag order must be >= 0")
    if q > 0:
        for lag in range(1, q + 1):
            X_cols.append(np.concatenate([np.full(lag, np.nan), y[:-lag]]))
            out_names.append(f"{cfg.response}_lag{lag}")
        y = y[q:]
        X_cols = [col[q:] for col in X_cols]
    return Dataset(y=y, X=np.column_stack(X_cols), names=tuple(out_names))


def _json_dump(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _config_echo(cfg: RunConfig) -> dict:
    return {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None}


def _candidate_rows(cands) -> list:
    rows = []
    for c in cands:
        rows.append({
            "kappa": None if np.isnan(c.kappa) else c.kappa,
            "lambda": None if np.isnan(c.lam) else c.lam,
            "active": sorted(list(map(list, c.active))),
            "k_active": c.k_active,
            "m_active": c.m_active,
            "g": c.g,
            "log_ml": c.log_ml,
            "post_prob": c.post_prob,
            "failed": c.failed,
        })
    return rows


def coefficient_table(data: Dataset, seg: Segmentation, active, pp) -> dict:
    """Per-regime coefficient values and posterior standard deviations;
    None marks a parameter that does not move at that break (rendered '---')."""
    K, m = data.K, seg.m
    order = sorted(active)
    sigma2 = pp.sigma2_mean
    values = [[None] * K for _ in range(m)]
    sds = [[None] * K for _ in range(m)]
    for k in range(1, K + 1):
        sel = np.zeros(pp.mu_psi.shape[0])
        sel[k - 1] = 1.0
        for j in range(1, m + 1):
            if j > 1 and (j, k) not in active:
                continue  # unchanged at this break
            if j > 1:
                sel[K + order.index((j, k))] = 1.0
            values[j - 1][k - 1] = float(sel @ pp.mu_psi)
            sds[j - 1][k - 1] = float(np.sqrt(max(sigma2 * sel @ pp.Sigma_psi_scale @ sel, 0.0)))
    bounds = seg.boundaries(data.T)
    periods = [f"{bounds[j] + 1}..{bounds[j + 1]}" for j in range(m)]
    return {"periods": periods, "names": list(data.names), "values": values, "sds": sds}


def _render_coef_table(tab: dict) -> str:
    width = max(9, max(len(n) for n in tab["names"]) + 1)
    head = "Period".ljust(14) + "".join(n.rjust(width) for n in tab["names"])
    lines = [head]
    for period, row, sdrow in zip(tab["periods"], tab["values"], tab["sds"]):
        cells = ["---".rjust(width) if v is None else f"{v:.4f}".rjust(width) for v in row]
        lines.append(period.ljust(14) + "".join(cells))
        sd_cells = ["".rjust(width) if s is None else f"({s:.4f})".rjust(width) for s in sdrow]
        lines.append(" ".ljust(14) + "".join(sd_cells))
    return "\n".join(lines)


def _grid_cfg(cfg: RunConfig) -> GridConfig:
    return GridConfig(n_lambda=cfg.n_lambda, lambda_max=cfg.lambda_max,
                      kappas=tuple(cfg.kappas))


def _daem_cfg(cfg: RunConfig) -> DaemConfig:
    return DaemConfig(n_init=cfg.n_init, seed=cfg.seed)


def cmd_detect(cfg: RunConfig) -> int:
    data = build_dataset(cfg)
    seg, scan = detect_breaks(data)
    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config": _config_echo(cfg),
        "T": data.T,
        "K": data.K,
        "breaks": list(seg.tau),
        "chosen_h": scan.chosen_h,
        "mdl_no_break": scan.mdl_no_break,
        "windows": [
            {"h": w.h, "candidates": list(w.candidates), "refined": list(w.refined),
             "mdl": w.mdl}
            for w in scan.windows
        ],
    }
    os.makedirs(cfg.output, exist_ok=True)
    _json_dump(doc, os.path.join(cfg.output, "detect.json"))
    lines = [f"breaks: {list(seg.tau)}  (chosen h = {scan.chosen_h})",
             f"no-break description length: {scan.mdl_no_break:.4f}",
             "h    mdl          refined"]
    for w in scan.windows:
        lines.append(f"{w.h:<4d} {w.mdl:<12.4f} {list(w.refined)}")
    text = "\n".join(lines)
    with open(os.path.join(cfg.output, "detect.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    data = build_dataset(cfg)
    if cfg.breaks is not None:
        seg = Segmentation(tuple(int(b) for b in cfg.breaks))
        seg.validate(data.T, min_len=data.K + 1)
        scan_doc = None
    else:
        seg, scan = detect_breaks(data)
        scan_doc = {"chosen_h": scan.chosen_h, "mdl_no_break": scan.mdl_no_break,
                    "window_mdl": [[w.h, w.mdl] for w in scan.windows]}
    if cfg.exhaustive:
        cands = exhaustive_select(data, seg)
    elif cfg.lasso:
        cands = lasso_baseline(data, seg, n_lambda=cfg.n_lambda)
    else:
        cands = run_grid(data, seg, _grid_cfg(cfg), _daem_cfg(cfg))
    top = top_candidate(cands)
    pp = posterior_params(data, seg, top.active, g=top.g)
    tab = coefficient_table(data, seg, top.active, pp)

    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config": _config_echo(cfg),
        "T": data.T,
        "K": data.K,
        "breaks": list(seg.tau),
        "scan": scan_doc,
        "models": _candidate_rows(cands),
        "top_active": sorted(list(map(list, top.active))),
        "posterior": {
            "a_sigma": pp.a_sigma,
            "b_sigma": pp.b_sigma,
            "sigma2_mean": pp.sigma2_mean,
            "mu_psi": pp.mu_psi.tolist(),
        },
        "coefficients": tab,
    }
    if cfg.mcmc and seg.m > 1:
        bp = sample_break_posterior(
            data, top.active, seg, DreamConfig(n_iter=cfg.mcmc_iter, seed=cfg.seed)
        )
        doc["break_uncertainty"] = {
            "psrf": bp.psrf,
            "acceptance_rate": bp.acceptance_rate,
            "intervals_90": [list(map(int, iv)) for iv in bp.intervals_90],
            "intervals_95": [list(map(int, iv)) for iv in bp.intervals_95],
        }
    os.makedirs(cfg.output, exist_ok=True)
    _json_dump(doc, os.path.join(cfg.output, "fit.json"))
    lines = [f"breaks: {list(seg.tau)}",
             "",
             "model table (top 10 by posterior probability):",
             "kappa    lambda   |A|  log-ML        prob"]
    for c in cands[:10]:
        kap = "-" if np.isnan(c.kappa) else f"{c.kappa:g}"
        lam = "-" if np.isnan(c.lam) else f"{c.lam:.3f}"
        lines.append(f"{kap:<8} {lam:<8} {c.k_active:<4d} {c.log_ml:<13.3f} {c.post_prob:.4f}")
    lines += ["", "coefficients ('---' = unchanged at the break):",
              _render_coef_table(tab)]
    if "break_uncertainty" in doc:
        bu = doc["break_uncertainty"]
        lines += ["", f"break posterior: psrf={bu['psrf']:.3f} "
                      f"accept={bu['acceptance_rate']:.3f}",
                  f"90% intervals: {bu['intervals_90']}",
                  f"95% intervals: {bu['intervals_95']}"]
    text = "\n".join(lines)
    with open(os.path.join(cfg.output, "fit.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_forecast(cfg: RunConfig) -> int:
    data = build_dataset(cfg)
    fc_cfg = ForecastConfig(grid=_grid_cfg(cfg), daem=_daem_cfg(cfg),
                            max_breaks=cfg.max_breaks)
    report = forecast_eval(data, methods=cfg.methods, t_start=cfg.t_start, cfg=fc_cfg)
    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config": _config_echo(cfg),
        "t_start": report.t_start,
        "methods": {
            name: {
                "ok": mf.ok,
                "message": mf.message,
                "rmsfe": (report.rmsfe(name) if mf.ok else None),
                "clpd": (report.clpd(name) if mf.ok else None),
                "forecasts": mf.forecasts.tolist(),
                "log_densities": mf.logdens.tolist(),
            }
            for name, mf in report.methods.items()
        },
    }
    os.makedirs(cfg.output, exist_ok=True)
    _json_dump(doc, os.path.join(cfg.output, "forecast.json"))
    lines = [f"t_start = {report.t_start}", "method      rmsfe        clpd"]
    for name, mf in report.methods.items():
        if mf.ok:
            lines.append(f"{name:<11} {report.rmsfe(name):<12.5f} {report.clpd(name):.3f}")
        else:
            lines.append(f"{name:<11} incomplete: {mf.message}")
    text = "\n".join(lines)
    with open(os.path.join(cfg.output, "forecast.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _spec_from_cfg(cfg: RunConfig):
    variance = "garch" if cfg.garch else "constant"
    if cfg.dgp.upper() in "ABCDEFGHI":
        return dgp_spec(cfg.dgp.upper(), T=cfg.T, variance=variance, seed=cfg.seed)
    if cfg.dgp.lower() in ("emp", "empirical"):
        return empirical_dgp_spec(cfg.n_cps, T=cfg.T if cfg.T != 1024 else 256,
                                  variance=variance, seed=cfg.seed)
    if cfg.dgp.upper() == "J":
        return dgp_j_spec(T=cfg.T, seed=cfg.seed)
    raise ParseError(f"unknown DGP {cfg.dgp!r}")


def cmd_simulate(cfg: RunConfig) -> int:
    spec = _spec_from_cfg(cfg)
    data, truth = simulate(spec)
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "sim_data.csv")
    with open(path, "w") as fh:
        fh.write(",".join(("y",) + data.names) + "\n")
        for i in range(data.T):
            fh.write(",".join(repr(float(v)) for v in (data.y[i], *data.X[i])) + "\n")
    _json_dump(
        {
            "version": __version__,
            "seed": cfg.seed,
            "config": _config_echo(cfg),
            "breaks": list(truth.breaks),
            "names": list(truth.names),
            "coefficients": {k: list(v) for k, v in truth.coeffs.items()},
            "regimes_per_param": truth.regimes_per_param,
        },
        os.path.join(cfg.output, "sim_truth.json"),
    )
    print(f"wrote {path} (T={data.T}, K={data.K}, breaks={list(truth.breaks)})")
    return EXIT_OK


def cmd_mc(cfg: RunConfig) -> int:
    spec = _spec_from_cfg(cfg)
    pipeline = PipelineConfig(
        grid=_grid_cfg(cfg),
        daem=DaemConfig(n_init=cfg.n_init, seed=0),
        method="lasso" if cfg.lasso else "selo",
        n_jobs=cfg.threads,
    )
    report = run_monte_carlo(spec, cfg.reps, pipeline)
    os.makedirs(cfg.output, exist_ok=True)
    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config": _config_echo(cfg),
        "n_reps": report.n_reps,
        "n_ok": report.n_ok,
        "param_names": list(report.param_names),
        "truth_regimes": report.truth_regimes,
        "frequencies": report.frequencies.tolist(),
        "break_rate": report.break_rate,
        "exact_rate": report.exact_rate,
        "average_correct_rate": report.average_correct_rate(),
    }
    _json_dump(doc, os.path.join(cfg.output, "mc_report.json"))
    with open(os.path.join(cfg.output, "mc_report.csv"), "w") as fh:
        fh.write("param,true_regimes," + ",".join(f"r{i}" for i in range(1, 7)) + "\n")
        for row in report.to_rows():
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row) + "\n")
    br = "-" if report.break_rate is None else f"{report.break_rate:.1f}"
    print(f"reps ok: {report.n_ok}/{report.n_reps}  break: {br}  "
          f"exact: {report.exact_rate:.1f}  avg correct: {report.average_correct_rate():.1f}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="delimited input file with a header row")
    p.add_argument("--response", help="response column name")
    p.add_argument("--covariates", nargs="*", help="covariate column names (default: all others)")
    p.add_argument("--lags", type=int, default=0, help="AR order q; lagged responses appended")
    p.add_argument("--no-constant", dest="constant", action="store_false")
    p.add_argument("--breaks", nargs="*", type=int, help="fix break dates, skip detection")
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--kappas", nargs="*", type=float, default=[0.1, 1.0])
    p.add_argument("--lambda-max", type=float, default=None)
    p.add_argument("--n-init", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SELSEG_THREADS", "1")))
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--config", help="JSON config file; its values override flags")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selseg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="break-date detection only")
    _add_common(p)

    p = sub.add_parser("fit", help="full pipeline: detect, select, posterior")
    _add_common(p)
    p.add_argument("--exhaustive", action="store_true",
                   help="enumerate all active sets ((m-1)K <= 10)")
    p.add_argument("--lasso", action="store_true", help="L1 baseline instead of the grid")
    p.add_argument("--mcmc", action="store_true", help="append break-date uncertainty")
    p.add_argument("--mcmc-iter", type=int, default=4000)

    p = sub.add_parser("forecast", help="expanding-window one-step evaluation")
    _add_common(p)
    p.add_argument("--methods", nargs="*", default=list(FORECAST_METHODS))
    p.add_argument("--t-start", type=int, default=None)
    p.add_argument("--max-breaks", type=int, default=10)

    p = sub.add_parser("simulate", help="draw one series from a named DGP")
    _add_common(p)
    p.add_argument("--dgp", default="A")
    p.add_argument("--garch", action="store_true")
    p.add_argument("--T", type=int, default=1024)
    p.add_argument("--n-cps", type=int, default=0, help="breaking parameters (empirical DGP)")

    p = sub.add_parser("mc", help="Monte Carlo detection-rate study")
    _add_common(p)
    p.add_argument("--dgp", default="A")
    p.add_argument("--garch", action="store_true")
    p.add_argument("--T", type=int, default=1024)
    p.add_argument("--n-cps", type=int, default=0)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--lasso", action="store_true")
    return ap


def _cfg_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    for f in dataclasses.fields(RunConfig):
        if hasattr(args, f.name):
            val = getattr(args, f.name)
            if val is not None:
                setattr(cfg, f.name, val)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad config file: {exc}")
        for key, val in overrides.items():
            if not hasattr(cfg, key):
                raise ParseError(f"unknown config key {key!r}")
            setattr(cfg, key, val)
    return cfg


COMMANDS = {
    "detect": cmd_detect,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "mc": cmd_mc,
}


def main(argv: Optional[Sequence] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _cfg_from_args(args)
        return COMMANDS[args.command](cfg)
    except ParseError as exc:
        print(f"selseg: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SingularDesignError, InsufficientObservationsError) as exc:
        print(f"selseg: rank error: {exc}", file=sys.stderr)
        return EXIT_RANK
    except ConvergenceError as exc:
        print(f"selseg: convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (SelsegError, ValueError) as exc:
        print(f"selseg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
