"""Command-line interface for calibration, estimation, and simulation runs.

Every command writes a machine-readable report (JSON or CSV) into the output
directory.  Reports embed the seed, a hash of the resolved run configuration,
and the package version.  The simulate command keeps wall-clock measurements
in a sibling timing file so its seeded report is byte reproducible; estimate
reports per-method elapsed time inline.  Warnings never change the exit code:
0 means no hard error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationResult, calibrate_dataset, mean_variance_diagnostic
from .core import GmrDataset
from .dataio import load_dataset, read_config
from .errors import RdmGmrError
from .estimators import Method, Prior, Variant, mom_estimate
from .inference import ModelSpec
from .sampler import McmcConfig, bayes_estimate
from .simulation import (
    DEFAULT_BUDGET,
    MOM_METHODS,
    STUDY_METHODS,
    SimulationTruth,
    default_study_truth,
    psi_prior_predictive,
    run_study,
)

_ENV_SEED = "RDM_GMR_SEED"

_MOM_VARIANTS = {
    "mom": Variant.PLUGIN,
    "mom-alt": Variant.ALT,
    "mom-naive": Variant.NAIVE,
}


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(_ENV_SEED)
    return int(env) if env else 0


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _write_report(out_dir: Path, name: str, fmt: str, report: dict, rows: list, columns: list) -> Path:
    """Write one command report; JSON embeds everything, CSV keeps the rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    else:
        path = out_dir / f"{name}.csv"
        with path.open("w", newline="") as handle:
            for key in ("version", "seed", "config_hash"):
                handle.write(f"# {key}: {report[key]}\n")
            writer = csv.writer(handle)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([row.get(c, "") for c in columns])
    return path


def _load_cli_dataset(args) -> GmrDataset:
    if not args.data or not args.weights:
        raise RdmGmrError("--data and --weights are both required")
    lake = args.mask.split(",") if args.mask else None
    return load_dataset(
        args.data,
        args.weights,
        config=args.config,
        marked=args.M,
        lake_stocks=lake,
    )


def _dataset_payload(args) -> dict:
    return {
        "data": args.data,
        "weights": args.weights,
        "config": args.config,
        "mask": args.mask,
        "M": args.M,
    }


# -- calibrate ---------------------------------------------------------------

_CAL_COLUMNS = ["week", "n", "beta_hat", "lambda_hat", "beta_tilde", "lambda_tilde", "inflation", "note"]


def cmd_calibrate(args) -> int:
    dataset = _load_cli_dataset(args)
    seed = _resolve_seed(args.seed)
    results = calibrate_dataset(dataset, pooled=args.pooled, strict=False)
    rows = []
    for item in results:
        if isinstance(item, CalibrationResult):
            rows.append(
                {
                    "week": item.week,
                    "n": item.n,
                    "beta_hat": item.beta_hat,
                    "lambda_hat": item.lambda_hat,
                    "beta_tilde": item.beta_tilde,
                    "lambda_tilde": item.lambda_tilde,
                    "inflation": item.inflation,
                    "note": "",
                }
            )
        else:
            label, message = item
            warnings.warn(f"week {label}: {message}", stacklevel=2)
            rows.append({"week": label, "note": message})
    report = {
        "command": "calibrate",
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash({**_dataset_payload(args), "pooled": args.pooled}),
        "pooled": args.pooled,
        "rows": rows,
    }
    path = _write_report(Path(args.out), "calibrate", args.format, report, rows, _CAL_COLUMNS)
    print(f"calibrate: {len(rows)} weeks -> {path}")
    return 0


# -- diagnose ----------------------------------------------------------------

_DIAG_COLUMNS = ["week", "slope", "r2", "warn", "note"]


def cmd_diagnose(args) -> int:
    dataset = _load_cli_dataset(args)
    seed = _resolve_seed(args.seed)
    rows = []
    for diag in mean_variance_diagnostic(dataset):
        if diag.warn:
            warnings.warn(f"week {diag.week}: {diag.note}", stacklevel=2)
        rows.append(
            {
                "week": diag.week,
                "slope": diag.slope,
                "r2": diag.r2,
                "warn": diag.warn,
                "note": diag.note,
            }
        )
    report = {
        "command": "diagnose",
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash(_dataset_payload(args)),
        "rows": rows,
    }
    path = _write_report(Path(args.out), "diagnose", args.format, report, rows, _DIAG_COLUMNS)
    flagged = sum(1 for r in rows if r["warn"])
    print(f"diagnose: {len(rows)} weeks, {flagged} flagged -> {path}")
    return 0


# -- estimate ----------------------------------------------------------------

_EST_COLUMNS = ["method", "prior", "estimate", "sd", "ci_low", "ci_high", "rhat", "converged", "elapsed"]


def _normalize_method(name: str, prior_flag: str) -> tuple:
    """Return (method_key, prior or None); bare Bayesian names take --prior."""
    key = name.lower()
    if key in _MOM_VARIANTS:
        return key, None
    if key in ("rdm", "mmd"):
        return f"{key}-{prior_flag}", Prior(prior_flag)
    if key in ("rdm-dir", "rdm-ar1", "mmd-dir", "mmd-ar1"):
        return key, Prior(key.split("-", 1)[1])
    raise RdmGmrError(f"unknown method {name!r}")


def cmd_estimate(args) -> int:
    dataset = _load_cli_dataset(args)
    seed = _resolve_seed(args.seed)
    methods = args.method or ["mom"]
    normalized = [_normalize_method(m, args.prior) for m in methods]
    calibrations = calibrate_dataset(dataset)
    rows = []
    for key, prior in normalized:
        start = time.perf_counter()
        if key in _MOM_VARIANTS:
            estimate = mom_estimate(
                dataset,
                calibrations,
                variant=_MOM_VARIANTS[key],
                paper_z=args.paper_z,
            )
            row = {"method": key, "prior": "", "rhat": "", "converged": ""}
        else:
            likelihood = Method.BAYES_RDM if key.startswith("rdm") else Method.BAYES_MMD
            spec = ModelSpec.from_calibrations(likelihood, prior, calibrations, psi=args.psi)
            config = McmcConfig(
                chains=args.chains,
                iters=args.iters,
                max_iters=args.max_iters,
                keep=args.keep,
                seed=seed,
                target_accept=args.target_accept,
            )
            estimate, _ = bayes_estimate(dataset, spec, config)
            if not estimate.converged:
                warnings.warn(f"{key}: chains not converged (rhat {estimate.rhat:.3f})", stacklevel=2)
            row = {
                "method": key.split("-")[0],
                "prior": prior.value,
                "rhat": estimate.rhat,
                "converged": estimate.converged,
            }
        row.update(
            {
                "estimate": estimate.n_hat,
                "sd": estimate.sd,
                "ci_low": estimate.ci_low,
                "ci_high": estimate.ci_high,
                "elapsed": time.perf_counter() - start,
            }
        )
        rows.append(row)
    report = {
        "command": "estimate",
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash(
            {
                **_dataset_payload(args),
                "methods": methods,
                "prior": args.prior,
                "psi": args.psi,
                "chains": args.chains,
                "iters": args.iters,
                "max_iters": args.max_iters,
                "keep": args.keep,
                "paper_z": args.paper_z,
            }
        ),
        "rows": rows,
    }
    path = _write_report(Path(args.out), "estimate", args.format, report, rows, _EST_COLUMNS)
    for row in rows:
        label = row["method"] if not row["prior"] else f"{row['method']}-{row['prior']}"
        print(f"{label}: {row['estimate']:.1f} ({row['ci_low']:.1f}, {row['ci_high']:.1f})")
    print(f"estimate: {len(rows)} methods -> {path}")
    return 0


# -- simulate ----------------------------------------------------------------

_SIM_COLUMNS = ["method", "rbias", "rrmse", "cp", "lci", "replicates", "failures"]


def _truth_from_config(config: dict) -> SimulationTruth:
    spec = config.get("truth")
    if spec is None:
        return default_study_truth()
    if "csv" in spec:
        rows = list(csv.DictReader(Path(spec["csv"]).open()))
        fixed = ("week", "weight", "n", "lambda")
        stocks = [c for c in rows[0].keys() if c not in fixed]
        lake = spec.get("lake_stocks", config.get("lake_stocks", []))
        return SimulationTruth(
            pi=np.array([[float(r[s]) for s in stocks] for r in rows]),
            n_true=float(spec.get("n_true", config.get("n_true"))),
            weights=np.array([float(r["weight"]) for r in rows]),
            n=np.array([int(r["n"]) for r in rows]),
            lam=np.array([float(r["lambda"]) for r in rows]),
            lake_mask=np.array([s in lake for s in stocks]),
            stocks=tuple(stocks),
            week_labels=tuple(int(r["week"]) for r in rows),
        )
    stocks = tuple(spec.get("stocks", ()))
    lake = spec.get("lake_stocks")
    if lake is not None and stocks:
        mask = np.array([s in lake for s in stocks])
    else:
        mask = np.asarray(spec["lake_mask"], dtype=bool)
    return SimulationTruth(
        pi=np.asarray(spec["pi"], dtype=float),
        n_true=float(spec["n_true"]),
        weights=np.asarray(spec["weights"], dtype=float),
        n=np.asarray(spec["n"], dtype=int),
        lam=np.asarray(spec["lambda"], dtype=float),
        lake_mask=mask,
        stocks=stocks,
        week_labels=tuple(spec.get("week_labels", ())),
    )


def cmd_simulate(args) -> int:
    config = read_config(args.config) if args.config else {}
    seed = _resolve_seed(args.seed if args.seed is not None else config.get("seed"))
    methods = args.method or config.get("methods") or list(MOM_METHODS)
    replicates = int(config.get("replicates", 200))
    truth = _truth_from_config(config)
    mcmc_cfg = config.get("mcmc", {})
    mcmc = McmcConfig(
        chains=int(mcmc_cfg.get("chains", 2)),
        iters=int(mcmc_cfg.get("iters", 2000)),
        max_iters=int(mcmc_cfg.get("max_iters", 8000)),
        keep=int(mcmc_cfg.get("keep", 1000)),
    )
    metrics = run_study(
        truth,
        methods,
        replicates=replicates,
        seed=seed,
        mcmc=mcmc,
        paper_z=args.paper_z,
        se_rule=config.get("se_rule", "phat"),
        budget=int(config.get("budget", DEFAULT_BUDGET)),
    )
    rows = []
    timing = {}
    for name, m in metrics.items():
        rows.append(
            {
                "method": name,
                "rbias": m.rbias,
                "rrmse": m.rrmse,
                "cp": m.cp,
                "lci": m.lci,
                "replicates": m.replicates,
                "failures": m.failures,
            }
        )
        timing[name] = m.mean_time
    config_hash = _config_hash(
        {
            "config": args.config,
            "methods": methods,
            "replicates": replicates,
            "paper_z": args.paper_z,
        }
    )
    report = {
        "command": "simulate",
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash,
        "replicates": replicates,
        "methods": methods,
        "metrics": {r["method"]: {k: r[k] for k in _SIM_COLUMNS[1:]} for r in rows},
    }
    path = _write_report(Path(args.out), "simulate", args.format, report, rows, _SIM_COLUMNS)
    # Wall time is the one run-to-run varying quantity; it lives in a
    # sibling file so the seeded report itself is byte reproducible.
    timing_path = Path(args.out) / "simulate_timing.json"
    timing_path.write_text(
        json.dumps(
            _jsonable(
                {"version": __version__, "seed": seed, "config_hash": config_hash, "mean_time": timing}
            ),
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    for row in rows:
        print(
            f"{row['method']}: rbias {row['rbias']:+.4f} rrmse {row['rrmse']:.4f} "
            f"cp {row['cp']:.3f} lci {row['lci']:.0f}"
        )
    print(f"simulate: {replicates} replicates -> {path} (timing -> {timing_path})")
    return 0


# -- psi-calibrate -----------------------------------------------------------


def cmd_psi_calibrate(args) -> int:
    seed = _resolve_seed(args.seed)
    psis = args.psi or [0.5, 2.0, 5.0, 10.0]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, psi in enumerate(psis):
        rng = np.random.default_rng((seed, index))
        pred = psi_prior_predictive(args.k, psi, draws=args.draws, rng=rng)
        hist_path = out_dir / f"psi_hist_{psi:g}.csv"
        with hist_path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["bin_low", "bin_high", "density"])
            for low, high, dens in zip(pred.bin_edges[:-1], pred.bin_edges[1:], pred.density):
                writer.writerow([repr(float(low)), repr(float(high)), repr(float(dens))])
        rows.append(
            {
                "psi": psi,
                "mean": pred.mean,
                "quantiles": dict(zip(pred.quantile_probs.tolist(), pred.quantiles.tolist())),
                "histogram": hist_path.name,
            }
        )
        print(f"psi {psi:g}: histogram -> {hist_path}")
    report = {
        "command": "psi-calibrate",
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash({"psi": psis, "k": args.k, "draws": args.draws}),
        "k": args.k,
        "draws": args.draws,
        "rows": rows,
    }
    path = _write_report(
        Path(args.out), "psi_calibrate", "json", report, rows, ["psi", "mean", "histogram"]
    )
    print(f"psi-calibrate: {len(rows)} settings -> {path}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(parser) -> None:
    parser.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${_ENV_SEED} or 0)")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (runs are sequential)")
    parser.add_argument("--out", default=".", help="output directory for reports")
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def _add_dataset(parser) -> None:
    parser.add_argument("--data", help="composition CSV (week, stock, p_hat, se)")
    parser.add_argument("--weights", help="week CSV (week, weight, n)")
    parser.add_argument("--config", help="JSON/TOML config with marked count and lake stocks")
    parser.add_argument("--mask", help="comma-separated lake-type stock names")
    parser.add_argument("--M", type=float, default=None, help="marked (weir) count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdm-gmr",
        description="Escapement estimation with population-level GSI uncertainty.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="fit weekly dispersion scales")
    _add_dataset(p_cal)
    _add_common(p_cal)
    p_cal.add_argument("--pooled", action="store_true", help="one shared dispersion across weeks")
    p_cal.set_defaults(func=cmd_calibrate)

    p_diag = sub.add_parser("diagnose", help="check the mean-variance proportionality")
    _add_dataset(p_diag)
    _add_common(p_diag)
    p_diag.set_defaults(func=cmd_diagnose)

    p_est = sub.add_parser("estimate", help="estimate total escapement")
    _add_dataset(p_est)
    _add_common(p_est)
    p_est.add_argument(
        "--method",
        action="append",
        help="mom, mom-alt, mom-naive, rdm, mmd, or combined like mmd-ar1 (repeatable)",
    )
    p_est.add_argument("--prior", choices=("dir", "ar1"), default="dir", help="prior for bare rdm/mmd")
    p_est.add_argument("--psi", type=float, default=2.0, help="AR(1) prior scale")
    p_est.add_argument("--chains", type=int, default=3)
    p_est.add_argument("--iters", type=int, default=4000, help="initial iterations per chain")
    p_est.add_argument("--max-iters", type=int, default=32000, dest="max_iters")
    p_est.add_argument("--keep", type=int, default=10000, help="kept draws per chain")
    p_est.add_argument("--target-accept", type=float, default=0.38, dest="target_accept")
    p_est.add_argument("--paper-z", action="store_true", help="use 1.96 instead of the exact z")
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run the estimator comparison study")
    _add_common(p_sim)
    p_sim.add_argument("--config", help="study config (JSON/TOML)")
    p_sim.add_argument("--method", action="append", help="override the config's method list")
    p_sim.add_argument("--paper-z", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_psi = sub.add_parser("psi-calibrate", help="prior predictive spread of a first-week proportion")
    _add_common(p_psi)
    p_psi.add_argument("--psi", type=float, action="append", help="prior scale (repeatable)")
    p_psi.add_argument("--k", type=int, default=4, help="number of stocks")
    p_psi.add_argument("--draws", type=int, default=10_000)
    p_psi.set_defaults(func=cmd_psi_calibrate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RdmGmrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
