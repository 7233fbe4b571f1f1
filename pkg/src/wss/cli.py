"""Command-line front end.

Subcommands mirror the configuration modes::

    wss fit --config fit.json [--data sample.csv]
    wss sim-regression --config study.json --out results/
    wss sim-mcpmod --config study.json --workers 4
    wss simulate --config study.json        # mode taken from the file
    wss contrasts [--config c.json]
    wss med [--config m.json]
    wss config MODE                         # print a starter configuration

Exit status is 0 whenever the requested computation ran, including when an
estimator failed to converge (that is reported in the output).  It is 2 for
unusable input (bad configuration, malformed data file, rank-deficient
design) and 1 for file-system errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    MODES,
    ConfigError,
    StudyConfig,
    candidate_models,
    default_config,
    load_config,
    mcpmod_scenarios,
    regression_scenarios,
    validate_document,
)
from .estimators import TAU_BCE, TAU_MLE, FitOptions, fit_bce, fit_firth, fit_mle, second_order_covariance
from .mcpmod import (
    CRITICAL_VALUE_DRAWS,
    CRITICAL_VALUE_SEED,
    TABLE1_DELTA,
    estimate_med,
    max_normal_critical_value,
    optimal_contrasts,
)
from .study import run_mcpmod_study, run_regression_study
from .wald import VARIANTS, ContrastSpec, TestUndefinedError, wald_test
from .weibull import (
    CensoringScheme,
    CovariateDesign,
    ModelSpec,
    NonFiniteLikelihoodError,
    SingularInformationError,
    read_sample_csv,
)

log = logging.getLogger("wss")

REPORT_SCHEMA_ID = "wss/report/1"
MANIFEST_SCHEMA_ID = "wss/manifest/1"


# ------------------------------------------------------------------ output


def _cell(v) -> str:
    """Deterministic text for one CSV field."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_to_csv(rows: list[dict]) -> str:
    """Header plus one line per row; column order is the key order of the
    rows (first appearance wins)."""
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _jsonable(obj):
    """Plain JSON values; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_outputs(out_dir: Path, kind: str, tables: dict, fmt: str, cfg: StudyConfig | None = None,
                  cells: list | None = None) -> list[str]:
    """Write ``tables`` as one CSV per table or as a single JSON report."""
    written = []
    if fmt == "csv":
        for name, rows in tables.items():
            _write(out_dir / f"{name}.csv", table_to_csv(rows))
            written.append(f"{name}.csv")
        return written
    doc = {"schema": REPORT_SCHEMA_ID, "kind": kind, "version": __version__}
    if cfg is not None:
        # run-invariant part of the configuration only
        conf = {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "out", "format")}
        doc["seed"] = cfg.seed
        doc["config"] = conf
    if cells is not None:
        doc["cells"] = cells
    doc["tables"] = tables
    doc = _jsonable(doc)
    validate_document(doc, "report")
    _write(out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n")
    written.append("report.json")
    return written


def write_manifest(out_dir: Path, cfg: StudyConfig, started: datetime, wall: float, outputs: list[str]) -> None:
    doc = _jsonable({
        "schema": MANIFEST_SCHEMA_ID,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": __version__,
        "started_at": started.isoformat(timespec="seconds"),
        "wall_time": wall,
        "mode": cfg.mode,
        "workers": cfg.workers,
        "outputs": outputs,
        "config": cfg.to_dict(),
    })
    validate_document(doc, "manifest")
    _write(out_dir / "manifest.json", json.dumps(doc, indent=2) + "\n")


# ------------------------------------------------------------------ commands


class InputError(ValueError):
    """Unusable user input (reported with exit status 2)."""


def _censoring_for_data(block: dict, sample) -> CensoringScheme:
    c = block.get("censoring")
    if c is not None:
        return CensoringScheme(c["kind"], c.get("L", math.inf), c.get("r"), c.get("q"))
    censored = sample.delta == 0
    if not np.any(censored):
        return CensoringScheme("type1", math.inf)
    # common administrative censoring time: the largest censored time
    return CensoringScheme("type1", float(np.exp(sample.y[censored].max())))


def cmd_fit(cfg: StudyConfig) -> tuple[dict, list | None]:
    """Fit MLE, BCE and Firth to one data file and run the five Wald tests."""
    block = cfg.fit
    if "data" not in block:
        raise InputError("fit: no data file given (config fit.data or --data)")
    if "sigma" not in block:
        raise InputError("fit: the shape parameter sigma must be supplied (config fit.sigma)")
    try:
        sample, X = read_sample_csv(block["data"])
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        design = CovariateDesign(X)
        spec = ModelSpec(design, float(block["sigma"]), _censoring_for_data(block, sample))
    except ValueError as exc:
        raise InputError(f"{block['data']}: {exc}") from None
    p = spec.p
    opts = FitOptions(tol=block.get("tol", 1e-8), max_iter=block.get("max_iter", 50))

    mle = fit_mle(spec, sample, opts)
    bce = fit_bce(spec, sample, opts, mle=mle)
    firth = fit_firth(spec, sample, dataclasses.replace(opts, init=mle.beta_hat if mle.converged else None))
    for name, fit, tau in (("mle", mle, TAU_MLE), ("bce", bce, TAU_BCE)):
        if fit.converged:
            try:
                c2 = second_order_covariance(spec, fit.beta_hat, tau)
            except (SingularInformationError, NonFiniteLikelihoodError):
                c2 = None
            if name == "mle":
                mle = dataclasses.replace(mle, cov_second=c2)
            else:
                bce = dataclasses.replace(bce, cov_second=c2)
    fits = {"MLE": mle, "BCE": bce, "Firth": firth}

    status = [{
        "estimator": k, "converged": f.converged, "iterations": f.iterations,
        "final_score_norm": float(f.final_score_norm), "reason": f.reason,
    } for k, f in fits.items()]
    estimates = []
    for k, f in fits.items():
        se = np.sqrt(np.diag(f.cov_first)) if f.cov_first is not None else np.full(p, np.nan)
        for j in range(p):
            estimates.append({"estimator": k, "coefficient": j + 1, "estimate": float(f.beta_hat[j]),
                              "se": float(se[j]), "converged": f.converged})
    matrices = {
        "K_inv_MLE": mle.cov_first, "K_inv_BCE": bce.cov_first, "K_inv_Firth": firth.cov_first,
        "Cov2_MLE": mle.cov_second, "Cov2_BCE": bce.cov_second,
    }
    covariance = []
    for name, M in matrices.items():
        for i in range(p):
            for j in range(p):
                covariance.append({"matrix": name, "row": i + 1, "col": j + 1,
                                   "value": float(M[i, j]) if M is not None else math.nan})

    cblock = block.get("contrast", {})
    try:
        C = np.array(cblock.get("C", np.eye(p).tolist()), dtype=float)
        beta0 = np.array(cblock.get("beta0", np.zeros(p).tolist()), dtype=float)
        contrast = ContrastSpec(C, beta0)
    except ValueError as exc:
        raise InputError(f"fit.contrast: {exc}") from None
    wald = []
    for v in VARIANTS:
        kind = v.rstrip("2")
        choice = "second" if v.endswith("2") else "first"
        f = fits[kind]
        row = {"variant": v, "statistic": math.nan, "df": contrast.m, "p_value": math.nan, "status": "ok"}
        if not f.converged:
            row["status"] = "not converged"
        else:
            try:
                r = wald_test(f, choice, contrast)
                row.update(statistic=r.statistic, p_value=r.p_value)
            except TestUndefinedError as exc:
                row["status"] = f"test undefined: {exc}"
        wald.append(row)
    tables = {"fit_status": status, "fit_estimates": estimates, "fit_covariance": covariance, "fit_wald": wald}
    return tables, None


def _prefixed(prefix: dict, rows: list[dict]) -> list[dict]:
    return [{**prefix, **r} for r in rows]


def _cell_summary(report) -> dict:
    meta = {k: v for k, v in report.metadata.items() if k != "records"}
    return {"scenario": report.scenario, "replicates": report.replicates, "error": report.error,
            "metadata": meta}


def cmd_sim_regression(cfg: StudyConfig) -> tuple[dict, list]:
    tables: dict[str, list] = {}
    cells = []
    for sc in regression_scenarios(cfg):
        log.info("regression cell p=%d n=%d censoring=%.2f (%d replicates)", sc.p, sc.n, sc.censor_rate,
                 sc.replicates)
        rep = run_regression_study(sc, cfg.seed, cfg.workers, keep_records=cfg.keep_records)
        cells.append(_cell_summary(rep))
        prefix = {"p": sc.p, "n": sc.n, "sigma": sc.sigma, "censor_rate": sc.censor_rate}
        for name in ("convergence", "estimators", "covariance", "wald"):
            tables.setdefault(f"regression_{name}", []).extend(_prefixed(prefix, rep.table(name)))
        if cfg.keep_records and "records" in rep.metadata:
            rows = []
            for r in rep.metadata["records"]:
                for s, fit in r["fits"].items():
                    row = {"rep": r["rep"], "strategy": s, "converged": fit is not None}
                    for j in range(sc.p):
                        row[f"b{j + 1}"] = float(fit[0][j]) if fit is not None else math.nan
                    row["reject"] = r["reject"][s][0]
                    rows.append(row)
            tables.setdefault("regression_records", []).extend(_prefixed(prefix, rows))
    return tables, cells


def cmd_sim_mcpmod(cfg: StudyConfig) -> tuple[dict, list]:
    tables: dict[str, list] = {"oc": []}
    cells = []
    for sc in mcpmod_scenarios(cfg):
        log.info("MCP-Mod cell %s n=%d censoring=%.2f (%d replicates)", sc.true_model, sc.n_per_dose,
                 sc.censor_rate, sc.replicates)
        rep = run_mcpmod_study(sc, cfg.seed, cfg.workers, keep_records=cfg.keep_records)
        cells.append(_cell_summary(rep))
        tables["oc"].extend(rep.table("oc"))
        if cfg.keep_records and "records" in rep.metadata:
            rows = []
            for r in rep.metadata["records"]:
                for s, x in r["strategies"].items():
                    rows.append({"scenario": sc.true_model, "n": sc.n_per_dose, "censoring": sc.censor_rate,
                                 "rep": r["rep"], "strategy": s, "converged": x["converged"],
                                 "signal": x.get("signal"), "selected": x.get("selected"),
                                 "med": x.get("med"), "clamped": x.get("clamped")})
            tables.setdefault("mcpmod_records", []).extend(rows)
    return tables, cells


def _labels(models) -> list[str]:
    fams = [m.family for m in models]
    return [f if fams.count(f) == 1 else f"{f}#{fams[:i + 1].count(f)}" for i, f in enumerate(fams)]


def cmd_contrasts(cfg: StudyConfig) -> tuple[dict, None]:
    block = cfg.contrasts
    models, doses = candidate_models(block)
    doses = np.array(doses)
    D = doses.size
    if "S" in block:
        S = np.array(block["S"], dtype=float)
        if S.shape != (D, D):
            raise InputError(f"contrasts.S must be {D} x {D}")
    else:
        S = np.eye(D) / block.get("n_per_dose", 1)
    try:
        oc = optimal_contrasts([m.f0(doses) for m in models], S, tuple(m.family for m in models))
    except np.linalg.LinAlgError as exc:
        raise InputError(f"contrasts: {exc}") from None
    except ValueError as exc:
        raise InputError(f"contrasts: {exc}") from None
    labels = _labels(models)
    dose_cols = [f"dose_{d:g}" for d in doses]
    contrasts = [{"model": lab, **{c: float(v) for c, v in zip(dose_cols, row)}}
                 for lab, row in zip(labels, oc.C_opt)]
    corr = [{"model": lab, **{l2: float(v) for l2, v in zip(labels, row)}}
            for lab, row in zip(labels, oc.correlation)]
    alpha = block.get("alpha", 0.05)
    crit = max_normal_critical_value(oc.correlation, alpha)
    critical = [{"alpha": alpha, "critical_value": crit, "draws": CRITICAL_VALUE_DRAWS,
                 "seed": CRITICAL_VALUE_SEED}]
    return {"contrasts": contrasts, "correlation": corr, "critical_value": critical}, None


def cmd_med(cfg: StudyConfig) -> tuple[dict, None]:
    block = cfg.med
    models, doses = candidate_models(block)
    delta = block.get("delta", TABLE1_DELTA)
    rows = []
    for lab, m in zip(_labels(models), models):
        est = estimate_med(m, delta, np.array(doses))
        rows.append({"model": lab, "delta": delta, "med": est.med,
                     "reached": est.reached, "clamped": est.clamped})
    return {"med": rows}, None


HANDLERS = {
    "fit": cmd_fit,
    "sim-regression": cmd_sim_regression,
    "sim-mcpmod": cmd_sim_mcpmod,
    "contrasts": cmd_contrasts,
    "med": cmd_med,
}


# ------------------------------------------------------------------ driver


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON study configuration")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=_positive, help="worker processes (default: all CPUs)")
    common.add_argument("--format", choices=("csv", "json"), help="report format")

    parser = argparse.ArgumentParser(prog="wss", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"wss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_fit = sub.add_parser("fit", parents=[common], help="fit one data set")
    p_fit.add_argument("--data", type=Path, help="CSV with columns y, delta, x1..xp")
    p_fit.add_argument("--sigma", type=float, help="known shape parameter")
    sub.add_parser("simulate", parents=[common], help="run the study named by the config mode")
    sub.add_parser("sim-regression", parents=[common], help="regression Monte Carlo study")
    sub.add_parser("sim-mcpmod", parents=[common], help="MCP-Mod operating characteristics")
    sub.add_parser("contrasts", parents=[common], help="optimal contrasts and correlations")
    sub.add_parser("med", parents=[common], help="minimum effective doses of candidate curves")
    p_cfg = sub.add_parser("config", help="print a starter configuration")
    p_cfg.add_argument("mode", choices=MODES)
    return parser


def _resolve_config(args) -> StudyConfig:
    cmd = args.command
    if args.config is not None:
        cfg = load_config(args.config)
        if cmd == "simulate":
            if cfg.mode not in ("sim-regression", "sim-mcpmod"):
                raise ConfigError(f"simulate needs a sim-regression or sim-mcpmod config, got {cfg.mode!r}")
        elif cfg.mode != cmd:
            raise ConfigError(f"config mode {cfg.mode!r} does not match command {cmd!r}")
    else:
        if cmd == "simulate":
            raise ConfigError("simulate needs --config")
        cfg = default_config(cmd)
        if cmd == "fit":
            cfg = cfg.replace(fit={})
    changes = {"seed": args.seed, "workers": args.workers, "format": args.format,
               "out": str(args.out) if args.out is not None else None}
    if cmd == "fit":
        fit = dict(cfg.fit)
        if args.data is not None:
            fit["data"] = str(args.data)
        if args.sigma is not None:
            fit["sigma"] = args.sigma
        changes["fit"] = fit
    return cfg.replace(**changes)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("WSS_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(default_config(args.mode).to_json())
        return 0
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        cfg = _resolve_config(args)
        if cfg.mode == "fit" and "data" in cfg.fit and not Path(cfg.fit["data"]).is_file():
            raise ConfigError(f"data file {cfg.fit['data']} does not exist")
        tables, cells = HANDLERS[cfg.mode](cfg)
        out_dir = Path(cfg.out)
        outputs = write_outputs(out_dir, cfg.mode, tables, cfg.format, cfg, cells)
        write_manifest(out_dir, cfg, started, time.perf_counter() - t0, outputs)
    except (ConfigError, InputError) as exc:
        print(f"wss: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"wss: I/O error: {exc}", file=sys.stderr)
        return 1
    if cfg.mode in ("contrasts", "med", "fit"):
        for name, rows in tables.items():
            sys.stdout.write(f"# {name}\n{table_to_csv(rows)}")
    else:
        log.info("wrote %s to %s", ", ".join(outputs), out_dir)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
