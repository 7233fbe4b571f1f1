"""Monte Carlo studies: estimator properties in censored Weibull regression
and operating characteristics of MCP-Mod built on each estimation strategy.

Every replicate draws from its own stream ``SeedSequence(seed, spawn_key=(r,))``
so results do not depend on how replicates are spread over workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy import linalg, stats

from . import __version__
from .estimators import (
    TAU_BCE,
    TAU_MLE,
    FitOptions,
    fit_bce,
    fit_firth,
    fit_mle,
    second_order_covariance,
)
from .mcpmod import (
    CRITICAL_VALUE_DRAWS,
    CRITICAL_VALUE_SEED,
    FAMILIES,
    TABLE1_DELTA,
    TABLE1_DOSES,
    TABLE1_E0,
    DoseDesign,
    estimate_med,
    run_mcpmod,
    table1_models,
)
from .wald import VARIANTS, ChiSquare, TestUndefinedError, subset_contrast, wald_statistic
from .weibull import (
    CensoringScheme,
    CovariateDesign,
    ModelSpec,
    NonFiniteLikelihoodError,
    SingularInformationError,
    calibrate_censoring,
    simulate_from_uniforms,
)

__all__ = [
    "BETA_TRUE",
    "STRATEGIES",
    "RegressionScenario",
    "McpModScenario",
    "StudyReport",
    "replicate_rng",
    "run_regression_study",
    "run_mcpmod_study",
    "summarize",
    "summarize_estimates",
    "rate_with_se",
]

BETA_TRUE = (-2.0, 1.5, -1.0, 2.5, -1.3, 1.8, -0.5)
STRATEGIES = VARIANTS
ESTIMATORS = ("MLE", "BCE", "Firth")


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


@dataclass(frozen=True)
class RegressionScenario:
    p: int = 3
    n: int = 20
    sigma: float = 1.0
    censor_rate: float = 0.25
    replicates: int = 2000
    q: int = 1
    psi: tuple = (0.05, 0.10, 0.25, 0.50)
    alpha: float = 0.05

    def __post_init__(self):
        if not 1 <= self.p <= len(BETA_TRUE):
            raise ValueError(f"p must be between 1 and {len(BETA_TRUE)}")
        if self.n < self.p:
            raise ValueError("n must be at least p")
        if not 0.0 <= self.censor_rate < 1.0:
            raise ValueError("censor_rate must lie in [0, 1)")
        if not 1 <= self.q <= self.p:
            raise ValueError("q must be between 1 and p")
        if self.sigma <= 0 or self.replicates < 0:
            raise ValueError("invalid sigma or replicate count")
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))

    @property
    def beta_true(self) -> np.ndarray:
        return np.array(BETA_TRUE[: self.p])

    def shifted_beta(self, psi: float) -> np.ndarray:
        shift = np.zeros(self.p)
        shift[: self.q] = psi
        return self.beta_true + shift


@dataclass(frozen=True)
class McpModScenario:
    true_model: str = "Emax"
    n_per_dose: int = 10
    sigma: float = 0.5
    censor_rate: float = 0.10
    replicates: int = 500
    delta: float = TABLE1_DELTA
    alpha: float = 0.05
    doses: tuple = TABLE1_DOSES
    strategies: tuple = STRATEGIES
    critical_draws: int = CRITICAL_VALUE_DRAWS
    critical_seed: int = CRITICAL_VALUE_SEED

    def __post_init__(self):
        names = {"constant": "Constant", **{f.lower(): f for f in FAMILIES}}
        key = str(self.true_model).lower()
        if key not in names or key == "linear":
            raise ValueError("true_model must be one of Constant, Emax, Exponential, Logistic, Beta")
        object.__setattr__(self, "true_model", names[key])
        bad = set(self.strategies) - set(STRATEGIES)
        if bad:
            raise ValueError(f"unknown strategies {sorted(bad)}")
        if not 0.0 <= self.censor_rate < 1.0:
            raise ValueError("censor_rate must lie in [0, 1)")
        if self.n_per_dose < 1 or self.replicates < 0:
            raise ValueError("invalid n_per_dose or replicate count")
        object.__setattr__(self, "doses", tuple(float(d) for d in self.doses))
        object.__setattr__(self, "strategies", tuple(self.strategies))

    def true_means(self) -> np.ndarray:
        doses = np.array(self.doses)
        if self.true_model == "Constant":
            return np.full(doses.size, TABLE1_E0)
        return table1_models(doses)[self.true_model](doses)

    def true_med(self) -> float | None:
        if self.true_model == "Constant":
            return None
        doses = np.array(self.doses)
        return estimate_med(table1_models(doses)[self.true_model], self.delta, doses).med


@dataclass
class StudyReport:
    """Aggregated results.  ``tables`` maps a table name to a list of rows
    (dicts with a fixed key order)."""

    kind: str
    scenario: dict
    seed: int
    replicates: int
    tables: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    error: str = ""

    def table(self, name: str) -> list[dict]:
        return self.tables.get(name, [])

    def lookup(self, name: str, **keys) -> dict:
        for row in self.table(name):
            if all(row.get(k) == v for k, v in keys.items()):
                return row
        raise KeyError(f"no row in {name!r} matching {keys}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": __version__,
            "scenario": self.scenario,
            "seed": self.seed,
            "replicates": self.replicates,
            "error": self.error,
            "metadata": self.metadata,
            "tables": self.tables,
        }


def rate_with_se(count: int, total: int) -> tuple[float, float]:
    """Binomial proportion and its Monte Carlo standard error."""
    if total <= 0:
        return math.nan, math.nan
    r = count / total
    return r, math.sqrt(r * (1 - r) / total)


def summarize_estimates(values, truth) -> dict:
    """Bias, RMSE and MC standard error of the bias (column-wise)."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    if v.shape[0] == 0:
        raise ValueError("no estimates to summarize")
    err = v - np.asarray(truth, dtype=float)
    bias = err.mean(axis=0)
    rmse = np.sqrt(np.mean(err**2, axis=0))
    se = err.std(axis=0, ddof=1) / math.sqrt(err.shape[0]) if err.shape[0] > 1 else np.full(bias.shape, math.nan)
    return {"bias": bias, "rmse": rmse, "bias_se": se, "count": err.shape[0]}


def _run(func, n_rep: int, workers: int | None):
    workers = (os.cpu_count() or 1) if workers is None else int(workers)
    if workers <= 1 or n_rep < 2:
        return [func(r) for r in range(n_rep)]
    chunk = max(1, n_rep // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, range(n_rep), chunksize=chunk))


# ---------------------------------------------------------------- regression


def _reference_censoring_time(sc: RegressionScenario) -> float:
    """Censoring time calibrated over the covariate distribution.

    With standard normal covariates the linear predictor is
    ``N(0, |beta|^2)``; its quantiles at ``(k - 1/2)/K`` stand in for the
    population of designs.
    """
    if sc.censor_rate == 0.0:
        return math.inf
    K = 4000
    mu = np.linalg.norm(sc.beta_true) * stats.norm.ppf((np.arange(K) + 0.5) / K)
    ref = ModelSpec(CovariateDesign(mu[:, None]), sc.sigma)
    return calibrate_censoring(ref, [1.0], sc.censor_rate)


def _pd(cov) -> bool:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.isfinite(cov)))


def fit_strategies(spec, sample):
    """Fit all five strategies to one dataset.

    Returns a dict keyed by strategy name (MLE, MLE2, BCE, BCE2, Firth) whose
    values are ``(beta_hat, covariance)`` or ``None`` when the estimator did
    not converge or the covariance is not positive definite.
    """
    out = {}
    mle = fit_mle(spec, sample)
    out["MLE"] = (mle.beta_hat, mle.cov_first) if mle.converged else None
    out["MLE2"] = None
    out["BCE"] = out["BCE2"] = None
    if mle.converged:
        try:
            c2 = second_order_covariance(spec, mle.beta_hat, TAU_MLE)
            if _pd(c2):
                out["MLE2"] = (mle.beta_hat, c2)
        except (SingularInformationError, NonFiniteLikelihoodError):
            pass
        bce = fit_bce(spec, sample, mle=mle)
        if bce.converged:
            out["BCE"] = (bce.beta_hat, bce.cov_first)
            try:
                c2 = second_order_covariance(spec, bce.beta_hat, TAU_BCE)
                if _pd(c2):
                    out["BCE2"] = (bce.beta_hat, c2)
            except (SingularInformationError, NonFiniteLikelihoodError):
                pass
    init = mle.beta_hat if mle.converged else None
    firth = fit_firth(spec, sample, FitOptions(init=init))
    out["Firth"] = (firth.beta_hat, firth.cov_first) if firth.converged else None
    return out


def _regression_replicate(sc: RegressionScenario, L: float, seed: int, rep: int) -> dict:
    rng = replicate_rng(seed, rep)
    X = rng.standard_normal((sc.n, sc.p))
    u = rng.random(sc.n)
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    spec = ModelSpec(CovariateDesign(X), sc.sigma, CensoringScheme("type1", L))
    contrast = subset_contrast(sc.p, sc.beta_true[: sc.q])
    crit = ChiSquare(sc.q).quantile(1 - sc.alpha)
    record = {"rep": rep, "censored": None, "fits": None, "reject": {}}
    for k, psi in enumerate((0.0,) + sc.psi):
        sample = simulate_from_uniforms(spec, sc.shifted_beta(psi), u)
        fits = fit_strategies(spec, sample)
        if k == 0:
            record["censored"] = float(1.0 - sample.delta.mean())
            record["fits"] = fits
        for v in VARIANTS:
            res = None
            if fits[v] is not None:
                try:
                    res = bool(wald_statistic(fits[v][0], fits[v][1], contrast) > crit)
                except TestUndefinedError:
                    res = None
            record["reject"].setdefault(v, []).append(res)
    return record


def run_regression_study(sc: RegressionScenario, seed: int = 42, workers: int | None = 1,
                         keep_records: bool = False) -> StudyReport:
    """Bias, RMSE, covariance accuracy, size and power of the five strategies.

    Power cells shift the first ``q`` true coefficients by ``psi`` while
    reusing the covariates and uniforms of the null cell, and test the null
    ``beta_1 = beta_1^true``; ``psi = 0`` is the size cell itself.
    """
    report = StudyReport("regression", asdict(sc), int(seed), sc.replicates)
    if sc.replicates == 0:
        report.error = "no replicates requested"
        return report
    L = _reference_censoring_time(sc)
    func = partial(_regression_replicate, sc, L, int(seed))
    records = _run(func, sc.replicates, workers)
    report = summarize(records, sc, seed=seed)
    report.metadata["censoring_time"] = L
    if keep_records:
        report.metadata["records"] = records
    return report


def _summarize_regression(records, sc: RegressionScenario, seed) -> StudyReport:
    R = len(records)
    truth = sc.beta_true
    est_rows, cov_rows, wald_rows, conv_rows = [], [], [], []
    for s in STRATEGIES:
        ok = sum(r["fits"][s] is not None for r in records)
        rate, se = rate_with_se(ok, R)
        conv_rows.append({"strategy": s, "converged": ok, "replicates": R, "rate": rate, "mc_se": se})
    for e in ESTIMATORS:
        vals = [r["fits"][e][0] for r in records if r["fits"][e] is not None]
        if not vals:
            continue
        summ = summarize_estimates(vals, truth)
        for j in range(sc.p):
            est_rows.append({
                "estimator": e, "coefficient": j + 1, "true": float(truth[j]),
                "bias": float(summ["bias"][j]), "rmse": float(summ["rmse"][j]),
                "bias_se": float(summ["bias_se"][j]), "count": summ["count"],
            })
    for e, second in (("MLE", "MLE2"), ("BCE", "BCE2")):
        use = [r for r in records if r["fits"][e] is not None and r["fits"][second] is not None]
        if len(use) < 2:
            continue
        est = np.array([r["fits"][e][0] for r in use])
        emp = np.cov(est, rowvar=False, ddof=1).reshape(sc.p, sc.p)
        for ref_name, key in (("K_inv", e), ("Cov2", second)):
            ref = np.mean([r["fits"][key][1] for r in use], axis=0)
            D = emp - ref
            cov_rows.append({
                "estimator": e, "reference": ref_name,
                "d1": float(np.max(np.abs(np.diag(D)))),
                "d2": float(np.sqrt(np.trace(D.T @ D))),
                "d3": float(np.sum(np.abs(D))),
                "count": len(use),
            })
    for v in VARIANTS:
        for k, psi in enumerate((0.0,) + sc.psi):
            flags = [r["reject"][v][k] for r in records if r["reject"][v][k] is not None]
            rate, se = rate_with_se(sum(flags), len(flags))
            wald_rows.append({"variant": v, "psi": psi, "rate": rate, "mc_se": se, "count": len(flags)})
    censored = float(np.mean([r["censored"] for r in records]))
    rep = StudyReport("regression", asdict(sc), int(seed), R, {
        "convergence": conv_rows, "estimators": est_rows,
        "covariance": cov_rows, "wald": wald_rows,
    })
    rep.metadata["empirical_censoring"] = censored
    rep.metadata["note"] = "replicates where a strategy failed are excluded from that strategy's summaries"
    return rep


# ------------------------------------------------------------------ MCP-Mod


def _mcpmod_replicate(sc: McpModScenario, L: float, seed: int, rep: int) -> dict:
    rng = replicate_rng(seed, rep)
    design = DoseDesign(np.array(sc.doses), sc.n_per_dose)
    X = design.anova_matrix()
    spec = ModelSpec(CovariateDesign(X), sc.sigma, CensoringScheme("type1", L))
    mu_true = sc.true_means()
    u = rng.random(spec.n)
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    sample = simulate_from_uniforms(spec, mu_true, u)
    fits = fit_strategies(spec, sample)
    candidates = list(table1_models(design.doses).values())
    out = {"rep": rep, "censored": float(1.0 - sample.delta.mean()), "strategies": {}}
    for s in sc.strategies:
        if fits[s] is None:
            out["strategies"][s] = {"converged": False, "signal": None}
            continue
        mu_hat, S_hat = fits[s]
        res = run_mcpmod(mu_hat, S_hat, candidates, design.doses, sc.alpha, sc.delta,
                         sc.critical_draws, sc.critical_seed)
        out["strategies"][s] = {
            "converged": res.converged,
            "signal": res.signal if res.mcp is not None else None,
            "selected": res.selected,
            "med": None if res.med is None else res.med.med,
            "clamped": bool(res.med.clamped) if res.med is not None else False,
        }
    return out


def run_mcpmod_study(sc: McpModScenario, seed: int = 42, workers: int | None = 1,
                     keep_records: bool = False) -> StudyReport:
    """Operating characteristics of MCP-Mod for each estimation strategy.

    All strategies in a replicate analyse the same simulated trial.
    """
    report = StudyReport("mcpmod", asdict(sc), int(seed), sc.replicates)
    if sc.replicates == 0:
        report.error = "no replicates requested"
        return report
    design = DoseDesign(np.array(sc.doses), sc.n_per_dose)
    ref = ModelSpec(CovariateDesign(design.anova_matrix()), sc.sigma)
    L = calibrate_censoring(ref, sc.true_means(), sc.censor_rate)
    func = partial(_mcpmod_replicate, sc, L, int(seed))
    records = _run(func, sc.replicates, workers)
    report = summarize(records, sc, seed=seed)
    report.metadata["censoring_time"] = L
    if keep_records:
        report.metadata["records"] = records
    return report


def _summarize_mcpmod(records, sc: McpModScenario, seed) -> StudyReport:
    R = len(records)
    true_med = sc.true_med()
    rows = []
    for s in sc.strategies:
        recs = [r["strategies"][s] for r in records]
        ok = [x for x in recs if x["converged"]]
        conv, _ = rate_with_se(len(ok), R)
        tested = [x for x in recs if x["signal"] is not None]
        sig = [x for x in tested if x["signal"]]
        sig_rate, sig_se = rate_with_se(len(sig), len(tested))
        if sc.true_model == "Constant" or not sig:
            sel_rate = math.nan
        else:
            sel_rate = sum(x["selected"] == sc.true_model for x in sig) / len(sig)
        meds = [x["med"] for x in sig if x["converged"] and x["med"] is not None]
        not_reached = sum(x["med"] is None for x in sig)
        if true_med is not None and meds:
            m = summarize_estimates(np.array(meds)[:, None], [true_med])
            med_bias, med_rmse = float(m["bias"][0]), float(m["rmse"][0])
        else:
            med_bias = med_rmse = math.nan
        rows.append({
            "scenario": sc.true_model,
            "strategy": s,
            "n": sc.n_per_dose,
            "censoring": sc.censor_rate,
            "convergence": conv,
            "signal_prob": sig_rate,
            "select_prob": sel_rate,
            "med_bias": med_bias,
            "med_rmse": med_rmse,
            "mc_se": sig_se,
        })
        rows[-1]["_extra"] = {"med_not_reached": not_reached, "signals": len(sig), "tested": len(tested)}
    extra = {r["strategy"]: r.pop("_extra") for r in rows}
    rep = StudyReport("mcpmod", asdict(sc), int(seed), R, {"oc": rows})
    rep.metadata["true_med"] = true_med
    rep.metadata["counts"] = extra
    rep.metadata["empirical_censoring"] = float(np.mean([r["censored"] for r in records]))
    rep.metadata["critical_value_seed"] = sc.critical_seed
    rep.metadata["note"] = ("non-converged replicates are excluded from signal, selection and MED "
                            "summaries; MED bias/RMSE exclude not-reached estimates")
    return rep


def summarize(records, scenario, seed: int = 0) -> StudyReport:
    """Aggregate per-replicate records of one scenario, in replicate order."""
    records = sorted(records, key=lambda r: r["rep"])
    if not records:
        raise ValueError("no records to summarize")
    if isinstance(scenario, RegressionScenario):
        return _summarize_regression(records, scenario, seed)
    if isinstance(scenario, McpModScenario):
        return _summarize_mcpmod(records, scenario, seed)
    raise TypeError("unknown scenario type")
