"""MCP-Mod on a censored log-survival-time endpoint.

Run with ``python demos/dose_finding.py``.

1. Build the five candidate dose-response shapes from percent-of-maximum
   guesses and show their parameters and minimum effective doses (MED).
2. Derive the optimal contrasts and the multiplicity-adjusted critical value.
3. Simulate one censored trial from the Emax truth, estimate the dose means
   with each of the five strategies and run MCP-Mod on each.
4. A short operating-characteristics study.
"""
import numpy as np

from wss import (
    CensoringScheme,
    CovariateDesign,
    DoseDesign,
    McpModScenario,
    ModelSpec,
    calibrate_censoring,
    estimate_med,
    fit_strategies,
    optimal_contrasts,
    run_mcpmod,
    run_mcpmod_study,
    simulate_sample,
    table1_models,
)
from wss.mcpmod import TABLE1_DELTA, max_normal_critical_value

SIGMA = 0.5


def candidates(doses):
    print("== candidate shapes (E0 = 1.569, effect 1.386 at the top dose)")
    models = table1_models(doses)
    for fam, m in models.items():
        med = estimate_med(m, TABLE1_DELTA, doses).med
        nl = ", ".join(f"{v:.4g}" for v in m.nonlinear) or "-"
        med_txt = "-" if med is None else f"{med:.3f}"
        print(f"{fam:12s} theta1 {m.theta1:8.5f}  nonlinear ({nl:>15s})  MED {med_txt:>8s}"
              f"  means {np.array2string(m(doses), precision=3)}")
    print()
    return models


def contrasts(models, design):
    print("== optimal contrasts under homoscedastic cell variances")
    S = np.diag(SIGMA**2 / design.n_per_dose)
    oc = optimal_contrasts([m.f0(design.doses) for m in models.values()], S, tuple(models))
    for fam, c in zip(oc.families, oc.C_opt):
        print(f"{fam:12s} {np.array2string(c, precision=3, suppress_small=True)}")
    print("contrast correlations:")
    print(np.array2string(oc.correlation, precision=3))
    print(f"one-sided critical value at alpha = 0.05: {max_normal_critical_value(oc.correlation, 0.05):.4f}")
    print()


def one_trial(models, design):
    print("== one simulated trial, Emax truth, 10% censoring")
    X = design.anova_matrix()
    truth = models["Emax"](design.doses)
    ref = ModelSpec(CovariateDesign(X), SIGMA)
    L = calibrate_censoring(ref, truth, 0.10)
    spec = ref.with_censoring(CensoringScheme("type1", L))
    sample = simulate_sample(spec, truth, np.random.default_rng(2024))
    print(f"{int((sample.delta == 0).sum())} of {spec.n} subjects censored at log time {np.log(L):.3f}")
    for strategy, fit in fit_strategies(spec, sample).items():
        if fit is None:
            print(f"{strategy:6s} did not converge")
            continue
        mu_hat, S_hat = fit
        res = run_mcpmod(mu_hat, S_hat, list(models.values()), design, delta=TABLE1_DELTA)
        zs = np.array2string(res.mcp.z_stats, precision=2)
        if res.signal:
            med = "not reached" if not res.med.reached else f"{res.med.med:.2f}"
            print(f"{strategy:6s} z {zs}  crit {res.mcp.critical_value:.3f}  -> {res.selected}, MED {med}")
        else:
            print(f"{strategy:6s} z {zs}  crit {res.mcp.critical_value:.3f}  -> no signal")
    print()


def operating_characteristics():
    print("== 100 trials per truth, 10 animals per dose (about a minute)")
    print(f"{'truth':12s} {'strategy':8s} {'signal':>7s} {'select':>7s} {'MED bias':>9s}")
    for truth in ("Constant", "Emax", "Logistic"):
        sc = McpModScenario(true_model=truth, n_per_dose=10, replicates=100)
        for row in run_mcpmod_study(sc, seed=42).table("oc"):
            print(f"{truth:12s} {row['strategy']:8s} {row['signal_prob']:7.2f} {row['select_prob']:7.2f}"
                  f" {row['med_bias']:9.2f}")


if __name__ == "__main__":
    design = DoseDesign(np.array([0.0, 5.0, 25.0, 50.0, 100.0]), 10)
    models = candidates(design.doses)
    contrasts(models, design)
    one_trial(models, design)
    operating_characteristics()
