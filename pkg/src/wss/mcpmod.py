"""MCP-Mod dose finding: candidate dose-response shapes, optimal contrasts,
the multiplicity-adjusted trend test, GLS model fitting and MED estimation."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

__all__ = [
    "FAMILIES",
    "N_PARAMS",
    "DoseResponseModel",
    "DoseDesign",
    "OptimalContrasts",
    "McpResult",
    "ModFit",
    "MedEstimate",
    "McpModOutcome",
    "standardized_response",
    "params_from_guesses",
    "optimal_contrasts",
    "max_normal_critical_value",
    "mcp_step",
    "parameter_box",
    "gls_criterion",
    "gls_fit",
    "estimate_med",
    "select_model",
    "run_mcpmod",
    "table1_doses",
    "table1_models",
    "TABLE1_E0",
    "TABLE1_MAX_EFFECT",
    "TABLE1_DELTA",
    "TABLE1_DOSES",
    "TABLE1_GUESSES",
    "TABLE1_TRUE_MED",
]

FAMILIES = ("Linear", "Emax", "Exponential", "Logistic", "Beta")
N_PARAMS = {"Linear": 2, "Emax": 3, "Exponential": 3, "Logistic": 4, "Beta": 4}
_N_NONLINEAR = {"Linear": 0, "Emax": 1, "Exponential": 1, "Logistic": 2, "Beta": 2}

CRITICAL_VALUE_DRAWS = 100_000
CRITICAL_VALUE_SEED = 20_230_517


def _family(name: str) -> str:
    for f in FAMILIES:
        if f.lower() == str(name).lower():
            return f
    raise ValueError(f"unknown dose-response family {name!r}")


def standardized_response(family: str, params, x, scal: float | None = None):
    """Standardized shape ``f0(x, theta0)`` of a candidate model.

    ``params`` holds the nonlinear parameters: ``()`` for Linear, ``(ED50,)``
    for Emax, ``(delta,)`` for Exponential, ``(ED50, delta)`` for Logistic
    and ``(delta1, delta2)`` for Beta (which also needs ``scal``).
    """
    family = _family(family)
    x = np.asarray(x, dtype=float)
    params = tuple(np.atleast_1d(params)) if params is not None else ()
    if family == "Linear":
        out = x.copy()
    elif family == "Emax":
        (ed50,) = params
        if ed50 <= 0:
            raise ValueError("ED50 must be positive")
        out = x / (x + ed50)
    elif family == "Exponential":
        (delta,) = params
        if delta <= 0:
            raise ValueError("delta must be positive")
        with np.errstate(over="ignore"):
            out = np.expm1(x / delta)
    elif family == "Logistic":
        ed50, delta = params
        if ed50 <= 0 or delta <= 0:
            raise ValueError("ED50 and delta must be positive")
        out = 1.0 / (1.0 + np.exp((ed50 - x) / delta))
    else:
        d1, d2 = params
        if d1 <= 0 or d2 <= 0:
            raise ValueError("delta1 and delta2 must be positive")
        if scal is None:
            raise ValueError("the Beta model needs scal")
        if np.any(x > scal) or np.any(x < 0):
            raise ValueError("Beta model is defined on [0, scal]")
        logB = (d1 + d2) * math.log(d1 + d2) - d1 * math.log(d1) - d2 * math.log(d2)
        u = x / scal
        with np.errstate(divide="ignore"):
            out = np.exp(logB + d1 * np.log(u) + d2 * np.log1p(-u))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DoseResponseModel:
    family: str
    theta0: float
    theta1: float
    nonlinear: tuple = ()
    scal: float | None = None

    def __post_init__(self):
        fam = _family(self.family)
        object.__setattr__(self, "family", fam)
        nl = tuple(float(v) for v in np.atleast_1d(self.nonlinear)) if len(np.atleast_1d(self.nonlinear)) else ()
        if len(nl) != _N_NONLINEAR[fam]:
            raise ValueError(f"{fam} needs {_N_NONLINEAR[fam]} nonlinear parameters")
        object.__setattr__(self, "nonlinear", nl)
        if fam == "Beta" and self.scal is None:
            raise ValueError("the Beta model needs scal")

    def f0(self, x):
        return standardized_response(self.family, self.nonlinear, x, self.scal)

    def __call__(self, x):
        return self.theta0 + self.theta1 * self.f0(x)

    def effect(self, x):
        """Response difference to placebo."""
        return self.theta1 * (self.f0(x) - self.f0(0.0))

    @property
    def n_params(self) -> int:
        return N_PARAMS[self.family]


@dataclass(frozen=True)
class DoseDesign:
    doses: np.ndarray
    n_per_dose: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.doses, dtype=float)
        if d[0] != 0 or np.any(np.diff(d) <= 0):
            raise ValueError("doses must start at placebo (0) and increase strictly")
        n = np.broadcast_to(np.asarray(self.n_per_dose, dtype=int), d.shape).copy()
        if np.any(n < 1):
            raise ValueError("every dose needs at least one subject")
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "n_per_dose", n)

    @property
    def max_dose(self) -> float:
        return float(self.doses[-1])

    def anova_matrix(self) -> np.ndarray:
        """Cell-indicator design, one column per dose."""
        return np.repeat(np.eye(self.doses.size), self.n_per_dose, axis=0)


def params_from_guesses(family, constraints, E0, max_effect, doses, scal=None) -> DoseResponseModel:
    """Convert percent-of-maximum guesses to model parameters.

    Each constraint ``(p, x)`` states that a fraction ``p`` of the maximum
    effect is reached at dose ``x``.  Emax and Logistic measure ``p`` against
    their asymptote, Exponential against the effect at the largest dose, and
    Beta against its peak (so ``(1.0, x)`` places the peak at ``x``).
    ``theta1`` then scales the largest effect over the dose range to
    ``max_effect`` and ``theta0 = E0``.
    """
    family = _family(family)
    doses = np.asarray(doses, dtype=float)
    xmax = float(doses[-1])
    constraints = [tuple(map(float, c)) for c in constraints]
    if len(constraints) != _N_NONLINEAR[family]:
        raise ValueError(f"{family} needs {_N_NONLINEAR[family]} constraint(s), got {len(constraints)}")
    for p, x in constraints:
        if not 0 < p <= 1 or x <= 0:
            raise ValueError("constraints need 0 < p <= 1 and a positive dose")

    if family == "Linear":
        nl = ()
    elif family == "Emax":
        (p, x), = constraints
        if p >= 1:
            raise ValueError("Emax never reaches 100% of its asymptote")
        nl = (x * (1 - p) / p,)
    elif family == "Exponential":
        (p, x), = constraints
        if x >= xmax:
            raise ValueError("constraint dose must be below the largest dose")

        def ratio(log_delta):
            d = math.exp(log_delta)
            return math.expm1(x / d) / math.expm1(xmax / d) - p

        # ratio -> x/xmax as delta -> inf and -> 0 as delta -> 0
        if not p < x / xmax:
            raise ValueError("exponential shape needs p below x/xmax")
        lo, hi = math.log(xmax / 200.0), math.log(xmax) + 10
        nl = (math.exp(optimize.brentq(ratio, lo, hi, xtol=1e-14)),)
    elif family == "Logistic":
        (p1, x1), (p2, x2) = constraints
        if p1 >= 1 or p2 >= 1 or x1 == x2:
            raise ValueError("logistic constraints need p < 1 at two distinct doses")
        l1, l2 = math.log(p1 / (1 - p1)), math.log(p2 / (1 - p2))
        delta = (x2 - x1) / (l2 - l1)
        ed50 = x1 - delta * l1
        nl = (ed50, delta)
    else:
        if scal is None:
            scal = 1.2 * xmax
        peak = [c for c in constraints if c[0] == 1.0]
        other = [c for c in constraints if c[0] != 1.0]
        if len(peak) != 1 or len(other) != 1:
            raise ValueError("Beta needs one (1.0, peak dose) constraint and one partial constraint")
        r = peak[0][1] / scal
        p, x = other[0]
        u = x / scal
        if not 0 < r < 1 or not 0 < u < 1:
            raise ValueError("Beta constraint doses must lie inside (0, scal)")
        h = r * math.log(u / r) + (1 - r) * math.log((1 - u) / (1 - r))
        total = math.log(p) / h
        nl = (r * total, (1 - r) * total)

    shape = DoseResponseModel(family, 0.0, 1.0, nl, scal if family == "Beta" else None)
    grid = np.linspace(0.0, xmax, 2001)
    if family == "Beta":
        grid = np.union1d(grid, [min(xmax, scal * nl[0] / (nl[0] + nl[1]))])
    span = float(np.max(shape.f0(grid) - shape.f0(0.0)))
    return DoseResponseModel(family, float(E0), max_effect / span, nl, shape.scal)


@dataclass(frozen=True)
class OptimalContrasts:
    C_opt: np.ndarray
    correlation: np.ndarray
    families: tuple = ()


def optimal_contrasts(mu0_per_model, S, families=()) -> OptimalContrasts:
    """Contrasts maximizing the noncentrality ``c'mu0 / sqrt(c'Sc)`` subject
    to ``c'1 = 0``, normalized to unit length."""
    mu0 = np.atleast_2d(np.asarray(mu0_per_model, dtype=float))
    S = np.asarray(S, dtype=float)
    D = mu0.shape[1]
    if S.shape != (D, D):
        raise ValueError("S must be D x D")
    try:
        cf = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("S is not positive definite") from exc
    one = np.ones(D)
    Sinv1 = linalg.cho_solve(cf, one)
    rows = []
    for m in mu0:
        centered = m - (m @ Sinv1) / (one @ Sinv1) * one
        c = linalg.cho_solve(cf, centered)
        c -= c.mean()  # remove rounding drift off the zero-sum plane
        norm = np.linalg.norm(c)
        if norm < 1e-12 * max(1.0, np.abs(m).max()):
            raise ValueError("constant candidate shape has no optimal contrast")
        rows.append(c / norm)
    C = np.array(rows)
    V = C @ S @ C.T
    sd = np.sqrt(np.diag(V))
    corr = V / np.outer(sd, sd)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return OptimalContrasts(C, corr, tuple(families))


@functools.lru_cache(maxsize=16)
def _base_normals(seed: int, n_draws: int, dim: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n_draws, dim))
    z.setflags(write=False)
    return z


def max_normal_critical_value(
    correlation, alpha: float, n_draws: int = CRITICAL_VALUE_DRAWS, seed: int = CRITICAL_VALUE_SEED
) -> float:
    """Upper ``alpha`` quantile of ``max_m Z_m`` for ``Z ~ N(0, correlation)``,
    estimated from a fixed set of standard normal draws."""
    R = np.atleast_2d(np.asarray(correlation, dtype=float))
    evals, evecs = np.linalg.eigh(0.5 * (R + R.T))
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    Z = _base_normals(seed, n_draws, R.shape[0]) @ root.T
    return float(np.quantile(Z.max(axis=1), 1.0 - alpha))


@dataclass(frozen=True)
class McpResult:
    z_stats: np.ndarray
    critical_value: float
    signal: bool
    models_significant: tuple


def mcp_step(
    mu_hat,
    S_hat,
    contrasts: OptimalContrasts,
    alpha: float = 0.05,
    n_draws: int = CRITICAL_VALUE_DRAWS,
    seed: int = CRITICAL_VALUE_SEED,
) -> McpResult:
    """One-sided multiple contrast test on the signed statistics
    ``z_m = c_m' mu_hat / sqrt(c_m' S_hat c_m)``.

    Raises ``LinAlgError`` if ``S_hat`` is not positive definite.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    S_hat = np.asarray(S_hat, dtype=float)
    np.linalg.cholesky(S_hat)
    C = contrasts.C_opt
    V = C @ S_hat @ C.T
    sd = np.sqrt(np.diag(V))
    z = (C @ mu_hat) / sd
    corr = V / np.outer(sd, sd)
    crit = max_normal_critical_value(corr, alpha, n_draws, seed)
    sig = tuple(int(i) for i in np.flatnonzero(z > crit))
    return McpResult(z, crit, bool(z.max() > crit), sig)


def parameter_box(family: str, doses) -> list[tuple[float, float]]:
    family = _family(family)
    doses = np.asarray(doses, dtype=float)
    xmax = float(doses.max())
    dmin = float(doses[doses > 0].min())
    ed50 = (0.1 * dmin, 10.0 * xmax)
    rate = (0.05 * xmax, 20.0 * xmax)
    return {
        "Linear": [],
        "Emax": [ed50],
        "Exponential": [rate],
        "Logistic": [ed50, rate],
        "Beta": [(0.05, 20.0), (0.05, 20.0)],
    }[family]


@dataclass(frozen=True)
class ModFit:
    model: DoseResponseModel
    gls_value: float
    gaic: float
    converged: bool


def gls_criterion(model: DoseResponseModel, mu_hat, S_hat, doses) -> float:
    r = np.asarray(mu_hat, dtype=float) - model(np.asarray(doses, dtype=float))
    return float(r @ np.linalg.solve(S_hat, r))


def _shapes(family, P, doses, scal):
    """``f0`` for a stack of nonlinear parameter rows ``P`` (G x k), as a
    G x D array; invalid rows come back as ``nan``."""
    P = np.atleast_2d(P)
    x = doses[None, :]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if family == "Emax":
            out = x / (x + P[:, :1])
        elif family == "Exponential":
            out = np.expm1(x / P[:, :1])
        elif family == "Logistic":
            out = 1.0 / (1.0 + np.exp((P[:, :1] - x) / P[:, 1:2]))
        else:
            d1, d2 = P[:, :1], P[:, 1:2]
            logB = (d1 + d2) * np.log(d1 + d2) - d1 * np.log(d1) - d2 * np.log(d2)
            u = x / scal
            out = np.exp(logB + d1 * np.log(u) + d2 * np.log1p(-u))
    out[~np.all(P > 0, axis=1)] = np.nan
    return out


def _profile(F0, mu_hat, S_inv):
    """Closed-form GLS of ``(theta0, theta1)`` for each row of ``F0``.

    Returns the criterion values and the G x 2 array of ``theta``.  Rows with
    a non-finite or flat shape get ``inf``.
    """
    one = np.ones(mu_hat.size)
    Si1 = S_inv @ one
    Sim = S_inv @ mu_hat
    F0 = np.atleast_2d(F0)
    FS = F0 @ S_inv
    a11 = one @ Si1
    a12 = F0 @ Si1
    a22 = np.einsum("gi,gi->g", FS, F0)
    b1 = one @ Sim
    b2 = F0 @ Sim
    det = a11 * a22 - a12**2
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (a22 * b1 - a12 * b2) / det
        t1 = (a11 * b2 - a12 * b1) / det
        val = mu_hat @ Sim - (t0 * b1 + t1 * b2)
    bad = ~(np.isfinite(val) & (det > 1e-12 * np.maximum(a11 * a22, 1e-300)))
    val = np.where(bad, np.inf, np.maximum(val, 0.0))
    return val, np.column_stack([t0, t1])


def gls_fit(family, mu_hat, S_hat, design, start: DoseResponseModel | None = None) -> ModFit:
    """Minimize the GLS criterion ``(mu - f)' S^{-1} (mu - f)``.

    ``theta0`` and ``theta1`` are profiled out in closed form; the nonlinear
    parameters are searched inside :func:`parameter_box` with a log-spaced grid
    followed by a bounded Brent / simplex refinement.
    """
    family = _family(family)
    doses = design.doses if isinstance(design, DoseDesign) else np.asarray(design, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    S_hat = np.asarray(S_hat, dtype=float)
    S_inv = linalg.cho_solve(linalg.cho_factor(S_hat), np.eye(S_hat.shape[0]))
    S_inv = 0.5 * (S_inv + S_inv.T)
    xmax = float(doses.max())
    scal = start.scal if (start is not None and start.scal is not None) else 1.2 * xmax
    k = N_PARAMS[family]

    def build(nl, theta):
        return DoseResponseModel(family, float(theta[0]), float(theta[1]), nl, scal if family == "Beta" else None)

    if family == "Linear":
        val, theta = _profile(doses, mu_hat, S_inv)
        return ModFit(build((), theta[0]), float(val[0]), float(val[0]) + 2 * k, bool(np.isfinite(val[0])))

    box = parameter_box(family, doses)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    axes = [np.exp(np.linspace(np.log(a), np.log(b), 40 if len(box) == 1 else 15)) for a, b in box]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))
    if start is not None:
        cand = np.vstack([np.clip(np.array(start.nonlinear, dtype=float), lo, hi), cand])
    vals, _ = _profile(_shapes(family, cand, doses, scal), mu_hat, S_inv)
    best = int(np.argmin(vals))
    x0 = np.log(cand[best])

    def obj(logp):
        v = _profile(_shapes(family, np.exp(np.atleast_1d(logp)), doses, scal), mu_hat, S_inv)[0][0]
        return v if np.isfinite(v) else 1e300

    llo, lhi = np.log(lo), np.log(hi)
    if len(box) == 1:
        # bracket around the best grid point
        step = (lhi[0] - llo[0]) / 39
        a, b = max(llo[0], x0[0] - step), min(lhi[0], x0[0] + step)
        res = optimize.minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-9})
        xbest, ok = np.array([res.x]), bool(res.success)
    else:
        res = optimize.minimize(
            obj, x0, method="Nelder-Mead", bounds=list(zip(llo, lhi)),
            options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 2000, "maxfev": 4000},
        )
        xbest, ok = np.atleast_1d(res.x), bool(res.success)
    if obj(xbest) > vals[best]:
        xbest = x0
    nl = tuple(float(v) for v in np.exp(xbest))
    val, theta = _profile(_shapes(family, np.array(nl), doses, scal), mu_hat, S_inv)
    val = float(val[0])
    if start is not None:
        # never worse than the starting model itself
        start_val = gls_criterion(start, mu_hat, S_hat, doses)
        if start_val < val:
            return ModFit(start, start_val, start_val + 2 * k, ok)
    return ModFit(build(nl, theta[0]), val, val + 2 * k, ok and bool(np.isfinite(val)))


@dataclass(frozen=True)
class MedEstimate:
    med: float | None
    clamped: bool = False

    @property
    def reached(self) -> bool:
        return self.med is not None


def estimate_med(fit, delta: float, design, grid_points: int = 1000, xtol: float = 1e-6) -> MedEstimate:
    """Smallest dose whose modelled effect over placebo reaches ``delta``.

    Searched on ``[0, max dose]``; if the effect only reaches ``delta`` beyond
    the largest dose the estimate is clamped to it.  ``med is None`` means
    the effect never reaches ``delta``.
    """
    model = fit.model if isinstance(fit, ModFit) else fit
    doses = design.doses if isinstance(design, DoseDesign) else np.asarray(design, dtype=float)
    xmax = float(np.max(doses))

    def gap(x):
        return model.effect(x) - delta

    def first_crossing(grid):
        g = gap(grid)
        hit = np.flatnonzero(g >= 0)
        hit = hit[grid[hit] > 0]
        if hit.size == 0:
            return None
        j = hit[0]
        if j == 0 or g[j] == 0:
            return float(grid[j])
        return optimize.brentq(gap, grid[j - 1], grid[j], xtol=xtol)

    grid = np.linspace(0.0, xmax, grid_points + 1)
    x = first_crossing(grid)
    if x is not None:
        return MedEstimate(min(max(x, 0.0), xmax), False)
    upper = model.scal if model.family == "Beta" else 1e4 * xmax
    if upper > xmax:
        beyond = np.geomspace(xmax, upper, 4000)
        if first_crossing(beyond) is not None:
            return MedEstimate(xmax, True)
    return MedEstimate(None, False)


def select_model(fits) -> ModFit:
    """Smallest gAIC; ties resolved by the order of ``fits``."""
    fits = list(fits)
    if not fits:
        raise ValueError("no significant model to select from")
    best = fits[0]
    for f in fits[1:]:
        if f.gaic < best.gaic:
            best = f
    return best


@dataclass(frozen=True)
class McpModOutcome:
    mcp: McpResult | None
    signal: bool
    selected: str | None = None
    fit: ModFit | None = None
    med: MedEstimate | None = None
    converged: bool = True
    reason: str = ""
    fits: dict = field(default_factory=dict)


def run_mcpmod(
    mu_hat,
    S_hat,
    candidates,
    design,
    alpha: float = 0.05,
    delta: float = 0.693,
    n_draws: int = CRITICAL_VALUE_DRAWS,
    seed: int = CRITICAL_VALUE_SEED,
) -> McpModOutcome:
    """MCP-step then, on a signal, Mod-step over the significant candidates."""
    doses = design.doses if isinstance(design, DoseDesign) else np.asarray(design, dtype=float)
    candidates = list(candidates)
    try:
        mu0 = [m.f0(doses) for m in candidates]
        oc = optimal_contrasts(mu0, S_hat, tuple(m.family for m in candidates))
        mcp = mcp_step(mu_hat, S_hat, oc, alpha, n_draws, seed)
    except np.linalg.LinAlgError as exc:
        return McpModOutcome(None, False, converged=False, reason=f"MCP step: {exc}")
    if not mcp.signal:
        return McpModOutcome(mcp, False)
    fits = {}
    converged = True
    for i in mcp.models_significant:
        m = candidates[i]
        f = gls_fit(m.family, mu_hat, S_hat, doses, start=m)
        fits[m.family] = f
        converged &= f.converged
    chosen = select_model([fits[candidates[i].family] for i in mcp.models_significant])
    med = estimate_med(chosen, delta, doses)
    return McpModOutcome(mcp, True, chosen.model.family, chosen, med, converged,
                         "" if converged else "GLS optimizer", fits)


# Scenario constants of the mouse dose-finding application.
TABLE1_E0 = 1.569
TABLE1_MAX_EFFECT = 1.386
TABLE1_DELTA = 0.693
TABLE1_DOSES = (0.0, 5.0, 25.0, 50.0, 100.0)
TABLE1_GUESSES = {
    "Linear": [],
    "Emax": [(0.5, 50.0)],
    "Exponential": [(0.1, 50.0)],
    "Logistic": [(0.1, 25.0), (0.8, 50.0)],
    "Beta": [(0.3, 5.0), (1.0, 50.0)],
}
TABLE1_TRUE_MED = {"Emax": 25.00, "Exponential": 84.51, "Logistic": 40.37, "Beta": 10.61}


def table1_doses() -> np.ndarray:
    return np.array(TABLE1_DOSES)


def table1_models(doses=TABLE1_DOSES, E0=TABLE1_E0, max_effect=TABLE1_MAX_EFFECT) -> dict:
    """Candidate set (and true curves) built from the percent-of-maximum guesses."""
    doses = np.asarray(doses, dtype=float)
    scal = 1.2 * float(doses.max())
    return {
        fam: params_from_guesses(fam, TABLE1_GUESSES[fam], E0, max_effect, doses, scal if fam == "Beta" else None)
        for fam in FAMILIES
    }
