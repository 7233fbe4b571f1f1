"""Censored Weibull (extreme-value) regression primitives.

The response is modelled on the log scale: ``y_i = log(min(T_i, L_i))`` with
``T_i ~ Weibull(lambda_i, sigma)`` and ``log(lambda_i) = x_i' beta``.  The shape
``sigma`` is treated as known throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "EXP_CLAMP",
    "CovariateDesign",
    "CensoringScheme",
    "ModelSpec",
    "CensoredSample",
    "WeightSet",
    "NonFiniteLikelihoodError",
    "SingularInformationError",
    "log_likelihood",
    "score",
    "observed_hessian",
    "weight_set",
    "fisher_information",
    "simulate_sample",
    "simulate_from_uniforms",
    "calibrate_censoring",
    "expected_censoring_rate",
    "read_sample_csv",
    "write_sample_csv",
]

EXP_CLAMP = 700.0

TYPE_I = "type1"
TYPE_II = "type2"
HYBRID = "hybrid"
_KINDS = {TYPE_I, TYPE_II, HYBRID}


class NonFiniteLikelihoodError(ArithmeticError):
    """The linear predictor or the likelihood overflowed."""


class SingularInformationError(np.linalg.LinAlgError):
    """``X' W X`` is not positive definite."""


@dataclass(frozen=True)
class CovariateDesign:
    """Model matrix with one row per observation."""

    X: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrix has non-finite entries")
        n, p = X.shape
        if n < p:
            raise ValueError(f"need n >= p, got n={n}, p={p}")
        if np.linalg.matrix_rank(X) < p:
            raise ValueError("design matrix is rank deficient")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CensoringScheme:
    """Right-censoring mechanism.

    Parameters
    ----------
    kind
        ``"type1"`` (fixed censoring times ``L``), ``"type2"`` (stop at the
        ``r``-th failure) or ``"hybrid"`` (whichever comes first).
    L
        Censoring times on the original time scale, scalar or one per
        observation.  ``inf`` means no time censoring.
    r
        Number of failures that ends a type II / hybrid experiment.
    q
        Mixing weight between the type I and type II expected weights.  Forced
        to 1 for type I and 0 for type II.
    """

    kind: str = TYPE_I
    L: float | np.ndarray = math.inf
    r: int | None = None
    q: float | None = None

    def __post_init__(self):
        kind = self.kind.lower().replace(" ", "").replace("_", "")
        kind = {"typei": TYPE_I, "typeii": TYPE_II, "i": TYPE_I, "ii": TYPE_II}.get(kind, kind)
        if kind not in _KINDS:
            raise ValueError(f"unknown censoring kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        L = np.asarray(self.L, dtype=float)
        if np.any(~(L > 0)):
            raise ValueError("censoring times must be positive")
        if L.ndim == 0:
            L = float(L)
        else:
            L.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "_log_L", np.log(L))
        if kind in (TYPE_II, HYBRID):
            if self.r is None or int(self.r) < 1:
                raise ValueError("type II / hybrid censoring needs r >= 1")
            object.__setattr__(self, "r", int(self.r))
        if kind == TYPE_I:
            q = 1.0
        elif kind == TYPE_II:
            q = 0.0
        else:
            if self.q is None or not 0.0 <= self.q <= 1.0:
                raise ValueError("hybrid censoring needs q in [0, 1]")
            q = float(self.q)
        object.__setattr__(self, "q", q)

    def log_L(self, n: int) -> np.ndarray:
        return np.broadcast_to(self._log_L, (n,))


@dataclass(frozen=True)
class ModelSpec:
    design: CovariateDesign
    sigma: float
    censoring: CensoringScheme = field(default_factory=CensoringScheme)

    def __post_init__(self):
        if not isinstance(self.design, CovariateDesign):
            object.__setattr__(self, "design", CovariateDesign(self.design))
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive and finite")
        c = self.censoring
        if c.kind != TYPE_I and c.r > self.design.n:
            raise ValueError("r cannot exceed the sample size")
        if np.ndim(c.L) == 1 and len(c.L) != self.design.n:
            raise ValueError("one censoring time per observation expected")

    @property
    def X(self) -> np.ndarray:
        return self.design.X

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def p(self) -> int:
        return self.design.p

    def with_censoring(self, censoring: CensoringScheme) -> "ModelSpec":
        return ModelSpec(self.design, self.sigma, censoring)


@dataclass(frozen=True)
class CensoredSample:
    """Log observed times ``y`` and event indicators ``delta`` (1 = failure)."""

    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        d = np.asarray(self.delta).ravel()
        if y.shape != d.shape:
            raise ValueError("y and delta must have the same length")
        if not np.all(np.isfinite(y)):
            raise ValueError("log times must be finite")
        if not np.all((d == 0) | (d == 1)):
            raise ValueError("delta must be 0/1")
        d = d.astype(float)
        y.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", d)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class WeightSet:
    """Expected weights ``w_i = E exp((y_i - mu_i)/sigma)`` and their
    first two derivatives with respect to ``mu_i``."""

    w: np.ndarray
    w_prime: np.ndarray
    w_dprime: np.ndarray
    clamped: int = 0


def _check(spec: ModelSpec, beta, sample: CensoredSample | None = None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != spec.p:
        raise ValueError(f"beta has length {beta.size}, expected {spec.p}")
    if sample is not None and sample.n != spec.n:
        raise ValueError(f"sample has {sample.n} rows, design has {spec.n}")
    return beta


def _linear_predictor(spec: ModelSpec, beta: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        mu = spec.X @ beta
    if not np.all(np.isfinite(mu)):
        raise NonFiniteLikelihoodError("non-finite linear predictor")
    return mu


def _standardized(spec, beta, sample):
    mu = _linear_predictor(spec, beta)
    return (sample.y - mu) / spec.sigma


def log_likelihood(spec: ModelSpec, beta, sample: CensoredSample) -> float:
    """Censored extreme-value log-likelihood (one ``-log sigma`` per event)."""
    beta = _check(spec, beta, sample)
    z = _standardized(spec, beta, sample)
    with np.errstate(over="ignore"):
        ll = float(np.sum(sample.delta * (z - math.log(spec.sigma)) - np.exp(z)))
    if not math.isfinite(ll):
        raise NonFiniteLikelihoodError("log-likelihood overflowed")
    return ll


def score(spec: ModelSpec, beta, sample: CensoredSample) -> np.ndarray:
    beta = _check(spec, beta, sample)
    z = _standardized(spec, beta, sample)
    with np.errstate(over="ignore"):
        u = spec.X.T @ (np.exp(z) - sample.delta) / spec.sigma
    if not np.all(np.isfinite(u)):
        raise NonFiniteLikelihoodError("score overflowed")
    return u


def observed_hessian(spec: ModelSpec, beta, sample: CensoredSample) -> np.ndarray:
    """Second derivative matrix of :func:`log_likelihood`."""
    beta = _check(spec, beta, sample)
    e = np.exp(_standardized(spec, beta, sample))
    return -(spec.X.T * e) @ spec.X / spec.sigma**2


def weight_set(spec: ModelSpec, beta) -> WeightSet:
    """Expected weights under the model's censoring scheme.

    With ``a_i = exp((log L_i - mu_i)/sigma)`` the type I branch is
    ``w = 1 - exp(-a)``, ``w' = -a exp(-a)/sigma`` and
    ``w'' = -a exp(-a) (a - 1)/sigma**2``.  The type II branch is the
    constant ``r/n``.  Exponent arguments are clamped to ``[-700, 700]``.
    """
    beta = _check(spec, beta)
    mu = _linear_predictor(spec, beta)
    n, sigma, c = spec.n, spec.sigma, spec.censoring
    if c.q == 0.0:
        w = np.full(n, c.r / n)
        zero = np.zeros(n)
        return WeightSet(w, zero, zero.copy())
    arg = (c.log_L(n) - mu) / sigma
    finite = np.isfinite(arg)
    clamped = int(np.count_nonzero(finite & (np.abs(arg) > EXP_CLAMP)))
    arg = np.clip(arg, -EXP_CLAMP, EXP_CLAMP)
    a = np.exp(arg)
    ea = np.exp(-a)
    w1 = -np.expm1(-a)
    d1 = -a * ea / sigma
    d2 = -a * ea * (a - 1.0) / sigma**2
    q = c.q
    if q == 1.0:
        return WeightSet(w1, d1, d2, clamped)
    w = q * w1 + (1.0 - q) * (c.r / n)
    return WeightSet(w, q * d1, q * d2, clamped)


def fisher_information(spec: ModelSpec, beta, weights: WeightSet | None = None) -> np.ndarray:
    """Expected information ``X' W X / sigma**2``.

    Raises :class:`SingularInformationError` when the matrix is not positive
    definite (for instance when too many weights underflow to zero).
    """
    if weights is None:
        weights = weight_set(spec, beta)
    K = (spec.X.T * weights.w) @ spec.X / spec.sigma**2
    K = 0.5 * (K + K.T)
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError("Fisher information is singular") from exc
    return K


def simulate_from_uniforms(spec: ModelSpec, beta, u: np.ndarray) -> CensoredSample:
    """Deterministic part of :func:`simulate_sample` given uniforms ``u``.

    ``T_i = lambda_i (-log u_i)**sigma``; censoring is then applied according to
    the scheme.  Working on the log scale avoids overflow for large ``mu``.
    """
    beta = _check(spec, beta)
    mu = spec.X @ beta
    u = np.asarray(u, dtype=float)
    logT = mu + spec.sigma * np.log(-np.log(u))
    c = spec.censoring
    n = spec.n
    logL = c.log_L(n)
    limit = np.full(n, np.inf)
    if c.kind in (TYPE_I, HYBRID):
        limit = logL.copy()
    if c.kind in (TYPE_II, HYBRID) and c.r < n:
        rth = np.partition(logT, c.r - 1)[c.r - 1]
        limit = np.minimum(limit, rth)
    delta = (logT <= limit).astype(float)
    y = np.minimum(logT, limit)
    return CensoredSample(y, delta)


def simulate_sample(spec: ModelSpec, beta, rng: np.random.Generator) -> CensoredSample:
    u = rng.random(spec.n)
    # guard against u == 0 (probability 2**-53 per draw)
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    return simulate_from_uniforms(spec, beta, u)


def expected_censoring_rate(mu: np.ndarray, sigma: float, log_L: float) -> float:
    """Average of ``P(T_i > L) = exp(-exp((log L - mu_i)/sigma))``."""
    arg = np.clip((log_L - np.asarray(mu)) / sigma, -EXP_CLAMP, EXP_CLAMP)
    return float(np.mean(np.exp(-np.exp(arg))))


def calibrate_censoring(spec: ModelSpec, beta, target_rate: float, tol: float = 1e-10) -> float:
    """Common type I censoring time giving an expected censored fraction.

    Solves ``mean_i P(T_i > L) = target_rate`` for ``L`` by bisection on
    ``log L``.  Returns ``inf`` for a zero target.  The censoring scheme
    attached to ``spec`` is ignored.
    """
    if not 0.0 <= target_rate < 1.0:
        raise ValueError("target censoring rate must lie in [0, 1)")
    if target_rate == 0.0:
        return math.inf
    beta = _check(spec, beta)
    mu = spec.X @ beta
    sigma = spec.sigma

    def gap(log_L):
        return expected_censoring_rate(mu, sigma, log_L) - target_rate

    # rate is decreasing in log L
    lo = hi = float(np.median(mu))
    step = max(sigma, 1.0)
    for _ in range(200):
        if gap(lo) > 0:
            break
        lo -= step
        step *= 2
    else:
        raise ValueError("could not bracket the censoring time")
    step = max(sigma, 1.0)
    for _ in range(200):
        if gap(hi) < 0:
            break
        hi += step
        step *= 2
    else:
        raise ValueError("could not bracket the censoring time")
    log_L = optimize.bisect(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(gap(log_L)) > tol:
        raise ValueError("censoring calibration did not reach the requested tolerance")
    return math.exp(log_L)


def write_sample_csv(path, sample: CensoredSample, X: np.ndarray) -> None:
    X = np.atleast_2d(X)
    header = ["y", "delta"] + [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for yi, di, xi in zip(sample.y, sample.delta, X):
            fields = [repr(float(yi)), str(int(di))] + [repr(float(v)) for v in xi]
            fh.write(",".join(fields) + "\n")


def read_sample_csv(path) -> tuple[CensoredSample, np.ndarray]:
    """Read a ``y, delta, x1..xp`` table.  Raises ``ValueError`` with the
    offending row or column on malformed input."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        for col in ("y", "delta"):
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        if not xcols:
            raise ValueError(f"{path}: no covariate columns x1..xp")
        xcols.sort(key=lambda h: int(h[1:]))
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if xcols != expected:
            raise ValueError(f"{path}: covariate columns must be x1..x{len(xcols)}")
        iy, idl = header.index("y"), header.index("delta")
        ix = [header.index(h) for h in xcols]
        ys, ds, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                y = float(row[iy])
                d = float(row[idl])
                x = [float(row[k]) for k in ix]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if d not in (0.0, 1.0):
                raise ValueError(f"{path}:{lineno}: delta must be 0 or 1")
            ys.append(y)
            ds.append(d)
            xs.append(x)
    if not ys:
        raise ValueError(f"{path}: no data rows")
    return CensoredSample(np.array(ys), np.array(ds)), np.array(xs)
