"""Maximum likelihood, bias-corrected and Firth estimators for the censored
Weibull regression model, plus second-order covariance matrices."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .weibull import (
    CensoredSample,
    ModelSpec,
    NonFiniteLikelihoodError,
    SingularInformationError,
    WeightSet,
    fisher_information,
    log_likelihood,
    observed_hessian,
    score,
    weight_set,
)

__all__ = [
    "MLE",
    "BCE",
    "FIRTH",
    "TAU_MLE",
    "TAU_BCE",
    "FitOptions",
    "FitResult",
    "DeltaSet",
    "fit_mle",
    "fit_bce",
    "fit_firth",
    "cox_snell_bias",
    "delta_matrices",
    "second_order_covariance",
    "mle_exists",
]

MLE = "MLE"
BCE = "BCE"
FIRTH = "Firth"

TAU_MLE = (1, 1)
TAU_BCE = (0, -1)

DIVERGENCE_BOUND = 1e6
DRIFT_Z = -10.0


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 20
    init: np.ndarray | None = None


@dataclass(frozen=True)
class FitResult:
    kind: str
    beta_hat: np.ndarray
    cov_first: np.ndarray | None
    cov_second: np.ndarray | None = None
    converged: bool = False
    iterations: int = 0
    final_score_norm: float = np.inf
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.beta_hat.size

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_first))


@dataclass(frozen=True)
class DeltaSet:
    delta1: np.ndarray
    delta2: np.ndarray
    delta3: np.ndarray
    tau: tuple

    @property
    def delta(self) -> np.ndarray:
        return -0.5 * self.delta1 + 0.25 * self.delta2 + 0.5 * self.tau[1] * self.delta3


def _initial_beta(spec: ModelSpec, sample: CensoredSample) -> np.ndarray:
    X, y = spec.X, sample.y
    events = sample.delta == 1
    for rows in (events, np.ones_like(events)):
        Xs = X[rows]
        if Xs.shape[0] >= spec.p and np.linalg.matrix_rank(Xs) == spec.p:
            beta, *_ = np.linalg.lstsq(Xs, y[rows], rcond=None)
            if np.all(np.isfinite(beta)):
                return beta
    return np.zeros(spec.p)


def mle_exists(spec: ModelSpec, sample: CensoredSample) -> bool:
    """Whether the likelihood attains its supremum.

    The censored extreme-value likelihood increases without bound along a
    direction ``d`` exactly when ``x_i'd = 0`` for every failure and
    ``x_i'd >= 0`` for every censored row, with at least one strict
    inequality.  That is a linear feasibility problem.
    """
    X = spec.X
    ev = sample.delta == 1
    Xe, Xc = X[ev], X[~ev]
    if Xc.shape[0] == 0:
        return True
    p = spec.p
    res = optimize.linprog(
        c=-Xc.sum(axis=0),
        A_ub=np.vstack([-Xc, Xc]),
        b_ub=np.concatenate([np.zeros(Xc.shape[0]), np.ones(Xc.shape[0])]),
        A_eq=Xe if Xe.shape[0] else None,
        b_eq=np.zeros(Xe.shape[0]) if Xe.shape[0] else None,
        bounds=[(None, None)] * p,
        method="highs",
    )
    if res.status != 0:
        return True
    return -res.fun <= 1e-9


def _failure(kind, spec, sample, beta, it, unorm, reason, diag):
    if reason != "divergent coefficient" and not mle_exists(spec, sample):
        reason = "divergent coefficient"
    return FitResult(kind, np.asarray(beta, dtype=float), None, None, False, it, unorm, reason, diag)


def _scoring(kind, spec, sample, options, modified: bool):
    """Newton iteration on the plain or Firth-modified score.

    The log-likelihood is concave, so the observed information
    ``X' diag(exp(z)) X / sigma^2`` is positive definite and is the step
    matrix for the MLE.  For the modified score the derivative of ``K B`` is
    added by central differences (it does not depend on the data), falling
    back to the observed information if that Jacobian is singular.
    Step-halving keeps the log-likelihood from decreasing for the MLE and the
    norm of the modified score from increasing for Firth.
    """
    beta = _initial_beta(spec, sample) if options.init is None else np.asarray(options.init, float).copy()
    diag = {"halvings": 0, "clamped": 0}
    unorm = np.inf
    jac = None

    def evaluate(b):
        ws = weight_set(spec, b)
        K = fisher_information(spec, b, ws)
        u = score(spec, b, sample)
        if modified:
            u = u - K @ cox_snell_bias(spec, b, ws, K)
        obj = log_likelihood(spec, b, sample) if not modified else -float(np.sqrt(u @ u))
        return ws, K, u, obj

    try:
        ws, K, u, obj = evaluate(beta)
    except (SingularInformationError, NonFiniteLikelihoodError) as exc:
        return _failure(kind, spec, sample, beta, 0, unorm, str(exc), diag)
    for it in range(1, options.max_iter + 1):
        diag["clamped"] += ws.clamped
        prev_unorm, unorm = unorm, float(np.max(np.abs(u)))
        if unorm <= options.tol:
            if not modified and _drifting(spec, sample, beta):
                return _failure(kind, spec, sample, beta, it - 1, unorm, "divergent coefficient", diag)
            return _success(kind, spec, beta, K, it - 1, unorm, diag)
        try:
            step = None
            if modified:
                # chord iteration: the full Jacobian is refreshed only when the
                # previous step failed to shrink the modified score quickly
                if jac is None or unorm > 0.05 * prev_unorm:
                    jac = _modified_jacobian(spec, beta, sample)
                if jac is not None:
                    step = linalg.lu_solve(jac, u)
                    if not np.all(np.isfinite(step)):
                        step, jac = None, None
            if step is None:
                H = -observed_hessian(spec, beta, sample)
                step = linalg.cho_solve(linalg.cho_factor(H), u)
        except (linalg.LinAlgError, ValueError):
            return _failure(kind, spec, sample, beta, it, unorm, "singular information", diag)
        t = 1.0
        slack = 1e-12 * max(1.0, abs(obj))
        for _ in range(options.max_halvings + 1):
            cand = beta + t * step
            try:
                cws, cK, cu, cobj = evaluate(cand)
            except (SingularInformationError, NonFiniteLikelihoodError):
                cobj = -np.inf
            if cobj >= obj - slack or np.max(np.abs(t * step)) < 1e-14:
                break
            t *= 0.5
            diag["halvings"] += 1
        else:
            return _failure(kind, spec, sample, beta, it, unorm, "step-halving exhausted", diag)
        if not np.isfinite(cobj):
            return _failure(kind, spec, sample, cand, it, unorm, "non-finite likelihood", diag)
        beta, ws, K, u, obj = cand, cws, cK, cu, cobj
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            return _failure(kind, spec, sample, beta, it, unorm, "divergent coefficient", diag)
    unorm = float(np.max(np.abs(u)))
    if unorm <= options.tol and not (not modified and _drifting(spec, sample, beta)):
        return _success(kind, spec, beta, K, options.max_iter, unorm, diag)
    return _failure(kind, spec, sample, beta, options.max_iter, unorm, "iteration limit", diag)


def _drifting(spec, sample, beta) -> bool:
    """A small score can also mean the iterate is running off along a
    recession direction: the score then decays like ``exp(z_i)`` for censored
    rows far beyond their censoring time.  Such rows trigger the exact
    existence check."""
    z = (sample.y - spec.X @ beta) / spec.sigma
    censored = sample.delta == 0
    if not np.any(censored & (z < DRIFT_Z)):
        return False
    return not mle_exists(spec, sample)


def _modified_jacobian(spec, beta, sample):
    """LU factors of ``-dU*/db``, or ``None`` if it is singular."""
    try:
        J = -observed_hessian(spec, beta, sample) + _bias_jacobian(spec, beta)
        if not np.all(np.isfinite(J)):
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(J, check_finite=False)
    except (linalg.LinAlgError, SingularInformationError, NonFiniteLikelihoodError, ValueError):
        return None
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-12 * np.max(np.abs(np.diag(lu[0]))):
        return None
    return lu


def _bias_jacobian(spec, beta, rel_step=1e-5):
    """Central-difference derivative of ``K(b) B(b)`` with respect to ``b``."""
    p = beta.size
    J = np.empty((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(beta[j]))
        cols = []
        for sgn in (1.0, -1.0):
            b = beta.copy()
            b[j] += sgn * h
            ws = weight_set(spec, b)
            K = fisher_information(spec, b, ws)
            cols.append(K @ cox_snell_bias(spec, b, ws, K))
        J[:, j] = (cols[0] - cols[1]) / (2.0 * h)
    return J


def _success(kind, spec, beta, K, it, unorm, diag):
    cov = linalg.cho_solve(linalg.cho_factor(K), np.eye(spec.p))
    cov = 0.5 * (cov + cov.T)
    return FitResult(kind, beta, cov, None, True, it, unorm, "", diag)


def fit_mle(spec: ModelSpec, sample: CensoredSample, options: FitOptions = FitOptions()) -> FitResult:
    """Maximum likelihood by Newton steps on the observed information with
    step-halving.

    Non-convergence is reported through ``converged=False`` and ``reason``;
    it is never raised.
    """
    return _scoring(MLE, spec, sample, options, modified=False)


def fit_firth(spec: ModelSpec, sample: CensoredSample, options: FitOptions = FitOptions()) -> FitResult:
    """Root of the Firth-modified score ``U(b) - K(b) B(b)``."""
    if options.init is None:
        start = fit_mle(spec, sample, FitOptions(tol=1e-6, max_iter=options.max_iter))
        if start.converged:
            options = FitOptions(options.tol, options.max_iter, options.max_halvings, start.beta_hat)
    return _scoring(FIRTH, spec, sample, options, modified=True)


def fit_bce(
    spec: ModelSpec,
    sample: CensoredSample,
    options: FitOptions = FitOptions(),
    mle: FitResult | None = None,
) -> FitResult:
    """Cox-Snell corrected estimator ``b - B(b)`` at the MLE ``b``.

    ``cov_first`` is the inverse information re-evaluated at the corrected
    estimate.  Pass a converged ``mle`` to avoid refitting.
    """
    if mle is None:
        mle = fit_mle(spec, sample, options)
    if not mle.converged:
        return FitResult(BCE, mle.beta_hat, None, None, False, mle.iterations, mle.final_score_norm,
                         mle.reason, dict(mle.diagnostics))
    try:
        tilde = mle.beta_hat - cox_snell_bias(spec, mle.beta_hat)
        K = fisher_information(spec, tilde)
    except (SingularInformationError, NonFiniteLikelihoodError) as exc:
        return FitResult(BCE, mle.beta_hat, None, None, False, mle.iterations, mle.final_score_norm,
                         str(exc), dict(mle.diagnostics))
    cov = linalg.cho_solve(linalg.cho_factor(K), np.eye(spec.p))
    return FitResult(BCE, tilde, 0.5 * (cov + cov.T), None, True, mle.iterations,
                     mle.final_score_norm, "", dict(mle.diagnostics))


def _inverse_information(spec, ws):
    K = (spec.X.T * ws.w) @ spec.X / spec.sigma**2
    try:
        c = linalg.cho_factor(K)
    except linalg.LinAlgError as exc:
        raise SingularInformationError("Fisher information is singular") from exc
    A = linalg.cho_solve(c, np.eye(spec.p))
    return 0.5 * (A + A.T)


def cox_snell_bias(spec: ModelSpec, beta, weights: WeightSet | None = None, K=None) -> np.ndarray:
    """First-order bias ``-(1/(2 sigma^3)) P Z_d (W + 2 sigma W') 1``.

    ``P = K^{-1} X'`` and ``Z_d`` is the diagonal of ``X K^{-1} X'``.
    """
    ws = weight_set(spec, beta) if weights is None else weights
    X, s = spec.X, spec.sigma
    if K is None:
        A = _inverse_information(spec, ws)
    else:
        A = linalg.cho_solve(linalg.cho_factor(K, check_finite=False), np.eye(spec.p), check_finite=False)
    zd = np.einsum("ij,jk,ik->i", X, A, X)
    return -(A @ (X.T @ (zd * (ws.w + 2 * s * ws.w_prime)))) / (2 * s**3)


def delta_matrices(spec: ModelSpec, beta, tau=TAU_MLE, weights: WeightSet | None = None) -> DeltaSet:
    """The three building blocks of the second-order covariance correction.

    ``Z^(2) = Z o Z`` is never formed: with ``g_i = x_i (x) x_i`` one has
    ``z_ij**2 = g_i' (A (x) A) g_j``, so every ``X' D1 Z^(2) D2 X`` reduces to
    ``(X' D1 G)(A (x) A)(G' D2 X)``.
    """
    tau = tuple(tau)
    if tau not in (TAU_MLE, TAU_BCE):
        raise ValueError("tau must be (1, 1) or (0, -1)")
    ws = weight_set(spec, beta) if weights is None else weights
    X, s = spec.X, spec.sigma
    n, p = X.shape
    A = _inverse_information(spec, ws)
    XA = X @ A
    zd = np.einsum("ij,ij->i", XA, X)
    w, w1, w2 = ws.w, ws.w_prime, ws.w_dprime

    w_star = w * (w - 2) - 2 * s * w1 + s * tau[0] * (w1 + 2 * s * w2)
    d1 = (X.T * (w_star * zd)) @ X / s**4

    G = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    AA = np.kron(A, A)
    XwG = (X.T * w) @ G
    Xw1G = (X.T * w1) @ G
    GwX = XwG.T
    Gw1X = Xw1G.T
    mid = XwG @ AA @ GwX - 2 * s * (XwG @ AA @ Gw1X) - 6 * s**2 * (Xw1G @ AA @ Gw1X)
    d2 = -mid / s**6

    w_2star = XA @ (X.T @ ((w + 2 * s * w1) * zd))
    d3 = (X.T * (w1 * w_2star)) @ X / s**5
    return DeltaSet(d1, d2, d3, tau)


def second_order_covariance(spec: ModelSpec, beta_star, tau=TAU_MLE, weights: WeightSet | None = None) -> np.ndarray:
    """``K^{-1} + K^{-1} (Delta + Delta') K^{-1}`` evaluated at ``beta_star``.

    Use ``tau=(1, 1)`` at the MLE and ``tau=(0, -1)`` at the bias-corrected
    estimate.  The result is symmetric but not guaranteed positive definite.
    """
    ws = weight_set(spec, beta_star) if weights is None else weights
    A = _inverse_information(spec, ws)
    D = delta_matrices(spec, beta_star, tau, ws).delta
    cov = A + A @ (D + D.T) @ A
    return 0.5 * (cov + cov.T)
