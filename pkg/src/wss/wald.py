"""Wald-type tests, partitioned information and matrix distances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special

from .estimators import BCE, FIRTH, MLE, FitResult
from .weibull import ModelSpec, weight_set

__all__ = [
    "VARIANTS",
    "ContrastSpec",
    "WaldResult",
    "TestUndefinedError",
    "ChiSquare",
    "chi_square",
    "wald_test",
    "wald_statistic",
    "variant_name",
    "subset_contrast",
    "partitioned_information",
    "MatrixDistanceReport",
    "matrix_distances",
]

VARIANTS = ("MLE", "MLE2", "BCE", "BCE2", "Firth")


class TestUndefinedError(np.linalg.LinAlgError):
    """``C Sigma C'`` is not positive definite."""

    __test__ = False


@dataclass(frozen=True)
class ContrastSpec:
    """Linear hypothesis ``C beta = C beta0``."""

    C: np.ndarray
    beta0: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        b0 = np.asarray(self.beta0, dtype=float).ravel()
        if C.shape[1] != b0.size:
            raise ValueError("contrast matrix and beta0 disagree in dimension")
        if np.linalg.matrix_rank(C) != C.shape[0]:
            raise ValueError("contrast matrix must have full row rank")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "beta0", b0)

    @property
    def m(self) -> int:
        return self.C.shape[0]


def subset_contrast(p: int, beta1_null, q: int | None = None) -> ContrastSpec:
    """Contrast testing that the first ``q`` coefficients equal ``beta1_null``."""
    beta1_null = np.atleast_1d(np.asarray(beta1_null, dtype=float))
    q = beta1_null.size if q is None else q
    C = np.hstack([np.eye(q), np.zeros((q, p - q))])
    beta0 = np.concatenate([beta1_null, np.zeros(p - q)])
    return ContrastSpec(C, beta0)


@dataclass(frozen=True)
class ChiSquare:
    """Chi-square distribution with cdf from the regularized lower incomplete
    gamma function and a bracketing quantile."""

    df: float

    def __post_init__(self):
        if not self.df >= 1:
            raise ValueError("df must be at least 1")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = special.gammainc(self.df / 2.0, np.maximum(x, 0.0) / 2.0)
        return float(out) if out.ndim == 0 else out

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        out = special.gammaincc(self.df / 2.0, np.maximum(x, 0.0) / 2.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, prob: float) -> float:
        if not 0.0 < prob < 1.0:
            raise ValueError("quantile probability must lie in (0, 1)")
        hi = max(1.0, self.df)
        while self.cdf(hi) < prob:
            hi *= 2.0
        # work on the smaller tail for accuracy
        if prob > 0.5:
            f = lambda x: (1.0 - prob) - self.sf(x)
        else:
            f = lambda x: self.cdf(x) - prob
        return optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


def chi_square(df) -> ChiSquare:
    return ChiSquare(df)


@dataclass(frozen=True)
class WaldResult:
    variant: str
    statistic: float
    df: int
    p_value: float


def variant_name(kind: str, covariance_choice: str) -> str:
    if covariance_choice not in ("first", "second"):
        raise ValueError("covariance_choice must be 'first' or 'second'")
    if kind == FIRTH:
        if covariance_choice == "second":
            raise ValueError("no second-order covariance for the Firth estimator")
        return "Firth"
    if kind not in (MLE, BCE):
        raise ValueError(f"unknown estimator kind {kind!r}")
    return kind + ("2" if covariance_choice == "second" else "")


def wald_statistic(estimate, cov, contrast: ContrastSpec) -> float:
    """``(C b - C b0)' (C Sigma C')^{-1} (C b - C b0)`` through a Cholesky solve."""
    C = contrast.C
    d = C @ (np.asarray(estimate, dtype=float) - contrast.beta0)
    V = C @ cov @ C.T
    V = 0.5 * (V + V.T)
    try:
        c = linalg.cho_factor(V)
    except linalg.LinAlgError as exc:
        raise TestUndefinedError("C Sigma C' is not positive definite") from exc
    return float(d @ linalg.cho_solve(c, d))


def wald_test(fit: FitResult, covariance_choice: str, contrast: ContrastSpec) -> WaldResult:
    variant = variant_name(fit.kind, covariance_choice)
    cov = fit.cov_first if covariance_choice == "first" else fit.cov_second
    if cov is None:
        raise TestUndefinedError(f"{variant}: covariance not available")
    stat = wald_statistic(fit.beta_hat, cov, contrast)
    return WaldResult(variant, stat, contrast.m, ChiSquare(contrast.m).sf(stat))


def partitioned_information(spec: ModelSpec, beta, q: int) -> dict:
    """Blocks of the information for ``beta = (beta_1, beta_2)`` with
    ``dim(beta_1) = q``, and ``{K^11}^{-1}`` through the weighted residual
    matrix ``R = X_1 - X_2 C``."""
    p = spec.p
    if not 1 <= q < p:
        raise ValueError("need 1 <= q < p")
    w = weight_set(spec, beta).w
    s2 = spec.sigma**2
    X1, X2 = spec.X[:, :q], spec.X[:, q:]
    K11 = (X1.T * w) @ X1 / s2
    K12 = (X1.T * w) @ X2 / s2
    K22 = (X2.T * w) @ X2 / s2
    try:
        Cmat = linalg.cho_solve(linalg.cho_factor((X2.T * w) @ X2), (X2.T * w) @ X1)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("X2' W X2 is singular") from exc
    R = X1 - X2 @ Cmat
    return {
        "K11": K11,
        "K12": K12,
        "K22": K22,
        "C": Cmat,
        "R": R,
        "K11_inv_via_R": (R.T * w) @ R / s2,
    }


@dataclass(frozen=True)
class MatrixDistanceReport:
    d1: float
    d2: float
    d3: float


def matrix_distances(A, B) -> MatrixDistanceReport:
    """Max absolute diagonal difference, Frobenius distance and total absolute
    difference."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise ValueError("matrices must have the same two-dimensional shape")
    D = A - B
    return MatrixDistanceReport(
        float(np.max(np.abs(np.diag(D)))),
        float(np.sqrt(np.trace(D.T @ D))),
        float(np.sum(np.abs(D))),
    )
