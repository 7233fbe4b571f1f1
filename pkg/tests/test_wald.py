import numpy as np
import pytest
from scipy import stats

from wss.estimators import BCE, FIRTH, MLE, FitResult, fit_mle
from wss.wald import (
    ChiSquare,
    ContrastSpec,
    TestUndefinedError,
    chi_square,
    matrix_distances,
    partitioned_information,
    subset_contrast,
    variant_name,
    wald_statistic,
    wald_test,
)
from wss.weibull import fisher_information, weight_set

from conftest import random_case


# ------------------------------------------------------------- chi-square


def test_chi_square_quantiles():
    assert chi_square(1).quantile(0.95) == pytest.approx(3.841459, abs=1e-6)
    assert chi_square(3).quantile(0.95) == pytest.approx(7.814728, abs=1e-6)


@pytest.mark.parametrize("df", [1, 2, 3, 7, 30])
def test_chi_square_agrees_with_reference(df):
    x = np.array([0.01, 0.5, 1.0, 3.0, 10.0, 50.0])
    d = chi_square(df)
    assert d.cdf(x) == pytest.approx(stats.chi2.cdf(x, df), rel=1e-12, abs=1e-300)
    assert d.sf(x) == pytest.approx(stats.chi2.sf(x, df), rel=1e-10, abs=1e-300)
    for prob in (1e-6, 0.05, 0.5, 0.95, 1 - 1e-9):
        assert d.quantile(prob) == pytest.approx(stats.chi2.ppf(prob, df), rel=1e-9)


def test_chi_square_rejects_bad_input():
    with pytest.raises(ValueError):
        ChiSquare(0)
    with pytest.raises(ValueError):
        chi_square(2).quantile(1.0)


# ---------------------------------------------------------------- statistic


def test_wald_statistic_at_critical_value():
    c = subset_contrast(2, [0.0], q=1)
    z = np.sqrt(3.8415)
    stat = wald_statistic([z * 0.5, 7.0], np.diag([0.25, 1.0]), c)
    assert stat == pytest.approx(3.8415)
    fit = FitResult(MLE, np.array([z * 0.5, 7.0]), np.diag([0.25, 1.0]), converged=True)
    res = wald_test(fit, "first", c)
    assert res.variant == "MLE"
    assert res.df == 1
    assert res.p_value == pytest.approx(0.05, abs=1e-5)


def test_subset_contrast_equals_inverse_block(rng):
    for _ in range(20):
        p, q = 4, 2
        b = rng.normal(size=p)
        M = rng.normal(size=(p, p))
        cov = M @ M.T + np.eye(p)
        b0 = rng.normal(size=q)
        direct = (b[:q] - b0) @ np.linalg.solve(cov[:q, :q], b[:q] - b0)
        assert wald_statistic(b, cov, subset_contrast(p, b0)) == pytest.approx(direct, rel=1e-12)


def test_statistic_invariant_to_row_scaling(rng):
    b = rng.normal(size=3)
    cov = np.diag([0.3, 0.2, 0.5])
    C = rng.normal(size=(2, 3))
    b0 = rng.normal(size=3)
    s1 = wald_statistic(b, cov, ContrastSpec(C, b0))
    s2 = wald_statistic(b, cov, ContrastSpec(np.diag([3.0, -0.1]) @ C, b0))
    assert s1 == pytest.approx(s2, rel=1e-12)


def test_contrast_validation():
    with pytest.raises(ValueError):
        ContrastSpec(np.ones((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ContrastSpec(np.eye(2), np.zeros(3))


def test_indefinite_covariance_leaves_test_undefined():
    fit = FitResult(MLE, np.zeros(2), np.eye(2), np.diag([-1.0, 1.0]), converged=True)
    with pytest.raises(TestUndefinedError):
        wald_test(fit, "second", subset_contrast(2, [0.0]))


def test_missing_covariance_leaves_test_undefined():
    fit = FitResult(FIRTH, np.zeros(2), None, converged=False)
    with pytest.raises(TestUndefinedError):
        wald_test(fit, "first", subset_contrast(2, [0.0]))


def test_variant_names():
    assert variant_name(MLE, "first") == "MLE"
    assert variant_name(MLE, "second") == "MLE2"
    assert variant_name(BCE, "second") == "BCE2"
    assert variant_name(FIRTH, "first") == "Firth"
    with pytest.raises(ValueError):
        variant_name(FIRTH, "second")
    with pytest.raises(ValueError):
        variant_name(MLE, "third")


def test_wald_on_real_fit(rng):
    spec, beta, sample = random_case(rng, n=40)
    fit = fit_mle(spec, sample)
    res = wald_test(fit, "first", subset_contrast(spec.p, beta[:1]))
    assert res.statistic >= 0
    assert 0 <= res.p_value <= 1


# ---------------------------------------------------- partitioned information


def test_partitioned_inverse_block_identity():
    rng = np.random.default_rng(31)
    for k in range(100):
        kind = ("type1", "type2", "hybrid")[k % 3]
        p = int(rng.integers(2, 5))
        spec, beta, _ = random_case(rng, n=int(rng.integers(p + 2, 20)), p=p, kind=kind)
        q = int(rng.integers(1, p))
        parts = partitioned_information(spec, beta, q)
        K = fisher_information(spec, beta)
        K11_upper = np.linalg.inv(np.linalg.inv(K)[:q, :q])
        schur = parts["K11"] - parts["K12"] @ np.linalg.solve(parts["K22"], parts["K12"].T)
        assert np.max(np.abs(parts["K11_inv_via_R"] - K11_upper)) <= 1e-10 * max(1.0, np.abs(K11_upper).max())
        assert np.max(np.abs(parts["K11_inv_via_R"] - schur)) <= 1e-10 * max(1.0, np.abs(schur).max())


def test_residual_columns_are_weighted_orthogonal(rng):
    spec, beta, _ = random_case(rng, n=15, p=4)
    parts = partitioned_information(spec, beta, 2)
    w = weight_set(spec, beta).w
    assert np.allclose((parts["R"].T * w) @ spec.X[:, 2:], 0.0, atol=1e-10)


def test_partition_needs_proper_split(rng):
    spec, beta, _ = random_case(rng, p=3)
    with pytest.raises(ValueError):
        partitioned_information(spec, beta, 3)


# --------------------------------------------------------------- distances


def test_matrix_distances_example():
    A = np.array([[1.0, 0.5], [0.5, 2.0]])
    B = np.array([[1.5, 0.0], [0.0, 2.0]])
    r = matrix_distances(A, B)
    assert r.d1 == pytest.approx(0.5)
    assert r.d2 == pytest.approx(np.sqrt(0.75))
    assert r.d3 == pytest.approx(1.5)


def test_matrix_distances_of_identical_matrices_are_zero():
    A = np.eye(3)
    r = matrix_distances(A, A)
    assert (r.d1, r.d2, r.d3) == (0.0, 0.0, 0.0)


def test_matrix_distances_shape_check():
    with pytest.raises(ValueError):
        matrix_distances(np.eye(2), np.eye(3))
