import math

import numpy as np
import pytest

from wss.weibull import (
    CensoredSample,
    CensoringScheme,
    CovariateDesign,
    ModelSpec,
    SingularInformationError,
    calibrate_censoring,
    fisher_information,
    log_likelihood,
    observed_hessian,
    read_sample_csv,
    score,
    simulate_from_uniforms,
    simulate_sample,
    WeightSet,
    weight_set,
    write_sample_csv,
)

from conftest import make_spec, random_case
from oracles import type1_weights


def one_point(delta):
    spec = ModelSpec(CovariateDesign(np.ones((1, 1))), 1.0)
    return spec, CensoredSample([0.3], [delta])


# ------------------------------------------------------------- likelihood


@pytest.mark.parametrize("delta", [1, 0])
def test_single_observation_at_its_location(delta):
    spec, sample = one_point(delta)
    assert log_likelihood(spec, [0.3], sample) == pytest.approx(-1.0, abs=1e-15)


def test_single_event_score_vanishes():
    spec, sample = one_point(1)
    assert score(spec, [0.3], sample) == pytest.approx([0.0], abs=1e-15)


def test_exponential_loglik_at_log_mean(rng):
    t = rng.exponential(size=10)
    spec = ModelSpec(CovariateDesign(np.ones((10, 1))), 1.0)
    sample = CensoredSample(np.log(t), np.ones(10))
    b = math.log(t.mean())
    # density of y = log T: sum(y) - n log tbar - n
    expected = np.log(t).sum() - 10 * b - 10
    assert log_likelihood(spec, [b], sample) == pytest.approx(expected, rel=1e-13)
    assert score(spec, [b], sample) == pytest.approx([0.0], abs=1e-12)


def test_log_sigma_counted_once_per_event():
    X = np.ones((4, 1))
    sample = CensoredSample(np.zeros(4), [1, 1, 0, 1])
    l1 = log_likelihood(ModelSpec(CovariateDesign(X), 1.0), [0.0], sample)
    s = 2.0
    l2 = log_likelihood(ModelSpec(CovariateDesign(X), s), [0.0], sample)
    assert l1 - l2 == pytest.approx(3 * math.log(s))


@pytest.mark.parametrize("kind", ["type1", "type2", "hybrid"])
def test_score_matches_finite_differences(rng, kind):
    for _ in range(20):
        spec, beta, sample = random_case(rng, n=15, p=3, kind=kind)
        g = score(spec, beta, sample)
        h = 1e-6
        fd = np.array([
            (log_likelihood(spec, beta + h * e, sample) - log_likelihood(spec, beta - h * e, sample)) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(g).max()))


def test_observed_hessian_matches_score_differences(rng):
    spec, beta, sample = random_case(rng, n=15, p=3)
    H = observed_hessian(spec, beta, sample)
    h = 1e-6
    fd = np.column_stack([
        (score(spec, beta + h * e, sample) - score(spec, beta - h * e, sample)) / (2 * h) for e in np.eye(3)
    ])
    assert np.allclose(H, fd, rtol=1e-6, atol=1e-7)


def test_dimension_mismatch_raises(rng):
    spec, beta, sample = random_case(rng)
    with pytest.raises(ValueError):
        score(spec, beta[:2], sample)
    with pytest.raises(ValueError):
        log_likelihood(spec, beta, CensoredSample(sample.y[:-1], sample.delta[:-1]))


@pytest.mark.slow
def test_score_has_mean_zero_at_truth():
    rng = np.random.default_rng(7)
    spec = make_spec(rng, n=10, p=2, sigma=1.0, L=2.0)
    beta = np.array([0.2, -0.4])
    U = np.array([score(spec, beta, simulate_sample(spec, beta, rng)) for _ in range(10_000)])
    se = U.std(axis=0, ddof=1) / math.sqrt(len(U))
    assert np.all(np.abs(U.mean(axis=0)) < 4 * se)


# ------------------------------------------------------------------ weights


def test_weight_at_censoring_equal_to_location():
    mu = np.array([0.0, 0.7, -1.1])
    X = np.diag(np.ones(3))
    spec = ModelSpec(CovariateDesign(X), 1.0, CensoringScheme("type1", np.exp(mu)))
    w = weight_set(spec, mu)
    assert w.w == pytest.approx(np.full(3, 1 - math.exp(-1)), abs=1e-15)
    assert w.w[0] == pytest.approx(0.63212, abs=1e-5)


def test_type2_weights_are_constant():
    spec = ModelSpec(CovariateDesign(np.random.default_rng(0).standard_normal((10, 2))), 1.3,
                     CensoringScheme("type2", r=7))
    w = weight_set(spec, [0.4, -2.0])
    assert np.array_equal(w.w, np.full(10, 0.7))
    assert np.array_equal(w.w_prime, np.zeros(10))
    assert np.array_equal(w.w_dprime, np.zeros(10))


def test_hybrid_weights_mix_both_branches(rng):
    X = rng.standard_normal((8, 2))
    beta = np.array([0.3, 0.1])
    t1 = weight_set(ModelSpec(CovariateDesign(X), 0.8, CensoringScheme("type1", 1.5)), beta)
    hy = weight_set(ModelSpec(CovariateDesign(X), 0.8, CensoringScheme("hybrid", 1.5, r=6, q=0.3)), beta)
    assert hy.w == pytest.approx(0.3 * t1.w + 0.7 * 6 / 8)
    assert hy.w_prime == pytest.approx(0.3 * t1.w_prime)
    assert hy.w_dprime == pytest.approx(0.3 * t1.w_dprime)


def test_weights_match_closed_form(rng):
    for _ in range(50):
        sigma = rng.uniform(0.3, 3)
        L = math.exp(rng.normal())
        mu = rng.normal(scale=2, size=6)
        spec = ModelSpec(CovariateDesign(np.eye(6)), sigma, CensoringScheme("type1", L))
        ws = weight_set(spec, mu)
        w, w1, w2 = type1_weights(mu, sigma, L)
        assert ws.w == pytest.approx(w, rel=1e-12, abs=1e-300)
        assert ws.w_prime == pytest.approx(w1, rel=1e-11, abs=1e-300)
        assert ws.w_dprime == pytest.approx(w2, rel=1e-10, abs=1e-300)


def test_weight_derivatives_match_finite_differences(rng):
    for _ in range(200):
        sigma = rng.uniform(0.3, 3)
        L = math.exp(rng.normal())
        mu = rng.normal(scale=1.5, size=5)
        spec = ModelSpec(CovariateDesign(np.eye(5)), sigma, CensoringScheme("type1", L))
        h = 1e-5 * sigma
        ws = weight_set(spec, mu)
        up, dn = weight_set(spec, mu + h), weight_set(spec, mu - h)
        fd1 = (up.w - dn.w) / (2 * h)
        fd2 = (up.w_prime - dn.w_prime) / (2 * h)
        # central differences of quantities of order one lose about eps/h
        assert np.allclose(ws.w_prime, fd1, rtol=1e-5, atol=1e-9)
        assert np.allclose(ws.w_dprime, fd2, rtol=1e-5, atol=1e-9)


def test_weight_invariants(rng):
    for kind in ("type1", "type2", "hybrid"):
        spec, beta, _ = random_case(rng, kind=kind)
        ws = weight_set(spec, beta)
        assert np.all((ws.w >= 0) & (ws.w <= 1))
        assert np.all(ws.w_prime <= 0)


def test_extreme_predictor_is_clamped():
    spec = ModelSpec(CovariateDesign(np.array([[1.0], [1.0]])), 1.0, CensoringScheme("type1", 1.0))
    ws = weight_set(spec, [-800.0])
    assert ws.clamped == 2
    assert np.all(np.isfinite(ws.w)) and np.all(np.isfinite(ws.w_dprime))


# -------------------------------------------------------------- information


def test_information_without_censoring_is_n():
    spec = ModelSpec(CovariateDesign(np.ones((9, 1))), 1.0, CensoringScheme("type2", r=9))
    assert fisher_information(spec, [0.5]) == pytest.approx(np.array([[9.0]]))


def test_information_type2_is_scaled_gram(rng):
    X = rng.standard_normal((10, 3))
    spec = ModelSpec(CovariateDesign(X), 1.7, CensoringScheme("type2", r=6))
    K = fisher_information(spec, rng.normal(size=3))
    assert K == pytest.approx(6 / (10 * 1.7**2) * X.T @ X, rel=1e-13)


def test_information_is_below_uncensored_gram(rng):
    for _ in range(30):
        spec, beta, _ = random_case(rng)
        K = fisher_information(spec, beta)
        gap = spec.X.T @ spec.X / spec.sigma**2 - K
        assert np.linalg.eigvalsh(gap).min() >= -1e-10


def test_information_singular_when_weights_vanish():
    spec = ModelSpec(CovariateDesign(np.column_stack([np.ones(5), np.arange(5.0)])), 1.0)
    w = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    zeros = np.zeros(5)
    with pytest.raises(SingularInformationError):
        fisher_information(spec, [0.0, 0.0], WeightSet(w, zeros, zeros, 0))


@pytest.mark.slow
def test_information_is_mean_negative_hessian():
    rng = np.random.default_rng(11)
    spec = make_spec(rng, n=8, p=2, sigma=0.8, L=1.5)
    beta = np.array([0.1, 0.3])
    H = np.array([-observed_hessian(spec, beta, simulate_sample(spec, beta, rng)) for _ in range(10_000)])
    se = H.std(axis=0, ddof=1) / math.sqrt(len(H))
    K = fisher_information(spec, beta)
    assert np.all(np.abs(H.mean(axis=0) - K) < 4 * se)


# ---------------------------------------------------------------- simulation


def test_inversion_identity():
    spec = ModelSpec(CovariateDesign(np.ones((3, 1))), 1.0)
    s = simulate_from_uniforms(spec, [0.0], np.full(3, math.exp(-1)))
    assert s.y == pytest.approx(np.zeros(3), abs=1e-15)
    assert np.all(s.delta == 1)


def test_tiny_censoring_time_censors_everything():
    spec = ModelSpec(CovariateDesign(np.ones((4, 1))), 1.0, CensoringScheme("type1", 1e-12))
    s = simulate_from_uniforms(spec, [0.0], np.full(4, 0.5))
    assert np.all(s.delta == 0)
    assert s.y == pytest.approx(np.full(4, math.log(1e-12)))


def test_type2_censors_at_rth_failure(rng):
    spec = ModelSpec(CovariateDesign(np.ones((10, 1))), 1.0, CensoringScheme("type2", r=4))
    s = simulate_sample(spec, [0.0], rng)
    assert s.delta.sum() == 4
    assert np.all(s.y[s.delta == 0] == s.y[s.delta == 1].max())


def test_survivor_function_at_scale():
    rng = np.random.default_rng(3)
    lam = 2.5
    spec = ModelSpec(CovariateDesign(np.ones((100_000, 1))), 0.7)
    s = simulate_sample(spec, [math.log(lam)], rng)
    frac = np.mean(s.y > math.log(lam))
    p = math.exp(-1)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / 100_000)


def test_same_seed_same_sample(rng):
    spec, beta, _ = random_case(rng)
    a = simulate_sample(spec, beta, np.random.default_rng(5))
    b = simulate_sample(spec, beta, np.random.default_rng(5))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.delta, b.delta)


# --------------------------------------------------------------- calibration


def test_calibration_exponential():
    spec = ModelSpec(CovariateDesign(np.ones((1, 1))), 1.0)
    assert calibrate_censoring(spec, [0.0], 0.25) == pytest.approx(math.log(4), rel=1e-9)


def test_calibration_zero_target():
    spec = ModelSpec(CovariateDesign(np.ones((1, 1))), 1.0)
    L = calibrate_censoring(spec, [0.0], 0.0)
    assert L == math.inf
    assert np.all(weight_set(spec.with_censoring(CensoringScheme("type1", L)), [0.0]).w == 1.0)


def test_calibration_rejects_bad_target():
    spec = ModelSpec(CovariateDesign(np.ones((1, 1))), 1.0)
    with pytest.raises(ValueError):
        calibrate_censoring(spec, [0.0], 1.0)


def test_calibrated_rate_is_realized():
    rng = np.random.default_rng(21)
    X = rng.standard_normal((100_000, 3))
    beta = np.array([-2.0, 1.5, -1.0])
    spec = ModelSpec(CovariateDesign(X), 1.0)
    L = calibrate_censoring(spec, beta, 0.5)
    s = simulate_sample(spec.with_censoring(CensoringScheme("type1", L)), beta, rng)
    assert abs(1 - s.delta.mean() - 0.5) < 0.01


# ------------------------------------------------------------ types and I/O


def test_design_validation():
    with pytest.raises(ValueError, match="n >= p"):
        CovariateDesign(np.ones((2, 3)))
    with pytest.raises(ValueError, match="rank"):
        CovariateDesign(np.column_stack([np.ones(4), np.ones(4)]))
    with pytest.raises(ValueError):
        CovariateDesign(np.array([[1.0], [np.nan]]))


def test_censoring_scheme_forces_q():
    assert CensoringScheme("type1", 2.0).q == 1.0
    assert CensoringScheme("type2", r=3).q == 0.0
    with pytest.raises(ValueError):
        CensoringScheme("hybrid", 2.0, r=3)
    with pytest.raises(ValueError):
        CensoringScheme("type1", -1.0)


def test_model_spec_validation():
    d = CovariateDesign(np.ones((3, 1)))
    with pytest.raises(ValueError):
        ModelSpec(d, 0.0)
    with pytest.raises(ValueError):
        ModelSpec(d, 1.0, CensoringScheme("type2", r=5))


def test_sample_csv_round_trip(tmp_path, rng):
    spec, beta, sample = random_case(rng)
    path = tmp_path / "s.csv"
    write_sample_csv(path, sample, spec.X)
    back, X = read_sample_csv(path)
    assert np.array_equal(back.y, sample.y)
    assert np.array_equal(back.delta, sample.delta)
    assert np.array_equal(X, spec.X)


@pytest.mark.parametrize(
    "text, message",
    [
        ("y,x1\n1,1\n", "missing column 'delta'"),
        ("y,delta\n1,1\n", "no covariate"),
        ("y,delta,x1\n1,1\n", ":2: expected 3 fields"),
        ("y,delta,x1\n1,2,1\n", ":2: delta must be 0 or 1"),
        ("y,delta,x1\n1,1,abc\n", ":2:"),
        ("y,delta,x2\n1,1,1\n", "x1..x1"),
    ],
)
def test_malformed_csv_diagnostics(tmp_path, text, message):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError, match=message.replace(".", r"\.")):
        read_sample_csv(path)
