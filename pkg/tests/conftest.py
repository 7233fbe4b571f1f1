import numpy as np
import pytest

from wss.weibull import CensoringScheme, CovariateDesign, ModelSpec, simulate_sample


def make_spec(rng, n=12, p=3, sigma=1.0, kind="type1", L=None, r=None, q=None, intercept=True):
    """Random design with an intercept column and a type I censoring time
    near the median of the linear predictor."""
    X = rng.standard_normal((n, p))
    if intercept:
        X[:, 0] = 1.0
    if kind == "type1" and L is None:
        L = float(np.exp(rng.uniform(0.0, 1.5)))
    return ModelSpec(CovariateDesign(X), sigma, CensoringScheme(kind, np.inf if L is None else L, r, q))


def random_case(rng, n=12, p=3, sigma=None, kind="type1"):
    sigma = float(rng.uniform(0.5, 2.0)) if sigma is None else sigma
    r = max(p, n - 2) if kind in ("type2", "hybrid") else None
    q = 0.6 if kind == "hybrid" else None
    spec = make_spec(rng, n, p, sigma, kind, r=r, q=q)
    beta = rng.normal(scale=0.5, size=p)
    sample = simulate_sample(spec, beta, rng)
    return spec, beta, sample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo checks that take more than a few seconds")


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance result; the lines are printed after the run."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
