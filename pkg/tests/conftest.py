import numpy as np
import pytest

from mplasso.glm import Dataset
from mplasso.solver import FIT_OBSERVERS, kkt_violation

KKT_SLACK = 10.0  # certification bound is KKT_SLACK * cfg.tol


@pytest.fixture(autouse=True)
def kkt_audit():
    """Certify every converged fit made during a test."""
    failures = []

    def observe(fit, data, fam, pen, cfg):
        if not fit.converged:
            return
        v = kkt_violation(fit.beta, data, fam, pen, cfg.standardize)
        if v > KKT_SLACK * cfg.tol:
            failures.append((v, fam.name, pen.lam, data.n, data.p))

    FIT_OBSERVERS.append(observe)
    yield failures
    FIT_OBSERVERS.remove(observe)
    assert not failures, f"converged fits failing KKT certification: {failures[:5]}"


def make_data(n, p, family="gaussian", seed=0, s=3, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(s, p)] = scale * rng.choice([-1.0, 1.0], size=min(s, p)) * rng.uniform(0.5, 1.5, min(s, p))
    theta = 0.3 + X @ beta
    if family == "gaussian":
        y = theta + rng.standard_normal(n)
    else:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-theta))).astype(float)
    return Dataset(X, y), beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
