"""Exponential-family primitives shared by every solver.

A GLM with canonical link has per-observation log-density
``y * theta - b(theta) + c(y)``.  Losses here drop ``c(y)`` and are averaged
over observations::

    l(beta; X, y) = -(1/n) * sum_i [y_i * theta_i - b(theta_i)],
    theta_i = beta_0 + X_i . beta_slopes

Only the Gaussian (unit dispersion) and Bernoulli families are provided.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Family",
    "Gaussian",
    "Bernoulli",
    "GAUSSIAN",
    "BERNOULLI",
    "get_family",
    "Dataset",
    "CoefVector",
    "linear_predictor",
    "neg_log_likelihood",
    "deviance",
    "sigmoid",
]


def sigmoid(theta):
    """Overflow-safe logistic function."""
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    pos = theta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
    e = np.exp(theta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Family:
    """Canonical-link exponential family: cumulant ``b`` and its derivatives."""

    name = "family"

    def b(self, theta):
        raise NotImplementedError

    def mean(self, theta):
        """b'(theta), the mean function."""
        raise NotImplementedError

    def variance(self, theta):
        """b''(theta), the variance function."""
        raise NotImplementedError

    def link(self, mu):
        """Inverse of ``mean``."""
        raise NotImplementedError

    def check_response(self, y):
        pass

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class Gaussian(Family):
    name = "gaussian"

    def b(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * theta * theta

    def mean(self, theta):
        return np.array(theta, dtype=float)

    def variance(self, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def link(self, mu):
        return np.array(mu, dtype=float)


class Bernoulli(Family):
    name = "binomial"

    def b(self, theta):
        return np.logaddexp(0.0, np.asarray(theta, dtype=float))

    def mean(self, theta):
        return sigmoid(theta)

    def variance(self, theta):
        mu = sigmoid(theta)
        return mu * (1.0 - mu)

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu) - np.log1p(-mu)

    def check_response(self, y):
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise ValueError("Bernoulli responses must lie in [0, 1]")


GAUSSIAN = Gaussian()
BERNOULLI = Bernoulli()

_FAMILIES = {
    "gaussian": GAUSSIAN,
    "linear": GAUSSIAN,
    "binomial": BERNOULLI,
    "bernoulli": BERNOULLI,
    "logistic": BERNOULLI,
}


def get_family(family) -> Family:
    """Resolve a family name (``gaussian``, ``binomial``, ...) or pass through."""
    if isinstance(family, Family):
        return family
    try:
        return _FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(f"unknown family {family!r}") from None


@dataclass(eq=False)
class Dataset:
    """Design matrix ``X`` (n x p, no intercept column) and response ``y``.

    Datasets derived with :meth:`with_response` share the cached design
    statistics (centering, scaling, Gram matrix) of their parent.
    """

    X: np.ndarray
    y: np.ndarray
    _design: dict = field(default_factory=dict, repr=False)
    _resp: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-dimensional, got shape {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"X has {self.X.shape[0]} rows but y has length {self.y.shape[0]}"
            )
        if self.X.shape[0] == 0 or self.X.shape[1] == 0:
            raise ValueError("empty design")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, y) -> "Dataset":
        return Dataset(self.X, y, _design=self._design)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows])

    def check(self, fam: Family) -> None:
        fam.check_response(self.y)


@dataclass
class CoefVector:
    """Intercept plus ``p`` slopes; the intercept is never penalized."""

    intercept: float
    slopes: np.ndarray

    def __post_init__(self):
        self.intercept = float(self.intercept)
        self.slopes = np.asarray(self.slopes, dtype=float).ravel()
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(self.slopes))):
            raise ValueError("coefficients must be finite")

    @classmethod
    def zeros(cls, p: int) -> "CoefVector":
        return cls(0.0, np.zeros(p))

    @classmethod
    def from_array(cls, arr) -> "CoefVector":
        arr = np.asarray(arr, dtype=float).ravel()
        return cls(arr[0], arr[1:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.slopes])

    @property
    def p(self) -> int:
        return self.slopes.shape[0]

    def support(self) -> np.ndarray:
        """0-based indices of nonzero slopes."""
        return np.flatnonzero(self.slopes)

    def copy(self) -> "CoefVector":
        return CoefVector(self.intercept, self.slopes.copy())


def linear_predictor(beta: CoefVector, data: Dataset) -> np.ndarray:
    """theta_i = beta_0 + X_i . slopes."""
    if beta.p != data.p:
        raise ValueError(f"coefficient length {beta.p} does not match p={data.p}")
    nz = beta.support()
    theta = np.full(data.n, beta.intercept)
    if nz.size == data.p:
        theta += data.X @ beta.slopes
    elif nz.size:
        theta += data.X[:, nz] @ beta.slopes[nz]
    return theta


def _nll_theta(theta, y, fam: Family) -> float:
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite linear predictor")
    return float(np.mean(fam.b(theta) - y * theta))


def neg_log_likelihood(beta: CoefVector, data: Dataset, fam: Family) -> float:
    """Average negative log-likelihood, omitting the ``c(y)`` term."""
    return _nll_theta(linear_predictor(beta, data), data.y, fam)


def deviance(beta: CoefVector, prior, data: Dataset, fam: Family) -> float:
    """Discrepancy between ``beta`` and a prior estimate on the current design.

    ``l(beta; X, y_p) - l(beta_p; X, y_p)`` where ``y_p = b'(Z beta_p)``.  It is
    evaluated term-wise as the Bregman divergence
    ``mean(b(theta) - b(theta_p) - y_p * (theta - theta_p))`` which is the same
    quantity without the cancellation of two large likelihood values.
    """
    y_p = np.asarray(prior.y_p, dtype=float)
    if y_p.shape[0] != data.n:
        raise ValueError(
            f"prior predicted responses have length {y_p.shape[0]}, expected {data.n}"
        )
    return bregman(linear_predictor(beta, data), linear_predictor(prior.beta_p, data), y_p, fam)


def bregman(theta, theta_p, y_p, fam: Family) -> float:
    """``mean(b(theta) - b(theta_p) - y_p * (theta - theta_p))``."""
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(theta_p))):
        raise FloatingPointError("non-finite linear predictor")
    return float(np.mean(fam.b(theta) - fam.b(theta_p) - y_p * (theta - theta_p)))
