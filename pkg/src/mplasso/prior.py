"""Summary-level priors and the estimators they induce on the current data.

Two kinds of prior are supported:

* a *variable set*: covariates reported as relevant.  The prior estimate is
  the GLM fit in which those covariates are left unpenalized while all others
  carry an L1 penalty of strength ``nu`` (``nu = inf`` keeps only the set);
* *coefficient values*: reported effect sizes, used as given.  Unreported
  coefficients are set to 0.

Indices in :class:`PriorSource` and in prior files are 1-based (``x1..xp``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .glm import CoefVector, Dataset, Family, get_family, linear_predictor, neg_log_likelihood
from .solver import PenaltySpec, SolverConfig, fit_lasso_glm, lambda_max, lambda_path

logger = logging.getLogger(__name__)

__all__ = [
    "PriorSource",
    "PriorEstimate",
    "build_prior_estimate",
    "predicted_responses",
    "read_priors",
    "write_priors",
    "stratified_folds",
]

NU_POINTS = 50
NU_MIN_RATIO = 0.01


@dataclass(frozen=True)
class PriorSource:
    """A prior: either a relevant-variable set or a map of coefficient values."""

    id: str
    variables: frozenset[int] | None = None
    coefficients: dict[int, float] | None = None
    intercept: float | None = None

    def __post_init__(self):
        if (self.variables is None) == (self.coefficients is None):
            raise ValueError(f"prior {self.id!r}: give exactly one of variables / coefficients")
        if self.variables is not None:
            object.__setattr__(self, "variables", frozenset(int(j) for j in self.variables))
        else:
            coefs = {int(k): float(v) for k, v in self.coefficients.items()}
            if not coefs:
                raise ValueError(f"prior {self.id!r}: coefficient map is empty")
            object.__setattr__(self, "coefficients", coefs)

    @classmethod
    def variable_set(cls, id, variables) -> "PriorSource":
        vs = list(variables)
        if len(set(vs)) != len(vs):
            raise ValueError(f"prior {id!r}: duplicate variable indices")
        return cls(str(id), variables=frozenset(vs))

    @classmethod
    def coef_values(cls, id, coefficients, intercept=None) -> "PriorSource":
        return cls(str(id), coefficients=dict(coefficients), intercept=intercept)

    @property
    def kind(self) -> str:
        return "variable_set" if self.variables is not None else "coef_values"

    def indices(self) -> np.ndarray:
        """0-based covariate indices named by the prior, sorted."""
        keys = self.variables if self.variables is not None else self.coefficients.keys()
        return np.array(sorted(keys), dtype=int) - 1

    def validate(self, p: int) -> None:
        idx = self.indices()
        if idx.size and (idx.min() < 0 or idx.max() >= p):
            raise ValueError(f"prior {self.id!r}: indices must lie in 1..{p}")

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "type": self.kind}
        if self.variables is not None:
            out["variables"] = sorted(self.variables)
        else:
            out["coefficients"] = {str(k): v for k, v in sorted(self.coefficients.items())}
            if self.intercept is not None:
                out["intercept"] = self.intercept
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PriorSource":
        kind = obj.get("type")
        if kind == "variable_set":
            return cls.variable_set(obj["id"], obj["variables"])
        if kind == "coef_values":
            return cls.coef_values(obj["id"], obj["coefficients"], obj.get("intercept"))
        raise ValueError(f"unknown prior type {kind!r}")


@dataclass(eq=False)
class PriorEstimate:
    """Prior coefficient estimate and its predicted responses on a design."""

    beta_p: CoefVector
    y_p: np.ndarray
    source_id: str
    nu_used: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def on(self, data: Dataset, fam) -> "PriorEstimate":
        """The same estimate with predicted responses recomputed for ``data``."""
        return PriorEstimate(self.beta_p, predicted_responses(self.beta_p, data, fam),
                             self.source_id, self.nu_used)


def read_priors(path) -> list[PriorSource]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("prior file must hold a JSON array")
    return [PriorSource.from_json(obj) for obj in raw]


def write_priors(priors, path) -> None:
    Path(path).write_text(json.dumps([s.to_json() for s in priors], indent=2))


def predicted_responses(beta_p: CoefVector, data: Dataset, fam) -> np.ndarray:
    """b'(Z beta_p): the prior's implied mean responses."""
    return get_family(fam).mean(linear_predictor(beta_p, data))


def stratified_folds(y, k: int, seed: int = 0, stratify: bool = False) -> np.ndarray:
    """Fold label (0..k-1) per observation.

    With ``stratify`` the observations of each distinct response value are
    dealt round-robin after a seeded shuffle, so every fold's class
    proportions match the global ones up to one observation per class.
    """
    y = np.asarray(y)
    n = y.shape[0]
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k >= n:
        raise ValueError(f"{k} folds for {n} observations is not supported")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    if stratify:
        offset = 0
        for value in np.unique(y):
            members = rng.permutation(np.flatnonzero(y == value))
            folds[members] = (offset + np.arange(members.size)) % k
            offset += members.size
    else:
        folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def _refit_intercept(slopes, data: Dataset, fam: Family) -> float:
    offset = data.X @ slopes
    b0 = 0.0
    for _ in range(50):
        theta = b0 + offset
        g = float(np.mean(data.y - fam.mean(theta)))
        h = float(np.mean(fam.variance(theta)))
        step = g / h
        b0 += step
        if abs(step) < 1e-12:
            break
    return b0


def _nu_path_fits(train: Dataset, fam, factors, nus, cfg):
    fits, warm = [], None
    for nu in nus:
        fit = fit_lasso_glm(train, fam, PenaltySpec(nu, factors), cfg, warm)
        fits.append(fit)
        warm = fit.beta
    return fits


def build_prior_estimate(
    src: PriorSource,
    data: Dataset,
    fam,
    nu_grid=None,
    validation: Dataset | None = None,
    *,
    cfg: SolverConfig | None = None,
    refit_intercept: bool = False,
    cv_folds: int = 3,
    seed: int = 0,
) -> PriorEstimate:
    """Turn a prior source into ``(beta_p, y_p)`` on ``data``.

    Parameters
    ----------
    src : PriorSource
    data : Dataset
        Training data of the current study.
    fam : Family or str
    nu_grid : sequence of float, optional
        Candidate penalties for variables outside a variable-set prior.  When
        omitted, a 50-point log grid from ``lambda_max`` down to
        ``0.01 * lambda_max``.  ``np.inf`` is allowed and means the fit is
        restricted to the prior's variables.
    validation : Dataset, optional
        Held-out data used to choose ``nu`` by average log-likelihood.  Without
        it ``nu`` is chosen by ``cv_folds``-fold cross-validation on ``data``.
    refit_intercept : bool
        For coefficient priors without an intercept, estimate the intercept
        on ``data`` with the slopes held fixed instead of using 0.
    """
    fam = get_family(fam)
    cfg = cfg or SolverConfig()
    src.validate(data.p)

    if src.coefficients is not None:
        slopes = np.zeros(data.p)
        for j, value in src.coefficients.items():
            slopes[j - 1] = value
        missing = data.p - len(src.coefficients)
        if src.intercept is not None:
            b0 = src.intercept
        elif refit_intercept:
            b0 = _refit_intercept(slopes, data, fam)
        else:
            b0 = 0.0
        logger.debug("prior %s: %d of %d coefficients missing, set to 0", src.id, missing, data.p)
        beta_p = CoefVector(b0, slopes)
        return PriorEstimate(beta_p, predicted_responses(beta_p, data, fam), src.id)

    factors = np.ones(data.p)
    factors[src.indices()] = 0.0
    if not np.any(factors):
        fit = fit_lasso_glm(data, fam, PenaltySpec(0.0, factors), cfg)
        return PriorEstimate(fit.beta, predicted_responses(fit.beta, data, fam), src.id, None)

    if nu_grid is None:
        nus = lambda_path(lambda_max(data, fam, factors, cfg.standardize, cfg),
                          NU_POINTS, NU_MIN_RATIO)
    else:
        nus = np.sort(np.asarray(nu_grid, dtype=float))[::-1]
        if nus.size == 0:
            raise ValueError(f"prior {src.id!r}: empty nu grid")

    if nus.size == 1:
        best = 0
    elif validation is not None:
        fits = _nu_path_fits(data, fam, factors, nus, cfg)
        scores = [-neg_log_likelihood(f.beta, validation, fam) for f in fits]
        best = int(np.argmax(scores))
        beta = fits[best].beta
        return PriorEstimate(beta, predicted_responses(beta, data, fam), src.id, float(nus[best]))
    else:
        folds = stratified_folds(data.y, cv_folds, seed, stratify=fam.name == "binomial")
        scores = np.zeros(nus.size)
        for k in range(cv_folds):
            tr, te = data.subset(folds != k), data.subset(folds == k)
            fits = _nu_path_fits(tr, fam, factors, nus, cfg)
            scores += [-neg_log_likelihood(f.beta, te, fam) for f in fits]
        best = int(np.argmax(scores))
    nu = float(nus[best])
    fit = fit_lasso_glm(data, fam, PenaltySpec(nu, factors), cfg)
    return PriorEstimate(fit.beta, predicted_responses(fit.beta, data, fam), src.id, nu)
