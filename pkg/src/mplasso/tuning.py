"""Selection of (eta, lambda) by held-out average log-likelihood."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .glm import Dataset, get_family, neg_log_likelihood
from .mpl import MplConfig, MplFit, Variant, _adjusted_dataset, fit_lasso, fit_variant
from .prior import stratified_folds
from .solver import lambda_max, lambda_path

logger = logging.getLogger(__name__)

__all__ = ["TuneGrid", "TuneResult", "TuningError", "tune", "kfold_tune", "lambda_grid",
           "DEFAULT_ETAS"]

DEFAULT_ETAS = (0.0, 0.5, 1.0, 5.0, 10.0, 15.0, 20.0)


class TuningError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TuneGrid:
    """Candidate ``eta`` values and the per-eta lambda path.

    ``lambdas`` overrides the derived path with an explicit list shared by all
    etas.
    """

    etas: tuple[float, ...] = DEFAULT_ETAS
    lambda_points: int = 100
    lambda_min_ratio: float = 0.01
    lambdas: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        if not self.etas:
            raise ValueError("eta grid is empty")
        if any(e < 0 for e in self.etas):
            raise ValueError("etas must be nonnegative")
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
            if not self.lambdas:
                raise ValueError("lambda grid is empty")


@dataclass
class TuneResult:
    best_eta: float
    best_lambda: float
    score_table: dict[tuple[float, float], float]
    best_fit: MplFit
    diagnostics: dict = field(default_factory=dict)

    @property
    def best_score(self) -> float:
        return self.score_table[(self.best_eta, self.best_lambda)]


def lambda_grid(train: Dataset, fam, priors, eta: float, grid: TuneGrid,
                cfg: MplConfig) -> np.ndarray:
    """Decreasing lambda path for one eta.

    The top of the path is the smallest lambda zeroing every slope of the
    beta step at uniform weights, expressed on the scale of the objective's
    lambda (the beta step uses ``lambda / (1 + eta)``).
    """
    if grid.lambdas is not None:
        return np.sort(np.asarray(grid.lambdas))[::-1]
    fam = get_family(fam)
    std = cfg.solver.standardize
    if eta == 0 or not priors:
        lmax = lambda_max(train, fam, None, std)
    else:
        w0 = np.full(len(priors), 1.0 / len(priors))
        adj = _adjusted_dataset(train, fam, priors, w0, eta, std)
        lmax = (1.0 + eta) * lambda_max(adj, fam, None, std)
    return lambda_path(lmax, grid.lambda_points, grid.lambda_min_ratio)


def _path_scores(train, valid, fam, priors, variant, eta, lambdas, cfg, keep_best):
    """Fit ``variant`` along a lambda path; returns scores and the best fit."""
    scores = np.full(len(lambdas), np.nan)
    errors = {}
    best = None
    warm = None
    for i, lam in enumerate(lambdas):
        cell = cfg.with_(eta=eta, lam=float(lam))
        try:
            lasso = fit_lasso(train, fam, cell, warm)
            warm = lasso.beta
            fit = fit_variant(variant, train, fam, priors, cell, init=lasso.beta)
            scores[i] = -neg_log_likelihood(fit.beta, valid, fam)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            errors[(eta, float(lam))] = repr(exc)
            continue
        if keep_best and (best is None or scores[i] > best[0]):
            best = (scores[i], fit)
    return scores, best, errors


def _pick(table: dict) -> tuple[float, float]:
    # max score; ties -> smaller eta, then larger lambda
    finite = [(s, -e, lam) for (e, lam), s in table.items() if np.isfinite(s)]
    s, neg_e, lam = max(finite)
    return -neg_e, lam


def tune(train: Dataset, valid: Dataset, fam, priors, grid: TuneGrid | None = None,
         variant="mpl", cfg: MplConfig | None = None) -> TuneResult:
    """Grid search over (eta, lambda) scored on a validation set.

    The score is the validation average log-likelihood (the negated loss).
    Ties prefer the smaller eta, then the larger lambda.
    """
    fam = get_family(fam)
    grid = grid or TuneGrid()
    cfg = cfg or MplConfig()
    variant = Variant(variant)
    priors = list(priors)
    if train.p != valid.p:
        raise ValueError("training and validation data differ in p")
    etas = (0.0,) if variant is Variant.LASSO or not priors else grid.etas

    table, errors = {}, {}
    best = None
    for eta in etas:
        lambdas = lambda_grid(train, fam, priors, eta, grid, cfg)
        scores, cell_best, errs = _path_scores(train, valid, fam, priors, variant, eta,
                                               lambdas, cfg, keep_best=True)
        errors.update(errs)
        for lam, s in zip(lambdas, scores):
            table[(eta, float(lam))] = float(s)
        if cell_best is not None:
            if best is None or cell_best[0] > best[0]:
                best = cell_best
    if best is None:
        raise TuningError("every grid cell failed", errors)
    eta, lam = _pick(table)
    fit = best[1]
    if (fit.eta, fit.lam) != (eta, lam):
        # A tie resolved differently from scan order: refit the chosen cell.
        cell = cfg.with_(eta=eta, lam=lam)
        fit = fit_variant(variant, train, fam, priors, cell, init=fit_lasso(train, fam, cell).beta)
    return TuneResult(eta, lam, table, fit, {"errors": errors})


def kfold_tune(data: Dataset, fam, priors, grid: TuneGrid | None = None, k: int = 3,
               variant="mpl", cfg: MplConfig | None = None, seed: int = 0) -> TuneResult:
    """K-fold cross-validated grid search, then a refit on all of ``data``.

    Lambda paths are derived once from the full data so that every fold
    scores the same cells.  Folds are stratified on ``y`` for Bernoulli data.
    Prior estimates are re-evaluated on each training fold from their
    coefficients.
    """
    fam = get_family(fam)
    grid = grid or TuneGrid()
    cfg = cfg or MplConfig()
    variant = Variant(variant)
    priors = list(priors)
    folds = stratified_folds(data.y, k, seed, stratify=fam.name == "binomial")
    etas = (0.0,) if variant is Variant.LASSO or not priors else grid.etas
    paths = {eta: lambda_grid(data, fam, priors, eta, grid, cfg) for eta in etas}

    totals = {eta: np.zeros(len(path)) for eta, path in paths.items()}
    errors = {}
    for f in range(k):
        tr, te = data.subset(folds != f), data.subset(folds == f)
        if min(tr.n, te.n) < 2:
            raise ValueError(f"fold {f} is too small to fit")
        fold_priors = [pr.on(tr, fam) for pr in priors]
        for eta, lambdas in paths.items():
            scores, _, errs = _path_scores(tr, te, fam, fold_priors, variant, eta, lambdas,
                                           cfg, keep_best=False)
            totals[eta] += scores
            errors.update({(f,) + key: v for key, v in errs.items()})
    table = {(eta, float(lam)): float(s / k)
             for eta, lambdas in paths.items() for lam, s in zip(lambdas, totals[eta])}
    if not any(np.isfinite(v) for v in table.values()):
        raise TuningError("every grid cell failed", errors)
    eta, lam = _pick(table)
    cell = cfg.with_(eta=eta, lam=lam)
    fit = fit_variant(variant, data, fam, priors, cell, init=fit_lasso(data, fam, cell).beta)
    logger.info("kfold_tune: %d stratified folds, sizes %s", k,
                np.bincount(folds, minlength=k).tolist())
    return TuneResult(eta, lam, table, fit, {"errors": errors, "folds": folds})
