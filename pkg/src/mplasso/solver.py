"""L1-penalized GLM fitting by coordinate descent.

The problem solved is::

    minimize_beta  l(beta; X, y) + lam * sum_j factors_j * |beta_j|

with an unpenalized intercept.  With ``standardize=True`` (the default) the
columns of ``X`` are centred and scaled to unit variance before fitting and
the penalty applies to the standardized coefficients, i.e. the effective
penalty on the original scale is ``lam * factors_j * sd_j``.  Coefficients are
always returned on the original scale.

Gaussian fits run covariance-mode coordinate descent on the cached Gram
matrix; Bernoulli fits wrap weighted (naive-mode) coordinate descent in an
IRLS loop with step halving on the penalized objective.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .glm import (
    GAUSSIAN,
    CoefVector,
    Dataset,
    Family,
    get_family,
    linear_predictor,
    neg_log_likelihood,
    sigmoid,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PenaltySpec",
    "SolverConfig",
    "LassoFit",
    "fit_lasso_glm",
    "lambda_max",
    "lambda_path",
    "penalty_weights",
    "penalized_objective",
    "kkt_violation",
]

# Gaussian problems with more columns than this use naive mode (no Gram matrix).
GRAM_MAX_P = 4000
WEIGHT_FLOOR = 1e-5
DIVERGENCE_BOUND = 1e3

# Callables ``f(fit, data, fam, pen, cfg)`` invoked after every fit (auditing).
FIT_OBSERVERS: list = []


@dataclass
class PenaltySpec:
    """Global strength ``lam`` and per-variable multipliers ``factors``.

    ``factors=None`` means all ones.  A factor of 0 leaves the variable
    unpenalized; ``np.inf`` excludes it from the model.
    """

    lam: float
    factors: np.ndarray | None = None

    def __post_init__(self):
        self.lam = float(self.lam)
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.factors is not None:
            self.factors = np.asarray(self.factors, dtype=float).ravel()
            if np.any(np.isnan(self.factors)) or np.any(self.factors < 0):
                raise ValueError("penalty factors must be nonnegative")

    def resolve(self, p: int) -> np.ndarray:
        if self.factors is None:
            return np.ones(p)
        if self.factors.shape[0] != p:
            raise ValueError(f"{self.factors.shape[0]} penalty factors for p={p}")
        return self.factors

    def strengths(self, p: int) -> np.ndarray:
        """``lam * factors`` with the convention ``0 * inf = 0``."""
        f = self.resolve(p)
        with np.errstate(invalid="ignore"):
            out = self.lam * f
        out[f == 0] = 0.0
        out[np.isinf(f)] = np.inf
        return out


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-7
    max_outer: int = 100
    max_inner: int = 100_000
    standardize: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class LassoFit:
    beta: CoefVector
    lambda_used: float
    n_iter: int
    converged: bool
    final_objective: float
    diverged: bool = False


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _soft(z, t):
    if abs(z) <= t * (1.0 + 1e-12):
        return 0.0
    if z > 0.0:
        return z - t
    return z + t


@njit(cache=True)
def _cd_gram(G, c, pen, b, tol, max_sweeps):
    """Covariance-mode coordinate descent, ``b`` updated in place.

    Minimizes ``0.5 b'Gb - c'b + sum pen_j |b_j|``.
    """
    p = c.shape[0]
    grad = c.copy()
    active = np.zeros(p, dtype=np.bool_)
    idx = np.empty(p, dtype=np.int64)
    n_act = 0
    for k in range(p):
        if b[k] != 0.0:
            bk = b[k]
            for j in range(p):
                grad[j] -= G[k, j] * bk
            active[k] = True
            idx[n_act] = k
            n_act += 1

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = b[j]
            new = _soft(grad[j] + gjj * old, pen[j]) / gjj
            d = new - old
            if d != 0.0:
                b[j] = new
                for k in range(p):
                    grad[k] -= d * G[j, k]
                if abs(d) > dmax:
                    dmax = abs(d)
                if not active[j]:
                    active[j] = True
                    idx[n_act] = j
                    n_act += 1
        sweeps += 1
        if dmax < tol:
            converged = True
            break
        while sweeps < max_sweeps:
            dmax = 0.0
            for a in range(n_act):
                j = idx[a]
                gjj = G[j, j]
                old = b[j]
                new = _soft(grad[j] + gjj * old, pen[j]) / gjj
                d = new - old
                if d != 0.0:
                    b[j] = new
                    for k in range(p):
                        grad[k] -= d * G[j, k]
                    if abs(d) > dmax:
                        dmax = abs(d)
            sweeps += 1
            if dmax < tol:
                break
    return sweeps, converged


@njit(cache=True)
def _wcd_update(Xs, r, v, xv, pen, b, j, n):
    xj = Xs[:, j]
    g = 0.0
    for i in range(n):
        g += v[i] * xj[i] * r[i]
    g = g / n + xv[j] * b[j]
    new = _soft(g, pen[j]) / xv[j]
    d = new - b[j]
    if d != 0.0:
        b[j] = new
        for i in range(n):
            r[i] -= d * xj[i]
    return d


@njit(cache=True)
def _cd_weighted(Xs, r, v, xv, pen, b, b0, tol, max_sweeps):
    """Naive-mode weighted coordinate descent with an intercept.

    Minimizes ``(1/2n) sum_i v_i r_i^2 + sum pen_j |b_j|`` where ``r`` is the
    working residual, updated in place together with ``b`` and ``b0[0]``.
    """
    n, p = Xs.shape
    sv = 0.0
    for i in range(n):
        sv += v[i]
    active = np.zeros(p, dtype=np.bool_)
    idx = np.empty(p, dtype=np.int64)
    n_act = 0
    for k in range(p):
        if b[k] != 0.0:
            active[k] = True
            idx[n_act] = k
            n_act += 1

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        s = 0.0
        for i in range(n):
            s += v[i] * r[i]
        d0 = s / sv
        b0[0] += d0
        for i in range(n):
            r[i] -= d0
        dmax = abs(d0)
        for j in range(p):
            if xv[j] <= 0.0:
                continue
            d = _wcd_update(Xs, r, v, xv, pen, b, j, n)
            if d != 0.0:
                if abs(d) > dmax:
                    dmax = abs(d)
                if not active[j]:
                    active[j] = True
                    idx[n_act] = j
                    n_act += 1
        sweeps += 1
        if dmax < tol:
            converged = True
            break
        while sweeps < max_sweeps:
            s = 0.0
            for i in range(n):
                s += v[i] * r[i]
            d0 = s / sv
            b0[0] += d0
            for i in range(n):
                r[i] -= d0
            dmax = abs(d0)
            for a in range(n_act):
                d = _wcd_update(Xs, r, v, xv, pen, b, idx[a], n)
                if abs(d) > dmax:
                    dmax = abs(d)
            sweeps += 1
            if dmax < tol:
                break
    return sweeps, converged


# ---------------------------------------------------------------------------
# cached design quantities


def _standardization(data: Dataset, standardize: bool):
    key = ("std", standardize)
    st = data._design.get(key)
    if st is None:
        X = data.X
        center = X.mean(axis=0)
        if standardize:
            scale = X.std(axis=0)
        else:
            scale = np.ones(data.p)
        const = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
        scale = np.where(const, 1.0, scale)
        Xs = np.asfortranarray((X - center) / scale)
        Xs[:, const] = 0.0
        st = {"center": center, "scale": scale, "Xs": Xs, "const": const}
        data._design[key] = st
    return st


def _gram(data: Dataset, standardize: bool) -> np.ndarray:
    key = ("gram", standardize)
    G = data._design.get(key)
    if G is None:
        Xs = _standardization(data, standardize)["Xs"]
        G = np.ascontiguousarray(Xs.T @ Xs) / data.n
        data._design[key] = G
    return G


def _xty(data: Dataset, standardize: bool) -> np.ndarray:
    """Xs' (y - mean(y)) / n, cached on the response."""
    key = ("xty", standardize)
    c = data._resp.get(key)
    if c is None:
        Xs = _standardization(data, standardize)["Xs"]
        c = Xs.T @ (data.y - data.y.mean()) / data.n
        data._resp[key] = c
    return c


def _to_standard(beta: CoefVector, st) -> tuple[float, np.ndarray]:
    b = beta.slopes * st["scale"]
    b[st["const"]] = 0.0
    return beta.intercept + float(st["center"] @ beta.slopes), b


def _from_standard(b0: float, b: np.ndarray, st) -> CoefVector:
    slopes = b / st["scale"]
    return CoefVector(b0 - float(st["center"] @ slopes), slopes)


def _penalty_sum(pen: np.ndarray, b: np.ndarray) -> float:
    nz = b != 0.0
    return float(np.sum(pen[nz] * np.abs(b[nz])))


# ---------------------------------------------------------------------------
# public API


def penalty_weights(data: Dataset, factors, standardize: bool = True) -> np.ndarray:
    """Per-variable penalty multipliers on the original coefficient scale."""
    st = _standardization(data, standardize)
    f = PenaltySpec(0.0, factors).resolve(data.p)
    with np.errstate(invalid="ignore"):
        w = f * st["scale"]
    w[f == 0] = 0.0
    return w


def penalized_objective(
    beta: CoefVector, data: Dataset, fam, pen: PenaltySpec, standardize: bool = True
) -> float:
    """``neg_log_likelihood(beta) + lam * sum_j factors_j * sd_j * |beta_j|``."""
    fam = get_family(fam)
    st = _standardization(data, standardize)
    _, b = _to_standard(beta, st)
    return neg_log_likelihood(beta, data, fam) + _penalty_sum(pen.strengths(data.p), b)


def kkt_violation(
    beta: CoefVector, data: Dataset, fam, pen: PenaltySpec, standardize: bool = True
) -> float:
    """Largest violation of the lasso stationarity conditions.

    Gradients are taken with respect to the (standardized when
    ``standardize``) coefficients, so the result is comparable with the
    solver's ``tol``.  The intercept's score equation is included.
    """
    fam = get_family(fam)
    st = _standardization(data, standardize)
    _, b = _to_standard(beta, st)
    strengths = pen.strengths(data.p)
    resid = data.y - fam.mean(linear_predictor(beta, data))
    grad = st["Xs"].T @ resid / data.n
    worst = abs(float(resid.mean()))
    nz = b != 0.0
    if np.any(nz):
        worst = max(worst, float(np.max(np.abs(grad[nz] - strengths[nz] * np.sign(b[nz])))))
    z = ~nz & ~st["const"] & np.isfinite(strengths)
    if np.any(z):
        worst = max(worst, float(np.max(np.abs(grad[z]) - strengths[z])))
    return max(worst, 0.0)


def lambda_max(data: Dataset, fam, factors=None, standardize: bool = True,
               cfg: SolverConfig | None = None) -> float:
    """Smallest ``lam`` at which every penalized slope is zero.

    The null fit contains the intercept and any variables with factor 0.
    """
    fam = get_family(fam)
    f = PenaltySpec(0.0, factors).resolve(data.p)
    penalized = (f > 0) & np.isfinite(f)
    if not np.any(penalized):
        raise ValueError("lambda_max needs at least one finite positive penalty factor")
    st = _standardization(data, standardize)
    free = f == 0
    if np.any(free & ~st["const"]):
        null_factors = np.where(free, 0.0, np.inf)
        cfg = cfg or SolverConfig(standardize=standardize)
        null = fit_lasso_glm(data, fam, PenaltySpec(0.0, null_factors), cfg)
        resid = data.y - fam.mean(linear_predictor(null.beta, data))
        grad = st["Xs"].T @ resid / data.n
    else:
        ybar = data.y.mean()
        if fam is not GAUSSIAN and not 0.0 < ybar < 1.0:
            raise ValueError("intercept-only Bernoulli fit requires 0 < mean(y) < 1")
        grad = _xty(data, standardize)
    ok = penalized & ~st["const"]
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(grad[ok]) / f[ok]))


def lambda_path(lmax: float, n_points: int = 100, ratio: float = 0.01) -> np.ndarray:
    """Log-spaced decreasing grid from ``lmax`` to ``ratio * lmax``."""
    if not lmax > 0:
        raise ValueError("lmax must be positive")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if int(n_points) != n_points or n_points < 2:
        raise ValueError("n_points must be an integer >= 2")
    path = lmax * ratio ** (np.arange(n_points) / (n_points - 1))
    path[0] = lmax
    path[-1] = lmax * ratio
    return path


def fit_lasso_glm(
    data: Dataset,
    fam,
    pen: PenaltySpec,
    cfg: SolverConfig | None = None,
    warm: CoefVector | None = None,
) -> LassoFit:
    """Fit an L1-penalized GLM.

    Parameters
    ----------
    data : Dataset
        Covariates and response.  Bernoulli responses may be fractional.
    fam : Family or str
    pen : PenaltySpec
    cfg : SolverConfig, optional
    warm : CoefVector, optional
        Starting coefficients (original scale).

    Returns
    -------
    LassoFit
        ``converged`` is False when an iteration cap was hit; ``diverged`` is
        set when Bernoulli coefficients exceeded 1e3 in absolute value
        (typically complete separation), in which case the last iterate is
        returned.
    """
    fam = get_family(fam)
    cfg = cfg or SolverConfig()
    data.check(fam)
    st = _standardization(data, cfg.standardize)
    strengths = pen.strengths(data.p)
    if warm is None:
        b0, b = float(data.y.mean()), np.zeros(data.p)
        if fam is not GAUSSIAN:
            b0 = float(fam.link(np.clip(b0, 1e-6, 1 - 1e-6)))
    else:
        if warm.p != data.p:
            raise ValueError("warm start has the wrong length")
        b0, b = _to_standard(warm, st)
    b[np.isinf(strengths)] = 0.0

    if fam is GAUSSIAN:
        fit = _fit_gaussian(data, st, strengths, b0, b, cfg)
    else:
        fit = _fit_irls(data, fam, st, strengths, b0, b, cfg)
    fit.lambda_used = pen.lam
    for observer in FIT_OBSERVERS:
        observer(fit, data, fam, pen, cfg)
    return fit


def _fit_gaussian(data, st, strengths, b0, b, cfg) -> LassoFit:
    if data.p <= GRAM_MAX_P:
        G = _gram(data, cfg.standardize)
        c = _xty(data, cfg.standardize)
        sweeps, converged = _cd_gram(G, c, strengths, b, cfg.tol, cfg.max_inner)
        b0 = float(data.y.mean())
    else:
        Xs = st["Xs"]
        r = data.y - b0 - Xs @ b
        v = np.ones(data.n)
        xv = np.einsum("ij,ij->j", Xs, Xs) / data.n
        b0a = np.array([b0])
        sweeps, converged = _cd_weighted(Xs, r, v, xv, strengths, b, b0a, cfg.tol,
                                         cfg.max_inner)
        b0 = float(b0a[0])
    beta = _from_standard(b0, b, st)
    obj = neg_log_likelihood(beta, data, GAUSSIAN) + _penalty_sum(strengths, b)
    return LassoFit(beta, 0.0, int(sweeps), bool(converged), obj)


def _fit_irls(data, fam: Family, st, strengths, b0, b, cfg) -> LassoFit:
    Xs = st["Xs"]
    y = data.y
    n = data.n

    def objective(theta, b):
        return float(np.mean(fam.b(theta) - y * theta)) + _penalty_sum(strengths, b)

    def predictor(b0, b):
        nz = np.flatnonzero(b)
        theta = np.full(n, b0)
        if nz.size:
            theta += Xs[:, nz] @ b[nz]
        return theta

    theta = predictor(b0, b)
    obj = objective(theta, b)
    total_sweeps = 0
    converged = False
    diverged = False
    for _ in range(cfg.max_outer):
        mu = sigmoid(theta)
        v = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
        r = (y - mu) / v
        xv = (v @ (Xs * Xs)) / n
        nb = b.copy()
        nb0 = np.array([b0])
        budget = max(cfg.max_inner - total_sweeps, 1)
        sweeps, inner_ok = _cd_weighted(Xs, r, v, xv, strengths, nb, nb0, cfg.tol, budget)
        total_sweeps += sweeps

        step = 1.0
        while True:
            cb = b + step * (nb - b)
            cb0 = b0 + step * (nb0[0] - b0)
            ctheta = predictor(cb0, cb)
            cobj = objective(ctheta, cb)
            if cobj <= obj + 1e-12 * (1.0 + abs(obj)) or step < 1e-10:
                break
            step *= 0.5
        change = max(abs(cb0 - b0), float(np.max(np.abs(cb - b))) if b.size else 0.0)
        b, b0, theta, obj = cb, cb0, ctheta, cobj
        if np.max(np.abs(b / st["scale"]), initial=0.0) > DIVERGENCE_BOUND:
            diverged = True
            logger.warning("Bernoulli fit diverged (|beta| > %g); likely separation",
                           DIVERGENCE_BOUND)
            break
        if change < cfg.tol and inner_ok:
            converged = True
            break
        if total_sweeps >= cfg.max_inner:
            break
    beta = _from_standard(b0, b, st)
    return LassoFit(beta, 0.0, total_sweeps, converged and not diverged, obj, diverged)
