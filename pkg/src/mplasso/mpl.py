"""Multi-prior Lasso (MPL) with single-prior and equal-weight relatives.

The estimator minimizes, jointly over coefficients ``beta`` and prior
weights ``w`` on the probability simplex::

    l(beta; X, y) + eta * sum_m w_m D_m(beta)
                  + tau * sum_m w_m log w_m + lam * sum_j |beta_j|

where ``D_m`` is the deviance of ``beta`` against prior ``m``'s predicted
responses.  Minimization alternates a closed-form (softmax) weight step and a
lasso step on the adjusted response ``(y + eta * sum_m w_m y_p_m) / (1 + eta)``.
``tau`` is not tuned: it is set so that ``(eta / tau) * min_m D_m = c0``,
by default at every weight step (``tau_mode="per_iteration"``) and optionally
once at the starting coefficients (``tau_mode="initial"``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .glm import GAUSSIAN, CoefVector, Dataset, get_family, neg_log_likelihood
from .glm import _nll_theta, bregman, linear_predictor
from .glm import deviance as _deviance
from .prior import PriorEstimate
from .solver import (
    LassoFit,
    PenaltySpec,
    SolverConfig,
    _standardization,
    _xty,
    fit_lasso_glm,
    penalty_weights,
)

logger = logging.getLogger(__name__)

__all__ = [
    "MplConfig",
    "WeightState",
    "TauRule",
    "Variant",
    "MplFit",
    "deviances",
    "objective",
    "update_weights",
    "fix_tau",
    "adjusted_response",
    "update_beta",
    "fit_lasso",
    "fit_mpl",
    "fit_spl",
    "fit_ewpl",
    "fit_prior_lasso",
    "fit_variant",
]

ZERO_DEVIANCE = 1e-12
TAU_MODES = ("initial", "per_iteration")


@dataclass(frozen=True)
class MplConfig:
    eta: float = 0.0
    lam: float = 0.0
    c0: float = 1.0
    max_alt: int = 50
    alt_tol: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)
    # "per_iteration": re-derived from the current beta at every weight step;
    # "initial": fixed once from the starting beta and held for the run.
    tau_mode: str = "per_iteration"

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if self.max_alt < 1 or not self.alt_tol > 0:
            raise ValueError("max_alt must be >= 1 and alt_tol > 0")
        if self.tau_mode not in TAU_MODES:
            raise ValueError(f"tau_mode must be one of {TAU_MODES}")

    def with_(self, **kw) -> "MplConfig":
        return replace(self, **kw)


@dataclass
class WeightState:
    w: np.ndarray
    tau: float | None
    deviances: np.ndarray


@dataclass
class TauRule:
    """Outcome of the tau rule: either ``tau`` or directive weights."""

    tau: float | None
    weights: np.ndarray | None
    deviances: np.ndarray


class Variant(str, Enum):
    MPL = "mpl"
    SPL = "spl"
    EWPL = "ewpl"
    PRIOR_LASSO = "prior_lasso"
    LASSO = "lasso"


@dataclass
class MplFit:
    beta: CoefVector
    weights: WeightState
    n_alt: int
    converged: bool
    objective_trace: list[float]
    variant: Variant
    eta: float = 0.0
    lam: float = 0.0
    # (objective before, objective after) the beta step of each alternation,
    # both evaluated with that alternation's weights and tau.
    step_objectives: list[tuple[float, float]] = field(default_factory=list)

    @property
    def selected_prior(self) -> int | None:
        """Index of the prior carrying all the weight (SPL), else None."""
        if self.variant in (Variant.SPL, Variant.PRIOR_LASSO) and self.weights.w.size:
            return int(np.argmax(self.weights.w))
        return None


def _entropy(w) -> float:
    w = np.asarray(w, dtype=float)
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos])))


def _check_priors(priors, data: Dataset):
    for pr in priors:
        if np.asarray(pr.y_p).shape[0] != data.n:
            raise ValueError(
                f"prior {pr.source_id!r} has {len(pr.y_p)} predicted responses, "
                f"data has {data.n} rows"
            )


def _prior_theta(prior: PriorEstimate, data: Dataset) -> np.ndarray:
    hit = prior._cache.get("theta")
    if hit is not None and hit[0] is data._design and hit[1].shape[0] == data.n:
        return hit[1]
    theta_p = linear_predictor(prior.beta_p, data)
    prior._cache["theta"] = (data._design, theta_p)
    return theta_p


def deviances(beta: CoefVector, priors, data: Dataset, fam, theta=None) -> np.ndarray:
    """Deviance of ``beta`` against each prior on ``data``."""
    fam = get_family(fam)
    if theta is None:
        theta = linear_predictor(beta, data)
    D = np.empty(len(priors))
    for m, pr in enumerate(priors):
        if not isinstance(pr, PriorEstimate):
            D[m] = _deviance(beta, pr, data, fam)
            continue
        if pr.y_p.shape[0] != data.n:
            raise ValueError(
                f"prior predicted responses have length {pr.y_p.shape[0]}, expected {data.n}"
            )
        D[m] = bregman(theta, _prior_theta(pr, data), pr.y_p, fam)
    if not np.all(np.isfinite(D)):
        raise FloatingPointError("non-finite deviance")
    return D


def _penalty(beta: CoefVector, data: Dataset, cfg: MplConfig) -> float:
    if cfg.lam == 0:
        return 0.0
    pw = penalty_weights(data, None, cfg.solver.standardize)
    return cfg.lam * float(pw @ np.abs(beta.slopes))


def objective(beta: CoefVector, w, priors, data: Dataset, fam, cfg: MplConfig,
              tau: float | None = None) -> float:
    """Value of the MPL objective at ``(beta, w)``.

    The lasso term uses the solver's penalty scale (standardized columns when
    ``cfg.solver.standardize``).  With ``eta == 0`` the prior and entropy
    terms vanish.  ``tau=None`` is only allowed when the entropy term cannot
    matter, i.e. when some prior has zero deviance at ``beta``.
    """
    fam = get_family(fam)
    if not priors:
        raise ValueError("objective needs at least one prior")
    w = np.asarray(w, dtype=float)
    theta = linear_predictor(beta, data)
    value = _nll_theta(theta, data.y, fam) + _penalty(beta, data, cfg)
    if cfg.eta == 0:
        return value
    D = deviances(beta, priors, data, fam, theta)
    value += cfg.eta * float(w @ D)
    if tau is None:
        if D.min() > ZERO_DEVIANCE:
            raise ValueError("tau is undefined: call fix_tau first")
        return value
    return value + tau * _entropy(w)


def _softmax_neg(scaled):
    z = -(scaled - scaled.min())
    e = np.exp(z)
    return e / e.sum()


def update_weights(beta: CoefVector, priors, data: Dataset, fam, eta: float,
                   tau: float) -> WeightState:
    """Closed-form weight step: softmax of ``-(eta / tau) * D``."""
    if not (eta > 0 and tau > 0):
        raise ValueError("weight update needs eta > 0 and tau > 0")
    D = deviances(beta, priors, data, fam)
    return WeightState(_softmax_neg((eta / tau) * D), float(tau), D)


def fix_tau(beta: CoefVector, priors, data: Dataset, fam, eta: float,
            c0: float = 1.0) -> TauRule:
    """``tau = eta * D_min / c0``; with ``D_min == 0`` share weight equally
    among the zero-deviance priors instead."""
    if not eta > 0:
        raise ValueError("tau rule needs eta > 0")
    D = deviances(beta, priors, data, fam)
    d_min = float(D.min())
    if d_min <= ZERO_DEVIANCE:
        zero = D <= ZERO_DEVIANCE
        return TauRule(None, zero / zero.sum(), D)
    return TauRule(eta * d_min / c0, None, D)


def _weight_step(beta, priors, data, fam, eta, c0, tau=None) -> WeightState:
    if tau is not None:
        return update_weights(beta, priors, data, fam, eta, tau)
    rule = fix_tau(beta, priors, data, fam, eta, c0)
    if rule.weights is not None:
        return WeightState(rule.weights, None, rule.deviances)
    return WeightState(_softmax_neg((eta / rule.tau) * rule.deviances), rule.tau,
                       rule.deviances)


def adjusted_response(y, priors, w, eta: float) -> np.ndarray:
    """``(y + eta * sum_m w_m y_p_m) / (1 + eta)``.

    ``priors`` holds :class:`PriorEstimate` objects or plain response vectors.
    """
    y = np.asarray(y, dtype=float)
    if eta == 0:
        return y.copy()
    w = np.asarray(w, dtype=float)
    if w.shape[0] != len(priors):
        raise ValueError("one weight per prior required")
    blend = np.zeros_like(y)
    for wm, pr in zip(w, priors):
        yp = np.asarray(pr.y_p if isinstance(pr, PriorEstimate) else pr, dtype=float)
        if yp.shape != y.shape:
            raise ValueError("prior responses and y differ in length")
        if wm:
            blend += wm * yp
    return (y + eta * blend) / (1.0 + eta)


def _prior_xty(prior: PriorEstimate, data: Dataset, standardize: bool) -> np.ndarray:
    hit = prior._cache.get(standardize)
    if hit is not None and hit[0] is data._design:
        return hit[1]
    c = _xty(data.with_response(prior.y_p), standardize)
    prior._cache[standardize] = (data._design, c)
    return c


def _adjusted_dataset(data: Dataset, fam, priors, w, eta: float, standardize: bool) -> Dataset:
    adj = data.with_response(adjusted_response(data.y, priors, w, eta))
    if fam is GAUSSIAN:
        # The centred cross-product is linear in the response; reuse the cached pieces.
        _standardization(data, standardize)
        c = _xty(data, standardize).copy()
        for wm, pr in zip(w, priors):
            if wm:
                c += eta * wm * _prior_xty(pr, data, standardize)
        adj._resp[("xty", standardize)] = c / (1.0 + eta)
    return adj


def update_beta(data: Dataset, fam, priors, w, cfg: MplConfig,
                warm: CoefVector | None = None) -> LassoFit:
    """Beta step for fixed weights: a lasso on the adjusted response with
    penalty ``lam / (1 + eta)``."""
    fam = get_family(fam)
    if cfg.eta == 0 or not priors:
        return fit_lasso_glm(data, fam, PenaltySpec(cfg.lam), cfg.solver, warm)
    _check_priors(priors, data)
    adj = _adjusted_dataset(data, fam, priors, w, cfg.eta, cfg.solver.standardize)
    return fit_lasso_glm(adj, fam, PenaltySpec(cfg.lam / (1.0 + cfg.eta)), cfg.solver, warm)


def fit_lasso(data: Dataset, fam, cfg: MplConfig, warm: CoefVector | None = None) -> LassoFit:
    return fit_lasso_glm(data, get_family(fam), PenaltySpec(cfg.lam), cfg.solver, warm)


def _max_change(a: CoefVector, b: CoefVector) -> float:
    return max(abs(a.intercept - b.intercept), float(np.max(np.abs(a.slopes - b.slopes),
                                                              initial=0.0)))


def _as_lasso(data, fam, priors, cfg, variant, init) -> MplFit:
    fit = fit_lasso(data, fam, cfg, init)
    M = len(priors)
    w = np.full(M, 1.0 / M) if M else np.zeros(0)
    D = deviances(fit.beta, priors, data, fam) if M else np.zeros(0)
    value = neg_log_likelihood(fit.beta, data, fam) + _penalty(fit.beta, data, cfg)
    return MplFit(fit.beta, WeightState(w, None, D), 1, fit.converged, [value],
                  variant if M else Variant.LASSO, cfg.eta, cfg.lam)


def fit_mpl(data: Dataset, fam, priors, cfg: MplConfig,
            init: CoefVector | None = None) -> MplFit:
    """Alternating minimization of the MPL objective.

    Parameters
    ----------
    data, fam
        Current study and its family.
    priors : list of PriorEstimate
        Prior estimates whose ``y_p`` match ``data``.
    cfg : MplConfig
    init : CoefVector, optional
        Starting coefficients; defaults to the plain lasso fit at ``cfg.lam``.

    Returns
    -------
    MplFit
        If the alternation cap is reached, ``converged`` is False and the
        iterate with the smallest objective is returned.
    """
    fam = get_family(fam)
    priors = list(priors)
    if not priors or cfg.eta == 0:
        return _as_lasso(data, fam, priors, cfg, Variant.MPL, init)
    _check_priors(priors, data)
    beta = init if init is not None else fit_lasso(data, fam, cfg).beta

    trace, pairs = [], []
    prev_w = None
    best = None
    converged = False
    tau = None
    t = 0
    for t in range(1, cfg.max_alt + 1):
        ws = _weight_step(beta, priors, data, fam, cfg.eta, cfg.c0, tau)
        if cfg.tau_mode == "initial":
            tau = ws.tau
        before = objective(beta, ws.w, priors, data, fam, cfg, ws.tau)
        fit = update_beta(data, fam, priors, ws.w, cfg, warm=beta)
        after = objective(fit.beta, ws.w, priors, data, fam, cfg, ws.tau)
        trace.append(after)
        pairs.append((before, after))
        d_beta = _max_change(fit.beta, beta)
        d_w = np.inf if prev_w is None else float(np.max(np.abs(ws.w - prev_w)))
        beta, prev_w = fit.beta, ws.w
        if best is None or after < best[0]:
            best = (after, beta, ws)
        if d_beta < cfg.alt_tol and d_w < cfg.alt_tol:
            converged = True
            break
    if not converged:
        logger.info("MPL alternation hit max_alt=%d (eta=%g, lam=%g)", cfg.max_alt,
                    cfg.eta, cfg.lam)
        _, beta, ws = best
    return MplFit(beta, ws, t, converged, trace, Variant.MPL, cfg.eta, cfg.lam, pairs)


def _spl_objective(beta, m, prior_data, data, fam, cfg) -> float:
    return (neg_log_likelihood(beta, data, fam)
            + cfg.eta * neg_log_likelihood(beta, prior_data[m], fam)
            + _penalty(beta, data, cfg))


def fit_spl(data: Dataset, fam, priors, cfg: MplConfig,
            init: CoefVector | None = None) -> MplFit:
    """Single-Prior Lasso: the weight vector is restricted to simplex vertices.

    The weight step picks the prior minimizing ``l(beta; X, y_p_m)``; the beta
    step is the usual adjusted-response lasso.
    """
    fam = get_family(fam)
    priors = list(priors)
    if not priors or cfg.eta == 0:
        return _as_lasso(data, fam, priors, cfg, Variant.SPL, init)
    _check_priors(priors, data)
    prior_data = [data.with_response(pr.y_p) for pr in priors]
    M = len(priors)
    beta = init if init is not None else fit_lasso(data, fam, cfg).beta

    trace, pairs = [], []
    prev_m = None
    converged = False
    t = 0
    for t in range(1, cfg.max_alt + 1):
        losses = [neg_log_likelihood(beta, pd, fam) for pd in prior_data]
        m = int(np.argmin(losses))
        w = np.zeros(M)
        w[m] = 1.0
        before = _spl_objective(beta, m, prior_data, data, fam, cfg)
        fit = update_beta(data, fam, priors, w, cfg, warm=beta)
        after = _spl_objective(fit.beta, m, prior_data, data, fam, cfg)
        trace.append(after)
        pairs.append((before, after))
        d_beta = _max_change(fit.beta, beta)
        beta = fit.beta
        if m == prev_m and d_beta < cfg.alt_tol:
            converged = True
            break
        prev_m = m
    D = deviances(beta, priors, data, fam)
    return MplFit(beta, WeightState(w, None, D), t, converged, trace, Variant.SPL,
                  cfg.eta, cfg.lam, pairs)


def fit_ewpl(data: Dataset, fam, priors, cfg: MplConfig,
             init: CoefVector | None = None, variant: Variant = Variant.EWPL) -> MplFit:
    """Equal weights ``1/M`` on every prior and a single beta step."""
    fam = get_family(fam)
    priors = list(priors)
    if not priors or cfg.eta == 0:
        return _as_lasso(data, fam, priors, cfg, variant, init)
    _check_priors(priors, data)
    M = len(priors)
    w = np.full(M, 1.0 / M)
    warm = init if init is not None else fit_lasso(data, fam, cfg).beta
    fit = update_beta(data, fam, priors, w, cfg, warm=warm)
    rule = fix_tau(fit.beta, priors, data, fam, cfg.eta, cfg.c0)
    value = objective(fit.beta, w, priors, data, fam, cfg, rule.tau)
    return MplFit(fit.beta, WeightState(w, rule.tau, rule.deviances), 1, fit.converged,
                  [value], variant, cfg.eta, cfg.lam)


def fit_prior_lasso(data: Dataset, fam, prior: PriorEstimate, cfg: MplConfig,
                    init: CoefVector | None = None) -> MplFit:
    """Prior Lasso with a single prior (weight fixed at 1)."""
    return fit_ewpl(data, fam, [prior], cfg, init, variant=Variant.PRIOR_LASSO)


_FITTERS = {
    Variant.MPL: fit_mpl,
    Variant.SPL: fit_spl,
    Variant.EWPL: fit_ewpl,
}


def fit_variant(variant, data: Dataset, fam, priors, cfg: MplConfig,
                init: CoefVector | None = None) -> MplFit:
    """Dispatch on a :class:`Variant` (or its string value)."""
    variant = Variant(variant)
    if variant is Variant.LASSO:
        return _as_lasso(data, get_family(fam), [], cfg, Variant.LASSO, init)
    if variant is Variant.PRIOR_LASSO:
        if len(priors) != 1:
            raise ValueError("prior_lasso takes exactly one prior")
        return fit_prior_lasso(data, fam, priors[0], cfg, init)
    return _FITTERS[variant](data, fam, priors, cfg, init)
