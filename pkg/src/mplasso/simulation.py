"""Synthetic experiments: data generation, prior scenarios, comparators, metrics.

Designs have AR(1) correlation ``Sigma_ij = rho^|i-j|``.  Scenario labels:

``toy``
    Linear model, two complementary variable-set priors
    ``{1..10} U {21..30}`` and ``{11..30}``.
``S1``-``S8`` (linear) and ``S9``-``S16`` (logistic)
    model x prior type (variable sets / coefficient values) x reliability
    (full, unreliable/partial, mixed with 4 sources, mixed with 8 sources).

The exact S1-S16 prior tables are reconstructed, not copied; see
:func:`make_scenario` for the construction and its tunable constants.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .glm import BERNOULLI, GAUSSIAN, CoefVector, Dataset, linear_predictor, sigmoid
from .mpl import MplConfig, MplFit
from .prior import PriorSource, build_prior_estimate
from .solver import PenaltySpec, fit_lasso_glm
from .tuning import TuneGrid, tune

logger = logging.getLogger(__name__)

__all__ = [
    "LINEAR_BETA",
    "LOGISTIC_BETA",
    "ScenarioSpec",
    "Metrics",
    "METHODS",
    "gen_design",
    "gen_response",
    "make_scenario",
    "compute_metrics",
    "run_replication",
    "run_comparators",
    "summarize",
    "write_replications_csv",
    "write_summary_csv",
    "read_csv_rows",
]

LINEAR_BETA = (2, -1.5, -0.5, -2, 0.5, 2, -1.5, 2, -2, 1,
               1.5, -2, 1, 1.5, -0.5, -2, 0.5, 2, -1.5, 1)
LOGISTIC_BETA = (-0.5, -1.25, 0.5, -0.45, 1, 0.75, -2, 1, 1.5, 0.8)

METHODS = ("MPL", "SPL", "EWPL", "BPL", "WPL", "BP", "WP", "Lasso", "Oracle")

# Reconstruction constants for S1-S16.
PRIOR_COEF_SD = 0.3
EXTRA_NOISE_FRACTION = 0.25  # reliable sets carry s/4 irrelevant extras
PARTIAL_FRACTION = 0.5       # partial coefficient priors report half the truth


@dataclass
class ScenarioSpec:
    label: str
    model: str  # "linear" | "logistic"
    n_train: int
    n_valid: int
    n_test: int
    p: int
    rho: float
    beta_true: CoefVector
    priors: list[PriorSource]
    n_reps: int = 100
    seed: int = 0
    # Which priors were constructed as reliable (metadata for reporting).
    reliable: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.model not in ("linear", "logistic"):
            raise ValueError(f"unknown model {self.model!r}")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.beta_true.p != self.p:
            raise ValueError("beta_true must have p slopes")
        for src in self.priors:
            src.validate(self.p)

    @property
    def family(self):
        return GAUSSIAN if self.model == "linear" else BERNOULLI

    @property
    def support(self) -> np.ndarray:
        return self.beta_true.support()

    def to_json(self) -> dict:
        nz = self.beta_true.support()
        return {
            "label": self.label,
            "model": self.model,
            "n_train": self.n_train,
            "n_valid": self.n_valid,
            "n_test": self.n_test,
            "p": self.p,
            "rho": self.rho,
            "beta_true": {
                "intercept": self.beta_true.intercept,
                "coefficients": {str(j + 1): float(self.beta_true.slopes[j]) for j in nz},
            },
            "priors": [s.to_json() for s in self.priors],
            "n_reps": self.n_reps,
            "seed": self.seed,
            "reliable": None if self.reliable is None else list(self.reliable),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        p = int(obj["p"])
        slopes = np.zeros(p)
        for k, v in obj["beta_true"]["coefficients"].items():
            slopes[int(k) - 1] = float(v)
        rel = obj.get("reliable")
        return cls(
            label=obj["label"],
            model=obj["model"],
            n_train=int(obj["n_train"]),
            n_valid=int(obj["n_valid"]),
            n_test=int(obj["n_test"]),
            p=p,
            rho=float(obj["rho"]),
            beta_true=CoefVector(float(obj["beta_true"].get("intercept", 0.0)), slopes),
            priors=[PriorSource.from_json(s) for s in obj["priors"]],
            n_reps=int(obj.get("n_reps", 100)),
            seed=int(obj.get("seed", 0)),
            reliable=None if rel is None else tuple(bool(r) for r in rel),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class Metrics:
    ame: float
    pmse: float
    me: float
    pmr: float | None
    tp: int
    fp: int
    weights: np.ndarray | None = None
    eta_selected: float | None = None
    lambda_selected: float | None = None


# ---------------------------------------------------------------------------
# data


def gen_design(n: int, p: int, rho: float, seed) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with ``Sigma_ij = rho^|i-j|`` (AR(1) recursion)."""
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = E[:, 0]
    s = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + s * E[:, j]
    return X


def gen_response(X: np.ndarray, beta_true: CoefVector, model: str, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    theta = linear_predictor(beta_true, Dataset(X, np.zeros(X.shape[0])))
    if model == "linear":
        return theta + rng.standard_normal(theta.shape[0])
    if model == "logistic":
        return (rng.random(theta.shape[0]) < sigmoid(theta)).astype(float)
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# scenarios


def _truth(model: str, p: int) -> CoefVector:
    vals = LINEAR_BETA if model == "linear" else LOGISTIC_BETA
    slopes = np.zeros(p)
    slopes[: len(vals)] = vals
    return CoefVector(0.0, slopes)


def _reliable_set(rng, s, p, name):
    extra = rng.choice(np.arange(s + 1, p + 1), size=max(1, int(s * EXTRA_NOISE_FRACTION)),
                       replace=False)
    return PriorSource.variable_set(name, list(range(1, s + 1)) + sorted(extra.tolist()))


def _unreliable_set(rng, s, p, name):
    noise = rng.choice(np.arange(s + 1, p + 1), size=s, replace=False)
    return PriorSource.variable_set(name, sorted(noise.tolist()))


def _full_coefs(rng, truth, s, name):
    vals = truth.slopes[:s] + rng.normal(0.0, PRIOR_COEF_SD, size=s)
    return PriorSource.coef_values(name, {j + 1: float(vals[j]) for j in range(s)})


def _partial_coefs(rng, truth, s, name):
    keep = np.sort(rng.choice(s, size=max(1, int(round(s * PARTIAL_FRACTION))), replace=False))
    vals = truth.slopes[keep] + rng.normal(0.0, PRIOR_COEF_SD, size=keep.size)
    return PriorSource.coef_values(name, {int(j) + 1: float(v) for j, v in zip(keep, vals)})


SCENARIO_LABELS = ("toy",) + tuple(f"S{i}" for i in range(1, 17))


def make_scenario(label: str, *, n: int = 400, p: int = 1000, rho: float = 0.5,
                  n_test: int = 500, n_reps: int = 100, seed: int = 0) -> ScenarioSpec:
    """Built-in scenario by label (``toy``, ``S1``..``S16``).

    Reconstruction of S1-S16: reliable variable sets hold the whole true
    support plus ``s/4`` random irrelevant variables; unreliable sets hold
    ``s`` random irrelevant variables; full coefficient priors report every
    true coefficient perturbed by N(0, 0.3^2); partial ones report a random
    half.  Level 1 uses 2 reliable/full priors, level 2 uses 2 unreliable/
    partial priors, level 3 mixes 2 + 2 and level 4 mixes 4 + 4.  Prior
    contents are drawn once from ``seed``.
    """
    if label == "toy":
        priors = [
            PriorSource.variable_set("X1", list(range(1, 11)) + list(range(21, 31))),
            PriorSource.variable_set("X2", list(range(11, 31))),
        ]
        return ScenarioSpec("toy", "linear", n, n, n_test, p, rho, _truth("linear", p),
                            priors, n_reps, seed, (False, False))
    if label not in SCENARIO_LABELS:
        raise ValueError(f"unknown scenario {label!r}; expected one of {SCENARIO_LABELS}")
    idx = int(label[1:])
    model = "linear" if idx <= 8 else "logistic"
    local = (idx - 1) % 8
    coef_type = local >= 4
    level = local % 4
    truth = _truth(model, p)
    s = truth.support().size
    rng = np.random.default_rng([seed, idx])
    n_good, n_bad = [(2, 0), (0, 2), (2, 2), (4, 4)][level]

    priors, reliable = [], []
    for k in range(n_good):
        name = f"P{len(priors) + 1}"
        priors.append(_full_coefs(rng, truth, s, name) if coef_type
                      else _reliable_set(rng, s, p, name))
        reliable.append(True)
    for k in range(n_bad):
        name = f"P{len(priors) + 1}"
        priors.append(_partial_coefs(rng, truth, s, name) if coef_type
                      else _unreliable_set(rng, s, p, name))
        reliable.append(False)
    return ScenarioSpec(label, model, n, n, n_test, p, rho, truth, priors, n_reps, seed,
                        tuple(reliable))


# ---------------------------------------------------------------------------
# metrics and comparators


def compute_metrics(fit, spec: ScenarioSpec, test: Dataset,
                    include_intercept: bool = True) -> Metrics:
    """Estimation, prediction and selection metrics of one fit.

    ``fit`` may be an :class:`MplFit`, a :class:`LassoFit` or a bare
    :class:`CoefVector`.
    """
    beta = fit if isinstance(fit, CoefVector) else fit.beta
    fam = spec.family
    diff = beta.slopes - spec.beta_true.slopes
    d0 = beta.intercept - spec.beta_true.intercept if include_intercept else 0.0
    ame = float(np.abs(diff).sum() + abs(d0))
    me = float(diff @ diff + d0 * d0)
    mu = fam.mean(linear_predictor(beta, test))
    pmse = float(np.mean((mu - test.y) ** 2))
    pmr = float(np.mean((mu > 0.5) != (test.y > 0.5))) if spec.model == "logistic" else None
    selected = beta.slopes != 0
    truth = spec.beta_true.slopes != 0
    tp = int(np.sum(selected & truth))
    fp = int(np.sum(selected & ~truth))
    m = Metrics(ame, pmse, me, pmr, tp, fp)
    if isinstance(fit, MplFit):
        m.weights = fit.weights.w
        m.eta_selected = fit.eta
        m.lambda_selected = fit.lam
    return m


def _replication_data(spec: ScenarioSpec, rep: int):
    seeds = np.random.SeedSequence(spec.seed + rep).spawn(6)
    out = []
    for (sx, sy), n in zip([(seeds[0], seeds[1]), (seeds[2], seeds[3]), (seeds[4], seeds[5])],
                           (spec.n_train, spec.n_valid, spec.n_test)):
        X = gen_design(n, spec.p, spec.rho, sx)
        out.append(Dataset(X, gen_response(X, spec.beta_true, spec.model, sy)))
    return out


def _full_trust(src: PriorSource, est, train, fam, solver):
    if src.coefficients is not None:
        return est.beta_p
    return build_prior_estimate(src, train, fam, nu_grid=[np.inf], cfg=solver).beta_p


def run_replication(spec: ScenarioSpec, rep: int, methods=METHODS,
                    grid: TuneGrid | None = None, cfg: MplConfig | None = None,
                    nu_grid=None) -> list[dict]:
    """Fit every requested method on one replication; one row per method."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    methods = [m for m in METHODS if m in set(methods)]
    grid = grid or TuneGrid()
    cfg = cfg or MplConfig()
    fam = spec.family
    train, valid, test = _replication_data(spec, rep)

    needs_priors = any(m not in ("Lasso", "Oracle") for m in methods)
    estimates = []
    if needs_priors:
        estimates = [build_prior_estimate(src, train, fam, nu_grid=nu_grid, validation=valid,
                                          cfg=cfg.solver)
                     for src in spec.priors]
        dist = [np.linalg.norm(e.beta_p.to_array() - spec.beta_true.to_array())
                for e in estimates]
        best, worst = int(np.argmin(dist)), int(np.argmax(dist))

    rows = []
    for method in methods:
        row = {"rep": rep, "method": method}
        try:
            if method in ("MPL", "SPL", "EWPL"):
                res = tune(train, valid, fam, estimates, grid, method.lower(), cfg)
                fit, chosen = res.best_fit, None
            elif method == "Lasso":
                fit, chosen = tune(train, valid, fam, [], grid, "lasso", cfg).best_fit, None
            elif method in ("BPL", "WPL"):
                chosen = best if method == "BPL" else worst
                fit = tune(train, valid, fam, [estimates[chosen]], grid, "prior_lasso",
                           cfg).best_fit
            elif method in ("BP", "WP"):
                chosen = best if method == "BP" else worst
                fit = _full_trust(spec.priors[chosen], estimates[chosen], train, fam,
                                  cfg.solver)
            else:  # Oracle
                factors = np.full(spec.p, np.inf)
                factors[spec.support] = 0.0
                fit = fit_lasso_glm(train, fam, PenaltySpec(0.0, factors), cfg.solver)
                chosen = None
            m = compute_metrics(fit, spec, test)
            row.update(ame=m.ame, pmse=m.pmse, me=m.me, pmr=m.pmr, tp=m.tp, fp=m.fp,
                       eta=m.eta_selected, **{"lambda": m.lambda_selected})
            if chosen is not None:
                row["prior"] = spec.priors[chosen].id
            if m.weights is not None and method in ("MPL", "SPL", "EWPL"):
                for src, wv in zip(spec.priors, m.weights):
                    row[f"w_{src.id}"] = float(wv)
        except Exception as exc:  # noqa: BLE001 - one failing method must not end the run
            logger.warning("rep %d method %s failed: %r", rep, method, exc)
            row["error"] = repr(exc)
        rows.append(row)
    return rows


def _rep_worker(args):
    return run_replication(*args)


def run_comparators(spec: ScenarioSpec, methods=METHODS, n_reps: int | None = None,
                    grid: TuneGrid | None = None, cfg: MplConfig | None = None,
                    threads: int = 1, nu_grid=None) -> list[dict]:
    """All replications of a scenario; rows ordered by (rep, method).

    Replication ``r`` draws its data from seed ``spec.seed + r``, so results
    do not depend on ``threads``.
    """
    n_reps = spec.n_reps if n_reps is None else n_reps
    jobs = [(spec, r, tuple(methods), grid, cfg, nu_grid) for r in range(n_reps)]
    if threads > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_rep_worker, jobs))
    else:
        chunks = []
        for job in jobs:
            chunks.append(_rep_worker(job))
            logger.info("%s: replication %d/%d done", spec.label, job[1] + 1, n_reps)
    return [row for chunk in chunks for row in chunk]


# ---------------------------------------------------------------------------
# CSV output

METRIC_COLUMNS = ("ame", "pmse", "me", "pmr", "tp", "fp", "eta", "lambda")


def _columns(spec: ScenarioSpec) -> list[str]:
    return (["rep", "method"] + list(METRIC_COLUMNS) + ["prior"]
            + [f"w_{s.id}" for s in spec.priors] + ["error"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def _write(rows, columns, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def write_replications_csv(rows, spec: ScenarioSpec, path) -> None:
    _write(rows, _columns(spec), path)


def summarize(rows, spec: ScenarioSpec) -> list[dict]:
    """Mean and sample standard deviation per method of every numeric column."""
    value_cols = [c for c in _columns(spec) if c not in ("rep", "method", "prior", "error")]
    out = []
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    for method in methods:
        mine = [r for r in rows if r["method"] == method and not r.get("error")]
        summary = {"method": method, "n": len(mine)}
        for c in value_cols:
            vals = np.array([r[c] for r in mine if r.get(c) is not None], dtype=float)
            summary[f"{c}_mean"] = float(vals.mean()) if vals.size else None
            summary[f"{c}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else None
        out.append(summary)
    return out


def write_summary_csv(rows, spec: ScenarioSpec, path) -> None:
    summary = summarize(rows, spec)
    value_cols = [c for c in _columns(spec) if c not in ("rep", "method", "prior", "error")]
    columns = ["method", "n"] + [f"{c}_{s}" for c in value_cols for s in ("mean", "sd")]
    _write(summary, columns, path)


def read_csv_rows(path) -> list[dict]:
    """Read a replications or summary CSV back; empty cells become None."""
    def parse(key, v):
        if v == "":
            return None
        if key in ("rep", "tp", "fp", "n"):
            return int(v)
        if key in ("method", "prior", "error"):
            return v
        return float(v)

    with open(path, newline="") as fh:
        return [{k: parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
