"""Command-line front end: ``mplasso {fit,tune,simulate}``.

Data files are CSV with a header row; the first column is the response and
the remaining columns are the covariates ``x1..xp``.  Prior files are JSON
arrays as read by :func:`mplasso.prior.read_priors`.  Exit status is 0 on
success and 2 on bad input.  ``MPL_LOG`` sets the log level (e.g. ``INFO``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .glm import Dataset, get_family, neg_log_likelihood
from .mpl import MplConfig, MplFit, fit_variant
from .prior import build_prior_estimate, read_priors
from .simulation import (
    METHODS,
    ScenarioSpec,
    make_scenario,
    run_comparators,
    write_replications_csv,
    write_summary_csv,
)
from .tuning import DEFAULT_ETAS, TuneGrid, kfold_tune, tune

logger = logging.getLogger("mplasso")

VARIANTS = ("mpl", "spl", "ewpl", "lasso")


class InputError(Exception):
    """Bad user input; reported with exit status 2."""


# ---------------------------------------------------------------------------
# file formats


def read_data_csv(path) -> Dataset:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read data file {path}: {exc.strerror}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one data row")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InputError(f"{path}: need a response column and at least one covariate")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite values")
    return Dataset(arr[:, 1:], arr[:, 0])


def write_data_csv(path, X, y) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j + 1}" for j in range(X.shape[1])])
        for yi, row in zip(np.asarray(y, dtype=float), X):
            w.writerow([format(yi, ".17g")] + [format(v, ".17g") for v in row])


def fit_to_json(fit: MplFit, priors) -> dict:
    nz = fit.beta.support()
    return {
        "variant": fit.variant.value,
        "intercept": fit.beta.intercept,
        "coefficients": {str(j + 1): float(fit.beta.slopes[j]) for j in nz},
        "weights": {pr.source_id: float(w) for pr, w in zip(priors, fit.weights.w)},
        "eta": fit.eta,
        "lambda": fit.lam,
        "tau": fit.weights.tau,
        "n_iterations": fit.n_alt,
        "converged": bool(fit.converged),
        "objective_trace": [float(v) for v in fit.objective_trace],
    }


def read_fit_json(path) -> dict:
    """Load a fit result; coefficient keys come back as 1-based ints."""
    obj = json.loads(Path(path).read_text())
    obj["coefficients"] = {int(k): float(v) for k, v in obj["coefficients"].items()}
    return obj


def write_scores_csv(table: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "lambda", "score"])
        for (eta, lam), s in sorted(table.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
            w.writerow([format(eta, ".17g"), format(lam, ".17g"), format(s, ".17g")])


def read_scores_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {(float(r["eta"]), float(r["lambda"])): float(r["score"])
                for r in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# argument handling


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    p.add_argument("--c0", type=float, default=1.0, help="tau rule constant (default 1)")
    p.add_argument("--seed", type=int, default=0)


def _data_args(p: argparse.ArgumentParser, need_valid: bool = False) -> None:
    p.add_argument("--train", required=True, help="training data CSV")
    p.add_argument("--valid", help="validation data CSV")
    p.add_argument("--priors", help="prior JSON file")
    p.add_argument("--variant", choices=VARIANTS, default="mpl")


def _grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta-grid", type=_float_list, default=DEFAULT_ETAS,
                   help="comma-separated eta values (default 0,0.5,1,5,10,15,20)")
    p.add_argument("--lambda-points", type=int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mplasso",
                                     description="Prior-weighted Lasso fitting for GLMs.")
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("fit", help="fit at a given (eta, lambda)")
    _data_args(pf)
    _common(pf)
    pf.add_argument("--eta", type=float, default=0.0)
    pf.add_argument("--lambda", dest="lam", type=float, required=True)
    pf.add_argument("--out", required=True, help="result JSON path")

    pt = sub.add_parser("tune", help="select (eta, lambda), then fit")
    _data_args(pt)
    _common(pt)
    _grid_args(pt)
    pt.add_argument("--kfold", type=int, help="cross-validate with k folds instead of --valid")
    pt.add_argument("--test", help="optional test CSV; its score is added to best.json")
    pt.add_argument("--out", required=True, help="output directory")

    ps = sub.add_parser("simulate", help="run a simulation scenario")
    _common(ps)
    _grid_args(ps)
    ps.add_argument("--scenario", required=True, help="built-in label (toy, S1..S16) or JSON file")
    ps.add_argument("--reps", type=int, help="replications (default: scenario's n_reps)")
    ps.add_argument("--n", type=int, default=400, help="train/validation size for built-ins")
    ps.add_argument("--methods", default=",".join(METHODS),
                    help="comma-separated subset of " + ",".join(METHODS))
    ps.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                    help="worker processes (default: number of cores)")
    ps.add_argument("--out", required=True, help="output directory")
    return parser


def _priors(args, train: Dataset, fam, valid: Dataset | None, cfg: MplConfig):
    if args.variant == "lasso":
        return []
    if not args.priors:
        raise InputError(f"variant {args.variant} needs --priors")
    try:
        sources = read_priors(args.priors)
    except OSError as exc:
        raise InputError(f"cannot read prior file {args.priors}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad prior file {args.priors}: {exc}") from exc
    if not sources:
        raise InputError(f"prior file {args.priors} holds no priors")
    try:
        return [build_prior_estimate(s, train, fam, validation=valid, cfg=cfg.solver,
                                     seed=args.seed) for s in sources]
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _load(args, fam):
    train = read_data_csv(args.train)
    valid = read_data_csv(args.valid) if getattr(args, "valid", None) else None
    try:
        train.check(fam)
        if valid is not None:
            valid.check(fam)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if valid is not None and valid.p != train.p:
        raise InputError("training and validation files have different covariates")
    return train, valid


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    fam = get_family(args.family)
    train, valid = _load(args, fam)
    cfg = MplConfig(eta=args.eta, lam=args.lam, c0=args.c0)
    priors = _priors(args, train, fam, valid, cfg)
    fit = fit_variant(args.variant, train, fam, priors, cfg)
    _write_json(fit_to_json(fit, priors), args.out)
    return 0


def cmd_tune(args) -> int:
    fam = get_family(args.family)
    if args.kfold is None and not args.valid:
        raise InputError("tune needs --valid or --kfold")
    train, valid = _load(args, fam)
    cfg = MplConfig(c0=args.c0)
    grid = TuneGrid(args.eta_grid, args.lambda_points, args.lambda_min_ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kfold is not None:
        if valid is not None:
            # Cross-validation uses every available observation.
            train = Dataset(np.vstack([train.X, valid.X]), np.concatenate([train.y, valid.y]))
        priors = _priors(args, train, fam, None, cfg)
        try:
            res = kfold_tune(train, fam, priors, grid, args.kfold, args.variant, cfg, args.seed)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        logger.info("stratified folds: sizes %s",
                    np.bincount(res.diagnostics["folds"], minlength=args.kfold).tolist())
    else:
        priors = _priors(args, train, fam, valid, cfg)
        res = tune(train, valid, fam, priors, grid, args.variant, cfg)
    write_scores_csv(res.score_table, out / "scores.csv")
    best = {"eta": res.best_eta, "lambda": res.best_lambda, "score": res.best_score}
    if args.test:
        test = read_data_csv(args.test)
        best["test_score"] = -neg_log_likelihood(res.best_fit.beta, test, fam)
    _write_json(best, out / "best.json")
    _write_json(fit_to_json(res.best_fit, priors), out / "fit.json")
    return 0


def cmd_simulate(args) -> int:
    label = args.scenario
    if Path(label).is_file():
        try:
            spec = ScenarioSpec.load(label)
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"bad scenario file {label}: {exc}") from exc
    else:
        try:
            spec = make_scenario(label, n=args.n, seed=args.seed)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown or not methods:
        raise InputError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    grid = TuneGrid(args.eta_grid, args.lambda_points, args.lambda_min_ratio)
    cfg = MplConfig(c0=args.c0)
    rows = run_comparators(spec, methods, args.reps, grid, cfg, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_replications_csv(rows, spec, out / "replications.csv")
    write_summary_csv(rows, spec, out / "summary.csv")
    spec.save(out / "scenario.json")
    return 0


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "simulate": cmd_simulate}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MPL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"mplasso: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
