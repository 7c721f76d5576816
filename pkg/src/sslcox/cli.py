"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``cv``, ``predict``, ``evaluate`` and
``filter``. Exit codes: 0 success, 1 input error, 2 numerical failure,
3 tuning failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import cox, io, simgen, tuning
from .exceptions import InputError, SSLCoxError, UndefinedMetricError
from .spline import SplineSpec, build_design
from .sslfit import FitControl, PriorConfig, fit

logger = logging.getLogger("sslcox")

fmt = io.fmt


# ----------------------------------------------------------------- output


def _commit(files: dict):
    """Write every ``path -> writer`` to a temporary name first and rename at
    the end, so a failure leaves no partial outputs behind."""
    tmp = {}
    try:
        for path, writer in files.items():
            t = f"{path}.tmp{os.getpid()}"
            writer(t)
            tmp[path] = t
        for path, t in tmp.items():
            os.replace(t, path)
    except BaseException:
        for t in tmp.values():
            if os.path.exists(t):
                os.remove(t)
        raise


def _write_text(text):
    def writer(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return writer


def fit_report(result, trace, data) -> str:
    labels = result.selection()
    n_sel = sum(lab != "null" for lab in labels)
    pr = result.prior
    lines = [
        "sslcox fit report",
        f"subjects: {data.n}",
        f"events: {data.n_events}",
        f"predictors: {len(labels)}",
        f"prior: s0={fmt(pr.s0)} s1={fmt(pr.s1)} a={fmt(pr.a)} b={fmt(pr.b)} hierarchy={pr.hierarchy}",
        f"converged: {'yes' if result.converged else 'no'}",
        f"em_iterations: {result.n_iter}",
        f"in_sample_deviance: {fmt(result.deviance)}",
        f"selected_predictors: {n_sel}",
        "",
        "deviance trace",
        "iteration,deviance,objective",
    ]
    for i, (d, o) in enumerate(zip(trace.deviances, trace.objective), 1):
        lines.append(f"{i},{fmt(d)},{fmt(o)}")
    lines += ["", "selection table",
              "predictor,class,beta_linear,norm_nonlinear,p_linear,p_nonlinear,theta"]
    for j, name in enumerate(result.names):
        nl = result.beta_nonlinear[j]
        lines.append(",".join([
            name, labels[j], fmt(result.beta_linear[j]), fmt(np.linalg.norm(nl)),
            fmt(result.p_linear[j]), fmt(result.p_nonlinear[j]), fmt(result.theta[j]),
        ]))
    return "\n".join(lines) + "\n"


def _model_writer(result, meta=None):
    return lambda path: io.save_model(path, result, meta)


# ----------------------------------------------------------------- shared


def _prior(args, s0=None) -> PriorConfig:
    return PriorConfig(s0=args.s0 if s0 is None else s0, s1=args.s1, a=args.a, b=args.b,
                       hierarchy=args.hierarchy)


def _control(args) -> FitControl:
    return FitControl(epsilon=args.epsilon, max_em_iter=args.max_iter, max_cd_iter=args.max_cd_iter)


def _bases(args, data):
    bases, design, _ = build_design(data.covariates, SplineSpec(n_bases=args.n_bases))
    return bases, design


def _add_model_flags(p, with_s0=True):
    g = p.add_argument_group("prior")
    if with_s0:
        g.add_argument("--s0", type=float, default=0.05, help="spike scale (default 0.05)")
    g.add_argument("--s1", type=float, default=0.5, help="slab scale (default 0.5)")
    g.add_argument("--a", type=float, default=1.0, help="beta prior shape a (default 1)")
    g.add_argument("--b", type=float, default=1.0, help="beta prior shape b (default 1)")
    g.add_argument("--hierarchy", choices=("dependent", "independent"), default="dependent")
    g = p.add_argument_group("spline")
    g.add_argument("--n-bases", type=int, default=10, help="B-spline bases per predictor (default 10)")
    g = p.add_argument_group("control")
    g.add_argument("--epsilon", type=float, default=1e-5, help="EM convergence tolerance")
    g.add_argument("--max-iter", type=int, default=200, help="maximum EM iterations")
    g.add_argument("--max-cd-iter", type=int, default=50, help="maximum outer CD iterations per M-step")


# ----------------------------------------------------------------- commands


def cmd_simulate(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot open {args.config}: {exc.strerror}") from None
    config = simgen.SimConfig.from_text(text)
    if args.seed is not None:
        config = simgen.replicate_config(config, args.seed - config.seed)
    rep = simgen.generate_replicate(config)
    truth = rep.truth
    _commit({
        f"{args.out_prefix}_train.csv": lambda p: io.write_dataset(p, rep.train),
        f"{args.out_prefix}_test.csv": lambda p: io.write_dataset(p, rep.test),
        f"{args.out_prefix}_truth.csv": lambda p: io.write_table(
            p, ["column", "active", "kind"],
            [[r[0] for r in truth], [int(r[1]) for r in truth], [r[2] for r in truth]]),
    })
    logger.info("censoring scale %s; training censoring rate %s",
                fmt(rep.censor_scale), fmt(1 - rep.train.status.mean()))
    return 0


def cmd_fit(args):
    data = io.read_dataset(args.data)
    bases, design = _bases(args, data)
    result, trace = fit(data, bases, _prior(args), _control(args), design=design)
    _commit({
        f"{args.out}_model.json": _model_writer(result),
        f"{args.out}_report.txt": _write_text(fit_report(result, trace, data)),
    })
    return 0


def cmd_cv(args):
    data = io.read_dataset(args.data)
    bases, design = _bases(args, data)
    grid = tuning.default_s0_grid(args.grid_size, args.grid_min, args.grid_max)
    path = tuning.PathSpec(grid, s1=args.s1, n_folds=args.folds, metric=args.metric, seed=args.seed)
    res = tuning.cv_path(data, bases, path, _prior(args, s0=float(grid.min())), _control(args), design=design)
    rows = res.table()
    best, trace = res.path_fits[res.best_index]
    meta = {"cv_metric": res.metric, "cv_folds": args.folds, "cv_seed": args.seed}
    _commit({
        f"{args.out}_cv.csv": lambda p: io.write_table(
            p, ["s0", f"mean_{res.metric}", "se", "n_folds", "best"],
            [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
             [r[3] for r in rows], [int(i == res.best_index) for i in range(len(rows))]]),
        f"{args.out}_model.json": _model_writer(best, meta),
        f"{args.out}_report.txt": _write_text(fit_report(best, trace, data)),
    })
    print(f"best_s0={fmt(res.best_s0)}")
    return 0


def predict_table(model, X, time=None, at=None):
    """Columns of the prediction output as ``(header, columns)``."""
    eta = model.linear_predictor(X)
    rr = np.exp(eta)
    header, cols = ["row", "eta", "relative_risk"], [list(range(1, len(eta) + 1)), eta, rr]
    t = np.full(len(eta), at, dtype=float) if at is not None else time
    if t is not None:
        h0 = model.baseline.cumulative_at(t)
        header += ["time", "baseline_cumhaz", "cumhaz", "survival"]
        cols += [t, h0, h0 * rr, np.exp(-h0 * rr)]
    return header, cols


def cmd_predict(args):
    model = io.load_model(args.model)
    X, time, _ = io.read_covariates(args.data, model.names)
    header, cols = predict_table(model, X, time, args.at)
    _commit({args.out: lambda p: io.write_table(p, header, cols)})
    return 0


def evaluate_model(model, data):
    """Metric rows and Kaplan-Meier rows for the median-risk split."""
    eta = model.linear_predictor(data.covariates)
    try:
        cidx = cox.c_index(data, eta)
    except UndefinedMetricError as exc:
        warnings.warn(f"C-index undefined: {exc}", stacklevel=2)
        cidx = float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", cox.AllCensoredWarning)
        dev = cox.deviance(data, eta)
    metrics = [("n", data.n), ("events", data.n_events), ("deviance", float(dev)), ("c_index", float(cidx))]
    groups = cox.median_risk_groups(eta)
    km = []
    for label, mask in (("all", np.ones(data.n, bool)), ("low", groups == "low"), ("high", groups == "high")):
        if not mask.any():
            continue
        t, s = cox.kaplan_meier(data.time[mask], data.status[mask])
        km += [(label, float(ti), float(si)) for ti, si in zip(t, s)]
    return metrics, km


def cmd_evaluate(args):
    model = io.load_model(args.model)
    X, time, status = io.read_covariates(args.data, model.names)
    if time is None:
        raise InputError(f"{args.data}: evaluation needs 'time' and 'status' columns")
    data = cox.SurvivalDataset(time, status, X, model.names)
    metrics, km = evaluate_model(model, data)
    _commit({
        f"{args.out}_metrics.csv": lambda p: io.write_table(
            p, ["metric", "value"], [[m[0] for m in metrics], [m[1] for m in metrics]]),
        f"{args.out}_km.csv": lambda p: io.write_table(
            p, ["group", "time", "survival"], [[r[0] for r in km], [r[1] for r in km], [r[2] for r in km]]),
    })
    return 0


def cmd_filter(args):
    data = io.read_dataset(args.data, require_events=False)
    keep = tuning.variance_filter(data.covariates, args.top_k)
    if keep.size == data.p:
        logger.info("top-k >= number of predictors; all columns kept (time, status first)")
    sub = cox.SurvivalDataset(data.time, data.status, data.covariates[:, keep], [data.names[j] for j in keep])
    _commit({args.out: lambda p: io.write_dataset(p, sub)})
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslcox", description="Spike-and-slab lasso additive Cox models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate training/test data from a key=value config")
    p.add_argument("config")
    p.add_argument("out_prefix")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit at a single spike scale")
    p.add_argument("data")
    p.add_argument("--out", default="sslcox", help="output prefix (default 'sslcox')")
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validate the spike scale and refit the best model")
    p.add_argument("data")
    p.add_argument("--out", default="sslcox", help="output prefix (default 'sslcox')")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid-size", type=int, default=20)
    p.add_argument("--grid-min", type=float, default=0.005)
    p.add_argument("--grid-max", type=float, default=0.1)
    p.add_argument("--metric", choices=tuning.METRICS, default="deviance")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p, with_s0=False)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="linear predictor, relative risk and cumulative hazard")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--at", type=float, default=None,
                   help="evaluate the hazard at this time instead of each row's 'time'")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="test deviance, C-index and median-split Kaplan-Meier curves")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", default="sslcox", help="output prefix (default 'sslcox')")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("filter", help="keep the top-k variance predictors")
    p.add_argument("data")
    p.add_argument("--top-k", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_filter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SSLCoxError as exc:
        print(f"sslcox {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sslcox {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
