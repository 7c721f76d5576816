"""Spike-scale path, event-stratified k-fold cross-validation and
variance-based feature filtering."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cox
from .exceptions import InputError, TuningError, UndefinedMetricError
from .sslfit import FitControl, PriorConfig, fit, groups_from_bases

logger = logging.getLogger(__name__)

METRICS = ("deviance", "c_index")


def default_s0_grid(n_points: int = 20, lo: float = 0.005, hi: float = 0.1) -> np.ndarray:
    """Geometric grid between ``lo`` and ``hi``, largest value first."""
    if n_points < 1:
        raise InputError("grid needs at least one point")
    if n_points == 1:
        return np.array([hi])
    return np.geomspace(hi, lo, n_points)


@dataclass
class PathSpec:
    s0_grid: np.ndarray = field(default_factory=default_s0_grid)
    s1: float = 0.5
    n_folds: int = 5
    metric: str = "deviance"
    seed: int = 0

    def __post_init__(self):
        self.s0_grid = np.asarray(self.s0_grid, dtype=float)
        if self.s0_grid.size == 0 or np.any(self.s0_grid <= 0) or np.any(self.s0_grid >= self.s1):
            raise InputError("s0 grid values must lie in (0, s1)")
        if self.n_folds < 2:
            raise InputError("need at least 2 folds")
        if self.metric not in METRICS:
            raise InputError(f"metric must be one of {METRICS}")


@dataclass
class CvResult:
    s0_grid: np.ndarray
    fold_metrics: np.ndarray  # (n_s0, n_folds), NaN where excluded
    mean: np.ndarray
    se: np.ndarray
    best_s0: float
    best_index: int
    metric: str
    refit: object = None
    path_fits: list = None
    folds: np.ndarray = None

    def table(self) -> list:
        """Rows ``(s0, mean, se, n_folds_used)`` in grid order."""
        n_used = np.sum(np.isfinite(self.fold_metrics), axis=1)
        return [(float(s), float(m), float(e), int(k))
                for s, m, e, k in zip(self.s0_grid, self.mean, self.se, n_used)]


def kfold_split(n: int, n_folds: int, seed: int, status) -> np.ndarray:
    """Fold label per subject, with events dealt out as evenly as possible.

    Events are shuffled and assigned round-robin, then censored subjects
    continue the rotation so fold sizes differ by at most one.
    """
    status = np.asarray(status)
    if status.shape[0] != n:
        raise InputError("status length does not match n")
    if n_folds < 2 or n_folds > n:
        raise InputError(f"cannot split {n} subjects into {n_folds} folds")
    n_events = int(status.sum())
    if n_events < n_folds:
        raise InputError(f"{n_events} events cannot populate {n_folds} folds with at least one each")
    rng = np.random.default_rng(seed)
    events = rng.permutation(np.flatnonzero(status == 1))
    censored = rng.permutation(np.flatnonzero(status == 0))
    folds = np.empty(n, dtype=int)
    order = np.concatenate([events, censored])
    folds[order] = np.arange(n) % n_folds
    return folds


def fit_path(data, bases, s0_values, prior: PriorConfig, control: FitControl, design=None):
    """Fits over ``s0_values`` in the order given, each warm-started from the
    previous coefficients.

    ``theta`` restarts at its default every time: with ``beta = 0`` the
    ``theta`` update contracts toward 0, and a near-zero ``theta`` carried
    into the next fit would pin it to the sparse solution of the previous
    spike scale.
    """
    fits, beta = [], None
    for s0 in s0_values:
        res, trace = fit(data, bases, prior.with_s0(s0), control, beta, design=design)
        fits.append((res, trace))
        beta = res.beta
    return fits


def _oof_metric(metric, full, train_idx, test_idx, design, beta):
    eta = design @ beta
    if metric == "deviance":
        # difference form: pl over the union of folds minus pl over the training folds
        full_pl = cox.partial_loglik(full, eta)
        train_pl = cox.partial_loglik(full.subset(train_idx), eta[train_idx])
        return -2.0 * (full_pl - train_pl)
    test = full.subset(test_idx)
    return cox.c_index(test, eta[test_idx])


def cv_path(data, bases, path: PathSpec = None, prior: PriorConfig = None,
            control: FitControl = FitControl(), design=None) -> CvResult:
    """Cross-validate the spike scale.

    Every fold fits the whole path from the strongest penalty (smallest
    ``s0``) to the weakest with warm starts, and scores the held-out fold
    (Verweij-van Houwelingen deviance or held-out C-index). The best ``s0``
    minimizes mean deviance / maximizes mean C-index, ties going to the
    sparser model (smaller ``s0``). The path is then refit on all data.
    """
    path = path or PathSpec()
    prior = (prior or PriorConfig(s0=min(path.s0_grid), s1=path.s1))
    if design is None:
        design = np.column_stack([b.design for b in bases])
    grid = path.s0_grid
    order = np.argsort(grid, kind="stable")  # strongest penalty first
    folds = kfold_split(data.n, path.n_folds, path.seed, data.status)
    scores = np.full((grid.size, path.n_folds), np.nan)
    for k in range(path.n_folds):
        train_idx = np.flatnonzero(folds != k)
        test_idx = np.flatnonzero(folds == k)
        train = data.subset(train_idx)
        fits = fit_path(train, bases, grid[order], prior, control, design=design[train_idx])
        for pos, (res, _) in zip(order, fits):
            if not res.converged:
                logger.warning("fold %d, s0=%g did not converge; scoring achieved fit", k, grid[pos])
            try:
                scores[pos, k] = _oof_metric(path.metric, data, train_idx, test_idx, design, res.beta)
            except UndefinedMetricError:
                pass

    valid = np.any(np.isfinite(scores), axis=1)
    if not valid.any():
        raise TuningError("no s0 value produced a finite cross-validation score")
    for i in np.flatnonzero(~valid):
        warnings.warn(f"s0={grid[i]:g} excluded: no fold could be scored", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(scores, axis=1)
        n_used = np.sum(np.isfinite(scores), axis=1)
        se = np.nanstd(scores, axis=1, ddof=1) / np.sqrt(n_used)
    crit = mean if path.metric == "deviance" else -mean
    crit = np.where(valid, crit, np.inf)
    best_val = crit.min()
    tied = np.flatnonzero(crit == best_val)
    best = int(tied[np.argmin(grid[tied])])

    full_fits = fit_path(data, bases, grid[order], prior, control, design=design)
    path_fits = [None] * grid.size
    for pos, f in zip(order, full_fits):
        path_fits[pos] = f
    return CvResult(grid, scores, mean, se, float(grid[best]), best, path.metric,
                    refit=path_fits[best][0], path_fits=path_fits, folds=folds)


def variance_filter(covariates, k: int) -> np.ndarray:
    """Indices (in original column order) of the ``k`` highest-variance
    columns; equal variances keep the earlier column."""
    X = np.asarray(covariates, dtype=float)
    if k < 1:
        raise InputError("k must be positive")
    p = X.shape[1]
    if k >= p:
        return np.arange(p)
    var = X.var(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(p)
    keep = np.argsort(-var, kind="stable")[:k]
    return np.sort(keep)
