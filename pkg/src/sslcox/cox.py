"""Cox partial-likelihood machinery and survival metrics.

Tied event times use Breslow's convention; censorings at an event time
stay in that event's risk set. All risk-set sums are computed after
subtracting ``max(eta)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, UndefinedMetricError

#: floor on the curvature returned by :func:`score_and_hessdiag`
CURVATURE_FLOOR = 1e-8


class AllCensoredWarning(UserWarning):
    """Raised (as a warning) when a likelihood is an empty sum."""


@dataclass
class SurvivalDataset:
    """Right-censored survival data.

    Parameters
    ----------
    time : array_like, shape (n,)
        Observed times ``min(T, C)``, strictly positive.
    status : array_like, shape (n,)
        1 for an observed event, 0 for censoring.
    covariates : array_like, shape (n, p), optional
    names : list of str, optional
        Covariate names; defaults to ``x1 .. xp``.
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray | None = None
    names: list = field(default=None)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float).ravel()
        status = np.asarray(self.status, dtype=float).ravel()
        n = self.time.shape[0]
        if status.shape[0] != n:
            raise InputError("time and status have different lengths")
        if not np.all(np.isfinite(self.time)) or np.any(self.time <= 0):
            raise InputError("times must be finite and strictly positive")
        if not np.all(np.isin(status, (0.0, 1.0))):
            raise InputError("status must contain only 0 and 1")
        self.status = status.astype(np.int64)
        if self.covariates is None:
            self.covariates = np.empty((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        if self.covariates.shape[0] != n:
            raise InputError("covariate rows do not match the number of times")
        if not np.all(np.isfinite(self.covariates)):
            raise InputError("covariates contain missing or non-finite values")
        if self.names is None:
            self.names = [f"x{j + 1}" for j in range(self.covariates.shape[1])]
        self.names = list(self.names)
        if len(self.names) != self.covariates.shape[1]:
            raise InputError("number of names does not match covariate columns")

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(self.time[idx], self.status[idx], self.covariates[idx], self.names)


@dataclass
class RiskSetIndex:
    """Sorted unique event times and, for each, the members of its risk set."""

    event_times: np.ndarray
    risk_membership: list

    @classmethod
    def build(cls, time, status) -> "RiskSetIndex":
        time = np.asarray(time, dtype=float)
        status = np.asarray(status)
        ev = np.unique(time[status == 1])
        return cls(ev, [np.flatnonzero(time >= t) for t in ev])


@dataclass
class BaselineHazard:
    """Breslow baseline hazard increments at the unique event times."""

    event_times: np.ndarray
    increments: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.increments)

    def cumulative_at(self, t) -> np.ndarray:
        """Right-continuous step interpolation of the cumulative hazard."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.event_times, t, side="right")
        cum = np.concatenate([[0.0], self.cumulative])
        return cum[idx]


def _arrays(data, eta):
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.shape[0] != data.n:
        raise InputError(f"eta has length {eta.shape[0]}, expected {data.n}")
    if not np.all(np.isfinite(eta)):
        raise InputError("eta contains non-finite values")
    return data.time, data.status, eta


def _risk_sums(time, eta):
    """Return ``(order, sorted_time, m, S)`` where ``S[i]`` is
    ``sum_{j: t_j >= t_i} exp(eta_j - m)`` for every subject ``i``."""
    m = eta.max()
    order = np.argsort(time, kind="stable")
    ts = time[order]
    rev = np.cumsum(np.exp(eta[order] - m)[::-1])[::-1]
    first = np.searchsorted(ts, time, side="left")
    return order, ts, m, rev[first]


def partial_loglik(data: SurvivalDataset, eta) -> float:
    """Breslow partial log-likelihood ``sum_i d_i [eta_i - log sum_{R(t_i)} exp(eta)]``."""
    time, status, eta = _arrays(data, eta)
    if status.sum() == 0:
        warnings.warn("no events: partial likelihood is an empty sum", AllCensoredWarning, stacklevel=2)
        return 0.0
    _, _, m, S = _risk_sums(time, eta)
    ev = status == 1
    return float(np.sum(eta[ev] - m - np.log(S[ev])))


def score_and_hessdiag(data: SurvivalDataset, eta):
    """Gradient of the partial log-likelihood in ``eta`` and the diagonal of
    its negative Hessian (floored at ``CURVATURE_FLOOR``)."""
    time, status, eta = _arrays(data, eta)
    n = eta.shape[0]
    if status.sum() == 0:
        return np.zeros(n), np.full(n, CURVATURE_FLOOR)
    order, ts, m, S = _risk_sums(time, eta)
    d_sorted = status[order].astype(float)
    S_sorted = S[order]
    a1 = np.cumsum(d_sorted / S_sorted)
    a2 = np.cumsum(d_sorted / S_sorted**2)
    # sum over events with t_i <= t_k
    last = np.searchsorted(ts, time, side="right") - 1
    r = np.exp(eta - m)
    c1 = r * a1[last]
    u = status - c1
    w = c1 - r**2 * a2[last]
    return u, np.maximum(w, CURVATURE_FLOOR)


def breslow_baseline(data: SurvivalDataset, eta) -> BaselineHazard:
    """Breslow increments ``d(t) / sum_{R(t)} exp(eta)`` at each unique event time."""
    time, status, eta = _arrays(data, eta)
    ev_times, counts = np.unique(time[status == 1], return_counts=True)
    if ev_times.size == 0:
        return BaselineHazard(ev_times, np.zeros(0))
    m = eta.max()
    order = np.argsort(time, kind="stable")
    ts = time[order]
    rev = np.cumsum(np.exp(eta[order] - m)[::-1])[::-1]
    denom = rev[np.searchsorted(ts, ev_times, side="left")]
    return BaselineHazard(ev_times, counts / denom * np.exp(-m))


def deviance(data: SurvivalDataset, eta) -> float:
    """``-2 * partial_loglik``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllCensoredWarning)
        return -2.0 * partial_loglik(data, eta)


def c_index(data: SurvivalDataset, risk) -> float:
    """Harrell's concordance index.

    A pair is comparable when subject ``i`` has an event and
    ``t_i < t_j``. It is concordant when ``risk_i > risk_j``; ties in risk
    count one half.

    Raises
    ------
    UndefinedMetricError
        If there are no comparable pairs.
    """
    time, status, risk = _arrays(data, risk)
    ev = np.flatnonzero(status == 1)
    comparable = time[ev][:, None] < time[None, :]
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pairs for the C-index")
    diff = risk[ev][:, None] - risk[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float((score * comparable).sum() / n_pairs)


def kaplan_meier(times, status):
    """Product-limit survival estimate.

    Returns
    -------
    t : ndarray
        0 followed by the sorted unique observed times.
    surv : ndarray
        Survival just after each time in ``t``; ``surv[0] == 1``.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    ut = np.unique(times)
    at_risk = times.size - np.searchsorted(np.sort(times), ut, side="left")
    deaths = np.array([np.sum((times == t) & (status == 1)) for t in ut], dtype=float)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return np.concatenate([[0.0], ut]), np.concatenate([[1.0], surv])


def median_risk_groups(risk) -> np.ndarray:
    """Label each subject ``"low"`` (risk <= median) or ``"high"``."""
    risk = np.asarray(risk, dtype=float)
    return np.where(risk <= np.median(risk), "low", "high")
