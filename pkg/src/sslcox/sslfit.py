"""EM-coordinate-descent fitting of the additive Cox model under the
two-part spike-and-slab LASSO prior.

Every predictor ``j`` contributes a linear coefficient ``beta_j`` and a
block of ``K_j`` nonlinear coefficients. The E-step turns the current
coefficients and inclusion probabilities into per-coefficient ``l1``
penalties; the M-step solves the weighted-lasso Cox problem by cyclic
coordinate descent on a quadratic approximation of the partial
likelihood; ``theta`` then has a closed-form update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.special import betaln, expit, xlogy

from . import cox
from .exceptions import InputError, NumericalError
from .spline import ReparamBasis, transform

logger = logging.getLogger(__name__)

HIERARCHIES = ("dependent", "independent")


@dataclass(frozen=True)
class PriorConfig:
    """Spike/slab scales, Beta hyperparameters and indicator structure."""

    s0: float = 0.05
    s1: float = 0.5
    a: float = 1.0
    b: float = 1.0
    hierarchy: str = "dependent"

    def __post_init__(self):
        if not 0 < self.s0 < self.s1:
            raise InputError(f"need 0 < s0 < s1, got s0={self.s0}, s1={self.s1}")
        if self.a < 1 or self.b < 1:
            raise InputError("Beta hyperparameters must satisfy a >= 1 and b >= 1")
        if self.hierarchy not in HIERARCHIES:
            raise InputError(f"hierarchy must be one of {HIERARCHIES}")

    def with_s0(self, s0: float) -> "PriorConfig":
        return replace(self, s0=float(s0))


@dataclass(frozen=True)
class FitControl:
    epsilon: float = 1e-5
    max_em_iter: int = 200
    max_cd_iter: int = 50
    cd_tol: float = 1e-10
    max_sweeps: int = 1000

    def __post_init__(self):
        if min(self.epsilon, self.max_em_iter, self.max_cd_iter, self.cd_tol, self.max_sweeps) <= 0:
            raise InputError("all fit-control values must be positive")


@dataclass
class ModelState:
    """Coefficients and E-step quantities.

    ``beta`` is the flat coefficient vector aligned with the design; each
    entry of ``groups`` is the column slice of one predictor, linear column
    first.
    """

    beta: np.ndarray
    groups: list
    theta: np.ndarray
    p_linear: np.ndarray = None
    p_nonlinear: np.ndarray = None
    lambda_linear: np.ndarray = None
    lambda_nonlinear: np.ndarray = None

    @property
    def beta_linear(self) -> np.ndarray:
        return np.array([self.beta[g.start] for g in self.groups])

    @property
    def beta_nonlinear(self) -> list:
        return [self.beta[g.start + 1 : g.stop] for g in self.groups]

    def penalty_vector(self) -> np.ndarray:
        """Per-column penalties: ``lambda_j`` on the linear column of each
        predictor and the shared ``lambda*_j`` on its nonlinear block."""
        lam = np.empty_like(self.beta)
        for j, g in enumerate(self.groups):
            lam[g.start] = self.lambda_linear[j]
            lam[g.start + 1 : g.stop] = self.lambda_nonlinear[j]
        return lam


@dataclass
class FitTrace:
    deviances: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


@dataclass
class FitResult:
    """Converged model together with what is needed to predict."""

    beta: np.ndarray
    groups: list
    theta: np.ndarray
    p_linear: np.ndarray
    p_nonlinear: np.ndarray
    lambda_linear: np.ndarray
    lambda_nonlinear: np.ndarray
    prior: PriorConfig
    converged: bool
    n_iter: int
    deviance: float
    bases: list = None
    names: list = None
    baseline: cox.BaselineHazard = None

    @property
    def beta_linear(self) -> np.ndarray:
        return np.array([self.beta[g.start] for g in self.groups])

    @property
    def beta_nonlinear(self) -> list:
        return [self.beta[g.start + 1 : g.stop] for g in self.groups]

    @property
    def penalties(self) -> np.ndarray:
        state = ModelState(self.beta, self.groups, self.theta, self.p_linear, self.p_nonlinear,
                           self.lambda_linear, self.lambda_nonlinear)
        return state.penalty_vector()

    def selection(self) -> list:
        return classify_selection(self)

    def linear_predictor(self, X) -> np.ndarray:
        """``eta`` for raw covariate rows, using the stored spline transforms."""
        if self.bases is None:
            raise InputError("model has no stored spline transforms")
        return transform(self.bases, X) @ self.beta


# ---------------------------------------------------------------- E-step


def _log_de(beta, s):
    return -np.abs(beta) / s - np.log(2.0 * s)


def _posterior_prob(log_prior_odds_num, log_prior_odds_den, loglik_ratio):
    """``P(slab)`` from log prior masses and the slab-vs-spike log likelihood ratio."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logit = log_prior_odds_num - log_prior_odds_den + loglik_ratio
    logit = np.where(np.isnan(logit), -np.inf, logit)
    return expit(logit)


def penalty_from_prob(p, prior: PriorConfig):
    """Equivalent ``l1`` penalty ``(1-p)/s0 + p/s1``."""
    return (1.0 - p) / prior.s0 + p / prior.s1


def nonlinear_prior_mass(theta, prior: PriorConfig):
    """``Pr(gamma*_j = 1 | theta_j)``: ``theta**2`` once the linear indicator
    is integrated out under the dependent hierarchy, else ``theta``."""
    theta = np.asarray(theta, dtype=float)
    return theta**2 if prior.hierarchy == "dependent" else theta


def e_step(state: ModelState, prior: PriorConfig):
    """Posterior inclusion probabilities and equivalent penalties.

    Returns
    -------
    p_linear, p_nonlinear, lambda_linear, lambda_nonlinear : ndarray, shape (p,)
    """
    theta = np.clip(np.asarray(state.theta, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        bl = state.beta_linear
        llr = _log_de(bl, prior.s1) - _log_de(bl, prior.s0)
        p_lin = _posterior_prob(np.log(theta), np.log1p(-theta), llr)

        pi = nonlinear_prior_mass(theta, prior)
        llr_nl = np.array(
            [np.sum(_log_de(bn, prior.s1) - _log_de(bn, prior.s0)) for bn in state.beta_nonlinear]
        )
        p_nl = _posterior_prob(np.log(pi), np.log1p(-pi), llr_nl)
    return p_lin, p_nl, penalty_from_prob(p_lin, prior), penalty_from_prob(p_nl, prior)


def update_theta(p_linear, p_nonlinear, prior: PriorConfig) -> np.ndarray:
    """Closed-form ``theta_j = (p_j + p*_j + a - 1) / (a + b)``, clamped to [0, 1]."""
    theta = (np.asarray(p_linear) + np.asarray(p_nonlinear) + prior.a - 1.0) / (prior.a + prior.b)
    if np.any((theta < 0) | (theta > 1)):
        logger.warning("theta update left [0, 1]; clamping")
    return np.clip(theta, 0.0, 1.0)


# ---------------------------------------------------------------- M-step


def soft_threshold(v, gamma):
    return np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)


@numba.njit(cache=True)
def _cd_weighted_lasso(X, w, res, beta, lam, xwx, tol, max_sweeps):
    """Cyclic coordinate descent for
    ``0.5 * sum_i w_i (res_i)^2 + sum_c lam_c |beta_c|`` where ``res`` is
    the working residual ``z - X beta`` (updated in place).

    Alternates full sweeps with sweeps over the current nonzero set until a
    full sweep moves no coefficient by more than ``tol``.
    """
    n, m = X.shape
    active = np.zeros(m, dtype=np.bool_)
    sweeps = 0
    while sweeps < max_sweeps:
        # full sweep
        max_delta = 0.0
        for c in range(m):
            if xwx[c] <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, c] * res[i]
            v = g + xwx[c] * beta[c]
            mag = abs(v) - lam[c]
            new = 0.0
            if mag > 0.0:
                new = mag / xwx[c] if v > 0 else -mag / xwx[c]
            d = new - beta[c]
            if d != 0.0:
                for i in range(n):
                    res[i] -= d * X[i, c]
                beta[c] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
            active[c] = new != 0.0
        sweeps += 1
        if max_delta < tol:
            break
        # active-set sweeps
        while sweeps < max_sweeps:
            max_delta = 0.0
            for c in range(m):
                if not active[c]:
                    continue
                g = 0.0
                for i in range(n):
                    g += w[i] * X[i, c] * res[i]
                v = g + xwx[c] * beta[c]
                mag = abs(v) - lam[c]
                new = 0.0
                if mag > 0.0:
                    new = mag / xwx[c] if v > 0 else -mag / xwx[c]
                d = new - beta[c]
                if d != 0.0:
                    for i in range(n):
                        res[i] -= d * X[i, c]
                    beta[c] = new
                    if abs(d) > max_delta:
                        max_delta = abs(d)
            sweeps += 1
            if max_delta < tol:
                break
    return sweeps


def penalized_loglik(data, design, beta, lam) -> float:
    """``pl(beta) - sum_c lam_c |beta_c|``."""
    return cox.partial_loglik(data, design @ beta) - float(np.sum(lam * np.abs(beta)))


def m_step_cd(data, design, beta, lam, control: FitControl = FitControl()):
    """Maximize ``pl(beta) - sum_c lam_c |beta_c|``.

    Each outer iteration forms the working response
    ``z = eta + u / w`` from the score ``u`` and curvature ``w`` and runs
    coordinate descent on the weighted lasso
    ``beta_c <- S(sum_i w_i x_ic (z_i - eta_{-c,i}), lam_c) / sum_i w_i x_ic^2``.
    A step that lowers the penalized likelihood is halved toward the
    previous iterate.

    Returns
    -------
    beta : ndarray
    n_outer : int
    converged : bool
        Whether the outer loop met its tolerance within ``max_cd_iter``.
    """
    X = np.ascontiguousarray(design, dtype=float)
    beta = np.array(beta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    eta = X @ beta
    obj = cox.partial_loglik(data, eta) - float(np.sum(lam * np.abs(beta)))
    it, converged = 0, False
    for it in range(1, control.max_cd_iter + 1):
        u, w = cox.score_and_hessdiag(data, eta)
        res = u / w
        if not np.all(np.isfinite(res)):
            raise NumericalError(
                "non-finite working response", {"outer_iter": it, "eta_max": float(np.max(np.abs(eta)))}
            )
        xwx = (w[:, None] * X * X).sum(axis=0)
        new = beta.copy()
        _cd_weighted_lasso(X, w, res, new, lam, xwx, control.cd_tol, control.max_sweeps)
        new_eta = X @ new
        new_obj = cox.partial_loglik(data, new_eta) - float(np.sum(lam * np.abs(new)))
        step = 1.0
        while new_obj < obj - 1e-12 * (1.0 + abs(obj)) and step > 1e-6:
            step *= 0.5
            new = beta + step * (new - beta)
            new_eta = X @ new
            new_obj = cox.partial_loglik(data, new_eta) - float(np.sum(lam * np.abs(new)))
        if not np.isfinite(new_obj):
            raise NumericalError("penalized likelihood became non-finite", {"outer_iter": it})
        change = np.max(np.abs(new_eta - eta)) if eta.size else 0.0
        beta, eta, obj = new, new_eta, new_obj
        if change < control.cd_tol * (1.0 + np.max(np.abs(eta))):
            converged = True
            break
    return beta, it, converged


# ---------------------------------------------------------------- objective


def _safe_log(x):
    return np.log(np.maximum(x, np.finfo(float).tiny))


def expected_log_posterior(data, design, state: ModelState, prior: PriorConfig) -> float:
    """Log joint posterior with each indicator replaced by its conditional
    expectation (``p_linear``, ``p_nonlinear`` in ``state``).

    ``0 log 0`` is taken as 0; a ``theta`` that underflowed to 0 only meets
    indicator weights that underflowed with it.
    """
    p, ps = state.p_linear, state.p_nonlinear
    theta = np.asarray(state.theta, dtype=float)
    value = cox.partial_loglik(data, design @ state.beta) if data.n_events else 0.0
    for j, g in enumerate(state.groups):
        bl = state.beta[g.start]
        bn = state.beta[g.start + 1 : g.stop]
        value += (1 - p[j]) * _log_de(bl, prior.s0) + p[j] * _log_de(bl, prior.s1)
        value += np.sum((1 - ps[j]) * _log_de(bn, prior.s0) + ps[j] * _log_de(bn, prior.s1))
    w_in, w_out = p + ps, 2.0 - p - ps
    value += np.sum(np.where(w_in > 0, w_in * _safe_log(theta), 0.0))
    value += np.sum(np.where(w_out > 0, w_out * _safe_log(1.0 - theta), 0.0))
    value += np.sum(xlogy(prior.a - 1.0, theta) + xlogy(prior.b - 1.0, 1.0 - theta) - betaln(prior.a, prior.b))
    return float(value)


def _bernoulli_entropy(p):
    p = np.asarray(p, dtype=float)
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))


def objective(data, design, state: ModelState, prior: PriorConfig) -> float:
    """EM lower bound on the log posterior: :func:`expected_log_posterior`
    plus the entropy of the indicator posteriors.

    This is the quantity EM cannot decrease; the expectation alone can,
    because it is linear in the inclusion probabilities.
    """
    entropy = np.sum(_bernoulli_entropy(state.p_linear)) + np.sum(_bernoulli_entropy(state.p_nonlinear))
    return expected_log_posterior(data, design, state, prior) + float(entropy)


# ---------------------------------------------------------------- driver


def groups_from_bases(bases) -> list:
    groups, start = [], 0
    for b in bases:
        size = 1 + (b.K if isinstance(b, ReparamBasis) else int(b))
        groups.append(slice(start, start + size))
        start += size
    return groups


def em_converged(d_new, d_old, epsilon) -> bool:
    return abs(d_new - d_old) / (0.1 + abs(d_new)) < epsilon


def fit(
    data,
    bases,
    prior: PriorConfig = PriorConfig(),
    control: FitControl = FitControl(),
    beta_init=None,
    theta_init=None,
    design=None,
):
    """Fit the additive Cox model by EM-coordinate descent.

    Iterates E-step, M-step and ``theta`` update until the relative deviance
    change drops below ``control.epsilon`` and the last M-step reached its
    own tolerance; otherwise stops after ``control.max_em_iter`` iterations
    and reports ``converged=False``.

    Parameters
    ----------
    data : SurvivalDataset
    bases : list of ReparamBasis
        One per predictor. Alternatively a list of nonlinear dimensions
        ``K_j`` when ``design`` is given explicitly.
    prior, control : PriorConfig, FitControl
    beta_init, theta_init : ndarray, optional
        Starting values; default ``beta = 0`` and ``theta = 0.5``.
    design : ndarray, optional
        Precomputed design (rows of ``data``); built from ``bases`` and
        ``data.covariates`` otherwise.

    Returns
    -------
    FitResult, FitTrace
    """
    if data.n_events == 0:
        raise InputError("cannot fit a Cox model without events")
    groups = groups_from_bases(bases)
    if design is None:
        design = np.column_stack([b.design for b in bases])
    design = np.ascontiguousarray(design, dtype=float)
    m = design.shape[1]
    if groups and groups[-1].stop != m:
        raise InputError("design width does not match the bases")
    beta = np.zeros(m) if beta_init is None else np.array(beta_init, dtype=float)
    theta = np.full(len(groups), 0.5) if theta_init is None else np.array(theta_init, dtype=float)
    state = ModelState(beta, groups, theta)

    trace = FitTrace()
    d_old = cox.deviance(data, design @ beta)
    for t in range(1, control.max_em_iter + 1):
        (state.p_linear, state.p_nonlinear,
         state.lambda_linear, state.lambda_nonlinear) = e_step(state, prior)
        state.beta, _, m_ok = m_step_cd(data, design, state.beta, state.penalty_vector(), control)
        state.theta = update_theta(state.p_linear, state.p_nonlinear, prior)
        d_new = cox.deviance(data, design @ state.beta)
        trace.deviances.append(d_new)
        trace.objective.append(objective(data, design, state, prior))
        trace.n_iter = t
        # an M-step cut off by max_cd_iter is not a stationary point yet
        if m_ok and em_converged(d_new, d_old, control.epsilon):
            trace.converged = True
            break
        d_old = d_new
    if not trace.converged:
        logger.info("EM did not converge in %d iterations (s0=%g)", control.max_em_iter, prior.s0)

    eta = design @ state.beta
    result = FitResult(
        beta=state.beta,
        groups=groups,
        theta=state.theta,
        p_linear=state.p_linear,
        p_nonlinear=state.p_nonlinear,
        lambda_linear=state.lambda_linear,
        lambda_nonlinear=state.lambda_nonlinear,
        prior=prior,
        converged=trace.converged,
        n_iter=trace.n_iter,
        deviance=trace.deviances[-1],
        bases=[b for b in bases if isinstance(b, ReparamBasis)] or None,
        names=list(data.names) if len(data.names) == len(groups) else None,
        baseline=cox.breslow_baseline(data, eta),
    )
    return result, trace


def classify_selection(result) -> list:
    """``"null"``, ``"linear"`` or ``"nonlinear"`` per predictor, read from
    the exact zero pattern of the coefficients."""
    labels = []
    for g in result.groups:
        lin = result.beta[g.start]
        nl = result.beta[g.start + 1 : g.stop]
        if np.any(nl != 0):
            labels.append("nonlinear")
        elif lin != 0:
            labels.append("linear")
        else:
            labels.append("null")
    return labels


def kkt_violation(data, design, beta, lam) -> float:
    """Largest violation of the lasso optimality conditions at ``beta``.

    With ``g = X^T u`` the partial-likelihood gradient, zero coefficients
    need ``|g_c| <= lam_c`` and nonzero ones ``g_c = lam_c sign(beta_c)``.
    """
    u, _ = cox.score_and_hessdiag(data, design @ beta)
    g = design.T @ u
    zero = beta == 0
    v_zero = np.maximum(np.abs(g[zero]) - lam[zero], 0.0)
    v_nz = np.abs(g[~zero] - lam[~zero] * np.sign(beta[~zero]))
    return float(max(v_zero.max(initial=0.0), v_nz.max(initial=0.0)))
