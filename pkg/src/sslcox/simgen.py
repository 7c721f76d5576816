"""Simulated survival data: AR-correlated normal covariates, four active
additive signals, Weibull proportional-hazards event times and Weibull
censoring calibrated to a target censoring rate.

Weibull event times use the proportional-hazards parameterization
``h(t | eta) = lam * k * t**(k - 1) * exp(eta)`` (``lam`` multiplies the
hazard). Censoring times use the usual time-scale parameterization
``C = b * E**(1/k_c)`` with ``E ~ Exp(1)``, so a larger ``b`` means less
censoring.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.linalg import toeplitz

from .cox import SurvivalDataset
from .exceptions import CalibrationError, InputError

logger = logging.getLogger(__name__)

CALIBRATION_DRAWS = 100_000
CALIBRATION_TOL = 0.002


@dataclass(frozen=True)
class SimConfig:
    p: int = 10
    ar_rho: float = 0.0
    censor_target: float = 0.30
    n_train: int = 200
    n_test: int = 1000
    event_scale: float = 1.0
    event_shape: float = 1.2
    censor_shape: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.p < 4:
            raise InputError("p must be at least 4 (four active signals)")
        if not 0 < self.censor_target < 1:
            raise InputError("censor_target must lie in (0, 1)")
        if min(self.event_scale, self.event_shape, self.censor_shape) <= 0:
            raise InputError("Weibull parameters must be positive")
        if not -1 < self.ar_rho < 1:
            raise InputError("ar_rho must lie in (-1, 1)")
        if self.n_train < 1 or self.n_test < 0:
            raise InputError("invalid sample sizes")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"config line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise InputError(f"config line {lineno}: unknown key {key!r}")
            try:
                kw[key] = int(value) if types[key] in (int, "int") else float(value)
            except ValueError:
                raise InputError(f"config line {lineno}: bad value {value!r} for {key}") from None
        return cls(**kw)


def _b1(x):
    return (x + 1.0) ** 2 / 5.0


def _b2(x):
    return np.exp(x + 1.0) / 25.0


def _b3(x):
    return 3.0 * np.sin(x) / 2.0


def _b4(x):
    return (1.4 * x + 0.5) / 2.0


@dataclass(frozen=True)
class Scenario:
    """The four active functions on the first four covariates."""

    functions: tuple = (_b1, _b2, _b3, _b4)
    kinds: tuple = ("nonlinear", "nonlinear", "nonlinear", "linear")

    @property
    def n_active(self) -> int:
        return len(self.functions)


DEFAULT_SCENARIO = Scenario()


def ar_covariance(p: int, rho: float) -> np.ndarray:
    return toeplitz(rho ** np.arange(p))


def draw_covariates(config: SimConfig, n: int, rng) -> np.ndarray:
    """``n`` rows of ``MVN(0, Sigma)`` with ``Sigma_ij = rho^|i-j|`` via Cholesky."""
    L = np.linalg.cholesky(ar_covariance(config.p, config.ar_rho))
    return rng.standard_normal((n, config.p)) @ L.T


def linear_predictor(X, scenario: Scenario = DEFAULT_SCENARIO) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return sum(f(X[:, j]) for j, f in enumerate(scenario.functions))


def weibull_ph_times(eta, u, scale, shape):
    """Inverse transform ``T = (-log U / (scale * exp(eta)))^(1/shape)``."""
    return (-np.log(u) / (scale * np.exp(eta))) ** (1.0 / shape)


def draw_event_times(eta, config: SimConfig, rng) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    u = rng.uniform(size=eta.shape)
    return weibull_ph_times(eta, u, config.event_scale, config.event_shape)


def draw_censor_times(n, scale, config: SimConfig, rng) -> np.ndarray:
    return scale * rng.standard_exponential(n) ** (1.0 / config.censor_shape)


def _censor_rate(scale, T, E, shape):
    return float(np.mean(scale * E ** (1.0 / shape) < T))


def calibrate_censor_scale(config: SimConfig, scenario: Scenario = DEFAULT_SCENARIO,
                           n_draws: int = CALIBRATION_DRAWS, rng=None) -> float:
    """Censoring scale ``b`` with ``P(C < T) ~= censor_target``.

    Bisection on ``log b`` against a Monte Carlo estimate that reuses the
    same event times and exponential draws for every candidate (common
    random numbers), so the estimated rate is monotone decreasing in ``b``.
    Stops once the rate is within ``CALIBRATION_TOL`` of the target.

    Raises
    ------
    CalibrationError
        If no bracket is found, or the rate fails to be monotone.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xCA1]))
    target = config.censor_target
    # the signal only involves the first scenario.n_active columns
    sub = SimConfig(**{**asdict(config), "p": max(scenario.n_active, 4)})
    X = draw_covariates(sub, n_draws, rng)
    T = draw_event_times(linear_predictor(X, scenario), config, rng)
    E = rng.standard_exponential(n_draws)
    shape = config.censor_shape
    trace = []

    def rate(log_b):
        r = _censor_rate(np.exp(log_b), T, E, shape)
        trace.append((float(np.exp(log_b)), r))
        return r

    lo, hi = -1.0, 1.0
    r_lo, r_hi = rate(lo), rate(hi)
    for _ in range(60):
        if r_lo >= target:
            break
        hi, r_hi = lo, r_lo
        lo -= 2.0
        r_lo = rate(lo)
    for _ in range(60):
        if r_hi <= target:
            break
        lo, r_lo = hi, r_hi
        hi += 2.0
        r_hi = rate(hi)
    if not (r_lo >= target >= r_hi):
        raise CalibrationError(f"could not bracket censoring target {target}", trace)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r_mid = rate(mid)
        if not (r_lo >= r_mid >= r_hi):
            raise CalibrationError("censoring rate is not monotone in the scale", trace)
        if abs(r_mid - target) <= CALIBRATION_TOL:
            return float(np.exp(mid))
        if r_mid > target:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
        if hi - lo < 1e-12:
            break
    return float(np.exp(0.5 * (lo + hi)))


@dataclass
class Replicate:
    train: SurvivalDataset
    test: SurvivalDataset
    truth: list
    censor_scale: float


def truth_table(config: SimConfig, scenario: Scenario = DEFAULT_SCENARIO) -> list:
    """Per-column ``(name, active, kind)`` rows."""
    rows = []
    for j in range(config.p):
        active = j < scenario.n_active
        rows.append((f"x{j + 1}", active, scenario.kinds[j] if active else "none"))
    return rows


def _draw_dataset(config, scenario, n, censor_scale, rng):
    X = draw_covariates(config, n, rng)
    T = draw_event_times(linear_predictor(X, scenario), config, rng)
    C = draw_censor_times(n, censor_scale, config, rng)
    status = (T <= C).astype(int)
    return SurvivalDataset(np.minimum(T, C), status, X), T, C


def generate_replicate(config: SimConfig, scenario: Scenario = DEFAULT_SCENARIO,
                       censor_scale: float | None = None) -> Replicate:
    """Independent training and test sets from the configured process.

    Calibration, training and test draws use separate child streams of
    ``config.seed``. ``censor_scale`` skips calibration when supplied.
    """
    calib_ss, train_ss, test_ss = np.random.SeedSequence(config.seed).spawn(3)
    if censor_scale is None:
        censor_scale = calibrate_censor_scale(config, scenario, rng=np.random.default_rng(calib_ss))
    train, _, _ = _draw_dataset(config, scenario, config.n_train, censor_scale, np.random.default_rng(train_ss))
    test, _, _ = _draw_dataset(config, scenario, config.n_test, censor_scale, np.random.default_rng(test_ss))
    return Replicate(train, test, truth_table(config, scenario), censor_scale)


def replicate_config(config: SimConfig, r: int) -> SimConfig:
    """Config of replicate ``r`` under master seed ``config.seed``."""
    return SimConfig(**{**asdict(config), "seed": config.seed + r})


def generate_batch(config: SimConfig, n_reps: int, scenario: Scenario = DEFAULT_SCENARIO) -> list:
    """``n_reps`` replicates of one setting.

    A replicate whose calibration fails reuses the median of the scales
    calibrated successfully for the other replicates of the setting.
    """
    configs = [replicate_config(config, r) for r in range(n_reps)]
    scales = []
    for c in configs:
        try:
            scales.append(calibrate_censor_scale(
                c, scenario, rng=np.random.default_rng(np.random.SeedSequence(c.seed).spawn(3)[0])))
        except CalibrationError as exc:
            logger.warning("calibration failed for seed %d: %s", c.seed, exc)
            scales.append(None)
    ok = [s for s in scales if s is not None]
    if not ok:
        raise CalibrationError("censoring calibration failed for every replicate")
    fallback = float(np.median(ok))
    return [generate_replicate(c, scenario, s if s is not None else fallback)
            for c, s in zip(configs, scales)]
