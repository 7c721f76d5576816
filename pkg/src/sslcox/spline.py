"""Cubic B-spline bases with second-derivative penalties and the
linear / nonlinear eigen-reparameterization.

Each predictor is expanded into a centered cubic B-spline basis. The
penalty matrix is eigendecomposed so that the smooth splits into one
unpenalized linear column and a block of nonlinear columns whose implied
penalty is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import BasisConstructionError, DegeneratePredictorError, InputError

#: relative eigenvalue threshold separating the penalty null space
ZERO_EIG_TOL = 1e-10
#: relative singular value below which a centered null direction is dropped
CENTERED_RANK_TOL = 1e-8


@dataclass(frozen=True)
class SplineSpec:
    """Construction rule for a per-predictor cubic spline basis."""

    n_bases: int = 10
    knot_placement: str = "quantile"
    degree: int = 3

    def __post_init__(self):
        if self.n_bases < 4:
            raise InputError(f"n_bases must be >= 4, got {self.n_bases}")
        if self.degree != 3:
            raise InputError("only cubic splines (degree 3) are supported")
        if self.knot_placement != "quantile":
            raise InputError(f"unknown knot placement {self.knot_placement!r}")


@dataclass
class RawBasis:
    """Centered B-spline basis evaluated at the training values.

    Attributes
    ----------
    basis_matrix : ndarray, shape (n, K)
        Column-centered basis.
    penalty : ndarray, shape (K, K)
        Gram matrix of second derivatives of the B-splines.
    knots : ndarray
        Full knot vector including the repeated boundary knots.
    column_means : ndarray, shape (K,)
        Training column means subtracted from the basis.
    """

    basis_matrix: np.ndarray
    penalty: np.ndarray
    knots: np.ndarray
    column_means: np.ndarray
    degree: int = 3

    @property
    def n_raw(self) -> int:
        return self.penalty.shape[0]


@dataclass
class ReparamBasis:
    """Linear and scaled nonlinear columns for one predictor, plus the
    metadata needed to rebuild them at new predictor values."""

    linear_col: np.ndarray
    nonlinear_cols: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    scale_factors: np.ndarray
    linear_sd: float
    null_weights: np.ndarray
    knots: np.ndarray
    column_means: np.ndarray
    degree: int = 3
    x_center: float = 0.0
    x_scale: float = 1.0

    def __post_init__(self):
        # one memory layout regardless of origin (eigh output vs. JSON), so
        # products round identically and reloaded models predict bit-for-bit
        for name in ("eigenvectors", "eigenvalues", "scale_factors", "null_weights", "knots", "column_means"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def K(self) -> int:
        return self.nonlinear_cols.shape[1]

    @property
    def design(self) -> np.ndarray:
        """Training design block ``[linear | nonlinear]``."""
        return np.column_stack([self.linear_col, self.nonlinear_cols])

    @property
    def linear_direction(self) -> np.ndarray:
        """Raw B-spline coefficients producing the (standardized) linear column."""
        n_null = self.null_weights.shape[0]
        return self.eigenvectors[:, -n_null:] @ self.null_weights / self.linear_sd

    @property
    def nonlinear_directions(self) -> np.ndarray:
        """Raw B-spline coefficients producing each nonlinear column."""
        return self.eigenvectors[:, : self.K] * self.scale_factors

    @property
    def coef_map(self) -> np.ndarray:
        """Matrix mapping ``[beta_linear, beta_nonlinear]`` to raw coefficients."""
        return np.column_stack([self.linear_direction, self.nonlinear_directions])

    def to_dict(self) -> dict:
        return {
            "knots": self.knots.tolist(),
            "column_means": self.column_means.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "scale_factors": self.scale_factors.tolist(),
            "linear_sd": float(self.linear_sd),
            "null_weights": self.null_weights.tolist(),
            "degree": int(self.degree),
            "x_center": float(self.x_center),
            "x_scale": float(self.x_scale),
        }

    @classmethod
    def from_dict(cls, d: dict, x_train: np.ndarray | None = None) -> "ReparamBasis":
        """Rebuild from serialized metadata. Training columns are only
        recomputed when ``x_train`` is given."""
        basis = cls(
            linear_col=np.empty(0),
            nonlinear_cols=np.empty((0, len(d["scale_factors"]))),
            eigenvectors=np.asarray(d["eigenvectors"], dtype=float),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            scale_factors=np.asarray(d["scale_factors"], dtype=float),
            linear_sd=float(d["linear_sd"]),
            null_weights=np.asarray(d["null_weights"], dtype=float),
            knots=np.asarray(d["knots"], dtype=float),
            column_means=np.asarray(d["column_means"], dtype=float),
            degree=int(d["degree"]),
            x_center=float(d.get("x_center", 0.0)),
            x_scale=float(d.get("x_scale", 1.0)),
        )
        if x_train is not None:
            block = evaluate_basis(basis, x_train)
            basis.linear_col = block[:, 0]
            basis.nonlinear_cols = block[:, 1:]
        return basis


def _check_finite(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite values")
    return x


def quantile_knots(x: np.ndarray, n_bases: int, degree: int = 3) -> np.ndarray:
    """Full knot vector with interior knots at evenly spaced quantiles."""
    n_interior = n_bases - degree - 1
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    interior = np.quantile(x, probs)
    lo, hi = x.min(), x.max()
    return np.concatenate([np.repeat(lo, degree + 1), interior, np.repeat(hi, degree + 1)])


def _bspline_values(knots, degree, x, nu=0):
    """Evaluate every basis function (or its ``nu``-th derivative) at ``x``."""
    n_basis = len(knots) - degree - 1
    spl = BSpline(knots, np.eye(n_basis), degree, extrapolate=True)
    if nu:
        spl = spl.derivative(nu)
    return np.atleast_2d(spl(x))


def second_derivative_penalty(knots: np.ndarray, degree: int = 3) -> np.ndarray:
    """Exact Gram matrix ``int B_a''(x) B_b''(x) dx`` over the knot range.

    Second derivatives of cubic B-splines are linear on each knot span, so
    each span's contribution is integrated in closed form from its endpoint
    values.
    """
    if degree != 3:
        raise InputError("closed-form penalty is implemented for cubic splines only")
    breaks = np.unique(knots)
    h = np.diff(breaks)
    # evaluate from inside each span so endpoint values belong to that span
    left = _bspline_values(knots, degree, breaks[:-1], nu=2)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    slope = (_bspline_values(knots, degree, mid, nu=2) - left) / (0.5 * h)[:, None]
    right = left + slope * h[:, None]
    # int_0^h f g = h/6 (2 fa ga + fa gb + fb ga + 2 fb gb) for linear f, g
    S = (
        2.0 * (left * h[:, None]).T @ left
        + (left * h[:, None]).T @ right
        + (right * h[:, None]).T @ left
        + 2.0 * (right * h[:, None]).T @ right
    ) / 6.0
    return 0.5 * (S + S.T)


def build_raw_basis(x, spec: SplineSpec | None = None) -> RawBasis:
    """Centered cubic B-spline basis and its second-derivative penalty.

    Parameters
    ----------
    x : array_like, shape (n,)
        Training values of one predictor.
    spec : SplineSpec, optional
        Basis dimension and knot rule; defaults to 10 bases.

    Raises
    ------
    InputError
        If ``x`` contains non-finite values.
    DegeneratePredictorError
        If ``x`` has too few observations or distinct values, or the quantile
        knots collapse.
    """
    spec = spec or SplineSpec()
    x = _check_finite(x)
    n = x.shape[0]
    if n < spec.n_bases + 2:
        raise DegeneratePredictorError(f"need at least {spec.n_bases + 2} observations, got {n}")
    n_distinct = np.unique(x).size
    if n_distinct < spec.n_bases:
        raise DegeneratePredictorError(
            f"predictor has {n_distinct} distinct values; at least {spec.n_bases} required"
        )
    knots = quantile_knots(x, spec.n_bases, spec.degree)
    inner = knots[spec.degree : -spec.degree]
    if np.any(np.diff(inner) <= 0):
        raise DegeneratePredictorError("quantile knots are not strictly increasing (heavy ties)")
    B = _bspline_values(knots, spec.degree, x)
    means = B.mean(axis=0)
    return RawBasis(
        basis_matrix=B - means,
        penalty=second_derivative_penalty(knots, spec.degree),
        knots=knots,
        column_means=means,
        degree=spec.degree,
    )


def _sorted_eigh(S):
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def reparameterize(raw: RawBasis, x=None) -> ReparamBasis:
    """Split a centered basis into one linear and ``K`` identity-penalized
    nonlinear columns.

    The penalty null space is rotated out with the eigenvectors of the
    penalty. Centering removes the constant from that null space; what is
    left must be exactly one direction, which becomes the linear column
    after scaling to unit sample SD. Penalized directions are scaled by
    ``1/sqrt(eigenvalue)``.

    ``x`` (the training values) is only used to orient the linear column so
    that a positive coefficient means an increasing effect.
    """
    S = raw.penalty
    if not np.allclose(S, S.T, atol=1e-10):
        raise BasisConstructionError("penalty matrix is not symmetric")
    vals, U = _sorted_eigh(S)
    vmax = max(vals[0], 0.0)
    if np.any(vals < -ZERO_EIG_TOL * max(vmax, 1.0)):
        raise BasisConstructionError("penalty matrix is not positive semi-definite")
    null = vals <= ZERO_EIG_TOL * vmax
    n_null = int(null.sum())
    n_pen = vals.size - n_null
    vals = np.where(null, 0.0, vals)

    M = raw.basis_matrix @ U[:, n_pen:]
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    scale = max(np.linalg.norm(raw.basis_matrix, 2), 1.0)
    keep = sv > CENTERED_RANK_TOL * scale
    if keep.sum() != 1:
        raise BasisConstructionError(
            f"penalty null space has dimension {int(keep.sum())} after centering; expected 1"
        )
    w = Vt[np.argmax(keep)]
    lin = M @ w
    if x is not None:
        if np.dot(lin, np.asarray(x, dtype=float) - np.mean(x)) < 0:
            w = -w
            lin = -lin
    elif lin[np.argmax(np.abs(lin))] < 0:
        w = -w
        lin = -lin
    sd = float(np.std(lin, ddof=1))
    scale_factors = 1.0 / np.sqrt(vals[:n_pen])
    return ReparamBasis(
        linear_col=lin / sd,
        nonlinear_cols=raw.basis_matrix @ U[:, :n_pen] * scale_factors,
        eigenvectors=U,
        eigenvalues=vals,
        scale_factors=scale_factors,
        linear_sd=sd,
        null_weights=w,
        knots=raw.knots,
        column_means=raw.column_means,
        degree=raw.degree,
    )


def _raw_values_extrapolated(knots, degree, x):
    """Basis values, continued linearly outside the boundary knots."""
    lo, hi = knots[degree], knots[-degree - 1]
    inside = np.clip(x, lo, hi)
    B = _bspline_values(knots, degree, inside)
    below, above = x < lo, x > hi
    if below.any():
        d = _bspline_values(knots, degree, np.array([lo]), nu=1)
        B[below] += (x[below] - lo)[:, None] * d
    if above.any():
        d = _bspline_values(knots, degree, np.array([hi]), nu=1)
        B[above] += (x[above] - hi)[:, None] * d
    return B


def evaluate_basis(basis: ReparamBasis, x_new) -> np.ndarray:
    """Rebuild the ``[linear | nonlinear]`` design block at new values.

    Uses the stored training knots, column means, eigenvectors and scalings;
    outside the training range the spline is extended linearly.
    """
    x_new = (_check_finite(x_new, "x_new") - basis.x_center) / basis.x_scale
    B = _raw_values_extrapolated(basis.knots, basis.degree, x_new) - basis.column_means
    return B @ basis.coef_map


def build_basis(x, spec: SplineSpec | None = None, standardize: bool = False) -> ReparamBasis:
    """Raw basis plus reparameterization for one predictor.

    With ``standardize`` the basis and penalty are built on the z-scored
    predictor, which makes the nonlinear columns independent of the units
    ``x`` is measured in.
    """
    x = _check_finite(x)
    center, scale = 0.0, 1.0
    if standardize:
        center = float(np.mean(x))
        scale = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        if not scale > 0:
            raise DegeneratePredictorError("predictor is constant")
    z = (x - center) / scale
    raw = build_raw_basis(z, spec)
    rep = reparameterize(raw, z)
    rep.x_center, rep.x_scale = center, scale
    # training design rebuilt through the prediction path so both agree exactly
    block = evaluate_basis(rep, x)
    rep.linear_col = block[:, 0]
    rep.nonlinear_cols = block[:, 1:]
    return rep


def build_design(X, spec: SplineSpec | None = None, standardize: bool = True):
    """Bases for every column of ``X`` and the concatenated design.

    Each column is z-scored before its basis is built (see
    :func:`build_basis`).

    Returns
    -------
    bases : list of ReparamBasis
    design : ndarray, shape (n, sum(1 + K_j))
    groups : list of slice
        Column slice of ``design`` belonging to each predictor; the first
        column of each slice is the linear one.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("covariate matrix must be two-dimensional")
    bases, groups, start = [], [], 0
    for j in range(X.shape[1]):
        try:
            b = build_basis(X[:, j], spec, standardize)
        except DegeneratePredictorError as exc:
            raise DegeneratePredictorError(f"predictor {j}: {exc}") from exc
        bases.append(b)
        groups.append(slice(start, start + 1 + b.K))
        start += 1 + b.K
    design = np.column_stack([b.design for b in bases]) if bases else np.empty((X.shape[0], 0))
    return bases, design, groups


def transform(bases, X_new) -> np.ndarray:
    """Design matrix for new covariate rows using fitted bases."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2 or X_new.shape[1] != len(bases):
        raise InputError(f"expected {len(bases)} covariate columns")
    return np.column_stack([evaluate_basis(b, X_new[:, j]) for j, b in enumerate(bases)])
