"""B-spline bases with difference penalties and the degrees-of-freedom
to smoothing-parameter mapping via Demmler-Reinsch orthogonalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDomainError, DimensionError, InfeasibleDfError
from .tensorops import cholesky, sym_eigen

DEFAULT_NUM_BASIS = 10
DEFAULT_DEGREE = 3
DEFAULT_DIFF_ORDER = 2

# Ridge added to design.T @ design before factorizing in df_to_lambda; the
# trace oracle in the tests uses the same value.
DF_RIDGE = 1e-8


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis on ``[t_min, t_max]`` with equidistant
    interior knots.

    ``knots`` is the full non-decreasing knot vector with the boundary
    knots replicated ``degree + 1`` times, so ``len(knots) == num_basis
    + degree + 1``. Evaluation outside the domain is clamped to the
    nearest boundary, which keeps prediction total.
    """

    degree: int
    knots: np.ndarray
    num_basis: int
    t_min: float
    t_max: float

    @property
    def interior_knot_count(self) -> int:
        return self.num_basis - self.degree - 1

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "knots": [float(k) for k in self.knots],
            "num_basis": self.num_basis,
            "t_min": self.t_min,
            "t_max": self.t_max,
        }

    @staticmethod
    def from_dict(d: dict) -> "SplineBasis":
        return SplineBasis(
            degree=int(d["degree"]),
            knots=np.asarray(d["knots"], dtype=np.float64),
            num_basis=int(d["num_basis"]),
            t_min=float(d["t_min"]),
            t_max=float(d["t_max"]),
        )


@dataclass(frozen=True)
class PenaltyMatrix:
    """Difference penalty ``D_d.T @ D_d`` with nullspace dimension ``order``."""

    order: int
    matrix: np.ndarray


def build_basis(values: np.ndarray, num_basis: int = DEFAULT_NUM_BASIS,
                degree: int = DEFAULT_DEGREE) -> SplineBasis:
    """Construct a clamped B-spline basis spanning the observed range.

    Parameters
    ----------
    values : array
        Observed feature values; the basis domain is ``[min, max]``.
    num_basis : int
        Number of basis functions ``L``; must exceed ``degree``.
    degree : int
        Polynomial degree of the spline pieces (0 gives interval
        indicators, 3 the cubic default).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot build a basis from an empty values vector")
    if not np.all(np.isfinite(values)):
        raise ConfigError("basis values must be finite")
    if degree < 0:
        raise ConfigError(f"degree must be >= 0, got {degree}")
    if num_basis <= degree:
        raise ConfigError(
            f"num_basis must exceed degree, got L={num_basis}, degree={degree}"
        )
    lo = float(values.min())
    hi = float(values.max())
    if hi - lo <= 0.0:
        raise DegenerateDomainError(
            f"constant feature (all values equal {lo}); spline domain is degenerate"
        )
    # num_basis - degree + 1 breakpoints, boundary knots replicated so each
    # boundary has multiplicity degree + 1
    breakpoints = np.linspace(lo, hi, num_basis - degree + 1)
    knots = np.concatenate([np.full(degree, lo), breakpoints, np.full(degree, hi)])
    return SplineBasis(degree=degree, knots=knots, num_basis=num_basis,
                       t_min=lo, t_max=hi)


def evaluate(basis: SplineBasis, t: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at ``t``, returning an ``(n, L)`` design.

    Out-of-domain values are clamped to the domain boundary first. Rows
    sum to one (partition of unity) and at most ``degree + 1`` entries
    per row are nonzero.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if not np.all(np.isfinite(t)):
        raise ConfigError("evaluation points must be finite")
    x = np.clip(t, basis.t_min, basis.t_max)
    knots = basis.knots
    degree = basis.degree
    m = len(knots) - 1

    # Degree-0 layer: interval indicators, right-closed on the last
    # nonempty interval so t_max maps into the basis.
    b = np.zeros((x.size, m))
    nonempty = np.nonzero(knots[1:] > knots[:-1])[0]
    last = nonempty[-1]
    for j in nonempty:
        if j == last:
            b[:, j] = (x >= knots[j]) & (x <= knots[j + 1])
        else:
            b[:, j] = (x >= knots[j]) & (x < knots[j + 1])

    for k in range(1, degree + 1):
        cols = m - k
        nxt = np.zeros((x.size, cols))
        for j in range(cols):
            d1 = knots[j + k] - knots[j]
            if d1 > 0.0:
                nxt[:, j] += (x - knots[j]) / d1 * b[:, j]
            d2 = knots[j + k + 1] - knots[j + 1]
            if d2 > 0.0:
                nxt[:, j] += (knots[j + k + 1] - x) / d2 * b[:, j + 1]
        b = nxt

    return b


def difference_penalty(num_basis: int, order: int = DEFAULT_DIFF_ORDER) -> PenaltyMatrix:
    """Order-``d`` difference penalty ``D_d.T @ D_d`` for ``L`` coefficients."""
    if order < 1:
        raise ConfigError(f"difference order must be >= 1, got {order}")
    if num_basis <= order:
        raise ConfigError(
            f"need more coefficients than the difference order, got "
            f"L={num_basis}, order={order}"
        )
    d = np.diff(np.eye(num_basis), n=order, axis=0)
    return PenaltyMatrix(order=order, matrix=d.T @ d)


@dataclass(frozen=True)
class LambdaSolution:
    """Smoothing-parameter solve result.

    ``hit_upper_bound`` flags targets so close to the penalty nullspace
    dimension that the bisection ran into the upper end of its lambda
    search range.
    """

    value: float
    hit_upper_bound: bool = False


_LOG10_LAMBDA_MAX = 14.0
_NULLSPACE_REL_TOL = 1e-10


def _dr_eigenvalues(design: np.ndarray, penalty: PenaltyMatrix) -> np.ndarray:
    """Demmler-Reinsch spectrum: eigenvalues of R^-T P R^-1 where
    R.T R = design.T design + ridge."""
    design = np.asarray(design, dtype=np.float64)
    if design.ndim != 2:
        raise DimensionError("design must be 2-d")
    L = design.shape[1]
    if penalty.matrix.shape != (L, L):
        raise DimensionError(
            f"penalty is {penalty.matrix.shape}, design has {L} columns"
        )
    btb = design.T @ design + DF_RIDGE * np.eye(L)
    r = cholesky(btb)
    rinv = np.linalg.solve(r, np.eye(L))
    s, _ = sym_eigen(rinv.T @ penalty.matrix @ rinv)
    return np.maximum(s, 0.0)


def effective_df(design: np.ndarray, penalty: PenaltyMatrix, lam: float) -> float:
    """Trace of the smoother matrix ``design (design'design + lam P)^-1 design'``
    computed through the Demmler-Reinsch spectrum."""
    s = _dr_eigenvalues(design, penalty)
    return float(np.sum(1.0 / (1.0 + lam * s)))


def df_to_lambda(design: np.ndarray, penalty: PenaltyMatrix, df: float) -> LambdaSolution:
    """Solve ``df(lam) = df`` for the smoothing parameter.

    ``df(lam) = sum_j 1 / (1 + lam * s_j)`` with ``s_j`` the
    Demmler-Reinsch eigenvalues; the function is strictly decreasing from
    ``L`` at ``lam = 0`` down to the penalty nullspace dimension, and the
    root is found by bisection on ``log10 lam``.
    """
    s = _dr_eigenvalues(design, penalty)
    L = s.size
    s_scale = float(s.max(initial=0.0))
    null_dim = int(np.sum(s <= _NULLSPACE_REL_TOL * max(s_scale, 1.0)))
    if df > L + 1e-9:
        raise InfeasibleDfError(f"df={df} exceeds the basis dimension {L}")
    if df <= null_dim:
        raise InfeasibleDfError(
            f"df={df} not above the penalty nullspace dimension {null_dim}"
        )
    if s_scale == 0.0:
        raise InfeasibleDfError("penalty is identically zero; df is fixed at L")

    def df_at(lam: float) -> float:
        return float(np.sum(1.0 / (1.0 + lam * s)))

    if df >= df_at(0.0) - 1e-12:
        return LambdaSolution(0.0)

    # Bracket on log10 lambda around the penalty's natural scale.
    lo = np.log10(1.0 / s_scale) - 16.0
    hi = _LOG10_LAMBDA_MAX
    if df_at(10.0 ** hi) > df:
        return LambdaSolution(10.0 ** hi, hit_upper_bound=True)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if df_at(10.0 ** mid) > df:
            lo = mid
        else:
            hi = mid
    lam = 10.0 ** (0.5 * (lo + hi))
    return LambdaSolution(float(lam))
