"""Probability mass functions on the integer lattice.

A ``LatticePMF`` stores a law on a contiguous integer range together with the
mass removed by tail truncation (the *defect*).  Truncated mass is never
redistributed: it is carried through every downstream computation as an
explicit error budget.  ``JointLatticePMF`` is the two-dimensional analogue
for an integer pair (X, Y).

Moment routines use exact compensated summation (``math.fsum``), so results
do not depend on accumulation order.  Moments are those of the retained law,
i.e. the weights normalised by the retained mass; with the defect capped at
the tail tolerance this differs from the untruncated family's moments by an
amount far below every tolerance used in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLawError, InvariantError

MASS_ATOL = 1e-12
MAX_TAIL_TOL = 1e-6


def _fsum(values) -> float:
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


@dataclass(frozen=True, eq=False)
class LatticePMF:
    """A pmf on the contiguous integer range ``offset .. offset+len(weights)-1``.

    Invariants: nonnegative weights, first and last weight strictly positive
    (canonical trimming, so equal laws have equal representations), and
    ``sum(weights) + defect == 1`` within 1e-12.
    """

    offset: int
    weights: np.ndarray
    defect: float = 0.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise InvariantError("weights must be a nonempty 1-D array")
        if np.any(w < 0):
            raise InvariantError(f"negative weight: min={w.min():.3e}")
        if w[0] <= 0 or w[-1] <= 0:
            raise InvariantError("weights must be trimmed (positive first/last entry)")
        if not (0.0 <= self.defect <= 1.0):
            raise InvariantError(f"defect {self.defect} outside [0, 1]")
        total = _fsum(w) + self.defect
        if abs(total - 1.0) > MASS_ATOL:
            raise InvariantError(f"mass + defect = {total!r} is not 1 within {MASS_ATOL}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "defect", float(self.defect))

    @classmethod
    def from_weights(cls, offset: int, weights, defect: float = 0.0) -> "LatticePMF":
        """Build a pmf, trimming leading/trailing zero weights into the offset."""
        w = np.ascontiguousarray(weights, dtype=np.float64)
        nz = np.flatnonzero(w > 0)
        if nz.size == 0:
            raise InvariantError("pmf has no positive weight")
        lo, hi = nz[0], nz[-1]
        return cls(offset + int(lo), w[lo : hi + 1], defect)

    @property
    def size(self) -> int:
        return int(self.weights.size)

    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)

    def mass(self) -> float:
        return _fsum(self.weights)

    def prob(self, k: int) -> float:
        i = k - self.offset
        if 0 <= i < self.size:
            return float(self.weights[i])
        return 0.0

    def span(self) -> int:
        """gcd of gaps between support points carrying positive mass."""
        pts = np.flatnonzero(self.weights > 0)
        if pts.size < 2:
            return 0
        return int(np.gcd.reduce(np.diff(pts)))

    def is_degenerate(self) -> bool:
        return self.size == 1

    def allclose(self, other: "LatticePMF", atol: float = 1e-12) -> bool:
        if self.offset != other.offset or self.size != other.size:
            return False
        return bool(np.allclose(self.weights, other.weights, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class JointLatticePMF:
    """A joint pmf for an integer pair (X, Y) on a lattice rectangle.

    ``weights[i, j]`` is P(X = x_offset + i, Y = y_offset + j).  Marginals of
    a trimmed joint are valid ``LatticePMF`` objects carrying the same defect.
    """

    x_offset: int
    y_offset: int
    weights: np.ndarray
    defect: float = 0.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.size == 0:
            raise InvariantError("weights must be a nonempty 2-D array")
        if np.any(w < 0):
            raise InvariantError(f"negative weight: min={w.min():.3e}")
        if not (w.sum(axis=1)[0] > 0 and w.sum(axis=1)[-1] > 0
                and w.sum(axis=0)[0] > 0 and w.sum(axis=0)[-1] > 0):
            raise InvariantError("joint weights must be trimmed (positive border mass)")
        if not (0.0 <= self.defect <= 1.0):
            raise InvariantError(f"defect {self.defect} outside [0, 1]")
        total = _fsum(w) + self.defect
        if abs(total - 1.0) > MASS_ATOL:
            raise InvariantError(f"mass + defect = {total!r} is not 1 within {MASS_ATOL}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "x_offset", int(self.x_offset))
        object.__setattr__(self, "y_offset", int(self.y_offset))
        object.__setattr__(self, "defect", float(self.defect))

    @classmethod
    def from_weights(cls, x_offset: int, y_offset: int, weights,
                     defect: float = 0.0) -> "JointLatticePMF":
        """Build a joint pmf, trimming all-zero border rows and columns."""
        w = np.ascontiguousarray(weights, dtype=np.float64)
        rows = np.flatnonzero(w.sum(axis=1) > 0)
        cols = np.flatnonzero(w.sum(axis=0) > 0)
        if rows.size == 0 or cols.size == 0:
            raise InvariantError("joint pmf has no positive weight")
        w = w[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
        return cls(x_offset + int(rows[0]), y_offset + int(cols[0]), w, defect)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.weights.shape)

    def x_support(self) -> np.ndarray:
        return np.arange(self.x_offset, self.x_offset + self.weights.shape[0])

    def y_support(self) -> np.ndarray:
        return np.arange(self.y_offset, self.y_offset + self.weights.shape[1])

    def mass(self) -> float:
        return _fsum(self.weights)

    def marginal_x(self) -> LatticePMF:
        return LatticePMF.from_weights(self.x_offset, self.weights.sum(axis=1), self.defect)

    def marginal_y(self) -> LatticePMF:
        return LatticePMF.from_weights(self.y_offset, self.weights.sum(axis=0), self.defect)

    def nonzero_points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (x values, y values, weights) of the cells with positive mass."""
        ii, jj = np.nonzero(self.weights)
        return (ii + self.x_offset).astype(float), (jj + self.y_offset).astype(float), \
            self.weights[ii, jj]


@dataclass(frozen=True)
class MomentSummary:
    """Means, spreads, third absolute central moments, correlation of a joint law.

    ``tau_sq`` is sigma_y^2 * (1 - r^2), the variance of Y after removing its
    best affine predictor in X.
    """

    mean_x: float
    mean_y: float
    sigma_x: float
    sigma_y: float
    rho_x: float
    rho_y: float
    r: float
    tau_sq: float

    def __post_init__(self):
        if abs(self.r) > 1 + 1e-12:
            raise InvariantError(f"|r| = {abs(self.r)} exceeds 1")


@dataclass(frozen=True)
class ProjectionParams:
    """Parameters of the residual Y' = Y - y_center - slope * (X - x_center).

    Y' is centered and uncorrelated with X; ``tau`` is its standard deviation.
    Y' generally lives off the integer lattice, so it is kept in this
    parametric form and only ever evaluated inside characteristic-function
    sums.
    """

    slope: float
    y_center: float
    x_center: float
    tau: float

    def residuals(self, x, y) -> np.ndarray:
        """Values of Y' on given support points."""
        return np.asarray(y, dtype=float) - self.y_center \
            - self.slope * (np.asarray(x, dtype=float) - self.x_center)

    def is_degenerate(self) -> bool:
        return self.tau == 0.0


def moments(pmf: LatticePMF) -> tuple[float, float, float]:
    """Mean, standard deviation and third absolute central moment of a pmf.

    Exact compensated summation over the support; a degenerate (single point)
    law returns sigma = rho = 0.
    """
    mass = pmf.mass()
    xs = pmf.support().astype(float)
    w = pmf.weights
    mean = _fsum(w * xs) / mass
    d = xs - mean
    var = _fsum(w * d * d) / mass
    sigma = math.sqrt(max(var, 0.0))
    rho = _fsum(w * np.abs(d) ** 3) / mass
    return mean, sigma, rho


def joint_moments(joint: JointLatticePMF) -> MomentSummary:
    """Exact moment summary of a joint law; both marginals must be spread out."""
    mass = joint.mass()
    xs = joint.x_support().astype(float)
    ys = joint.y_support().astype(float)
    w = joint.weights
    mean_x = _fsum(w.sum(axis=1) * xs) / mass
    mean_y = _fsum(w.sum(axis=0) * ys) / mass
    dx = xs - mean_x
    dy = ys - mean_y
    var_x = _fsum(w.sum(axis=1) * dx * dx) / mass
    var_y = _fsum(w.sum(axis=0) * dy * dy) / mass
    if var_x <= 0 or var_y <= 0:
        raise DegenerateLawError(
            "correlation undefined: a marginal is degenerate "
            f"(var_x={var_x:.3e}, var_y={var_y:.3e})")
    rho_x = _fsum(w.sum(axis=1) * np.abs(dx) ** 3) / mass
    rho_y = _fsum(w.sum(axis=0) * np.abs(dy) ** 3) / mass
    cov = _fsum(w * np.outer(dx, dy)) / mass
    sigma_x = math.sqrt(var_x)
    sigma_y = math.sqrt(var_y)
    r = cov / (sigma_x * sigma_y)
    r = min(1.0, max(-1.0, r))
    tau_sq = var_y * (1.0 - r * r)
    return MomentSummary(mean_x, mean_y, sigma_x, sigma_y, rho_x, rho_y, r, tau_sq)


def project_y_prime(joint: JointLatticePMF) -> ProjectionParams:
    """Best-affine-predictor residual parameters for Y given X.

    The returned Y' satisfies E[Y'] = 0 and Cov(X, Y') = 0 (verified to 1e-12
    by summation over the joint support).  A Y that is an affine function of
    X yields tau = 0, which downstream standardisations refuse.
    """
    mass = joint.mass()
    xs = joint.x_support().astype(float)
    ys = joint.y_support().astype(float)
    w = joint.weights
    mean_x = _fsum(w.sum(axis=1) * xs) / mass
    mean_y = _fsum(w.sum(axis=0) * ys) / mass
    dx = xs - mean_x
    var_x = _fsum(w.sum(axis=1) * dx * dx) / mass
    if var_x <= 0:
        raise DegenerateLawError("projection undefined for degenerate X")
    cov = _fsum(w * np.outer(dx, ys - mean_y)) / mass
    slope = cov / var_x
    params = ProjectionParams(slope=slope, y_center=mean_y, x_center=mean_x, tau=0.0)
    resid = params.residuals(*np.meshgrid(xs, ys, indexing="ij"))
    mean_resid = _fsum(w * resid) / mass
    cov_resid = _fsum(w * resid * dx[:, None]) / mass
    if abs(mean_resid) > 1e-12 or abs(cov_resid) > 1e-12:
        raise InvariantError(
            f"projection failed: E[Y']={mean_resid:.3e}, Cov(X,Y')={cov_resid:.3e}")
    tau = math.sqrt(max(_fsum(w * resid * resid) / mass, 0.0))
    return ProjectionParams(slope=slope, y_center=mean_y, x_center=mean_x, tau=tau)


def _validate_tail_tol(tail_tol: float) -> None:
    if not (0.0 < tail_tol <= MAX_TAIL_TOL):
        raise InvariantError(
            f"tail tolerance {tail_tol} outside accepted range (0, {MAX_TAIL_TOL}]")


def truncate(dist, tail_tol: float) -> LatticePMF:
    """Trim tail mass into the defect, keeping the total budget within ``tail_tol``.

    ``dist`` may be an existing ``LatticePMF`` (outermost cells are moved into
    the defect greedily, smallest first, while the budget allows) or a frozen
    scipy.stats discrete distribution with integer support (enumerated until
    the remaining upper-tail mass is below ``tail_tol``).  Weights are never
    renormalised.
    """
    _validate_tail_tol(tail_tol)
    if isinstance(dist, LatticePMF):
        return _retruncate(dist, tail_tol)
    return _truncate_frozen(dist, tail_tol)


def _retruncate(pmf: LatticePMF, tail_tol: float) -> LatticePMF:
    w = list(pmf.weights)
    lo, hi = 0, len(w) - 1
    removed = pmf.defect
    while lo < hi:
        side = lo if w[lo] <= w[hi] else hi
        if removed + w[side] > tail_tol:
            break
        removed += w[side]
        if side == lo:
            lo += 1
        else:
            hi -= 1
    return LatticePMF.from_weights(pmf.offset + lo, np.array(w[lo : hi + 1]), removed)


def _truncate_frozen(dist, tail_tol: float) -> LatticePMF:
    a, b = dist.support()
    if not math.isfinite(a):
        raise InvariantError("only distributions with a finite lower endpoint are supported")
    lo = int(math.ceil(a))
    if math.isfinite(b):
        hi = int(math.floor(b))
        defect = 0.0
    else:
        hi = int(dist.isf(tail_tol))
        while dist.sf(hi) > tail_tol:
            hi += 1
        defect = float(dist.sf(hi))
    ks = np.arange(lo, hi + 1)
    return LatticePMF.from_weights(lo, dist.pmf(ks), defect)
