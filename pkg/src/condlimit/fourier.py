"""Characteristic functions and exact lattice convolution by DFT exponentiation.

The N-fold law of a lattice pair (sum of i.i.d. copies) is computed by
zero-padding the joint weights to the full reachable support, taking the
N-th pointwise power of the spectrum and inverting.  With full-width padding
the circular convolution coincides with the exact linear convolution, so the
only numerical error is DFT roundoff, which is clamped and budgeted
explicitly.

``psi_bartlett`` evaluates the smoothing identity that expresses
``2*pi*P(S_N=m) * E[exp(itU)]`` (U the conditioned sum) as a single
oscillatory integral of the N-th characteristic-function power over one
period; it is the quadrature route that the exact engine cross-validates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, irfftn, next_fast_len, rfft, rfftn

from .errors import (IllConditionedError, InvariantError, NumericalFailureError,
                     QuadratureError, ResourceBudgetError)
from .lattice import JointLatticePMF, LatticePMF, ProjectionParams, _fsum, moments

NEG_CLAMP_TOL = 1e-12
DEFAULT_MAX_CELLS = 200_000_000
_GL_ORDER = 12
_PANEL_WIDTH = 0.5
_QUAD_ATOL = 1e-10
_MAX_REFINEMENTS = 8

# evaluation points per chunk when broadcasting a char-fn sum over a grid
_CHUNK_BUDGET = 4_000_000


def _phi_terms(joint: JointLatticePMF, projection: ProjectionParams | None):
    """Support values for char-fn sums: centered X, Y (or Y' residuals), weights."""
    xs, ys, ws = joint.nonzero_points()
    mean_x = _fsum(ws * xs) / _fsum(ws)
    if projection is None:
        yy = ys
    else:
        yy = projection.residuals(xs, ys)
    return xs - mean_x, yy, ws


def _char_sum(xc, yy, coeffs, s, t):
    """sum_k coeffs[k] * exp(i*(s*xc[k] + t*yy[k])), broadcast over s, t."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(s.shape, t.shape)
    S = np.broadcast_to(s, shape).ravel()
    T = np.broadcast_to(t, shape).ravel()
    out = np.empty(S.size, dtype=complex)
    chunk = max(1, _CHUNK_BUDGET // max(1, xc.size))
    for i in range(0, S.size, chunk):
        sl = slice(i, min(i + chunk, S.size))
        phase = np.exp(1j * (S[sl, None] * xc[None, :] + T[sl, None] * yy[None, :]))
        out[sl] = np.sum(phase * coeffs[None, :], axis=1)
    if shape == ():
        return complex(out[0])
    return out.reshape(shape)


def phi(joint: JointLatticePMF, s, t, projection: ProjectionParams | None = None):
    """E[exp(i*s*(X - E[X]) + i*t*Y)] as an exact finite sum.

    With ``projection`` given, Y is replaced by the residual Y' (which lives
    off the lattice, hence the parametric evaluation).  Accepts scalars or
    broadcastable arrays for ``s`` and ``t``.
    """
    xc, yy, ws = _phi_terms(joint, projection)
    return _char_sum(xc, yy, ws, s, t)


def phi_dt(joint: JointLatticePMF, s, t, order: int = 1,
           projection: ProjectionParams | None = None):
    """Partial derivative of ``phi`` in t of the given order (1 or 2)."""
    if order not in (1, 2):
        raise InvariantError(f"order must be 1 or 2, got {order}")
    xc, yy, ws = _phi_terms(joint, projection)
    return _char_sum(xc, yy, ws * (1j * yy) ** order, s, t)


@dataclass(frozen=True, eq=False)
class CharFnGrid:
    """Characteristic-function values on a rectangular (s, t) grid."""

    s_points: np.ndarray
    t_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (len(self.s_points), len(self.t_points)):
            raise InvariantError("values shape does not match the grid")
        worst = np.abs(v).max()
        if worst > 1 + 1e-12:
            raise InvariantError(f"characteristic-function modulus {worst} exceeds 1")


def char_fn_grid(joint: JointLatticePMF, s_points, t_points,
                 projection: ProjectionParams | None = None) -> CharFnGrid:
    s_points = np.asarray(s_points, dtype=float)
    t_points = np.asarray(t_points, dtype=float)
    values = phi(joint, s_points[:, None], t_points[None, :], projection)
    return CharFnGrid(s_points, t_points, values)


def convolution_error_budget(joint_or_pmf, N: int) -> float:
    """Absolute error budget of the N-fold DFT law: N*defect plus DFT roundoff."""
    if isinstance(joint_or_pmf, JointLatticePMF):
        wx, wy = joint_or_pmf.shape
        cells = (N * (wx - 1) + 1) * (N * (wy - 1) + 1)
    else:
        cells = N * (joint_or_pmf.size - 1) + 1
    eps = np.finfo(float).eps
    return N * joint_or_pmf.defect + cells * eps * N


def prob_S_eq_m(pmf_x: LatticePMF, N: int, m: int) -> float:
    """P(S_N = m) for S_N a sum of N i.i.d. copies, by 1-D DFT exponentiation.

    Zero-padding to the full reachable width makes the circular convolution
    exact; the result is clamped to [0, 1].  An unreachable m returns 0.
    """
    if N < 1:
        raise InvariantError(f"N must be >= 1, got {N}")
    width = pmf_x.size
    full = N * (width - 1) + 1
    idx = m - N * pmf_x.offset
    if idx < 0 or idx >= full:
        return 0.0
    if N == 1:
        return pmf_x.prob(m)
    size = next_fast_len(full)
    spectrum = rfft(pmf_x.weights, size)
    conv = irfft(spectrum**N, size)
    return float(min(1.0, max(0.0, conv[idx])))


def joint_law_SN_TN(joint: JointLatticePMF, N: int,
                    max_cells: int = DEFAULT_MAX_CELLS) -> JointLatticePMF:
    """Exact law of (S_N, T_N) = sum of N i.i.d. copies of the pair, via 2-D DFT.

    Negative cells within roundoff (-1e-12, 0) are clamped to zero; anything
    below that aborts, since it indicates a bug rather than noise.
    """
    if N < 1:
        raise InvariantError(f"N must be >= 1, got {N}")
    if N == 1:
        return joint
    wx, wy = joint.shape
    lx, ly = N * (wx - 1) + 1, N * (wy - 1) + 1
    if lx * ly > max_cells:
        raise ResourceBudgetError(
            f"N-fold law needs a {lx} x {ly} grid ({lx * ly} cells), "
            f"budget is {max_cells}")
    mx, my = next_fast_len(lx), next_fast_len(ly)
    spectrum = rfftn(joint.weights, s=(mx, my))
    conv = irfftn(spectrum**N, s=(mx, my))[:lx, :ly]
    worst = conv.min()
    if worst < -NEG_CLAMP_TOL:
        raise NumericalFailureError(
            f"DFT produced cell {worst:.3e} below the roundoff floor -{NEG_CLAMP_TOL}")
    np.clip(conv, 0.0, None, out=conv)
    defect = max(0.0, 1.0 - _fsum(conv))
    return JointLatticePMF.from_weights(N * joint.x_offset, N * joint.y_offset,
                                        conv, defect)


def conditional_slice(joint: JointLatticePMF, N: int, m: int,
                      max_cells: int = DEFAULT_MAX_CELLS) -> LatticePMF:
    """The conditional law of T_N given S_N = m, normalised over the S = m row."""
    law = joint_law_SN_TN(joint, N, max_cells)
    budget = convolution_error_budget(joint, N)
    i = m - law.x_offset
    if not (0 <= i < law.shape[0]):
        raise IllConditionedError(
            f"S = {m} is unreachable for N = {N} (support "
            f"[{law.x_offset}, {law.x_offset + law.shape[0] - 1}])")
    row = np.array(law.weights[i])
    total = _fsum(row)
    if total <= 10 * budget:
        raise IllConditionedError(
            f"P(S={m}) = {total:.3e} is indistinguishable from the error budget "
            f"{budget:.3e}")
    return LatticePMF.from_weights(law.y_offset, row / total, 0.0)


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One (pair law, N, m) conditioning configuration.

    Construction verifies that the conditioning event is reachable and has
    positive probability.  ``eta0`` bounds the t-range on which the joint
    characteristic function is audited.
    """

    joint: JointLatticePMF
    N: int
    m: int
    eta0: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise InvariantError(f"N must be >= 1, got {self.N}")
        if self.eta0 <= 0:
            raise InvariantError(f"eta0 must be > 0, got {self.eta0}")
        marg = self.joint.marginal_x()
        lo = self.N * marg.offset
        hi = self.N * (marg.offset + marg.size - 1)
        if not (lo <= self.m <= hi):
            raise InvariantError(f"m = {self.m} outside reachable range [{lo}, {hi}]")
        p = prob_S_eq_m(marg, self.N, self.m)
        if p <= 0.0:
            raise InvariantError(f"P(S_{self.N} = {self.m}) = 0")
        object.__setattr__(self, "_p_sm", p)
        object.__setattr__(self, "_marginal_x", marg)

    @property
    def p_s_eq_m(self) -> float:
        return self._p_sm

    def x_moments(self) -> tuple[float, float, float]:
        return moments(self._marginal_x)

    def v_n(self) -> float:
        """Standardised offset of the conditioning point m from N*E[X]."""
        mean_x, sigma_x, _ = self.x_moments()
        return (self.m - self.N * mean_x) / (sigma_x * math.sqrt(self.N))

    def gamma_n(self) -> float:
        """2*pi*sigma_X*sqrt(N)*P(S_N = m), the local-limit normalisation."""
        _, sigma_x, _ = self.x_moments()
        return 2.0 * math.pi * sigma_x * math.sqrt(self.N) * self.p_s_eq_m


def _psi_quad_level(spec: ExperimentSpec, t: float, n_panels: int,
                    nodes: np.ndarray, weights: np.ndarray) -> complex:
    mean_x, sigma_x, _ = spec.x_moments()
    scale = sigma_x * math.sqrt(spec.N)
    limit = math.pi * scale
    edges = np.linspace(-limit, limit, n_panels + 1)
    half = (edges[1] - edges[0]) / 2.0
    mids = (edges[:-1] + edges[1:]) / 2.0
    s_nodes = (mids[:, None] + half * nodes[None, :]).ravel()
    w_nodes = np.tile(weights * half, n_panels)
    vals = phi(spec.joint, s_nodes / scale, t)
    integrand = np.exp(-1j * s_nodes * spec.v_n()) * vals**spec.N
    return complex(np.sum(integrand * w_nodes) / scale)


def psi_bartlett(spec: ExperimentSpec, t: float,
                 with_error_estimate: bool = False):
    """2*pi*P(S_N=m)*E[exp(itU)] by quadrature of the smoothing identity.

    Composite Gauss-Legendre panels of width <= 0.5 on the s-axis, halved
    until two successive refinement levels agree to 1e-10 absolute.  At t = 0
    the value equals 2*pi*P(S_N = m).
    """
    _, sigma_x, _ = spec.x_moments()
    limit = math.pi * sigma_x * math.sqrt(spec.N)
    nodes, weights = np.polynomial.legendre.leggauss(_GL_ORDER)
    n_panels = max(2, int(math.ceil(2 * limit / _PANEL_WIDTH)))
    prev = _psi_quad_level(spec, t, n_panels, nodes, weights)
    for _ in range(_MAX_REFINEMENTS):
        n_panels *= 2
        cur = _psi_quad_level(spec, t, n_panels, nodes, weights)
        err = abs(cur - prev)
        if err <= _QUAD_ATOL:
            return (cur, err) if with_error_estimate else cur
        prev = cur
    raise QuadratureError("psi quadrature did not converge", achieved=err)
