"""Numerical audit of the moment/characteristic-function assumptions and
evaluation of every explicit constant used by the error bounds.

The audit measures, for a concrete (pair law, N, m) configuration: the
local-limit normalisation gamma_n, the marginal spreads and third-moment
ratios, the correlation modulus, the span of X, and a grid-certified lower
bound c7 for the quadratic decay of the joint characteristic function of
(X, Y').  The constant calculator turns a set of admissible bounds into the
derived constants (d1, d2, C1, C2, ..., final C and C-tilde), evaluating
Gaussian integrals in closed form.

The c7 certificate is a finite-grid infimum (pitch <= 0.01 by default); a
rigorous infimum over the continuum is out of scope, so reports carry the
grid pitch alongside the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateLawError, InvariantError
from .fourier import ExperimentSpec, phi, phi_dt
from .lattice import (JointLatticePMF, ProjectionParams, _fsum, joint_moments,
                      project_y_prime)

QR_CONSTANT = 161.0
QR_RATIO_GATE = 12.0**-1.5


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grids: point counts for bound checks, pitch for the c7 scan."""

    s_count: int = 200
    t_count: int = 200
    pitch: float = 0.01

    def __post_init__(self):
        if self.s_count < 3 or self.t_count < 3:
            raise InvariantError("grids need at least 3 points per axis")
        if not (0 < self.pitch <= 0.25):
            raise InvariantError(f"pitch {self.pitch} outside (0, 0.25]")


@dataclass(frozen=True)
class AssumptionReport:
    """Measured assumption quantities for one (model, N, m) configuration."""

    gamma_n: float
    sigma_x: float
    sigma_y: float
    rho_x_ratio: float
    rho_y_ratio: float
    r_abs: float
    c7_est: float
    eta0: float
    l1: float
    l2: float
    span_ok: bool

    def __post_init__(self):
        if self.gamma_n < 0 or self.c7_est < 0 or self.l1 < 0 or self.l2 < 0:
            raise InvariantError("audit quantities must be nonnegative")

    def kv_lines(self) -> list[str]:
        return _kv_lines(self)

    def violations(self) -> list[str]:
        """Human-readable list of assumption failures found by this audit."""
        out = []
        if not self.span_ok:
            out.append("span of X is not 1")
        if self.r_abs >= 1.0 - 1e-12:
            out.append("correlation modulus is 1: Y is an affine function of X")
        if self.c7_est <= 0.0:
            out.append("characteristic-function decay certificate failed (c7 = 0)")
        return out


def _kv_lines(report) -> list[str]:
    lines = []
    for f in fields(report):
        value = getattr(report, f.name)
        if isinstance(value, bool):
            lines.append(f"{f.name} = {'true' if value else 'false'}")
        else:
            lines.append(f"{f.name} = {value:.17g}")
    return lines


def estimate_c7(joint: JointLatticePMF, eta0: float = 1.0,
                grid: GridSpec = GridSpec(),
                projection: ProjectionParams | None = None) -> float:
    """Grid-certified decay constant of |E exp(i(sX + tY'))| on [-pi,pi]x[-eta0,eta0].

    Returns the infimum over the grid of (1 - |phi|) / (sigma_X^2 s^2 +
    sigma_Y'^2 t^2), floored at 0; the removable 0/0 point at the origin is
    excluded.  The infimum over a refined grid can only decrease.
    """
    if projection is None:
        projection = project_y_prime(joint)
    mom = joint_moments(joint)
    n_s = int(math.ceil(math.pi / grid.pitch))
    n_t = int(math.ceil(eta0 / grid.pitch))
    s = np.linspace(-math.pi, math.pi, 2 * n_s + 1)
    t = np.linspace(-eta0, eta0, 2 * n_t + 1)
    values = phi(joint, s[:, None], t[None, :], projection)
    denom = (mom.sigma_x**2 * s**2)[:, None] + (projection.tau**2 * t**2)[None, :]
    mask = denom > 0
    ratio = (1.0 - np.abs(values[mask])) / denom[mask]
    return max(0.0, float(ratio.min()))


def c7_ratio(joint: JointLatticePMF, s: float, t: float,
             projection: ProjectionParams | None = None) -> float:
    """The c7 defining ratio at a single (s, t) point off the origin."""
    if projection is None:
        projection = project_y_prime(joint)
    mom = joint_moments(joint)
    denom = mom.sigma_x**2 * s**2 + projection.tau**2 * t**2
    if denom <= 0:
        raise InvariantError("ratio undefined where the quadratic form vanishes")
    return (1.0 - abs(phi(joint, s, t, projection))) / denom


def audit(spec: ExperimentSpec, grid: GridSpec = GridSpec()) -> AssumptionReport:
    """Measure every audited assumption quantity for one configuration."""
    mom = joint_moments(spec.joint)
    projection = project_y_prime(spec.joint)
    c7 = estimate_c7(spec.joint, spec.eta0, grid, projection)
    sqrt_n = math.sqrt(spec.N)
    return AssumptionReport(
        gamma_n=spec.gamma_n(),
        sigma_x=mom.sigma_x,
        sigma_y=mom.sigma_y,
        rho_x_ratio=mom.rho_x / mom.sigma_x**3,
        rho_y_ratio=mom.rho_y / mom.sigma_y**3,
        r_abs=abs(mom.r),
        c7_est=c7,
        eta0=spec.eta0,
        l1=mom.rho_x / mom.sigma_x**3 / sqrt_n,
        l2=mom.rho_y / mom.sigma_y**3 / sqrt_n,
        span_ok=spec.joint.marginal_x().span() == 1,
    )


# ---------------------------------------------------------------------------
# Gaussian integrals (closed forms; quadrature cross-checks live in the tests)
# ---------------------------------------------------------------------------

def gauss_moment(power: int, a: float) -> float:
    """integral over R of |s|^power * exp(-a s^2) ds, for power in 0..4."""
    if a <= 0:
        raise InvariantError(f"decay rate must be > 0, got {a}")
    if power == 0:
        return math.sqrt(math.pi / a)
    if power == 1:
        return 1.0 / a
    if power == 2:
        return math.sqrt(math.pi) / (2.0 * a**1.5)
    if power == 3:
        return 1.0 / a**2
    if power == 4:
        return 3.0 * math.sqrt(math.pi) / (4.0 * a**2.5)
    raise InvariantError(f"unsupported power {power}")


def cubed_shell_integral(a: float) -> float:
    """integral over R^2 of (|s| + |u| + 1)^3 * exp(-a (s^2 + u^2)) ds du.

    Expanded multinomially into separable absolute Gaussian moments.
    """
    total = 0.0
    for i in range(4):
        for j in range(4 - i):
            k = 3 - i - j
            coef = math.factorial(3) // (math.factorial(i) * math.factorial(j)
                                         * math.factorial(k))
            total += coef * gauss_moment(i, a) * gauss_moment(j, a)
    return total


def _peaked_envelope_sup(b: float) -> float:
    """sup over x >= 0 of (x + 1) * exp(-(x/2 - b)^2 / 2), b >= 0.

    The critical point solves (x/2 - b)(x + 1) = 2, a quadratic with a single
    positive root; the boundary x = 0 is compared as well.
    """
    def g(x: float) -> float:
        return (x + 1.0) * math.exp(-((x / 2.0 - b) ** 2) / 2.0)

    x_star = (2.0 * b - 1.0 + math.sqrt(4.0 * b * b + 4.0 * b + 17.0)) / 2.0
    return max(g(0.0), g(x_star))


@dataclass(frozen=True)
class ConstantSet:
    """Every explicit constant of the error bounds, derived from admissible inputs.

    ``eta`` follows the primary definition min(2/9 (c4 c5)^{-1}, eta0); the
    text of the final-C display also admits the reading min(2/9 c4 c5, eta0),
    which is reported as ``eta_alt`` but never used in C_final.
    """

    c1: float
    c2: float
    c2_tilde: float
    c3: float
    c4: float
    c4_tilde: float
    c5: float
    c6: float
    c7: float
    eta0: float
    eta: float
    eta_alt: float
    epsilon: float
    d1: float
    d2: float
    d2pp: float
    d2ppp: float
    C1: float
    C2: float
    C2p: float
    C2pp: float
    C4: float
    C_final: float
    C_tilde: float

    def __post_init__(self):
        if abs(self.d2 - (self.d1**2 + self.d2pp + self.d2ppp)) > 0:
            raise InvariantError("d2 must equal d1^2 + d2pp + d2ppp exactly")

    def kv_lines(self) -> list[str]:
        return _kv_lines(self)


def constants(c1: float, c2: float, c3: float, c4: float, c5: float,
              c6: float, c7: float, eta0: float = 1.0,
              c2_tilde: float | None = None,
              c4_tilde: float | None = None) -> ConstantSet:
    """Evaluate all derived constants from a set of admissible bounds.

    ``c2_tilde`` defaults to 1/(4 c3), which is always an admissible lower
    bound for sigma_X; ``c4_tilde`` defaults to c4.  The inputs are taken
    literally: callers working with a correlated pair should first map them
    through ``projected_constants``.
    """
    values = dict(c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, c7=c7, eta0=eta0)
    for name, value in values.items():
        if not (value > 0):
            raise InvariantError(f"{name} must be > 0, got {value}")
    if not (0 <= c6 < 1):
        raise InvariantError(f"c6 must be in [0, 1), got {c6}")
    if c2_tilde is None:
        c2_tilde = 1.0 / (4.0 * c3)
    if c4_tilde is None:
        c4_tilde = c4
    if not (c2_tilde > 0 and c4_tilde > 0):
        raise InvariantError("lower bounds c2_tilde, c4_tilde must be > 0")

    eta = min(2.0 / 9.0 / (c4 * c5), eta0)
    eta_alt = min(2.0 / 9.0 * c4 * c5, eta0)
    epsilon = min(2.0 / 9.0 / (c2 * c3), math.pi)

    d1 = 0.5 * c3 ** (2.0 / 3.0) * c4 * c5 ** (1.0 / 3.0) / c1 \
        * gauss_moment(2, 2.0 * c7 / 3.0)
    d2pp = c3 ** (4.0 / 3.0) * c4**2 * c5 ** (2.0 / 3.0) / (4.0 * c1) \
        * gauss_moment(4, c7 / 3.0)
    d2ppp = c4**2 / c1 * (c5 ** (2.0 / 3.0) * c3 ** (1.0 / 3.0) + 1.0) \
        * gauss_moment(1, 2.0 * c7 / 3.0)
    d2 = d1**2 + d2pp + d2ppp

    big_c1 = QR_CONSTANT * (c3 + c5) / c1 * cubed_shell_integral(1.0 / 24.0)
    small = min(1.0, c7)
    c2p = (math.sqrt(2.0 * math.pi) / math.sqrt(small)
           + 4.0 / (small * epsilon * c2_tilde)) / (c1 * c7)
    c2pp = 0.5 * c2_tilde**2 * c7 * epsilon**2
    # sup_N sqrt(rate*N) exp(-rate*N) <= sqrt(1/2) exp(-1/2), absorbing the
    # exponential N-decay into a 1/sqrt(N) envelope
    big_c2 = c2p / math.sqrt(c2pp) * math.sqrt(0.5) * math.exp(-0.5)

    c_final = max(
        big_c1 + big_c2 + 24.0 / (c4_tilde * math.pi * math.sqrt(2.0 * math.pi)) / eta,
        12.0**1.5 * c3,
        12.0**1.5 * c5,
        math.sqrt(2.0),
    )
    c_prime = (max(d2 / c4_tilde**2, d1 / c4_tilde) / math.sqrt(2.0 * math.pi)
               * _peaked_envelope_sup(d1 / c4_tilde))
    c_tilde = c_final + max(c_prime, 2.0 * d2 / c4_tilde**2)

    return ConstantSet(
        c1=c1, c2=c2, c2_tilde=c2_tilde, c3=c3, c4=c4, c4_tilde=c4_tilde,
        c5=c5, c6=c6, c7=c7, eta0=eta0, eta=eta, eta_alt=eta_alt,
        epsilon=epsilon, d1=d1, d2=d2, d2pp=d2pp, d2ppp=d2ppp,
        C1=big_c1, C2=big_c2, C2p=c2p, C2pp=c2pp, C4=QR_CONSTANT,
        C_final=c_final, C_tilde=c_tilde,
    )


def admissible_constants(reports: list[AssumptionReport],
                         safety: float = 0.9) -> dict[str, float]:
    """Admissible bound set covering every audited configuration.

    gamma_n varies with N, so c1 takes the observed minimum with a safety
    factor; the moment quantities are N-free for a fixed pair law and the
    max/min below are then exact.
    """
    if not reports:
        raise InvariantError("need at least one audit report")
    return dict(
        c1=safety * min(r.gamma_n for r in reports),
        c2=max(r.sigma_x for r in reports),
        c2_tilde=min(r.sigma_x for r in reports),
        c3=max(r.rho_x_ratio for r in reports),
        c4=max(r.sigma_y for r in reports),
        c4_tilde=min(r.sigma_y for r in reports),
        c5=max(r.rho_y_ratio for r in reports),
        c6=max(r.r_abs for r in reports),
        c7=min(r.c7_est for r in reports),
        eta0=reports[0].eta0,
    )


def projected_constants(c: dict[str, float]) -> dict[str, float]:
    """Map bounds for a raw pair (X, Y) to bounds valid for (X, Y').

    Removing the affine predictor keeps c4 and c7, rescales the lower spread
    bound by sqrt(1 - c6^2), inflates the third-moment ratio through the
    triangle inequality, and zeroes the correlation.
    """
    if not (0 <= c["c6"] < 1):
        raise InvariantError(f"c6 must be in [0, 1), got {c['c6']}")
    gap = 1.0 - c["c6"] ** 2
    out = dict(c)
    out["c4_tilde"] = c["c4_tilde"] * math.sqrt(gap)
    out["c5"] = gap**-1.5 * (c["c3"] ** (1.0 / 3.0) + c["c5"] ** (1.0 / 3.0)) ** 3
    out["c6"] = 0.0
    return out


def constants_from_audits(reports: list[AssumptionReport],
                          safety: float = 0.9) -> ConstantSet:
    """Audit reports -> admissible bounds -> projected pair -> constant set."""
    raw = admissible_constants(reports, safety)
    return constants(**projected_constants(raw))


# ---------------------------------------------------------------------------
# grid checks of the bound lemmas
# ---------------------------------------------------------------------------

def _scaled_grids(spec: ExperimentSpec, projection: ProjectionParams,
                  grid: GridSpec, s_limit: float | None = None,
                  t_limit: float | None = None):
    mean_x, sigma_x, _ = spec.x_moments()
    sqrt_n = math.sqrt(spec.N)
    if projection.tau <= 0:
        raise DegenerateLawError("bound checks need a nondegenerate Y'")
    s_max = math.pi * sigma_x * sqrt_n if s_limit is None else s_limit
    t_max = spec.eta0 * projection.tau * sqrt_n if t_limit is None else t_limit
    s = np.linspace(-s_max, s_max, grid.s_count)
    t = np.linspace(-t_max, t_max, grid.t_count)
    return s, t, sigma_x * sqrt_n, projection.tau * sqrt_n


def check_phi_power_bound(spec: ExperimentSpec, l: int = 1,
                          grid: GridSpec = GridSpec(),
                          c7: float | None = None,
                          projection: ProjectionParams | None = None) -> float:
    """Worst slack of the Gaussian envelope on |phi|^{N-l} over the audit box.

    Nonnegative slack certifies exp(-(s^2+t^2) c7 (N-l)/N) as an upper bound
    for the (N-l)-th power of the scaled characteristic function.
    """
    if not (0 <= l <= spec.N):
        raise InvariantError(f"l must be in [0, N], got {l}")
    if projection is None:
        projection = project_y_prime(spec.joint)
    if c7 is None:
        c7 = estimate_c7(spec.joint, spec.eta0, grid, projection)
    s, t, s_scale, t_scale = _scaled_grids(spec, projection, grid)
    values = phi(spec.joint, s[:, None] / s_scale, t[None, :] / t_scale, projection)
    lhs = np.abs(values) ** (spec.N - l)
    bound = np.exp(-(s[:, None] ** 2 + t[None, :] ** 2) * c7 * (spec.N - l) / spec.N)
    return float((bound - lhs).min())


def check_dphi_bounds(spec: ExperimentSpec, grid: GridSpec = GridSpec(),
                      projection: ProjectionParams | None = None,
                      ) -> tuple[float, float]:
    """Worst slack of the two t-derivative envelopes over the audit box.

    The first-order bound is sigma_{Y'}/sqrt(N) (|s| + |t|); the second-order
    one refines it with the mixed third-moment ratios of the projected pair.
    Both are evaluated with the pair's exact moments.
    """
    if projection is None:
        projection = project_y_prime(spec.joint)
    s, t, s_scale, t_scale = _scaled_grids(spec, projection, grid)
    lhs = np.abs(phi_dt(spec.joint, s[:, None] / s_scale, t[None, :] / t_scale,
                        1, projection))
    mom = joint_moments(spec.joint)
    tau = projection.tau
    lam_x = mom.rho_x / mom.sigma_x**3
    lam_y = _residual_third_ratio(spec.joint, projection)
    sqrt_n = math.sqrt(spec.N)
    abs_s = np.abs(s)[:, None]
    abs_t = np.abs(t)[None, :]
    bound1 = tau / sqrt_n * (abs_s + abs_t)
    bound2 = tau / sqrt_n * abs_t + tau / spec.N * (
        abs_s**2 / 2.0 * lam_x ** (2.0 / 3.0) * lam_y ** (1.0 / 3.0)
        + abs_s * abs_t * lam_x ** (1.0 / 3.0) * lam_y ** (2.0 / 3.0)
        + abs_t**2 / 2.0 * lam_y)
    return float((bound1 - lhs).min()), float((bound2 - lhs).min())


def _residual_third_ratio(joint: JointLatticePMF,
                          projection: ProjectionParams) -> float:
    """rho_{Y'} / sigma_{Y'}^3 of the projected pair, by exact summation."""
    xs, ys, ws = joint.nonzero_points()
    resid = projection.residuals(xs, ys)
    rho = _fsum(ws * np.abs(resid) ** 3) / _fsum(ws)
    return rho / projection.tau**3


@dataclass(frozen=True)
class QRCheckResult:
    """Outcome of the inflated-derivative bound check.

    status is "skipped" when the third-moment ratios exceed the 12^{-3/2}
    gate at this N; that is an explicit precondition failure, not a bound
    violation.
    """

    status: str
    worst_slack: float
    l1: float
    l2: float


def check_qr_lemma(spec: ExperimentSpec, grid: GridSpec = GridSpec(),
                   projection: ProjectionParams | None = None) -> QRCheckResult:
    """Check the derivative bound for exp((s^2+t^2)/2) phi^N on its domain R.

    Evaluates d/dt [e^{(s^2+t^2)/2} phi^N(s/(sigma_X sqrt(N)), t/(sigma_Y'
    sqrt(N)))] exactly through phi and phi_dt and compares with
    161 (|s|+|t|+1)^3 (l1+l2) exp(11(s^2+t^2)/24) over R intersected with the
    audit box.
    """
    if projection is None:
        projection = project_y_prime(spec.joint)
    mom = joint_moments(spec.joint)
    sqrt_n = math.sqrt(spec.N)
    l1 = mom.rho_x / mom.sigma_x**3 / sqrt_n
    l2 = _residual_third_ratio(spec.joint, projection) / sqrt_n
    if l1 > QR_RATIO_GATE or l2 > QR_RATIO_GATE:
        return QRCheckResult("skipped", math.nan, l1, l2)
    s_lim = min(2.0 / 9.0 / l1 * (1 - 1e-12), math.pi * mom.sigma_x * sqrt_n)
    t_lim = min(2.0 / 9.0 / l2 * (1 - 1e-12), spec.eta0 * projection.tau * sqrt_n)
    s, t, s_scale, t_scale = _scaled_grids(spec, projection, grid, s_lim, t_lim)
    s_args = s[:, None] / s_scale
    t_args = t[None, :] / t_scale
    base = phi(spec.joint, s_args, t_args, projection)
    dbase = phi_dt(spec.joint, s_args, t_args, 1, projection)
    shell = np.exp((s[:, None] ** 2 + t[None, :] ** 2) / 2.0)
    deriv = shell * (t[None, :] * base**spec.N
                     + sqrt_n / projection.tau * base ** (spec.N - 1) * dbase)
    bound = (QR_CONSTANT * (np.abs(s)[:, None] + np.abs(t)[None, :] + 1.0) ** 3
             * (l1 + l2) * np.exp(11.0 / 24.0 * (s[:, None] ** 2 + t[None, :] ** 2)))
    return QRCheckResult("ok", float((bound - np.abs(deriv)).min()), l1, l2)
