"""Standardisations of the conditioned sum and its distance to the normal law.

The Kolmogorov distance between a lattice law and the normal cdf is computed
exactly: the lattice cdf is a step function and the normal cdf is continuous
and increasing, so the supremum is attained at a jump point, approaching from
one side or the other.  Both one-sided gaps are evaluated at every support
point; no sampling grid is involved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateLawError, InvariantError
from .fourier import ExperimentSpec, conditional_slice
from .lattice import JointLatticePMF, LatticePMF, _fsum, joint_moments


class StandardizationKind(enum.Enum):
    AFFINE = "affine"      # center from the best affine predictor of T given S = m
    NATURAL = "natural"    # center/scale from the conditional law itself


@dataclass(frozen=True)
class Standardization:
    center: float
    scale: float
    kind: StandardizationKind

    def __post_init__(self):
        if not (self.scale > 0):
            raise DegenerateLawError(f"standardisation scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class DistanceReport:
    """Kolmogorov distance of a standardised lattice law to the normal law."""

    distance: float
    argmax_point: float
    N: int
    scaled: float

    def __post_init__(self):
        if not (0.0 <= self.distance <= 1.0):
            raise InvariantError(f"distance {self.distance} outside [0, 1]")


def normal_cdf(x):
    """Standard normal cdf, evaluated via erfc (absolute error <= 1e-15)."""
    return ndtr(x)


def affine_standardization(joint: JointLatticePMF, N: int, m: int) -> Standardization:
    """Center N*E[Y] + r*sigma_Y/sigma_X*(m - N*E[X]), scale sqrt(N)*tau.

    Refused when tau = 0 (Y an affine function of X): the conditioned sum is
    then deterministic and no normal approximation statement applies.
    """
    mom = joint_moments(joint)
    tau = math.sqrt(mom.tau_sq)
    if tau <= 0:
        raise DegenerateLawError(
            "tau = 0: Y is almost surely an affine function of X")
    center = N * mom.mean_y + mom.r * mom.sigma_y / mom.sigma_x * (m - N * mom.mean_x)
    return Standardization(center, math.sqrt(N) * tau, StandardizationKind.AFFINE)


def natural_standardization(law: LatticePMF) -> Standardization:
    """Center E[U], scale Var(U)^{1/2} of the conditional law itself."""
    mean, var = conditional_mean_var(law)
    if var <= 0:
        raise DegenerateLawError("conditional law is degenerate (zero variance)")
    return Standardization(mean, math.sqrt(var), StandardizationKind.NATURAL)


def kolmogorov_distance(law: LatticePMF, std: Standardization, N: int = 0) -> DistanceReport:
    """Exact sup over x of |P((U - center)/scale <= x) - Phi(x)|.

    Both the jump values F(x) and the left limits F(x-) are compared at every
    standardised support point; ties in the sup are broken towards the
    smaller x.  ``scaled`` is distance * sqrt(N) when N is given.
    """
    x = (law.support() - std.center) / std.scale
    cdf_after = np.cumsum(law.weights)
    cdf_before = cdf_after - law.weights
    gauss = normal_cdf(x)
    gap = np.maximum(np.abs(cdf_after - gauss), np.abs(cdf_before - gauss))
    best = int(np.argmax(gap))  # argmax returns the first (smallest x) maximiser
    distance = float(min(1.0, gap[best]))
    scaled = distance * math.sqrt(N) if N > 0 else 0.0
    return DistanceReport(distance=distance, argmax_point=float(x[best]),
                          N=N, scaled=scaled)


def conditional_mean_var(law: LatticePMF) -> tuple[float, float]:
    """Exact mean and variance by two-pass compensated summation."""
    mass = law.mass()
    xs = law.support().astype(float)
    mean = _fsum(law.weights * xs) / mass
    d = xs - mean
    var = _fsum(law.weights * d * d) / mass
    return mean, max(var, 0.0)


def moment_deviation(spec: ExperimentSpec, max_cells: int | None = None,
                     law: LatticePMF | None = None) -> tuple[float, float]:
    """Deviations of the conditional mean and variance from their affine targets.

    Returns ``(dev1, dev2)`` where dev1 = |E[U] - N E[Y] - r sigma_Y/sigma_X
    (m - N E[X])| and dev2 = |Var(U) - N tau^2| / sqrt(N).  Both are bounded
    by constants (d1, d2 of the constant calculator) uniformly in N.  Callers
    that already hold the conditional law may pass it to skip the transform.
    """
    if spec.N < 3:
        raise InvariantError(f"moment deviations require N >= 3, got {spec.N}")
    if law is None:
        kwargs = {} if max_cells is None else {"max_cells": max_cells}
        law = conditional_slice(spec.joint, spec.N, spec.m, **kwargs)
    mean_u, var_u = conditional_mean_var(law)
    mom = joint_moments(spec.joint)
    target = spec.N * mom.mean_y \
        + mom.r * mom.sigma_y / mom.sigma_x * (spec.m - spec.N * mom.mean_x)
    dev1 = abs(mean_u - target)
    dev2 = abs(var_u - spec.N * mom.tau_sq) / math.sqrt(spec.N)
    return dev1, dev2
