"""Classical conditioned-sum models and their brute-force oracles.

Five model families are provided as joint lattice laws (X integer-valued,
Y the per-summand statistic), each conditioned downstream on the total
S_N = m:

* occupancy: X ~ Poisson(lambda), Y = 1{X = 0} (empty urns among N);
* bose: X ~ Geometric on {0, 1, ...}, Y = f(X) (Bose-Einstein urn statistics);
* branching: X a mean-one offspring law, Y = 1{X = K} (progeny conditioning);
* forest: X ~ Borel(mu), Y = 1{X = K} (tree sizes of a random rooted forest);
* hashing: X ~ Borel(mu), Y | {X = l} the total displacement of l - 1 balls
  sequentially hashed into l circular urns with clockwise probing.

Each conditioning identity has an independent oracle: exact counting for
occupancy, exhaustive composition enumeration for Bose-Einstein, exhaustive
weighted sequence enumeration for branching, and exhaustive/Monte Carlo
displacement tables for hashing.  Counting oracles run in exact integer
arithmetic (see the occupancy oracle) rather than floating log-space, so
they carry no cancellation error at all.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import ModelSpecError
from .lattice import JointLatticePMF, LatticePMF, _validate_tail_tol, moments, truncate
from .rng import stream_rng

DEFAULT_TAIL_TOL = 1e-12
_BRANCHING_TAIL_TOL = 1e-14  # keeps the truncated Poisson(1) mean within 1e-12 of 1
_MIN_MC_SAMPLES = 10_000
_MAX_ENUM_URNS = 8
_MAX_COMPOSITIONS = 10_000_000


# ---------------------------------------------------------------------------
# parametric families
# ---------------------------------------------------------------------------

def poisson_pmf(lam: float, tail_tol: float = DEFAULT_TAIL_TOL) -> LatticePMF:
    """Poisson(lambda) truncated to the given tail tolerance."""
    if not (lam > 0):
        raise ModelSpecError(f"lambda must be > 0, got {lam}")
    return truncate(stats.poisson(lam), tail_tol)


def geometric_pmf(p: float, tail_tol: float = DEFAULT_TAIL_TOL) -> LatticePMF:
    """Geometric law on {0, 1, 2, ...} with P(X = k) = p * (1-p)^k.

    The support starts at 0 so that urn counts are nonnegative and the total
    S_N = m is attainable for every m >= 0.
    """
    if not (0 < p < 1):
        raise ModelSpecError(f"p must be in (0, 1), got {p}")
    return truncate(stats.geom(p, loc=-1), tail_tol)


def borel_pmf(mu: float, tail_tol: float = DEFAULT_TAIL_TOL) -> LatticePMF:
    """Borel law P(X = l) = exp(-mu*l) (mu*l)^(l-1) / l! on {1, 2, ...}.

    This is the total-progeny law of a Poisson(mu) branching process;
    subcritical mu < 1 makes the total mass 1.  Terms are evaluated in log
    space to survive large l.
    """
    if not (0 < mu < 1):
        raise ModelSpecError(f"mu must be in (0, 1), got {mu}")
    _validate_tail_tol(tail_tol)
    weights: list[float] = []
    log_mu = math.log(mu)
    l = 1
    while True:
        log_p = -mu * l + (l - 1) * (log_mu + math.log(l)) - math.lgamma(l + 1)
        weights.append(math.exp(log_p))
        if 1.0 - math.fsum(weights) <= tail_tol:
            break
        l += 1
        if l > 200_000:
            raise ModelSpecError(f"Borel series for mu={mu} converges too slowly")
    defect = max(0.0, 1.0 - math.fsum(weights))
    return LatticePMF.from_weights(1, np.asarray(weights), defect)


# ---------------------------------------------------------------------------
# joint builders: Y as a function of X
# ---------------------------------------------------------------------------

def mapped_joint(pmf_x: LatticePMF, f) -> JointLatticePMF:
    """Joint law of (X, f(X)) for an integer-valued map f."""
    ys = np.array([int(f(int(k))) for k in pmf_x.support()])
    y_lo, y_hi = int(ys.min()), int(ys.max())
    weights = np.zeros((pmf_x.size, y_hi - y_lo + 1))
    weights[np.arange(pmf_x.size), ys - y_lo] = pmf_x.weights
    return JointLatticePMF.from_weights(pmf_x.offset, y_lo, weights, pmf_x.defect)


def indicator_joint(pmf_x: LatticePMF, level: int) -> JointLatticePMF:
    """Joint law of (X, 1{X = level})."""
    return mapped_joint(pmf_x, lambda k: 1 if k == level else 0)


def identity_joint(pmf_x: LatticePMF) -> JointLatticePMF:
    """Joint law of (X, X); the affine-degenerate statistic."""
    return mapped_joint(pmf_x, lambda k: k)


def occupancy_joint(lam: float, tail_tol: float = DEFAULT_TAIL_TOL) -> JointLatticePMF:
    """X ~ Poisson(lambda), Y = 1{X = 0}: the empty-urn indicator pair."""
    return indicator_joint(poisson_pmf(lam, tail_tol), 0)


# ---------------------------------------------------------------------------
# hashing with linear probing
# ---------------------------------------------------------------------------

def _probe_batch(urns: int, hashes: np.ndarray) -> np.ndarray:
    """Total displacement per row of hash sequences (rows, balls).

    Each ball probes clockwise from its hash to the first empty urn; the
    returned total counts the moves.  Vectorised over rows.
    """
    rows, balls = hashes.shape
    occupied = np.zeros((rows, urns), dtype=bool)
    disp = np.zeros(rows, dtype=np.int64)
    row_idx = np.arange(rows)
    for b in range(balls):
        pos = hashes[:, b].astype(np.int64).copy()
        stuck = np.flatnonzero(occupied[row_idx, pos])
        while stuck.size:
            pos[stuck] = (pos[stuck] + 1) % urns
            disp[stuck] += 1
            stuck = stuck[occupied[stuck, pos[stuck]]]
        occupied[row_idx, pos] = True
    return disp


def displacement_enumerate(l: int) -> LatticePMF:
    """Exact law of the total displacement of l - 1 balls in l circular urns.

    Enumerates all l^(l-1) hash sequences, so l is capped at 8.
    """
    if not (1 <= l <= _MAX_ENUM_URNS):
        raise ModelSpecError(f"l must be in [1, {_MAX_ENUM_URNS}], got {l}")
    balls = l - 1
    if balls == 0:
        return LatticePMF(0, np.array([1.0]))
    grids = np.meshgrid(*([np.arange(l)] * balls), indexing="ij")
    hashes = np.stack([g.ravel() for g in grids], axis=1)
    disp = _probe_batch(l, hashes)
    counts = np.bincount(disp, minlength=1).astype(float)
    return LatticePMF.from_weights(0, counts / float(l**balls))


def hashing_simulate(m: int, n: int, seed: int = 0,
                     rng: np.random.Generator | None = None) -> int:
    """One draw of the total displacement of n balls hashed into m circular urns."""
    if not (0 <= n < m):
        raise ModelSpecError(f"need 0 <= n < m, got n={n}, m={m}")
    if n == 0:
        return 0
    if rng is None:
        rng = stream_rng(seed)
    hashes = rng.integers(0, m, size=(1, n))
    return int(_probe_batch(m, hashes)[0])


@dataclass(frozen=True)
class HashingBuildReport:
    """Provenance of a hashing joint: which rows are exact, and the MC error budget."""

    approximate: bool
    conditioned_at: int | None
    max_standard_error: float
    row_standard_errors: dict[int, float]


def hashing_joint(mu: float, l_exact_max: int = 8, mc_samples: int = 0,
                  seed: int = 0, tail_tol: float = DEFAULT_TAIL_TOL,
                  ) -> tuple[JointLatticePMF, HashingBuildReport]:
    """Joint law of (block length, block displacement sum) for linear probing.

    X is Borel(mu); Y given {X = l} is the displacement total of l - 1 balls
    in l circular urns.  Rows with l <= l_exact_max use the exact enumeration;
    with ``mc_samples`` > 0, rows above use Monte Carlo histograms and the
    joint is flagged approximate with per-atom standard errors.  With
    ``mc_samples`` = 0 the Borel law is conditioned on {X <= l_exact_max}
    (renormalised), so every row is exact.
    """
    if not (1 <= l_exact_max <= _MAX_ENUM_URNS):
        raise ModelSpecError(f"l_exact_max must be in [1, {_MAX_ENUM_URNS}]")
    if mc_samples != 0 and mc_samples < _MIN_MC_SAMPLES:
        raise ModelSpecError(
            f"mc_samples must be 0 (exact rows only) or >= {_MIN_MC_SAMPLES}")
    borel = borel_pmf(mu, tail_tol)
    if mc_samples == 0:
        keep = min(l_exact_max, borel.offset + borel.size - 1)
        w = borel.weights[: keep - borel.offset + 1]
        x_weights = w / math.fsum(w.tolist())
        x_support = range(1, keep + 1)
        defect = 0.0
    else:
        x_weights = borel.weights
        x_support = range(borel.offset, borel.offset + borel.size)
        defect = borel.defect

    x_support = list(x_support)
    max_disp = max(l * (l - 1) // 2 for l in x_support)
    weights = np.zeros((len(x_support), max_disp + 1))
    row_se: dict[int, float] = {}
    for i, l in enumerate(x_support):
        mass = x_weights[i]
        if l <= l_exact_max:
            row = displacement_enumerate(l)
            weights[i, row.offset : row.offset + row.size] = mass * row.weights
        else:
            rng = stream_rng(seed, l)
            hashes = rng.integers(0, l, size=(mc_samples, l - 1))
            disp = _probe_batch(l, hashes)
            hist = np.bincount(disp, minlength=max_disp + 1).astype(float) / mc_samples
            weights[i, : hist.size] = mass * hist
            phat = hist[hist > 0]
            row_se[l] = float(mass * np.sqrt(phat * (1 - phat) / mc_samples).max())
    joint = JointLatticePMF.from_weights(x_support[0], 0, weights, defect)
    report = HashingBuildReport(
        approximate=bool(row_se),
        conditioned_at=None if mc_samples else l_exact_max,
        max_standard_error=max(row_se.values(), default=0.0),
        row_standard_errors=row_se,
    )
    return joint, report


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def _surjections(m: int, k: int) -> int:
    """Number of ways to place m labelled balls onto k urns leaving none empty."""
    return sum((-1) ** i * math.comb(k, i) * (k - i) ** m for i in range(k + 1))


def occupancy_oracle(m: int, n_urns: int) -> LatticePMF:
    """Exact law of the number of empty urns after m uniform throws into n urns.

    Counts placements with exactly j empty urns in exact integer arithmetic
    (binomial times surjection counts over n^m equally likely placements),
    entirely independent of the Poisson-conditioning route.
    """
    if n_urns < 1 or m < 0:
        raise ModelSpecError(f"need n_urns >= 1 and m >= 0, got {n_urns}, {m}")
    total = n_urns**m
    weights = np.zeros(n_urns + 1)
    for j in range(n_urns + 1):
        count = math.comb(n_urns, j) * _surjections(m, n_urns - j)
        if count:
            weights[j] = float(Fraction(count, total))
    return LatticePMF.from_weights(0, weights)


def _compositions(total: int, parts: int):
    """Yield all weak compositions of ``total`` into ``parts`` nonnegative parts."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def bose_einstein_oracle(m: int, n_urns: int, f=None,
                         statistic: str = "sum") -> LatticePMF:
    """Law of a statistic of urn counts under uniform indistinguishable placement.

    All C(m + n - 1, m) weak compositions of m balls into n urns are equally
    likely.  ``statistic`` is "sum" for f(Z_1) + ... + f(Z_n) or "first" for
    f(Z_1) alone (the single-urn law).  Exhaustive and exact.
    """
    if n_urns < 1 or m < 0:
        raise ModelSpecError(f"need n_urns >= 1 and m >= 0, got {n_urns}, {m}")
    if statistic not in ("sum", "first"):
        raise ModelSpecError(f"unknown statistic {statistic!r}")
    n_cases = math.comb(m + n_urns - 1, m)
    if n_cases > _MAX_COMPOSITIONS:
        raise ModelSpecError(f"{n_cases} compositions exceed the enumeration cap")
    if f is None:
        f = lambda z: z
    counts: dict[int, int] = {}
    for comp in _compositions(m, n_urns):
        value = f(comp[0]) if statistic == "first" else sum(f(z) for z in comp)
        counts[value] = counts.get(value, 0) + 1
    lo, hi = min(counts), max(counts)
    weights = np.zeros(hi - lo + 1)
    for value, count in counts.items():
        weights[value - lo] = float(Fraction(count, n_cases))
    return LatticePMF.from_weights(lo, weights)


@dataclass(frozen=True)
class BranchingEquivalenceReport:
    """Total-variation gap between progeny-style and plain sum conditioning."""

    tv_gap: float
    n_plain: int
    n_ballot: int
    p_plain: float
    p_ballot: float


def branching_oracle(offspring: LatticePMF, n_steps: int) -> BranchingEquivalenceReport:
    """Compare two conditionings of an offspring sequence (x_1, ..., x_N).

    Plain conditioning keeps sequences with S_N = N - 1; ballot conditioning
    additionally requires S_k >= k for every k < N (the total-progeny event).
    The law of the sorted multiset {x_1, ..., x_N} is identical under both,
    because exactly one rotation of each admissible sequence satisfies the
    ballot condition; the report's tv_gap measures this numerically.
    """
    if not (1 <= n_steps <= 8):
        raise ModelSpecError(f"n_steps must be in [1, 8], got {n_steps}")
    target = n_steps - 1
    support = [int(k) for k in offspring.support() if 0 <= k <= target]
    probs = {k: offspring.prob(k) for k in support}
    plain: dict[tuple, float] = {}
    ballot: dict[tuple, float] = {}
    n_plain = n_ballot = 0

    def walk(pos: int, total: int, weight: float, ballot_ok: bool, prefix: list[int]):
        nonlocal n_plain, n_ballot
        if pos == n_steps:
            if total != target:
                return
            key = tuple(sorted(prefix))
            plain[key] = plain.get(key, 0.0) + weight
            n_plain += 1
            if ballot_ok:
                ballot[key] = ballot.get(key, 0.0) + weight
                n_ballot += 1
            return
        for k in support:
            if total + k > target:
                continue
            ok = ballot_ok and (pos == n_steps - 1 or total + k >= pos + 1)
            walk(pos + 1, total + k, weight * probs[k], ok, prefix + [k])

    walk(0, 0, 1.0, True, [])
    p_plain = math.fsum(plain.values())
    p_ballot = math.fsum(ballot.values())
    if p_plain == 0.0 or p_ballot == 0.0:
        raise ModelSpecError("conditioning event has zero probability")
    keys = set(plain) | set(ballot)
    tv = 0.5 * math.fsum(abs(plain.get(k, 0.0) / p_plain - ballot.get(k, 0.0) / p_ballot)
                         for k in keys)
    return BranchingEquivalenceReport(tv, n_plain, n_ballot, p_plain, p_ballot)


# ---------------------------------------------------------------------------
# model specifications
# ---------------------------------------------------------------------------

_KINDS = ("occupancy", "bose", "branching", "forest", "hashing")
_OFFSPRING = ("poisson1", "uniform02", "binom2")


@dataclass(frozen=True)
class ModelSpec:
    """A parsed model configuration: which family, with which parameters.

    The statistic Y is an indicator 1{X = level} for all kinds except
    bose with f="identity" (Y = X) and hashing (Y = displacement).
    """

    kind: str
    lam: float = 1.0
    p: float = 0.5
    mu: float = 0.5
    level: int = 0
    f: str = "indicator"
    offspring: str = "poisson1"
    lmax: int = 8
    mc: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelSpecError(f"unknown model kind {self.kind!r}")
        if self.kind == "occupancy" and not (self.lam > 0):
            raise ModelSpecError(f"lambda must be > 0, got {self.lam}")
        if self.kind == "bose":
            if not (0 < self.p < 1):
                raise ModelSpecError(f"p must be in (0, 1), got {self.p}")
            if self.f not in ("identity", "indicator"):
                raise ModelSpecError(f"bose statistic must be identity or eq<K>, got {self.f!r}")
        if self.kind in ("forest", "hashing") and not (0 < self.mu < 1):
            raise ModelSpecError(f"mu must be in (0, 1), got {self.mu}")
        if self.kind == "branching" and self.offspring not in _OFFSPRING:
            raise ModelSpecError(f"unknown offspring law {self.offspring!r}")
        if self.level < 0:
            raise ModelSpecError(f"indicator level must be >= 0, got {self.level}")

    def build(self, tail_tol: float = DEFAULT_TAIL_TOL,
              ) -> tuple[JointLatticePMF, HashingBuildReport | None]:
        """Construct the joint lattice law of the pair (X, Y) for this model."""
        if self.kind == "occupancy":
            return occupancy_joint(self.lam, tail_tol), None
        if self.kind == "bose":
            pmf = geometric_pmf(self.p, tail_tol)
            if self.f == "identity":
                return identity_joint(pmf), None
            return indicator_joint(pmf, self.level), None
        if self.kind == "branching":
            pmf = offspring_pmf(self.offspring, min(tail_tol, _BRANCHING_TAIL_TOL))
            return indicator_joint(pmf, self.level), None
        if self.kind == "forest":
            return indicator_joint(borel_pmf(self.mu, tail_tol), self.level), None
        return hashing_joint(self.mu, self.lmax, self.mc, self.seed, tail_tol)

    def preferred_m(self, n_summands: int, joint: JointLatticePMF) -> int:
        """Conditioning point: N - 1 for branching (total progeny N), else
        round(N * E[X]) of the truncated marginal."""
        if self.kind == "branching":
            return n_summands - 1
        mean_x, _, _ = moments(joint.marginal_x())
        return int(round(n_summands * mean_x))


def offspring_pmf(name: str, tail_tol: float = _BRANCHING_TAIL_TOL) -> LatticePMF:
    """Mean-one offspring laws accepted by the branching model."""
    if name == "poisson1":
        pmf = poisson_pmf(1.0, tail_tol)
    elif name == "uniform02":
        pmf = LatticePMF(0, np.array([0.5, 0.0, 0.5]))
    elif name == "binom2":
        pmf = LatticePMF(0, np.array([0.25, 0.5, 0.25]))
    else:
        raise ModelSpecError(f"unknown offspring law {name!r}")
    mean, _, _ = moments(pmf)
    if abs(mean - 1.0) > 1e-12:
        raise ModelSpecError(f"offspring mean {mean!r} is not 1 within 1e-12")
    return pmf


def parse_model_spec(text: str) -> ModelSpec:
    """Parse the CLI model grammar, e.g. ``occupancy:lambda=1.0`` or
    ``hashing:mu=0.5,lmax=8,mc=100000``.

    Bose statistics: ``f=identity`` or ``f=eq<K>`` (the indicator of level K).
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    if kind not in _KINDS:
        raise ModelSpecError(f"unknown model kind {kind!r} in {text!r}")
    spec = ModelSpec(kind=kind)
    if not rest:
        return spec
    for item in rest.split(","):
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ModelSpecError(f"malformed parameter {item!r} in {text!r}")
        try:
            if key == "lambda":
                spec = replace(spec, lam=float(value))
            elif key == "p":
                spec = replace(spec, p=float(value))
            elif key == "mu":
                spec = replace(spec, mu=float(value))
            elif key == "K":
                spec = replace(spec, level=int(value))
            elif key == "f":
                if value == "identity":
                    spec = replace(spec, f="identity")
                elif value.startswith("eq"):
                    spec = replace(spec, f="indicator", level=int(value[2:]))
                else:
                    raise ModelSpecError(f"bose statistic must be identity or eq<K>, got {value!r}")
            elif key == "offspring":
                spec = replace(spec, offspring=value)
            elif key == "lmax":
                spec = replace(spec, lmax=int(value))
            elif key == "mc":
                spec = replace(spec, mc=int(value))
            elif key == "seed":
                spec = replace(spec, seed=int(value))
            else:
                raise ModelSpecError(f"unknown parameter {key!r} for model {kind!r}")
        except ValueError as exc:
            raise ModelSpecError(f"bad value in {item!r}: {exc}") from exc
    return spec
