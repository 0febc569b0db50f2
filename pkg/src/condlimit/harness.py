"""Experiment orchestration: rate sweeps over N-grids, Monte Carlo
cross-validation of the exact engine, rate-slope fits, and CSV emission.

Determinism contract: identical configuration and seed produce byte-identical
CSV output whatever the worker count.  Rows of an N-grid are independent and
computed with order-preserving maps; Monte Carlo batches each draw from their
own counter-based stream, so the accept/reject stream never depends on
scheduling.  The worker count is capped by the ``CONDLIMIT_THREADS``
environment variable.
"""

from __future__ import annotations

import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .distance import (affine_standardization, kolmogorov_distance,
                       moment_deviation, natural_standardization)
from .errors import IllConditionedError, InvariantError, MonteCarloError
from .fourier import DEFAULT_MAX_CELLS, ExperimentSpec, conditional_slice
from .lattice import LatticePMF
from .models import DEFAULT_TAIL_TOL, ModelSpec
from .rng import stream_rng

log = logging.getLogger(__name__)

CSV_HEADER = ("N,m,gamma_n,dist_affine,dist_natural,"
              "scaled_affine,scaled_natural,dev1,dev2,mc_accept_rate")

_MIN_MC_REPS = 10_000
_MC_PROPOSAL_FACTOR = 10


@dataclass(frozen=True)
class RunConfig:
    """Run-wide knobs, persistable in the line-oriented ``section.key = value``
    grammar (see ``parse_config`` / ``render_config``)."""

    tail_tol: float = DEFAULT_TAIL_TOL
    max_cells: int = DEFAULT_MAX_CELLS
    eta0: float = 1.0
    mc_reps: int = 0
    mc_seed: int = 0
    threads: int = 0  # 0 = CONDLIMIT_THREADS or all cores


_CONFIG_KEYS = {
    "engine.tail_tol": ("tail_tol", float),
    "engine.max_cells": ("max_cells", int),
    "audit.eta0": ("eta0", float),
    "mc.reps": ("mc_reps", int),
    "mc.seed": ("mc_seed", int),
    "run.threads": ("threads", int),
}


def parse_config(text: str) -> RunConfig:
    """Parse the ``section.key = value`` grammar; '#' starts a comment."""
    config = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or key not in _CONFIG_KEYS:
            raise InvariantError(f"config line {lineno}: cannot parse {raw!r}")
        field_name, caster = _CONFIG_KEYS[key]
        try:
            config = replace(config, **{field_name: caster(value)})
        except ValueError as exc:
            raise InvariantError(f"config line {lineno}: {exc}") from exc
    return config


def render_config(config: RunConfig) -> str:
    lines = []
    for key, (field_name, caster) in _CONFIG_KEYS.items():
        value = getattr(config, field_name)
        lines.append(f"{key} = {_format_number(value) if caster is float else value}")
    return "\n".join(lines) + "\n"


def worker_count(config: RunConfig | None = None) -> int:
    """Effective worker count: config, else CONDLIMIT_THREADS, else all cores."""
    if config is not None and config.threads > 0:
        return config.threads
    env = os.environ.get("CONDLIMIT_THREADS", "")
    if env.strip():
        n = int(env)
        if n < 1:
            raise InvariantError(f"CONDLIMIT_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RateRow:
    """Measured distances and moment deviations for one (N, m) configuration."""

    N: int
    m: int
    gamma_n: float
    dist_affine: float
    dist_natural: float
    scaled_affine: float
    scaled_natural: float
    dev1: float
    dev2: float
    mc_accept_rate: float | None = None

    def failed(self) -> bool:
        return math.isnan(self.dist_affine)


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log(distance) against log(N)."""

    slope: float
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class MCReport:
    accept_rate: float
    n_accepted: int
    n_proposals: int
    seed: int


def _choose_m(model: ModelSpec, joint, n_summands: int) -> int:
    """Preferred conditioning point, scanning +-3 lattice steps if needed."""
    from .fourier import prob_S_eq_m

    m0 = model.preferred_m(n_summands, joint)
    marg = joint.marginal_x()
    for delta in (0, 1, -1, 2, -2, 3, -3):
        if prob_S_eq_m(marg, n_summands, m0 + delta) > 0:
            return m0 + delta
    raise IllConditionedError(
        f"no reachable conditioning point within 3 lattice steps of {m0}")


def _rate_row(model: ModelSpec, joint, n_summands: int,
              config: RunConfig) -> RateRow:
    m = model.preferred_m(n_summands, joint)
    try:
        m = _choose_m(model, joint, n_summands)
        spec = ExperimentSpec(joint, n_summands, m, config.eta0)
        law = conditional_slice(joint, n_summands, m, config.max_cells)
    except IllConditionedError as exc:
        log.warning("N=%d: conditioning failed (%s); row marked failed",
                    n_summands, exc)
        nan = math.nan
        return RateRow(n_summands, m, nan, nan, nan, nan, nan, nan, nan)
    affine = kolmogorov_distance(law, affine_standardization(joint, n_summands, m),
                                 n_summands)
    natural = kolmogorov_distance(law, natural_standardization(law), n_summands)
    dev1, dev2 = moment_deviation(spec, law=law)
    accept = None
    if config.mc_reps:
        _, mc = mc_conditional_sample(spec, config.mc_reps, config.mc_seed,
                                      max_cells=config.max_cells)
        accept = mc.accept_rate
    return RateRow(
        N=n_summands, m=m, gamma_n=spec.gamma_n(),
        dist_affine=affine.distance, dist_natural=natural.distance,
        scaled_affine=affine.scaled, scaled_natural=natural.scaled,
        dev1=dev1, dev2=dev2, mc_accept_rate=accept,
    )


def run_rate_experiment(model: ModelSpec, n_grid: list[int],
                        config: RunConfig = RunConfig()) -> list[RateRow]:
    """One RateRow per N, in N order; conditioning failures yield NaN rows.

    Rows are independent and may evaluate in parallel; the output is ordered
    and byte-reproducible for any worker count.
    """
    if not n_grid:
        return []
    if sorted(n_grid) != list(n_grid) or len(set(n_grid)) != len(n_grid):
        raise InvariantError("N grid must be strictly increasing")
    joint, _ = model.build(config.tail_tol)
    workers = min(worker_count(config), len(n_grid))
    if workers == 1:
        return [_rate_row(model, joint, n, config) for n in n_grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda n: _rate_row(model, joint, n, config), n_grid))


def fit_rate(rows: list[RateRow]) -> dict[str, RateFit | None]:
    """OLS of log(distance) on log(N) for both standardisations.

    A fit is produced only when at least 4 rows carry a distance above 1e-13;
    degenerate inputs yield None for that standardisation.
    """
    out: dict[str, RateFit | None] = {}
    for kind in ("affine", "natural"):
        pts = [(row.N, getattr(row, f"dist_{kind}")) for row in rows
               if not row.failed() and getattr(row, f"dist_{kind}") > 1e-13]
        if len(pts) < 4:
            out[kind] = None
            continue
        logn = np.log([p[0] for p in pts])
        logd = np.log([p[1] for p in pts])
        slope, intercept = np.polyfit(logn, logd, 1)
        fitted = slope * logn + intercept
        ss_res = float(np.sum((logd - fitted) ** 2))
        ss_tot = float(np.sum((logd - logd.mean()) ** 2))
        r_sq = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
        out[kind] = RateFit(float(slope), float(intercept), r_sq)
    return out


def mc_conditional_sample(spec: ExperimentSpec, reps: int, seed: int,
                          max_cells: int = DEFAULT_MAX_CELLS,
                          ) -> tuple[LatticePMF, MCReport]:
    """Rejection sampling of the conditional law: draw N i.i.d. pairs, keep
    T_N whenever S_N = m.

    ``reps`` is the target number of accepted samples; the proposal budget is
    10x that, and zero acceptances within the budget abort with diagnostics.
    The acceptance rate estimates P(S_N = m).
    """
    if reps < _MIN_MC_REPS:
        raise InvariantError(f"reps must be >= {_MIN_MC_REPS}, got {reps}")
    joint = spec.joint
    ii, jj = np.nonzero(joint.weights)
    xs = (ii + joint.x_offset).astype(np.int64)
    ys = (jj + joint.y_offset).astype(np.int64)
    probs = joint.weights[ii, jj]
    cum = np.cumsum(probs / probs.sum())
    cum[-1] = 1.0

    n = spec.N
    t_lo, t_hi = n * int(ys.min()), n * int(ys.max())
    counts = np.zeros(t_hi - t_lo + 1, dtype=np.int64)
    accepted = 0
    proposals = 0
    budget = _MC_PROPOSAL_FACTOR * reps
    batch_size = max(1, min(reps, 2_000_000 // max(n, 1)))
    batch_index = 0
    while accepted < reps and proposals < budget:
        rng = stream_rng(seed, batch_index)
        batch_index += 1
        size = min(batch_size, budget - proposals)
        u = rng.random((size, n))
        idx = np.searchsorted(cum, u)
        keep = xs[idx].sum(axis=1) == spec.m
        t_vals = ys[idx[keep]].sum(axis=1)
        counts += np.bincount(t_vals - t_lo, minlength=counts.size)
        accepted += int(keep.sum())
        proposals += size
    if accepted == 0:
        raise MonteCarloError(
            f"no acceptances in {proposals} proposals; engine predicts "
            f"P(S_{n}={spec.m}) = {spec.p_s_eq_m:.3e}")
    law = LatticePMF.from_weights(t_lo, counts.astype(float) / accepted)
    return law, MCReport(accept_rate=accepted / proposals, n_accepted=accepted,
                         n_proposals=proposals, seed=seed)


def dkw_epsilon(n_samples: int, alpha: float = 0.001) -> float:
    """Half-width of the Dvoretzky-Kiefer-Wolfowitz band at confidence 1-alpha."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n_samples))


def empirical_cdf_sup_gap(empirical: LatticePMF, exact: LatticePMF) -> float:
    """sup over x of |F_empirical(x) - F_exact(x)| for two lattice laws.

    Both cdfs are right-continuous step functions constant between lattice
    points, so the supremum is attained at a support point of their union.
    """
    lo = min(empirical.offset, exact.offset)
    hi = max(empirical.offset + empirical.size, exact.offset + exact.size)
    grid = np.arange(lo, hi)

    def cdf_on(law: LatticePMF) -> np.ndarray:
        full = np.zeros(grid.size)
        start = law.offset - lo
        full[start : start + law.size] = law.weights
        return np.cumsum(full)

    return float(np.abs(cdf_on(empirical) - cdf_on(exact)).max())


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _format_number(x: float) -> str:
    return f"{x:.17g}"


def _row_line(row: RateRow) -> str:
    cells = [str(row.N), str(row.m)]
    cells += [_format_number(getattr(row, name)) for name in
              ("gamma_n", "dist_affine", "dist_natural", "scaled_affine",
               "scaled_natural", "dev1", "dev2")]
    cells.append("" if row.mc_accept_rate is None else _format_number(row.mc_accept_rate))
    return ",".join(cells)


def render_rate_csv(rows: list[RateRow]) -> str:
    """The rate CSV as a string: pinned header, 17-significant-digit floats."""
    return "\n".join([CSV_HEADER, *map(_row_line, rows)]) + "\n"


def emit_csv(payload, path) -> None:
    """Write a rate-row list (CSV) or a key-value report to ``path`` in UTF-8
    with UNIX newlines."""
    if hasattr(payload, "kv_lines"):
        text = "\n".join(payload.kv_lines()) + "\n"
    else:
        text = render_rate_csv(list(payload))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def parse_rate_csv(text_or_path) -> list[RateRow]:
    """Parse a rate CSV back into rows; exact inverse of ``render_rate_csv``."""
    if isinstance(text_or_path, str) and "\n" in text_or_path:
        fh = io.StringIO(text_or_path)
    else:
        fh = open(text_or_path, "r", encoding="utf-8")
    with fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise InvariantError("not a rate CSV: bad header")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != 10:
            raise InvariantError(f"bad rate CSV line: {line!r}")
        rows.append(RateRow(
            N=int(cells[0]), m=int(cells[1]),
            gamma_n=float(cells[2]), dist_affine=float(cells[3]),
            dist_natural=float(cells[4]), scaled_affine=float(cells[5]),
            scaled_natural=float(cells[6]), dev1=float(cells[7]),
            dev2=float(cells[8]),
            mc_accept_rate=None if cells[9] == "" else float(cells[9]),
        ))
    return rows


def render_law_csv(law: LatticePMF, comments: dict[str, float] | None = None) -> str:
    """CSV of a lattice law: columns t, prob, cdf; '#' comment lines first."""
    lines = [f"# {key} = {_format_number(value)}" for key, value in
             (comments or {}).items()]
    lines.append("t,prob,cdf")
    cdf = np.cumsum(law.weights)
    for t, p, c in zip(law.support(), law.weights, cdf):
        lines.append(f"{t},{_format_number(p)},{_format_number(c)}")
    return "\n".join(lines) + "\n"
