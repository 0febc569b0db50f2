"""Figure rendering for the rate-experiment report path.

Figures are written to files next to the delimited output; the format follows
the file extension (``.svg`` for the CLI's --svg flag).
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import RateRow  # noqa: E402


def render_rate_figure(rows: list[RateRow], path: str, title: str = "") -> str:
    """Log-log plot of both normal-approximation distances against N.

    A reference line with slope -1/2, anchored at the first finite point,
    shows the expected decay.  Returns the written path.
    """
    good = [r for r in rows if not r.failed()]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if good:
        ns = [r.N for r in good]
        ax.loglog(ns, [r.dist_affine for r in good], "o-", label="affine")
        ax.loglog(ns, [r.dist_natural for r in good], "s--", label="natural")
        anchor = good[0]
        ref = [anchor.dist_affine * math.sqrt(anchor.N / n) for n in ns]
        ax.loglog(ns, ref, ":", color="grey", label=r"$N^{-1/2}$ reference")
    ax.set_xlabel("N")
    ax.set_ylabel("Kolmogorov distance")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
