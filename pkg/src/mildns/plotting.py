"""Report figures.  PNGs are written without timestamps so reruns are byte-identical."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import NullFormatter  # noqa: E402

golden = (math.sqrt(5) - 1.0) / 2.0
fig_width = 4.5

params = {
    "figure.figsize": (fig_width, fig_width * golden),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "lines.markersize": 3.5,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.subplot.left": 0.15,
    "figure.subplot.bottom": 0.16,
    "figure.subplot.right": 0.96,
    "figure.subplot.top": 0.92,
}


def _save(fig, path: Path) -> Path:
    for ax in fig.axes:
        for axis, scale in ((ax.xaxis, ax.get_xscale()), (ax.yaxis, ax.get_yscale())):
            if scale == "log":
                axis.set_minor_formatter(NullFormatter())
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _figure(title: str):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
    ax.set_title(title)
    return fig, ax


def kernel_decay(path: Path, radii, decay_ratio, label: str) -> Path:
    with plt.rc_context(params):
        fig, ax = _figure("kernel decay")
        order = np.argsort(radii)
        ax.semilogx(np.asarray(radii)[order], np.asarray(decay_ratio)[order], "o-", label=label)
        ax.set_xlabel("|x|")
        ax.set_ylabel(r"$|K_t(x)|\,(t^{(d+s+1)/2}+|x|^{d+s+1})$")
        ax.legend()
        return _save(fig, path)


def scaling(path: Path, probes) -> Path:
    """Log-log ratio against horizon, one line per probe, with the expected slope."""
    with plt.rc_context(params):
        fig, ax = _figure("bilinear ratio vs horizon")
        for pr in probes:
            T, r = np.asarray(pr.T), np.asarray(pr.ratio)
            ax.loglog(T, r, "o-", label=f"{pr.kind}: fit {pr.slope:.3f}")
            ax.loglog(T, r[0] * (T / T[0]) ** pr.expected_slope, "k:", lw=0.8)
        ax.set_xlabel("T")
        ax.set_ylabel("ratio")
        ax.legend()
        return _save(fig, path)


def threshold(path: Path, table) -> Path:
    with plt.rc_context(params):
        fig, ax = _figure(f"convergence vs {table.key}")
        x = np.array([r[0] for r in table.rows])
        lhs = np.array([r[1] for r in table.rows])
        ok = np.array([bool(r[3]) for r in table.rows])
        ax.loglog(x, lhs, "-", color="0.6")
        ax.loglog(x[ok], lhs[ok], "o", label="converged")
        ax.loglog(x[~ok], lhs[~ok], "x", label="not converged")
        ax.set_xlabel(table.key)
        ax.set_ylabel("smallness LHS (variant 1)")
        ax.legend()
        return _save(fig, path)


def contraction(path: Path, report) -> Path:
    with plt.rc_context(params):
        fig, ax = _figure("Picard iterates")
        its = [it for it in report.iterates if it["distance"]]
        if its:
            ax.semilogy([it["iteration"] for it in its], [it["distance"] for it in its], "o-",
                        label="G-distance")
        ax.set_xlabel("iteration")
        ax.set_ylabel("distance")
        ax.legend()
        return _save(fig, path)


def equivalence(path: Path, seeds, ratios, label: str) -> Path:
    with plt.rc_context(params):
        fig, ax = _figure("norm ratio over seeds")
        ax.plot(seeds, ratios, "o", label=label)
        ax.set_xlabel("seed")
        ax.set_ylabel("ratio")
        ax.legend()
        return _save(fig, path)
