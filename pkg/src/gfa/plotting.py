"""PNG figures for the measurement subcommands (matplotlib, Agg backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 11,
    "axes.labelsize": 12,
    "axes.titlesize": 12,
    "axes.linewidth": 0.8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "legend.frameon": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "gfa",
    "path.simplify": False,
}


def new_figure(width: float = 6.0, height: float | None = None):
    """Figure and axes with the package's plot style applied."""
    golden = (math.sqrt(5) - 1.0) / 2.0
    if height is None:
        height = width * golden
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    for k in ("top", "right"):
        ax.spines[k].set_visible(False)
    return fig, ax


def save(fig, path) -> None:
    with plt.rc_context(_RC):
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_hit_probabilities(stats, path, title: str = "") -> None:
    fig, ax = new_figure()
    p = stats.p_hat
    ids = np.arange(p.size)
    err = np.vstack([p - stats.wilson_low, stats.wilson_high - p])
    ax.bar(ids, p, color="#3b518b", width=0.8)
    ax.errorbar(ids, p, yerr=err, fmt="none", ecolor="k", elinewidth=0.6, capsize=1.5)
    ax.set_xlabel("particle id")
    ax.set_ylabel(r"$\hat p_i$")
    ax.set_title(title or f"{stats.total_samples} launches, R = {stats.start_radius:g}")
    save(fig, path)


def plot_beurling(rows, path) -> None:
    fig, ax = new_figure()
    n = np.array([r.n for r in rows], dtype=np.float64)
    p = np.array([r.max_p_hat for r in rows])
    lo = np.array([r.wilson_low for r in rows])
    hi = np.array([r.wilson_high for r in rows])
    ax.errorbar(n, p, yerr=[p - lo, hi - p], fmt="o-", color="#21908d", capsize=2)
    if n.size:
        ax.plot(n, p[0] * np.sqrt(n[0] / n), "k--", lw=0.8, label=r"$\propto n^{-1/2}$")
        ax.legend()
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(r"$\max_i \hat p_i$")
    save(fig, path)


def plot_arcs(report, path) -> None:
    fig, ax = new_figure()
    counts = report.counts
    top = max(int(counts.max()) if counts.size else 0, 7)
    ax.hist(counts, bins=np.arange(-0.5, top + 1.5), color="#5cc863", edgecolor="k", lw=0.5)
    ax.axvline(6.5, color="#d62728", ls="--", lw=0.8)
    ax.set_xlabel("arcs per particle")
    ax.set_ylabel("particles")
    ax.set_title(f"grid {report.grid_size}, max {report.max_arcs}")
    save(fig, path)


def plot_radius(rows, path) -> None:
    fig, ax = new_figure()
    r = np.array([row.r_from for row in rows])
    tv = np.array([row.tv for row in rows])
    lo = np.array([row.ci_low for row in rows])
    hi = np.array([row.ci_high for row in rows])
    ax.errorbar(r, tv, yerr=[np.maximum(tv - lo, 0), np.maximum(hi - tv, 0)], fmt="o-", color="#3b518b",
                capsize=2, label="TV(R, next R)")
    ax.plot(r, [row.bound for row in rows], "k--", lw=0.8, label="10 n / R")
    ax.set_xscale("log")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.set_xlabel("R")
    ax.set_ylabel("total variation")
    ax.legend()
    save(fig, path)


def plot_exponent(fit, path, traces=None) -> None:
    fig, ax = new_figure()
    grid = np.asarray(fit.n_grid, dtype=np.float64)
    for t in traces or []:
        d = np.asarray(getattr(t, "diam", t))
        ax.plot(np.arange(1, d.size + 1), d, color="0.75", lw=0.5)
    ax.plot(grid, fit.median_diam, "o", color="#21908d", ms=3, label="median diam")
    ax.plot(grid, np.exp(fit.intercept) * grid ** fit.slope, "k-", lw=0.9, label=f"slope {fit.slope:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlim(grid.min() / 1.2, grid.max() * 1.2)
    ax.set_xlabel("n")
    ax.set_ylabel("diam")
    ax.legend()
    save(fig, path)


def plot_epsdisk(result, path) -> None:
    fig, ax = new_figure(4.0)
    ax.errorbar([0], [result.p_hat], yerr=[[result.p_hat - result.wilson_low],
                                            [result.wilson_high - result.p_hat]], fmt="o", capsize=3)
    ax.set_xticks([])
    ax.set_ylabel("P(enter ball first)")
    ax.set_title(f"{result.hits}/{result.samples}")
    save(fig, path)
