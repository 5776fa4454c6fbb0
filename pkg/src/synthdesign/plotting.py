"""Figures written next to the CSV reports: power curves, RMSE bars, design scatter.

SVG output is made byte-stable: no date metadata and a fixed hash salt for
element ids.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "synthdesign",
    "svg.fonttype": "none",
}

MARKERS = {"per-unit": "o", "two-way": "s", "one-way": "^", "sc-random": "v", "dim-random": "x"}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    meta = {"Date": None} if fmt in ("svg", "pdf") else None
    if fmt == "png":
        meta = {"Software": None}
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def plot_power_curves(power_rows: list[dict], path, alpha: float = 0.1) -> None:
    """Rejection rate against true ATET, one panel per permutation scheme."""
    schemes = sorted({r["scheme"] for r in power_rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(schemes), figsize=(3.4 * len(schemes), 2.8), sharey=True, squeeze=False)
        for ax, scheme in zip(axes[0], schemes):
            rows = [r for r in power_rows if r["scheme"] == scheme]
            for method in dict.fromkeys(r["method"] for r in rows):
                pts = sorted((r["atet"], r["rejection_rate"]) for r in rows if r["method"] == method)
                x, y = zip(*pts)
                ax.plot(x, y, marker=MARKERS.get(method, "."), ms=4, lw=1, label=method)
            ax.axhline(alpha, color="0.6", lw=0.6, ls="--")
            ax.set_title(f"{scheme} permutations")
            ax.set_xlabel("true ATET")
            ax.set_ylim(-0.02, 1.02)
        axes[0][0].set_ylabel("rejection rate")
        axes[0][-1].legend(frameon=False, loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_rmse(rmse_rows: list[dict], path) -> None:
    """Grouped bars of ATET and unit-level RMSE (x 1e3) per method, one panel per effect mode."""
    modes = list(dict.fromkeys(r["effect_mode"] for r in rmse_rows))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(modes), figsize=(3.6 * len(modes), 2.8), sharey=True, squeeze=False)
        for ax, mode in zip(axes[0], modes):
            rows = [r for r in rmse_rows if r["effect_mode"] == mode]
            x = np.arange(len(rows))
            ax.bar(x - 0.2, [1e3 * r["atet_rmse"] for r in rows], 0.4, label="ATET")
            ax.bar(x + 0.2, [1e3 * r["unit_rmse"] for r in rows], 0.4, label="unit-level")
            ax.set_xticks(x, [r["method"] for r in rows], rotation=30, ha="right")
            ax.set_title(f"{mode}, K={rows[0]['K']}")
        axes[0][0].set_ylabel(r"RMSE $\times 10^3$")
        axes[0][-1].legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_design(pre: np.ndarray, D, path, title: str = "") -> None:
    """Units in the plane of their first two pre-period outcomes; '+' treated, 'o' control."""
    pre = np.asarray(pre, dtype=float)
    D = np.asarray(D) != 0
    x = pre[:, 0]
    y = pre[:, 1] if pre.shape[1] > 1 else np.zeros_like(x)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.scatter(x[~D], y[~D], marker="o", facecolors="none", edgecolors="k", s=22, lw=0.8, label="control")
        ax.scatter(x[D], y[D], marker="+", c="C3", s=40, lw=1.2, label="treated")
        ax.set_xlabel("period 1 outcome")
        ax.set_ylabel("period 2 outcome")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
