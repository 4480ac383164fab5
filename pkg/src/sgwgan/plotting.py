"""Figures written next to the delimited outputs (PNG, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}
# fixed metadata keeps repeated renders byte-identical
PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)


def plot_losses(rows: list[dict], path) -> None:
    """One panel per generator term plus the weighted total, against generator step."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, sharex=True)
        steps = np.array([r["step"] for r in rows], dtype=float)
        for ax, key, title in zip(
            axes.ravel(),
            ("rmse_term", "sgw_term", "adv_term", "total_generator"),
            ("squared-error anchor", "SGW$^2$", "adversarial", "weighted total"),
        ):
            vals = np.array([float(r[key]) for r in rows])
            if len(steps):
                ax.plot(steps, vals, lw=0.8)
                if key in ("rmse_term", "sgw_term") and np.all(vals > 0):
                    ax.set_yscale("log")
            ax.set_title(title)
        for ax in axes[1]:
            ax.set_xlabel("generator step")
        _save(fig, path)


def plot_convergence(levels, means, sds, path) -> None:
    """Spread of the SGW estimate across independent bases versus the number of directions."""
    levels = np.asarray(levels, dtype=float)
    sds = np.asarray(sds, dtype=float)
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2)
        ax0.errorbar(levels, means, yerr=sds, fmt="o-", capsize=3, lw=1)
        ax0.set_xscale("log", base=2)
        ax0.set_xlabel("directions $L$")
        ax0.set_ylabel("SGW$^2$ (mean $\\pm$ sd)")
        ax1.loglog(levels, sds, "o-", lw=1, label="observed sd", base=2)
        if len(levels) and sds[0] > 0:
            ax1.loglog(levels, sds[0] * np.sqrt(levels[0] / levels), "--", lw=1, label="$L^{-1/2}$ reference", base=2)
        ax1.set_xlabel("directions $L$")
        ax1.set_ylabel("sd across bases")
        ax1.legend()
        _save(fig, path)


def plot_relational(labels, values_a, values_b, names, path) -> None:
    """Grouped bars of per-class GW^2 for two runs."""
    x = np.arange(len(labels))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(x - 0.2, values_a, 0.4, label=names[0])
        ax.bar(x + 0.2, values_b, 0.4, label=names[1])
        ax.set_xticks(x, labels)
        ax.set_ylabel("entropic GW$^2$")
        ax.legend()
        _save(fig, path)
