"""PNG figures rendered next to the CSV tables (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 0.8,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def _save(fig, path, description: str):
    fig.savefig(path, format="png", metadata={"Software": None, "Description": description})
    plt.close(fig)
    return path


def flow_figure(path, times, states, drift, description: str = "", labels=("x1", "y1", "x2", "y2")):
    """Projections to the two symplectic planes and the level drift against time."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 3, figsize=(9.0, 3.0))
        ax[0].plot(states[:, 0], states[:, 1])
        ax[0].set_xlabel(labels[0])
        ax[0].set_ylabel(labels[1])
        ax[1].plot(states[:, 2], states[:, 3])
        ax[1].set_xlabel(labels[2])
        ax[1].set_ylabel(labels[3])
        for a in ax[:2]:
            a.set_aspect("equal", adjustable="datalim")
        ax[2].plot(times, drift)
        ax[2].set_xlabel("t")
        ax[2].set_ylabel("level drift")
        ax[2].ticklabel_format(axis="y", style="sci", scilimits=(-2, 2))
        fig.tight_layout()
        return _save(fig, path, description)


def samples_figure(path, values, mean, stderr, description: str = ""):
    """Per-sample estimates with the ensemble mean and a 3 stderr band."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        idx = np.arange(len(values))
        ax.plot(idx, values, "o", ms=3)
        ax.axhline(mean, color="k")
        if stderr is not None and np.isfinite(stderr):
            ax.axhspan(mean - 3 * stderr, mean + 3 * stderr, color="0.85", zorder=0)
        ax.set_xlabel("sample")
        ax.set_ylabel("Lyapunov exponent")
        fig.tight_layout()
        return _save(fig, path, description)


def sequence_figure(path, schedule, distances, values, stderrs, description: str = ""):
    """Member estimates and C^0 distances to the limit along the schedule."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 2, figsize=(7.0, 3.0))
        err = np.nan_to_num(np.asarray(stderrs, dtype=float))
        ax[0].errorbar(schedule, values, yerr=err, fmt="o-", ms=3, capsize=2)
        ax[0].set_xlabel("schedule value")
        ax[0].set_ylabel("entropy estimate")
        ax[1].semilogy(schedule, distances, "s-", ms=3)
        ax[1].set_xlabel("schedule value")
        ax[1].set_ylabel("C0 distance to limit")
        fig.tight_layout()
        return _save(fig, path, description)
