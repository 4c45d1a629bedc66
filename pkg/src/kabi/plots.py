"""SVG figure outputs: phase circles, recovery scatter, PIT diagnostics."""

import math

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "kabi"  # deterministic element ids

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "phase_circle_svg",
    "recovery_scatter_svg",
    "pit_histogram_svg",
    "pit_ecdf_svg",
    "posterior_histograms_svg",
    "compare_overlay_svg",
]

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}  # keep output byte-stable


def _save(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def phase_circle_svg(trajectories, labels, path):
    """First and final phase snapshots on the unit circle, one column per run."""
    n = len(trajectories)
    fig, axes = plt.subplots(2, n, figsize=(3 * n, 6), subplot_kw={"aspect": "equal"})
    axes = np.atleast_2d(axes).reshape(2, n)
    for col, (traj, label) in enumerate(zip(trajectories, labels)):
        for row, idx in enumerate((0, -1)):
            ax = axes[row, col]
            phases = traj.observed_phases[idx]
            circle = np.linspace(0, 2 * math.pi, 200)
            ax.plot(np.cos(circle), np.sin(circle), color="0.8", lw=0.8)
            ax.scatter(np.cos(phases), np.sin(phases), s=12, alpha=0.7)
            ax.set_xlim(-1.2, 1.2)
            ax.set_ylim(-1.2, 1.2)
            ax.set_xticks([])
            ax.set_yticks([])
            when = "initial" if idx == 0 else "final"
            ax.set_title(f"{label} ({when})", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def recovery_scatter_svg(rows, path, param_names=None):
    """Posterior mean vs truth with central 90% interval bars."""
    params = sorted({r["param"] for r in rows})
    fig, axes = plt.subplots(1, len(params), figsize=(4 * len(params), 4), squeeze=False)
    for j, p in enumerate(params):
        ax = axes[0, j]
        sub = [r for r in rows if r["param"] == p]
        truth = np.array([r["truth"] for r in sub])
        mean = np.array([r["posterior_mean"] for r in sub])
        lo = np.array([r["q05"] for r in sub])
        hi = np.array([r["q95"] for r in sub])
        ax.errorbar(truth, mean, yerr=[mean - lo, hi - mean], fmt="o", ms=3,
                    alpha=0.5, lw=0.7)
        lim = [min(truth.min(), mean.min()), max(truth.max(), mean.max())]
        ax.plot(lim, lim, "k--", lw=1)
        name = param_names[p] if param_names else f"kappa_{p + 1}"
        ax.set_xlabel(f"true {name}")
        ax.set_ylabel(f"estimated {name}")
    fig.tight_layout()
    _save(fig, path)


def pit_histogram_svg(pits, path, n_bins=20):
    pits = np.asarray(pits).ravel()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(pits, bins=n_bins, range=(0, 1), density=True, alpha=0.8,
            edgecolor="white")
    ax.axhline(1.0, color="k", ls="--", lw=1)
    ax.set_xlabel("PIT value")
    ax.set_ylabel("density")
    fig.tight_layout()
    _save(fig, path)


def pit_ecdf_svg(band, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.fill_between(band.grid, band.lower, band.upper, color="0.85",
                    label="95% band")
    ax.plot([0, 1], [0, 1], "k--", lw=1)
    ax.step(band.grid, band.ecdf, where="post", lw=1.5, label="ECDF")
    ax.set_xlabel("PIT value")
    ax.set_ylabel("ECDF")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def posterior_histograms_svg(samples_list, path, n_bins=40, param=0):
    """Posterior histograms for a handful of cases, truth marked."""
    n = len(samples_list)
    cols = min(n, 5)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.5 * rows), squeeze=False)
    for i, s in enumerate(samples_list):
        ax = axes[i // cols][i % cols]
        ax.hist(s.draws[:, param], bins=n_bins, density=True, alpha=0.8)
        ax.axvline(s.true_params[param], color="r", ls="--", lw=1)
        ax.set_yticks([])
    for i in range(n, rows * cols):
        axes[i // cols][i % cols].axis("off")
    fig.tight_layout()
    _save(fig, path)


def compare_overlay_svg(npe_samples, mcmc_samples, path, n_bins=40, param_names=None):
    """NPE vs MCMC posterior histograms for one observed dataset."""
    d = npe_samples.draws.shape[1]
    fig, axes = plt.subplots(1, d, figsize=(4 * d, 3.5), squeeze=False)
    for j in range(d):
        ax = axes[0, j]
        ax.hist(npe_samples.draws[:, j], bins=n_bins, density=True, alpha=0.5,
                label="NPE")
        ax.hist(mcmc_samples.draws[:, j], bins=n_bins, density=True, alpha=0.5,
                label="MCMC")
        ax.axvline(npe_samples.true_params[j], color="r", ls="--", lw=1)
        name = param_names[j] if param_names else f"kappa_{j + 1}"
        ax.set_xlabel(name)
        ax.set_yticks([])
        if j == 0:
            ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
