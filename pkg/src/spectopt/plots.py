"""Matplotlib figure rendering for the report paths.

Every CLI report writes a figure next to its delimited output. All figures
go straight to files through the Agg backend; nothing is shown interactively.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mesh import StructuredMesh


def save_density_figure(path, field, mesh: StructuredMesh, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(3.2, 3.2 * mesh.Ly / mesh.Lx))
    grid = mesh.element_grid(np.asarray(field, dtype=float))
    ax.imshow(
        1.0 - grid,
        cmap="gray",
        origin="lower",
        vmin=0.0,
        vmax=1.0,
        extent=(0, mesh.Lx, 0, mesh.Ly),
        interpolation="none",
    )
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=200)
    plt.close(fig)


def save_history_figure(path, history, title: str = "") -> None:
    idx = np.arange(len(history))
    cost = np.array([r.cost for r in history])
    grey = np.array([r.grey_index for r in history]) * 100.0
    loops = np.array([r.loop for r in history])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 5.2), sharex=True)
    ax1.semilogy(idx, np.maximum(cost, 1e-300), "d-", color="tab:red", ms=2.5, lw=0.8)
    ax1.set_ylabel("normalised cost")
    for boundary in idx[np.diff(loops, prepend=loops[0]) > 0]:
        ax1.axvline(boundary, color="0.8", lw=0.6, zorder=0)
        ax2.axvline(boundary, color="0.8", lw=0.6, zorder=0)
    ax2.plot(idx, grey, color="tab:blue", lw=0.9)
    ax2.set_ylabel("grey level (%)")
    ax2.set_xlabel("iteration")
    if title:
        ax1.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_weights_study_figure(path, result, title: str = "") -> None:
    modes = list(result.slopes)
    fig, axes = plt.subplots(1, len(modes), figsize=(4.2 * len(modes), 3.6), squeeze=False)
    for ax, mode in zip(axes[0], modes):
        rows = result.mode_rows(mode)
        n = np.array([r.n_dofs for r in rows], dtype=float)
        eig = np.array([r.eigenvalues for r in rows])
        for i in range(eig.shape[1]):
            ax.loglog(n, eig[:, i], "o-", ms=3, lw=0.9,
                      label=f"m{i + 1}={result.slopes[mode][i]:+.3f}")
        ax.loglog(n, [r.kappa2 for r in rows], "s--", ms=3, lw=0.9, color="k", label="kappa2")
        ax.set_title(mode, fontsize=9)
        ax.set_xlabel("nDOF")
        ax.legend(fontsize=6)
    axes[0][0].set_ylabel("eig(normal matrix) (mm$^2$)")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_sweep_figure(path, rows, value="relative_error", title: str = "") -> None:
    """Median and quartile band of a sweep metric versus anisotropy angle."""
    ok = [r for r in rows if not r.failed]
    topologies = sorted({r.topology for r in ok})
    loads = sorted({r.load_case for r in ok})
    fig, axes = plt.subplots(1, len(loads), figsize=(5.0 * len(loads), 3.8), squeeze=False)
    for ax, load in zip(axes[0], loads):
        for topo in topologies:
            betas = sorted({r.beta for r in ok if r.topology == topo and r.load_case == load})
            med, q1, q3 = [], [], []
            for b in betas:
                vals = [
                    getattr(r, value)
                    for r in ok
                    if r.topology == topo and r.load_case == load and r.beta == b
                ]
                med.append(np.median(vals))
                q1.append(np.percentile(vals, 25))
                q3.append(np.percentile(vals, 75))
            ax.plot(betas, med, "o-", ms=3, lw=1.0, label=topo)
            ax.fill_between(betas, q1, q3, alpha=0.15)
        ax.set_yscale("log")
        ax.set_xlabel("anisotropy angle (deg)")
        ax.set_title(load, fontsize=9)
        ax.legend(fontsize=6)
    axes[0][0].set_ylabel(value.replace("_", " "))
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_identify_figure(path, report, title: str = "") -> None:
    labels = ["D11", "D12", "D16", "D22", "D26", "D66"]
    x = np.arange(6)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.6, 3.2))
    width = 0.38
    ax1.bar(x - width / 2, report.theta_gt, width, label="truth")
    ax1.bar(x + width / 2, report.theta, width, label="identified")
    ax1.set_xticks(x, labels, fontsize=7)
    ax1.set_ylabel("stiffness (GPa)")
    ax1.legend(fontsize=7)
    ax2.bar(x, report.component_errors * 100.0, color="tab:orange")
    ax2.set_xticks(x, labels, fontsize=7)
    ax2.set_ylabel("component error (% of norm)")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_gallery_figure(path, entries, mesh: StructuredMesh, title: str = "") -> None:
    """Contact sheet of optimised designs indexed by (alpha1, alpha2, beta)."""
    if not entries:
        return
    betas = sorted({e[0][2] for e in entries})
    pairs = sorted({(e[0][0], e[0][1]) for e in entries})
    fig, axes = plt.subplots(
        len(pairs),
        len(betas),
        figsize=(1.1 * len(betas), 1.9 * len(pairs)),
        squeeze=False,
    )
    lookup = {e[0]: e[1] for e in entries}
    for i, (a1, a2) in enumerate(pairs):
        for j, b in enumerate(betas):
            ax = axes[i][j]
            ax.set_xticks([])
            ax.set_yticks([])
            field = lookup.get((a1, a2, b))
            if field is not None:
                ax.imshow(
                    1.0 - mesh.element_grid(field),
                    cmap="gray",
                    origin="lower",
                    vmin=0,
                    vmax=1,
                    interpolation="none",
                )
            if i == 0:
                ax.set_title(f"{b:g}", fontsize=6)
            if j == 0:
                ax.set_ylabel(f"({a1:g},{a2:g})", fontsize=6)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)
