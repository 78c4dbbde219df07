"""Figure rendering for the CLI report path.

Only the command-line layer imports this module; the solver core stays
free of plotting dependencies.  Every function writes a PNG next to the
delimited output it illustrates.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Field

__all__ = [
    "render_convergence",
    "render_energy",
    "render_stepsizes",
    "render_roughness",
    "render_height",
]


def render_convergence(N_values, errors, path, reference_order: float = 2.0):
    fig, ax = plt.subplots(figsize=(5, 4))
    N = np.asarray(N_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    ax.loglog(N, e, "o-", label="measured")
    guide = e[0] * (N / N[0]) ** (-reference_order)
    ax.loglog(N, guide, "k--", lw=1, label=f"slope -{reference_order:g}")
    ax.set_xlabel("N (time levels)")
    ax.set_ylabel("final-time error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_energy(trace, path, label=""):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    t = [r.t for r in trace]
    ax.plot(t, [r.E for r in trace], label="energy")
    ax.plot(t, [r.E_mod for r in trace], "--", lw=1, label="modified energy")
    ax.set_xlabel("t")
    ax.set_ylabel("E")
    if label:
        ax.set_title(label)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_stepsizes(trace, path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    rows = [r for r in trace if r.step > 0]
    ax.semilogy([r.t for r in rows], [r.tau for r in rows], ".", ms=2)
    ax.set_xlabel("t")
    ax.set_ylabel("tau")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_roughness(trace, path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot([r.t for r in trace], [r.roughness for r in trace])
    ax.set_xlabel("t")
    ax.set_ylabel("roughness")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_height(field: Field, t: float, path):
    fig, ax = plt.subplots(figsize=(4.6, 4))
    L = field.grid.L
    im = ax.imshow(
        field.values.T,
        origin="lower",
        extent=(0, L, 0, L),
        cmap="viridis",
        interpolation="nearest",
    )
    ax.set_title(f"t = {t:g}")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
