"""Figure rendering for the CLI report and predict paths.

Every function writes one PNG next to the delimited outputs.  Rendering is
headless (Agg) and deterministic: fixed figure sizes, no timestamps.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .tree import PartitionTree

_FIGSIZE = (6.0, 4.5)
_DPI = 120


def save_ess_trace(diagnostics, path) -> None:
    """Effective sample size per step, resampling steps marked."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    steps = [r.step for r in diagnostics]
    ess = [r.ess for r in diagnostics]
    ax.plot(steps, ess, lw=1.2, color="tab:blue")
    hits = [r.step for r in diagnostics if r.resampled]
    if hits:
        ax.scatter(
            hits,
            [ess[steps.index(s)] for s in hits],
            s=14,
            color="tab:red",
            zorder=3,
            label="resampled",
        )
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("effective sample size")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_density_curve(x, density, path) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(np.asarray(x).ravel(), density, lw=1.4, color="tab:blue")
    ax.set_xlabel("x")
    ax.set_ylabel("posterior mean density")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_density_heatmap(x1, x2, density_grid, path) -> None:
    """2-d density on a regular grid; density_grid is (len(x2), len(x1))."""
    fig, ax = plt.subplots(figsize=(5.4, 4.5))
    mesh = ax.pcolormesh(x1, x2, density_grid, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="posterior mean density")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_partition_boxes(tree: PartitionTree, path, dims=(0, 1), values=None, label="") -> None:
    """Leaf boxes of one tree projected on two axes, optionally shaded.

    ``values`` maps leaf node id to a shade value (e.g. expected density);
    without it only the partition boundaries are drawn.
    """
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    leaves = tree.leaf_ids()
    if values is not None:
        vals = np.array([values.get(int(nid), 0.0) for nid in leaves])
        vmax = vals.max() if vals.size and vals.max() > 0 else 1.0
        cmap = plt.get_cmap("viridis")
    for k, nid in enumerate(leaves):
        lower, upper = tree.node_bounds(int(nid))
        x0, y0 = lower[dims[0]], lower[dims[1]]
        w, h = upper[dims[0]] - x0, upper[dims[1]] - y0
        face = cmap(vals[k] / vmax) if values is not None else "none"
        ax.add_patch(
            plt.Rectangle((x0, y0), w, h, facecolor=face, edgecolor="black", lw=0.5)
        )
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel(f"x{dims[0] + 1}")
    ax.set_ylabel(f"x{dims[1] + 1}")
    if label:
        ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_effect_sizes(rows, path, top_k: int = 20) -> None:
    """Horizontal bars of the largest per-node effect sizes with PMAP shades."""
    rows = list(rows)[:top_k]
    fig, ax = plt.subplots(figsize=(6.0, max(2.0, 0.3 * len(rows) + 1.2)))
    if rows:
        labels = [f"#{r['node']} d{r['depth']} x{r['split_dim'] + 1}" for r in rows]
        effs = [r["effect_size"] for r in rows]
        pmaps = np.array([r["pmap"] for r in rows])
        colors = plt.get_cmap("viridis")(pmaps)
        ypos = np.arange(len(rows))[::-1]
        ax.barh(ypos, effs, color=colors)
        ax.set_yticks(ypos, labels=labels, fontsize=7)
        sm = plt.cm.ScalarMappable(cmap="viridis", norm=plt.Normalize(0, 1))
        fig.colorbar(sm, ax=ax, label="decoupling probability")
    ax.set_xlabel("posterior expected effect size")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
