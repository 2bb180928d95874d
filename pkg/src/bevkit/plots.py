"""Matplotlib figure rendering for the report paths.

Every figure lands next to its delimited (CSV/pixmap) counterpart; files are
deterministic for identical inputs (no timestamps in metadata).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEFIG_KW = dict(dpi=110, bbox_inches="tight",
                   metadata={"Software": "bevkit", "CreationDate": None})


def save_heatmap(path, grid: np.ndarray, title: str, cmap: str = "viridis",
                 cbar_label: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(grid.T, origin="lower", cmap=cmap, interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("x cell")
    ax.set_ylabel("y cell")
    cb = fig.colorbar(im, ax=ax)
    if cbar_label:
        cb.set_label(cbar_label)
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def save_map_figure(path, map_mask: np.ndarray, boxes=None) -> None:
    """Drivable/lane masks with optional box footprints."""
    fig, ax = plt.subplots(figsize=(5.2, 5))
    composite = map_mask[:, :, 0] + 2.0 * map_mask[:, :, 1]
    ax.imshow(composite.T, origin="lower", cmap="cividis", interpolation="nearest")
    if boxes:
        for b in boxes:
            corners = b.bev_corners()
            corners.append(corners[0])
            xs = [c[0] for c in corners]
            ys = [c[1] for c in corners]
            ax.plot(xs, ys, color="tab:red", lw=1.0)
    ax.set_title("BEV map (drivable + lane) with box footprints")
    ax.set_xlabel("x cell")
    ax.set_ylabel("y cell")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def save_sweep_figure(path, rows) -> None:
    """Noise-sweep degradation curves (log-x; sigma=0 pinned at the left)."""
    sigmas = [r.sigma for r in rows]
    floor = min([s for s in sigmas if s > 0], default=1e-3) / 10.0
    xs = [s if s > 0 else floor for s in sigmas]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(xs, [r.seg_iou for r in rows], "o-", label="seg IoU")
    ax.plot(xs, [r.map for r in rows], "s-", label="center-distance mAP")
    ax.set_xscale("log")
    ax.set_xlabel("extrinsic noise sigma")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Robustness to calibration noise")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def save_bench_figure(path, labels, flop_counts) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    ax.bar(labels, flop_counts, color=["tab:orange", "tab:blue"][:len(labels)])
    ax.set_ylabel("multiply-accumulates")
    ax.set_title("BEV encoder cost")
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
