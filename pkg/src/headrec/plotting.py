"""Static figures written next to the text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DEGREE_BANDS = ((1, 5), (6, 10), (11, 20), (21, None))
BAND_COLORS = ("tab:blue", "tab:green", "tab:orange", "tab:red")


def band_label(lo: int, hi: int | None) -> str:
    return f">{lo - 1}" if hi is None else f"{lo}-{hi}"


def band_of(degree: int, bands=DEGREE_BANDS) -> int:
    """Index of the band containing ``degree``; -1 when below the first band."""
    for k, (lo, hi) in enumerate(bands):
        if degree >= lo and (hi is None or degree <= hi):
            return k
    return -1


def loss_curves(history: list[dict], path) -> None:
    """Loss terms and discriminator BCE against the training iteration."""
    it = [h["iteration"] for h in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("L_total", "L_pred", "L_emb", "L_d"):
        a.plot(it, [h[key] for h in history], label=key, linewidth=0.8)
    a.set_xlabel("iteration")
    a.set_yscale("log")
    a.legend()
    b.plot(it, [h["disc_bce"] for h in history], linewidth=0.8)
    b.set_xlabel("iteration")
    b.set_ylabel("discriminator BCE")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def bce_comparison(curves: dict[str, list[float]], path, window: int = 20) -> None:
    """Smoothed discriminator BCE per labelled run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vals in curves.items():
        v = np.asarray(vals, dtype=np.float64)
        if len(v) >= window:
            v = np.convolve(v, np.ones(window) / window, mode="valid")
        ax.plot(v, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("binary cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def poincare_scatter(rows, path, bands=DEGREE_BANDS) -> None:
    """Items in the Poincare disk coloured by degree band; rows are viz tuples."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_patch(plt.Circle((0, 0), 1.0, fill=False, color="grey", linewidth=0.8))
    deg = np.array([r[1] for r in rows])
    xy = np.array([(r[3], r[4]) for r in rows]).reshape(-1, 2)
    idx = np.array([band_of(int(d), bands) for d in deg])
    for k, (lo, hi) in enumerate(bands):
        m = idx == k
        if m.any():
            ax.scatter(xy[m, 0], xy[m, 1], s=6, c=BAND_COLORS[k % len(BAND_COLORS)],
                       label=band_label(lo, hi))
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.legend(title="degree", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def lambda_heatmap(matrix, grid1, grid2, path) -> None:
    """Validation NDCG@10 with lambda1 on rows and lambda2 on columns."""
    m = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(m, cmap="viridis", origin="upper")
    ax.set_xticks(range(len(grid2)), [f"{g:g}" for g in grid2])
    ax.set_yticks(range(len(grid1)), [f"{g:g}" for g in grid1])
    ax.set_xlabel("lambda2")
    ax.set_ylabel("lambda1")
    for a in range(m.shape[0]):
        for b in range(m.shape[1]):
            ax.text(b, a, f"{m[a, b]:.3f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax, label="NDCG@10")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
