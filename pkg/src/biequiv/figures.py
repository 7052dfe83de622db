"""Figure rendering for the command-line report path.

Every figure is written to a file next to the delimited/JSON outputs; no
interactive backend is ever touched.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = {"source": "tab:red", "reference": "tab:blue", "aligned": "gold"}


def _scatter(ax, pts: np.ndarray, label: str, color: str) -> None:
    ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=3, alpha=0.6, label=label, color=color)


def plot_assembly(path, source: np.ndarray, reference: np.ndarray,
                  aligned: np.ndarray | None = None,
                  keypoints: dict[str, np.ndarray] | None = None) -> None:
    """3-D scatter of the input pair and, when given, the transformed source."""
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    _scatter(ax, np.asarray(source), "source", _COLORS["source"])
    _scatter(ax, np.asarray(reference), "reference", _COLORS["reference"])
    if aligned is not None:
        _scatter(ax, np.asarray(aligned), "aligned source", _COLORS["aligned"])
    if keypoints:
        for name, pts in keypoints.items():
            pts = np.asarray(pts)
            ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=25, marker="x", label=name)
    ax.set_box_aspect((1, 1, 1))
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_audit(path, residuals: dict[str, float], tolerance: float) -> None:
    """Log-scale bars of the measured equivariance residuals vs the tolerance."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names = list(residuals)
    values = [max(residuals[n], 1e-18) for n in names]
    ax.bar(names, values, color=["tab:green" if residuals[n] < tolerance else "tab:red" for n in names])
    ax.axhline(tolerance, color="k", linestyle="--", linewidth=1, label=f"tolerance {tolerance:g}")
    ax.set_yscale("log")
    ax.set_ylabel("max residual")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_icp_history(path, mse_history: list[float]) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(range(len(mse_history)), mse_history, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("correspondence MSE")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
