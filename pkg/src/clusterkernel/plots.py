"""Figure rendering for the CLI report paths. All figures go to files; no
interactive backends."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def scatter_embedding(coords, labels, path, title="Kernel PCA embedding"):
    """2-d scatter of the first two embedding coordinates, colored by label
    when labels are given."""
    coords = np.asarray(coords)
    fig, ax = plt.subplots(figsize=(6, 5))
    y = coords[:, 1] if coords.shape[1] > 1 else np.zeros(len(coords))
    if labels is None:
        ax.scatter(coords[:, 0], y, s=14, alpha=0.8)
    else:
        labels = np.asarray(labels)
        for lab in np.unique(labels):
            sel = labels == lab
            ax.scatter(coords[sel, 0], y[sel], s=14, alpha=0.8, label=str(lab))
        ax.legend(title="label", frameon=False)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def missingness_curve(levels, accuracies, path, pattern="MCAR"):
    """Classification accuracy against the fraction of injected missing data."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(levels, accuracies, marker="o")
    ax.set_xlabel(f"fraction of {pattern} missing data")
    ax.set_ylabel("1NN accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sensitivity_bars(settings, accuracies, path):
    """1NN accuracy across (component cap, initializations) settings."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(settings))
    ax.bar(xs, accuracies, width=0.6)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"C={c}\nQ={q}" for c, q in settings])
    ax.set_ylabel("1NN accuracy")
    ax.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
