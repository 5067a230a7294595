"""Kernel consumers: nearest-neighbor classification, kernel PCA, spectral
clustering, and partition-agreement metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .dataset import mean_impute as mean_impute_baseline  # noqa: F401
from .ensemble import KernelMatrix
from .errors import ConfigError, DataError


@dataclass
class Embedding:
    """Kernel PCA coordinates (N, d) with their nonincreasing eigenvalues."""

    coordinates: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class ClusteringResult:
    labels: np.ndarray
    k: int


def knn_classify(k_star: KernelMatrix, train_labels, k: int = 1,
                 train_diag=None, test_diag=None) -> np.ndarray:
    """Classify each test column of a train-by-test kernel by its k nearest
    training series in the induced pseudo-metric.

    ``k_star`` rows must be the training series; training self-similarities
    K_nn come from ``train_diag``, the kernel's stored diagonal, or the
    matrix diagonal when it is square. Ties are broken by the smallest summed
    distance, then by the lowest label id.
    """
    entries = k_star.entries
    n_train, n_test = entries.shape
    train_labels = np.asarray(train_labels)
    if len(train_labels) != n_train:
        raise DataError(f"{len(train_labels)} labels for {n_train} training rows")
    if not 1 <= k <= n_train:
        raise ConfigError(f"k must be in [1, {n_train}], got {k}")
    if train_diag is None:
        train_diag = k_star.train_diag
    if train_diag is None and n_train == n_test:
        train_diag = np.diag(entries)
    if train_diag is None:
        raise DataError("kernel is missing training self-similarities")
    # d^2(n, m) = K_nn - 2 K_nm + K_mm; the K_mm column offset does not change
    # the ranking, so it is optional.
    d2 = np.asarray(train_diag)[:, None] - 2.0 * entries
    if test_diag is not None:
        d2 = d2 + np.asarray(test_diag)[None, :]

    preds = np.empty(n_test, dtype=train_labels.dtype)
    for m in range(n_test):
        order = np.argsort(d2[:, m], kind="stable")[:k]
        votes = Counter(train_labels[order].tolist())
        top = max(votes.values())
        tied = [lab for lab, c in votes.items() if c == top]
        if len(tied) == 1:
            preds[m] = tied[0]
        else:
            sums = {lab: d2[order, m][train_labels[order] == lab].sum() for lab in tied}
            best = min(sums.values())
            preds[m] = min(lab for lab, s in sums.items() if s == best)
    return preds


def kpca(k: KernelMatrix, dims: int) -> Embedding:
    """Project onto the top principal directions of the double-centered kernel.

    Coordinates are eigenvectors scaled by sqrt(eigenvalue); each coordinate
    axis is flipped so its largest-magnitude entry is positive.
    """
    if dims < 1:
        raise ConfigError(f"dims must be >= 1, got {dims}")
    a = np.asarray(k.entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError("kernel PCA needs a square kernel matrix")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    centered = h @ a @ h
    vals, vecs = np.linalg.eigh(centered)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    rank = int((vals > 1e-12 * max(vals[0], 1e-300)).sum())
    if dims > rank:
        raise DataError(f"requested {dims} dimensions but centered kernel has rank {rank}")
    vals = vals[:dims]
    vecs = vecs[:, :dims]
    for j in range(dims):
        i = np.argmax(np.abs(vecs[:, j]))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    coords = vecs * np.sqrt(np.maximum(vals, 0.0))[None, :]
    return Embedding(coordinates=coords, eigenvalues=vals)


def spectral_cluster(k: KernelMatrix, n_clusters: int, seed: int) -> ClusteringResult:
    """Normalized-Laplacian spectral clustering of the kernel as an affinity.

    Symmetric normalization, row-normalized top-k eigenvector embedding, then
    seeded k-means++ with 10 restarts.
    """
    a = np.asarray(k.entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError("spectral clustering needs a square kernel matrix")
    n = a.shape[0]
    if not 2 <= n_clusters <= n:
        raise ConfigError(f"n_clusters must be in [2, {n}], got {n_clusters}")
    a = 0.5 * (a + a.T)
    deg = a.sum(axis=1) + 1e-12  # jitter guards disconnected affinity graphs
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    m = d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    emb = vecs[:, np.argsort(vals)[::-1][:n_clusters]]
    norms = np.linalg.norm(emb, axis=1)
    emb = emb / np.maximum(norms, 1e-12)[:, None]
    km = KMeans(n_clusters=n_clusters, n_init=10, max_iter=100, random_state=seed)
    labels = km.fit_predict(emb)
    return ClusteringResult(labels=labels.astype(np.int64), k=n_clusters)


def _contingency(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DataError("label vectors must be 1-d and of equal length")
    if pred.size == 0:
        raise DataError("empty label vectors")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def clustering_accuracy(pred, truth) -> float:
    """Fraction matched under the optimal one-to-one relabeling of predicted
    clusters, solved as an assignment problem."""
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / np.asarray(pred).size


def adjusted_rand_index(pred, truth) -> float:
    """Pair-counting partition agreement, corrected for chance.

    When both partitions are degenerate (the chance correction is 0/0),
    returns 1.0 for identical partitions and 0.0 otherwise.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size < 2:
        raise DataError("adjusted Rand index needs at least 2 elements")
    table = _contingency(pred, truth)
    n = pred.size

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    denom = max_index - expected
    if abs(denom) < 1e-12:
        # Identical partitions iff the contingency table is a (scaled)
        # permutation: one nonzero block per row and per column.
        nz = table > 0
        same = bool((nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all())
        return 1.0 if same else 0.0
    return float((sum_cells - expected) / denom)
