"""Clustering quality metrics and PCA for the dimensionality-reduced baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, RankDeficientWarning, SingleCluster


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] - 2.0 * points @ points.T + sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Per point: (b - a) / max(a, b) where a is the mean distance to the
    point's own cluster and b the smallest mean distance to any other
    cluster. Singleton-cluster points score 0, as do points where both
    a and b vanish.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    k = len(uniq)
    if k < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    n = points.shape[0]
    dist = _pairwise_distances(points)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0
    counts = onehot.sum(axis=0)
    cluster_sums = dist @ onehot  # (n, k): total distance from i to cluster c

    own_count = counts[inv]
    scores = np.zeros(n)
    multi = own_count > 1
    a = np.zeros(n)
    a[multi] = cluster_sums[np.arange(n), inv][multi] / (own_count[multi] - 1.0)

    mean_other = cluster_sums / counts[None, :]
    mean_other[np.arange(n), inv] = np.inf
    b = mean_other.min(axis=1)

    denom = np.maximum(a, b)
    ok = multi & (denom > 0)
    scores[ok] = (b[ok] - a[ok]) / denom[ok]
    return float(scores.mean())


def aic(k_params: int, log_likelihood: float) -> float:
    """Akaike information criterion: 2k - 2 ln L."""
    if k_params < 1:
        raise ValueError("k_params must be at least 1")
    return 2.0 * k_params - 2.0 * log_likelihood


def bic(k_params: int, n_sample: int, log_likelihood: float) -> float:
    """Bayesian information criterion: k ln n - 2 ln L."""
    if k_params < 1:
        raise ValueError("k_params must be at least 1")
    if n_sample < 1:
        raise ValueError("n_sample must be at least 1")
    return k_params * float(np.log(n_sample)) - 2.0 * log_likelihood


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected pair-counting agreement between two labelings."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape:
        raise LengthMismatch(f"label lengths differ: {labels_a.shape} vs {labels_b.shape}")
    n = labels_a.shape[0]
    if n < 2:
        raise LengthMismatch("need at least two samples")
    _, ia = np.unique(labels_a, return_inverse=True)
    _, ib = np.unique(labels_b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def comb2(x):
        return int(np.sum(x.astype(object) * (x.astype(object) - 1) // 2))

    sum_cells = comb2(table.ravel())
    sum_rows = comb2(table.sum(axis=1))
    sum_cols = comb2(table.sum(axis=0))
    total = n * (n - 1) // 2
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:  # both labelings trivial (all-singleton or all-one)
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


@dataclass(frozen=True)
class PcaModel:
    """Centered orthonormal projection onto the top-q principal axes."""

    mean: np.ndarray
    components: np.ndarray  # (q, dim), rows orthonormal
    explained_variance: np.ndarray  # (q,) eigenvalues, non-increasing
    total_variance: float

    def __post_init__(self):
        for arr in (self.mean, self.components, self.explained_variance):
            arr.setflags(write=False)

    @property
    def explained_fraction(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_fit(points, q: int) -> PcaModel:
    """Eigendecomposition of the sample covariance, top-q axes kept.

    Component signs are fixed so the largest-magnitude entry of each axis
    is positive, making the decomposition deterministic.
    """
    points = np.asarray(points, dtype=np.float64)
    n, dim = points.shape
    if not 1 <= q <= min(n, dim):
        raise ValueError(f"q={q} must lie in [1, min(n, dim)={min(n, dim)}]")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    axes = eigvecs[:, order].T[:q].copy()
    for row in axes:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    kept = eigvals[:q]
    if np.any(kept <= 1e-12):
        warnings.warn(
            "kept principal components include a numerically zero eigenvalue",
            RankDeficientWarning,
            stacklevel=2,
        )
    return PcaModel(mean, axes, kept, total_variance=float(eigvals.sum()))


def pca_project(model: PcaModel, points) -> np.ndarray:
    """Project points (single vector or matrix) onto the kept axes."""
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    proj = (np.atleast_2d(points) - model.mean) @ model.components.T
    return proj[0] if single else proj


def pca_q_for_variance(points, fraction: float = 0.95) -> int:
    """Smallest q whose axes explain at least the requested variance share."""
    points = np.asarray(points, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        full = pca_fit(points, min(points.shape))
    if full.total_variance <= 0:
        return 1
    cum = np.cumsum(full.explained_variance) / full.total_variance
    return int(np.searchsorted(cum, fraction) + 1)
