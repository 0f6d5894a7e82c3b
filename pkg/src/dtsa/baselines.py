"""Reference clustering methods the deep pipeline is compared against.

Four baselines operate on flattened scenario images: k-means and a plain
mixture fit on the raw pixels, and both again on PCA projections. Reports
carry SC/AIC/BIC (plus ARI when ground truth exists) in a shared format.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gmm import EmConfig, GmmParams, em_fit, kmeans, nll
from .metrics import adjusted_rand_index, aic, bic, pca_fit, pca_project, pca_q_for_variance, silhouette

BASELINE_METHODS = ("kmeans", "gmm", "pca_kmeans", "pca_gmm")

# full covariance on wide raw-pixel inputs is data-starved and slow
_DIAG_DIM_THRESHOLD = 128


@dataclass
class MetricReport:
    method: str
    k: int
    sc: float
    aic_value: float
    bic_value: float
    ari: float | None
    runtime_s: float


def image_features(images) -> np.ndarray:
    """Flatten scenario images to (n, H*W) float rows in [0, 1].

    Only one channel is read; GASF images replicate it across all three.
    """
    return np.stack([img.pixels[:, :, 0].reshape(-1) / 255.0 for img in images])


def _kmeans_report(points: np.ndarray, k: int, seed: int):
    """Hard clustering scored via the equivalent spherical mixture.

    AIC/BIC need a likelihood; k-means gets one from a spherical Gaussian
    mixture with the fitted centroids, cluster-fraction weights, and a
    single shared variance (the SSE maximum-likelihood estimate).
    """
    n, d = points.shape
    centers, labels, inertia = kmeans(points, k, seed=seed)
    counts = np.array([(labels == j).sum() for j in range(k)], dtype=np.float64)
    weights = np.maximum(counts, 1.0)
    weights /= weights.sum()
    sigma2 = max(inertia / (n * d), 1e-12)
    params = GmmParams(weights, centers, np.full((k, d), sigma2), covariance="diag")
    loglik = -nll(points, params)
    k_params = (k - 1) + k * d + 1
    return labels, loglik, k_params


def _gmm_report(points: np.ndarray, k: int, seed: int):
    cov = "diag" if points.shape[1] >= _DIAG_DIM_THRESHOLD else "full"
    config = EmConfig(seed=seed, covariance=cov)
    params, resp, _ = em_fit(points, k, config)
    labels = resp.argmax(axis=1)
    return labels, -nll(points, params), params.n_parameters()


def run_baseline(method: str, inputs, k: int, q: int | None = None, seed: int = 0, labels_true=None) -> MetricReport:
    """Run one named baseline and score it.

    inputs is the flattened-image matrix; pca_* methods project it onto q
    principal axes first (default: smallest q explaining 95% variance).
    """
    if method not in BASELINE_METHODS:
        raise ConfigError(f"unknown baseline {method!r}; choose from {BASELINE_METHODS}")
    points = np.asarray(inputs, dtype=np.float64)
    t0 = time.perf_counter()
    if method.startswith("pca_"):
        if q is None:
            q = pca_q_for_variance(points, 0.95)
        model = pca_fit(points, q)
        points = pca_project(model, points)
    if method.endswith("kmeans"):
        labels, loglik, k_params = _kmeans_report(points, k, seed)
    else:
        labels, loglik, k_params = _gmm_report(points, k, seed)
    sc = silhouette(points, labels) if len(np.unique(labels)) > 1 else float("nan")
    runtime = time.perf_counter() - t0
    ari = None
    if labels_true is not None:
        ari = adjusted_rand_index(labels_true, labels)
    return MetricReport(
        method=method,
        k=k,
        sc=sc,
        aic_value=aic(k_params, loglik),
        bic_value=bic(k_params, points.shape[0], loglik),
        ari=ari,
        runtime_s=runtime,
    )


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if np.isnan(value) else repr(value)
    return str(value)


def write_metric_table(reports, path) -> None:
    """Comparison table: one row per method, shared metric columns."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "K", "SC", "AIC", "BIC", "ARI", "runtime_s"])
        for r in reports:
            writer.writerow(
                [
                    r.method,
                    r.k,
                    _format_cell(r.sc),
                    _format_cell(r.aic_value),
                    _format_cell(r.bic_value),
                    _format_cell(r.ari),
                    _format_cell(round(r.runtime_s, 6)),
                ]
            )
