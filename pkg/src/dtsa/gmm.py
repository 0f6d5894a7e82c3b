"""Gaussian mixture modeling of feature vectors.

Densities, responsibilities, and the EM loop all run in log space with
Cholesky factorizations; the raw density products underflow long before
the feature dimensions used here. Covariances are ridged with a small
multiple of the mean feature variance so tight clusters stay positive
definite. Both full and diagonal covariance structures are supported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateData, EmptyComponent, SingularCovariance

_LOG_2PI = float(np.log(2.0 * np.pi))
_MIN_COMPONENT_WEIGHT = 1e-8


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights, means, and covariances for K components.

    covariances is (K, D, D) for covariance='full' and (K, D) of per-axis
    variances for covariance='diag'.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance: str = "full"

    def __post_init__(self):
        w, mu, cov = self.weights, self.means, self.covariances
        if w.ndim != 1 or mu.ndim != 2 or w.shape[0] != mu.shape[0]:
            raise ValueError("inconsistent mixture parameter shapes")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if np.any(w <= 0):
            raise ValueError("all mixture weights must be positive")
        if self.covariance == "full":
            if cov.shape != (self.K, self.D, self.D):
                raise ValueError("full covariances must be (K, D, D)")
            if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=0):
                raise ValueError("covariances must be symmetric")
        elif self.covariance == "diag":
            if cov.shape != (self.K, self.D):
                raise ValueError("diagonal covariances must be (K, D)")
            if np.any(cov <= 0):
                raise ValueError("diagonal variances must be positive")
        else:
            raise ValueError(f"unknown covariance structure {self.covariance!r}")
        for arr in (w, mu, cov):
            arr.setflags(write=False)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def n_parameters(self) -> int:
        """Free parameter count used by the information criteria."""
        if self.covariance == "full":
            return (self.K - 1) + self.K * self.D + self.K * self.D * (self.D + 1) // 2
        return (self.K - 1) + 2 * self.K * self.D


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 100
    tol: float = 1e-6
    reg_epsilon: float = 1e-6
    seed: int = 0
    kmeans_iterations: int = 25
    covariance: str = "full"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.reg_epsilon > 0:
            raise ValueError("reg_epsilon must be positive")


def effective_ridge(features: np.ndarray, reg_epsilon: float) -> float:
    """Absolute covariance ridge: reg_epsilon times the mean feature variance.

    Falls back to reg_epsilon itself for constant data.
    """
    scale = float(np.mean(np.var(features, axis=0)))
    return reg_epsilon * scale if scale > 0 else reg_epsilon


def _cholesky(cov: np.ndarray, k: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"component {k}: covariance not positive definite") from None


def log_density(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log multivariate normal density via triangular factorization.

    cov may be a (D, D) matrix or a (D,) vector of per-axis variances.
    """
    z = np.asarray(z, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    diff = z - mean
    d = diff.shape[0]
    if cov.ndim == 1:
        if np.any(cov <= 0):
            raise SingularCovariance("non-positive diagonal variance")
        quad = float(np.sum(diff * diff / cov))
        logdet = float(np.sum(np.log(cov)))
    else:
        chol = _cholesky(cov, 0)
        sol = solve_triangular(chol, diff, lower=True)
        quad = float(sol @ sol)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (d * _LOG_2PI + logdet + quad)


def _log_prob_matrix(features: np.ndarray, params: GmmParams) -> np.ndarray:
    """(n, K) matrix of log(w_k) + log N(z_i | mu_k, Sigma_k)."""
    n, d = features.shape
    lp = np.empty((n, params.K), dtype=np.float64)
    logw = np.log(params.weights)
    for k in range(params.K):
        diff = features - params.means[k]
        if params.covariance == "diag":
            var = params.covariances[k]
            quad = np.sum(diff * diff / var, axis=1)
            logdet = float(np.sum(np.log(var)))
        else:
            chol = _cholesky(params.covariances[k], k)
            sol = solve_triangular(chol, diff.T, lower=True)
            quad = np.sum(sol * sol, axis=0)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        lp[:, k] = logw[k] - 0.5 * (d * _LOG_2PI + logdet + quad)
    return lp


def _logsumexp_rows(lp: np.ndarray) -> np.ndarray:
    m = lp.max(axis=1)
    return m + np.log(np.exp(lp - m[:, None]).sum(axis=1))


def nll(features, params: GmmParams) -> float:
    """Negative log-likelihood of the feature set under the mixture."""
    features = np.asarray(features, dtype=np.float64)
    return float(-np.sum(_logsumexp_rows(_log_prob_matrix(features, params))))


def e_step(features, params: GmmParams) -> np.ndarray:
    """Posterior component probabilities, one row per sample, rows sum to 1."""
    features = np.asarray(features, dtype=np.float64)
    lp = _log_prob_matrix(features, params)
    return np.exp(lp - _logsumexp_rows(lp)[:, None])


def m_step(features, resp: np.ndarray, reg_epsilon: float, covariance: str = "full") -> GmmParams:
    """Closed-form mixture update from responsibilities.

    reg_epsilon is the absolute ridge added to every covariance diagonal.
    Raises EmptyComponent when a component's effective count underflows;
    the caller decides the re-seeding policy.
    """
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    counts = resp.sum(axis=0)
    for k, ck in enumerate(counts):
        if ck < _MIN_COMPONENT_WEIGHT:
            raise EmptyComponent(f"component {k} collapsed (count {ck:.3e})", component=k)
    weights = counts / n
    means = (resp.T @ features) / counts[:, None]
    if covariance == "diag":
        covs = np.empty((len(counts), d))
        for k in range(len(counts)):
            diff = features - means[k]
            covs[k] = (resp[:, k] @ (diff * diff)) / counts[k] + reg_epsilon
    else:
        covs = np.empty((len(counts), d, d))
        for k in range(len(counts)):
            diff = features - means[k]
            cov = (resp[:, k, None] * diff).T @ diff / counts[k]
            covs[k] = 0.5 * (cov + cov.T) + reg_epsilon * np.eye(d)
    return GmmParams(weights, means, covs, covariance=covariance)


def _squared_distances(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(features * features, axis=1)[:, None]
        - 2.0 * features @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plusplus_seeds(features: np.ndarray, k: int, rng) -> np.ndarray:
    """Greedy k-means++ seeding: several candidates per step, best kept."""
    n = features.shape[0]
    n_candidates = 2 + int(np.log2(k)) if k > 1 else 1
    centers = np.empty((k, features.shape[1]), dtype=np.float64)
    centers[0] = features[rng.integers(n)]
    closest = _squared_distances(features, centers[:1])[:, 0]
    for j in range(1, k):
        probs = closest / closest.sum()
        candidates = rng.choice(n, size=n_candidates, p=probs)
        best_pot, best_idx, best_closest = np.inf, None, None
        for cand in candidates:
            cand_closest = np.minimum(
                closest, _squared_distances(features, features[cand : cand + 1])[:, 0]
            )
            pot = cand_closest.sum()
            if pot < best_pot:
                best_pot, best_idx, best_closest = pot, cand, cand_closest
        centers[j] = features[best_idx]
        closest = best_closest
    return centers


def _lloyd(features: np.ndarray, centers: np.ndarray, iterations: int):
    n, k = features.shape[0], centers.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iterations):
        d2 = _squared_distances(features, centers)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        own = d2[np.arange(n), labels]
        spare = np.argsort(-own)  # farthest points first, for empty clusters
        spare_pos = 0
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = features[members].mean(axis=0)
            else:
                new_centers[j] = features[spare[spare_pos]]
                spare_pos += 1
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers
    d2 = _squared_distances(features, centers)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return centers, labels, inertia


def kmeans(features: np.ndarray, k: int, iterations: int = 25, seed: int = 0, restarts: int = 8):
    """Deterministic k-means: greedy ++ seeding, Lloyd refinement, restarts.

    The best of `restarts` independently seeded runs (by inertia) is
    returned as (centers, labels, inertia). Assignment ties go to the
    lowest cluster index; empty clusters are re-seated at the point
    farthest from its assigned center. Deterministic per seed.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < k:
        raise DegenerateData(f"{n} samples cannot seed {k} clusters")
    if np.unique(features, axis=0).shape[0] < k:
        raise DegenerateData(f"fewer than {k} distinct points")
    root = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFF)
    best = None
    for child in root.spawn(max(restarts, 1)):
        rng = np.random.default_rng(child)
        centers, labels, inertia = _lloyd(
            features, _plusplus_seeds(features, k, rng), iterations
        )
        if best is None or inertia < best[2]:
            best = (centers, labels, inertia)
    return best


def kmeans_init(features, k: int, config: EmConfig) -> GmmParams:
    """Mixture start point from k-means: fractions, centroids, scatters."""
    features = np.asarray(features, dtype=np.float64)
    centers, labels, _ = kmeans(features, k, iterations=config.kmeans_iterations, seed=config.seed)
    n, d = features.shape
    ridge = effective_ridge(features, config.reg_epsilon)
    counts = np.array([(labels == j).sum() for j in range(k)], dtype=np.float64)
    weights = counts / n
    if config.covariance == "diag":
        covs = np.empty((k, d))
        for j in range(k):
            diff = features[labels == j] - centers[j]
            covs[j] = diff.var(axis=0) + ridge if diff.size else np.full(d, ridge)
    else:
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = features[labels == j] - centers[j]
            cov = diff.T @ diff / max(len(diff), 1)
            covs[j] = 0.5 * (cov + cov.T) + ridge * np.eye(d)
    return GmmParams(weights, centers, covs, covariance=config.covariance)


def em_fit(features, k: int, config: EmConfig):
    """Alternate E and M steps from a k-means start until the NLL settles.

    Returns (params, responsibilities, nll_trace); the trace holds the NLL
    after every M step and is non-increasing up to floating error.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < k:
        raise DegenerateData(f"{features.shape[0]} samples cannot fit {k} components")
    params = kmeans_init(features, k, config)
    ridge = effective_ridge(features, config.reg_epsilon)
    trace = []
    prev = np.inf
    for it in range(config.max_iterations):
        resp = e_step(features, params)
        try:
            params = m_step(features, resp, ridge, covariance=config.covariance)
        except EmptyComponent as exc:
            exc.iteration = it
            raise
        cur = nll(features, params)
        trace.append(cur)
        if abs(prev - cur) < config.tol:
            break
        prev = cur
    return params, e_step(features, params), trace


def frozen_nll(features, params: GmmParams, resp: np.ndarray) -> float:
    """Expected complete-data NLL with responsibilities held fixed.

    This majorizes the mixture NLL up to a constant, so any decrease in it
    guarantees the true NLL does not increase from the anchor point where
    the responsibilities were computed.
    """
    features = np.asarray(features, dtype=np.float64)
    return float(-np.sum(resp * _log_prob_matrix(features, params)))


def nll_grad_features(features, params: GmmParams, resp: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the mixture NLL with respect to each feature vector.

    grad_i = sum_k p_ik Sigma_k^-1 (z_i - mu_k). Passing a fixed
    responsibility matrix gives the frozen-responsibility surrogate used
    between E steps; omitting it differentiates the NLL exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    if resp is None:
        resp = e_step(features, params)
    grad = np.zeros_like(features)
    for k in range(params.K):
        diff = features - params.means[k]
        if params.covariance == "diag":
            sol = diff / params.covariances[k]
        else:
            chol = _cholesky(params.covariances[k], k)
            half = solve_triangular(chol, diff.T, lower=True)
            sol = solve_triangular(chol.T, half, lower=False).T
        grad += resp[:, k, None] * sol
    return grad


def params_to_dict(params: GmmParams, config: EmConfig | None = None) -> dict:
    out = {
        "version": 1,
        "K": params.K,
        "D": params.D,
        "covariance": params.covariance,
        "weights": params.weights.tolist(),
        "means": params.means.tolist(),
        "covariances": params.covariances.tolist(),
    }
    if config is not None:
        out["config"] = {
            "max_iterations": config.max_iterations,
            "tol": config.tol,
            "reg_epsilon": config.reg_epsilon,
            "seed": config.seed,
            "kmeans_iterations": config.kmeans_iterations,
            "covariance": config.covariance,
        }
    return out


def params_from_dict(payload: dict) -> GmmParams:
    return GmmParams(
        np.asarray(payload["weights"], dtype=np.float64),
        np.asarray(payload["means"], dtype=np.float64),
        np.asarray(payload["covariances"], dtype=np.float64),
        covariance=payload.get("covariance", "full"),
    )


def save_params(params: GmmParams, path, config: EmConfig | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params, config), fh, sort_keys=True)
        fh.write("\n")


def load_params(path) -> GmmParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
