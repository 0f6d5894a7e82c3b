import math

import numpy as np
import pytest

from dtsa.errors import DegenerateData, EmptyComponent
from dtsa.gmm import (
    EmConfig,
    GmmParams,
    e_step,
    em_fit,
    frozen_nll,
    kmeans,
    kmeans_init,
    load_params,
    log_density,
    m_step,
    nll,
    nll_grad_features,
    save_params,
)
from dtsa.metrics import adjusted_rand_index

rng = np.random.default_rng(0)


def diag_params(weights, means, variances):
    return GmmParams(
        np.asarray(weights, float), np.asarray(means, float), np.asarray(variances, float), "diag"
    )


def full_params(weights, means, covs):
    return GmmParams(
        np.asarray(weights, float), np.asarray(means, float), np.asarray(covs, float), "full"
    )


def test_log_density_standard_normal_origin():
    # oracle: -0.5*ln(2*pi)
    val = log_density(np.zeros(1), np.zeros(1), np.eye(1))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_density_2d_identity_at_mean():
    val = log_density(np.ones(2), np.ones(2), np.eye(2))
    assert val == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_log_density_maximized_at_mean():
    mu = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    at_mean = log_density(mu, mu, cov)
    for _ in range(20):
        z = mu + rng.normal(size=2)
        assert log_density(z, mu, cov) <= at_mean


def test_log_density_matches_naive_formula():
    for _ in range(30):
        d = rng.integers(1, 5)
        a = rng.normal(size=(d, d))
        cov = a @ a.T + np.eye(d)
        mu = rng.normal(size=d)
        z = rng.normal(size=d)
        naive = (
            -0.5 * d * math.log(2 * math.pi)
            - 0.5 * math.log(np.linalg.det(cov))
            - 0.5 * (z - mu) @ np.linalg.solve(cov, z - mu)
        )
        assert log_density(z, mu, cov) == pytest.approx(naive, abs=1e-10)


def test_log_density_diag_equals_full():
    var = np.array([0.5, 2.0, 1.3])
    mu = rng.normal(size=3)
    z = rng.normal(size=3)
    assert log_density(z, mu, var) == pytest.approx(log_density(z, mu, np.diag(var)), abs=1e-12)


def test_nll_single_point_at_mean():
    params = full_params([1.0], [[0.0]], [[[1.0]]])
    val = nll(np.zeros((1, 1)), params)
    assert val == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)


def test_nll_duplication_doubles():
    params = full_params([0.4, 0.6], [[0.0, 0.0], [2.0, 1.0]], [np.eye(2), np.eye(2)])
    pts = rng.normal(size=(10, 2))
    single = nll(pts, params)
    double = nll(np.vstack([pts, pts]), params)
    assert double == pytest.approx(2 * single, rel=1e-12)


def test_nll_vanishing_weight_matches_single_component():
    pts = rng.normal(size=(25, 1))
    one = full_params([1.0], [[0.0]], [[[1.0]]])
    two = full_params([1.0 - 1e-12, 1e-12], [[0.0], [50.0]], [[[1.0]], [[1.0]]])
    assert nll(pts, two) == pytest.approx(nll(pts, one), abs=1e-6)


def test_e_step_single_component_is_one():
    params = full_params([1.0], [[0.0, 0.0]], [np.eye(2)])
    resp = e_step(rng.normal(size=(8, 2)), params)
    assert np.array_equal(resp, np.ones((8, 1)))


def test_e_step_identical_components_half():
    params = full_params([0.5, 0.5], [[1.0], [1.0]], [[[2.0]], [[2.0]]])
    resp = e_step(rng.normal(size=(6, 1)), params)
    assert np.allclose(resp, 0.5)


def test_e_step_far_separated_component_wins():
    params = full_params([0.5, 0.5], [[0.0], [20.0]], [[[1.0]], [[1.0]]])
    resp = e_step(np.zeros((1, 1)), params)
    assert resp[0, 0] > 1 - 1e-10


def test_e_step_rows_sum_to_one():
    params = full_params(
        [0.2, 0.5, 0.3], rng.normal(size=(3, 4)), [np.eye(4)] * 3
    )
    resp = e_step(rng.normal(size=(50, 4)), params)
    assert np.abs(resp.sum(axis=1) - 1.0).max() < 1e-10
    assert resp.min() >= 0 and resp.max() <= 1


def test_m_step_hard_responsibilities_group_means():
    pts = np.array([[0.0], [1.0], [10.0], [12.0]])
    resp = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    params = m_step(pts, resp, 1e-9)
    assert params.means[0, 0] == pytest.approx(0.5)
    assert params.means[1, 0] == pytest.approx(11.0)
    assert np.allclose(params.weights, [0.5, 0.5])


def test_m_step_uniform_responsibilities_global_moments():
    pts = rng.normal(size=(40, 2))
    resp = np.full((40, 2), 0.5)
    params = m_step(pts, resp, 1e-12)
    global_mean = pts.mean(axis=0)
    global_cov = (pts - global_mean).T @ (pts - global_mean) / 40
    for k in range(2):
        assert np.allclose(params.means[k], global_mean)
        assert np.allclose(params.covariances[k], global_cov + 1e-12 * np.eye(2), atol=1e-12)


def test_m_step_two_point_variance():
    pts = np.array([[0.0], [2.0]])
    resp = np.ones((2, 1))
    eps = 0.25
    params = m_step(pts, resp, eps)
    assert params.means[0, 0] == pytest.approx(1.0)
    assert params.covariances[0, 0, 0] == pytest.approx(1.0 + eps)


def test_m_step_weight_normalization_exact():
    pts = rng.normal(size=(30, 3))
    raw = rng.uniform(0.01, 1, size=(30, 4))
    resp = raw / raw.sum(axis=1, keepdims=True)
    params = m_step(pts, resp, 1e-9)
    assert abs(params.weights.sum() - 1.0) < 1e-12


def test_m_step_empty_component():
    pts = rng.normal(size=(5, 2))
    resp = np.zeros((5, 2))
    resp[:, 0] = 1.0
    with pytest.raises(EmptyComponent) as err:
        m_step(pts, resp, 1e-9)
    assert err.value.component == 1


def test_kmeans_each_point_own_cluster():
    pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    centers, labels, inertia = kmeans(pts, 3, seed=0)
    assert sorted(labels.tolist()) == [0, 1, 2]
    assert inertia == pytest.approx(0.0)
    assert {tuple(c) for c in centers} == {tuple(p) for p in pts}


def test_kmeans_two_blobs():
    blob1 = rng.normal(size=(60, 2)) * 0.2
    blob2 = rng.normal(size=(60, 2)) * 0.2 + np.array([8.0, 8.0])
    pts = np.vstack([blob1, blob2])
    centers, labels, _ = kmeans(pts, 2, seed=1)
    order = np.argsort(centers[:, 0])
    assert np.linalg.norm(centers[order[0]] - blob1.mean(0)) < 0.1 * 0.2 * 10
    assert np.linalg.norm(centers[order[1]] - blob2.mean(0)) < 0.1 * 0.2 * 10
    assert len(set(labels[:60])) == 1 and len(set(labels[60:])) == 1


def test_kmeans_deterministic():
    pts = rng.normal(size=(100, 3))
    a = kmeans(pts, 4, seed=9)
    b = kmeans(pts, 4, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_kmeans_degenerate_data():
    pts = np.zeros((10, 2))
    with pytest.raises(DegenerateData):
        kmeans(pts, 2, seed=0)


def test_kmeans_init_params_shape_and_weights():
    pts = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 10])
    params = kmeans_init(pts, 2, EmConfig(seed=3))
    assert params.K == 2 and params.D == 2
    assert params.weights.sum() == pytest.approx(1.0)
    assert params.covariance == "full"


def test_kmeans_init_deterministic():
    pts = rng.normal(size=(50, 4))
    a = kmeans_init(pts, 3, EmConfig(seed=4))
    b = kmeans_init(pts, 3, EmConfig(seed=4))
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.covariances, b.covariances)


def make_blobs(n_per, centers, sigma, seed):
    r = np.random.default_rng(seed)
    pts, labels = [], []
    for i, c in enumerate(centers):
        pts.append(r.normal(size=(n_per, len(c))) * sigma + np.asarray(c))
        labels += [i] * n_per
    return np.vstack(pts), np.array(labels)


def test_em_single_gaussian_recovery():
    pts = rng.normal(size=(400, 2)) * 2.0 + np.array([3.0, -1.0])
    params, _, _ = em_fit(pts, 1, EmConfig(seed=0))
    # within 3 standard errors of the true mean
    se = 2.0 / math.sqrt(400)
    assert np.abs(params.means[0] - [3.0, -1.0]).max() < 3 * se


def test_em_three_blobs_ari_one():
    pts, labels = make_blobs(200, [(0, 0), (10, 0), (0, 10)], 1.0, seed=5)
    params, resp, trace = em_fit(pts, 3, EmConfig(seed=5))
    assert adjusted_rand_index(labels, resp.argmax(1)) == 1.0


def test_em_trace_non_increasing():
    pts, _ = make_blobs(100, [(0, 0), (6, 6)], 1.0, seed=6)
    for seed in range(5):
        _, _, trace = em_fit(pts, 2, EmConfig(seed=seed))
        diffs = np.diff(trace)
        assert (diffs <= 1e-9).all()


def test_em_translation_equivariance():
    pts, _ = make_blobs(80, [(0, 0), (7, 3)], 1.0, seed=8)
    shift = np.array([100.0, -50.0])
    cfg = EmConfig(seed=2)
    a, resp_a, _ = em_fit(pts, 2, cfg)
    b, resp_b, _ = em_fit(pts + shift, 2, cfg)
    assert np.abs((a.means + shift) - b.means).max() < 1e-8
    assert np.abs(a.covariances - b.covariances).max() < 1e-8
    assert np.abs(a.weights - b.weights).max() < 1e-8
    assert np.abs(resp_a - resp_b).max() < 1e-8


def test_em_diag_covariance_mode():
    pts, labels = make_blobs(100, [(0, 0), (12, 0)], 1.0, seed=9)
    params, resp, _ = em_fit(pts, 2, EmConfig(seed=9, covariance="diag"))
    assert params.covariances.shape == (2, 2)
    assert adjusted_rand_index(labels, resp.argmax(1)) == 1.0


def test_nll_grad_matches_finite_differences():
    pts = rng.normal(size=(6, 3))
    params = full_params(
        [0.3, 0.7],
        rng.normal(size=(2, 3)),
        [np.eye(3) * 0.8, np.eye(3) * 1.5 + 0.2 * np.ones((3, 3))],
    )
    grad = nll_grad_features(pts, params)
    h = 1e-6
    for i in range(pts.shape[0]):
        for j in range(pts.shape[1]):
            up = pts.copy()
            up[i, j] += h
            down = pts.copy()
            down[i, j] -= h
            fd = (nll(up, params) - nll(down, params)) / (2 * h)
            assert abs(fd - grad[i, j]) < 1e-6 * max(1.0, abs(fd))


def test_frozen_nll_majorizes_at_anchor():
    pts = rng.normal(size=(20, 2))
    params = full_params([0.5, 0.5], [[0.0, 0.0], [2.0, 2.0]], [np.eye(2), np.eye(2)])
    resp = e_step(pts, params)
    # entropy of responsibilities closes the gap between the two
    entropy = -np.sum(resp * np.log(np.maximum(resp, 1e-300)))
    assert frozen_nll(pts, params, resp) - entropy == pytest.approx(nll(pts, params), abs=1e-8)


def test_params_json_round_trip(tmp_path):
    pts, _ = make_blobs(50, [(0, 0), (5, 5)], 1.0, seed=11)
    params, _, _ = em_fit(pts, 2, EmConfig(seed=11))
    path = tmp_path / "gmm.json"
    save_params(params, path, EmConfig(seed=11))
    loaded = load_params(path)
    assert np.array_equal(loaded.weights, params.weights)
    assert np.array_equal(loaded.means, params.means)
    assert np.array_equal(loaded.covariances, params.covariances)
