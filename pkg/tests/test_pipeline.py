import dataclasses

import numpy as np
import pytest

from dtsa.config import component_seed
from dtsa.errors import ConfigError, EmptyComponent, NonFiniteLoss
from dtsa.gmm import EmConfig, GmmParams, e_step, em_fit, kmeans_init, nll
from dtsa.net import NetConfig, compute_features, desk_config, image_to_input, init_weights
from dtsa.pipeline import (
    DtsaConfig,
    NET_LOSS_HOOKS,
    _reseed_component,
    _refine_network,
    combined_loss,
    complexity_estimate,
    dtsa_fit,
    encode_inputs,
    extract_typical_scenarios,
    fit_encoded,
    select_k,
)
from dtsa.series import ScenarioSeries, Snapshot
from dtsa.synth import GridConfig, RegimeSpec, generate

rng = np.random.default_rng(0)


def small_series(days=1, seed=0, regimes=3, noise=0.3):
    menu = [
        (1.0, "peak", "idle"),
        (0.0, "valley", "idle"),
        (0.6, "flat", "discharge"),
        (0.3, "flat", "charge"),
    ]
    cfg = GridConfig(
        n_thermal=4,
        n_renewable=3,
        n_load=5,
        n_storage_loads=2,
        thermal_capacity=800.0,
        renewable_capacity=240.0,
        peak_load=500.0,
        regimes=tuple(
            RegimeSpec(i, lv, sh, md, dwell=8, noise_sigma=noise)
            for i, (lv, sh, md) in enumerate(menu[:regimes])
        ),
        resolution=900,
        days=days,
        seed=seed,
        profile_amplitude=0.0,
    )
    return generate(cfg)


def small_config(**overrides):
    defaults = dict(
        k=3,
        outer_iterations=4,
        omega_steps_per_iteration=0,
        learning_rate=1e-4,
        seed=0,
        em_config=EmConfig(covariance="diag", reg_epsilon=1e-2, max_iterations=4),
        net_config=desk_config(input_size=16, channels=(4, 8)),
    )
    defaults.update(overrides)
    return DtsaConfig(**defaults)


def test_combined_loss_pure_clustering():
    assert combined_loss(123.0, 7.5, 0.0, 1.0) == 7.5


def test_combined_loss_weighted():
    assert combined_loss(2.0, 4.0, 0.5, 0.5) == 3.0


def test_combined_loss_invalid_weights():
    with pytest.raises(ConfigError):
        combined_loss(1.0, 1.0, 0.3, 0.6)
    with pytest.raises(ConfigError):
        combined_loss(1.0, 1.0, -0.1, 1.1)
    with pytest.raises(ConfigError):
        combined_loss(1.0, 1.0, 1.0, 0.0)


def test_config_validates_weights():
    with pytest.raises(ConfigError):
        DtsaConfig(lambda1=0.4, lambda2=0.7)


def test_complexity_single_conv_layer():
    cfg = NetConfig(input_size=224, blocks=((64,),), kernel_size=3, padding=1)
    est = complexity_estimate(cfg, 1, 1, 1, 1)
    assert est.o_conv == 224 * 224 * 64 * 9 == 28_901_376


def test_complexity_e_step_term():
    cfg = NetConfig(input_size=8, blocks=((4,),))
    est = complexity_estimate(cfg, 100, 5, 8, 1)
    assert est.o_e == 4000


def test_complexity_clustering_total():
    cfg = NetConfig(input_size=8, blocks=((4,),))
    est = complexity_estimate(cfg, 100, 5, 8, 10)
    assert est.o_clustering == (4000 + 800 + 6400 + 500) * 10 == 117_000
    assert est.total == est.o_conv + est.o_clustering


def test_complexity_matches_independent_recompute():
    r = np.random.default_rng(5)
    for _ in range(10):
        blocks = tuple(
            tuple(int(r.integers(2, 32)) for _ in range(int(r.integers(1, 3))))
            for _ in range(int(r.integers(1, 3)))
        )
        cfg = NetConfig(input_size=int(r.integers(16, 64)), blocks=blocks)
        n, k, d, epochs = (
            int(r.integers(10, 500)),
            int(r.integers(1, 9)),
            int(r.integers(2, 64)),
            int(r.integers(1, 50)),
        )
        est = complexity_estimate(cfg, n, k, d, epochs)
        size = cfg.input_size
        conv = 0
        for block in blocks:
            for ch in block:
                size = (size + 2 * cfg.padding - cfg.kernel_size) // cfg.conv_stride + 1
                conv += size * size * ch * cfg.kernel_size**2
            size = (size - cfg.pool_size) // cfg.pool_stride + 1
        o_e = n * k * d
        o_m = n * d + n * d * d + n * k
        assert est == (conv, o_e, o_m, (o_e + o_m) * epochs, conv + (o_e + o_m) * epochs)


def _initial_features(series, config):
    images = encode_inputs(series, config.net_config.input_size)
    net = init_weights(config.net_config, seed=component_seed(config.seed, "net_init"))
    inputs = [image_to_input(img, net.dtype) for img in images]
    return compute_features(inputs, net)


def test_degenerate_schedule_matches_em_fit_bitwise():
    series = small_series()
    config = small_config(lambda1=0.0, lambda2=1.0, omega_steps_per_iteration=0)
    _, params, catalog, report = dtsa_fit(series, config)

    features = _initial_features(series, config)
    em_cfg = dataclasses.replace(
        config.em_config,
        seed=component_seed(config.seed, "kmeans"),
        max_iterations=config.outer_iterations,
    )
    ref_params, ref_resp, ref_trace = em_fit(features, config.k, em_cfg)
    assert np.array_equal(params.weights, ref_params.weights)
    assert np.array_equal(params.means, ref_params.means)
    assert np.array_equal(params.covariances, ref_params.covariances)
    assert [row["l_clustering"] for row in report.loss_trace] == ref_trace


def test_fit_deterministic_same_seed():
    series = small_series()
    config = small_config(omega_steps_per_iteration=1, outer_iterations=2)
    net_a, params_a, catalog_a, _ = dtsa_fit(series, config)
    net_b, params_b, catalog_b, _ = dtsa_fit(series, config)
    assert np.array_equal(params_a.means, params_b.means)
    assert np.array_equal(catalog_a.assignment, catalog_b.assignment)
    for la, lb in zip(net_a.layers, net_b.layers):
        if hasattr(la, "weights"):
            assert np.array_equal(la.weights, lb.weights)


def test_catalog_coverage_and_ids():
    series = small_series()
    config = small_config()
    _, _, catalog, _ = dtsa_fit(series, config)
    assert sum(s.member_count for s in catalog.scenarios) == len(series)
    assert sorted(s.id for s in catalog.scenarios) == [1, 2, 3]
    assert set(np.unique(catalog.assignment)) <= {1, 2, 3}
    for s in catalog.scenarios:
        assert s.member_count >= 1
        assert 0 < s.mixture_weight <= 1


def test_loss_trace_finite():
    series = small_series()
    _, _, _, report = dtsa_fit(series, small_config(omega_steps_per_iteration=1, outer_iterations=3))
    for row in report.loss_trace:
        assert np.isfinite(row["loss"])


def test_extract_one_hot_membership():
    series = small_series()
    feats = rng.normal(size=(len(series), 4))
    k = 3
    resp = np.zeros((len(series), k))
    resp[np.arange(len(series)), np.arange(len(series)) % k] = 1.0
    params = GmmParams(
        np.full(k, 1 / 3),
        np.stack([feats[resp[:, j] == 1].mean(0) for j in range(k)]),
        np.stack([np.eye(4)] * k),
    )
    catalog = extract_typical_scenarios(series, feats, params, resp)
    for s in catalog.scenarios:
        rep_idx = series.snapshots.index(s.representative)
        assert catalog.assignment[rep_idx] == s.id


def test_extract_tie_earliest_timestamp():
    series = small_series()
    n = len(series)
    resp = np.full((n, 2), 0.5)
    resp[3, 0] = 0.9
    resp[3, 1] = 0.1
    resp[5, 1] = 0.9
    resp[5, 0] = 0.1
    # rows 0..2 tie at 0.5 for both components; argmax must take row 0
    params = GmmParams(
        np.array([0.5, 0.5]), rng.normal(size=(2, 4)), np.stack([np.eye(4)] * 2)
    )
    feats = rng.normal(size=(n, 4))
    catalog = extract_typical_scenarios(series, feats, params, resp)
    # component 1's best posterior is 0.9 at row 3; component 2's at row 5
    assert catalog.scenarios[0].representative == series.snapshots[3]
    assert catalog.scenarios[1].representative == series.snapshots[5]
    resp[3] = [0.5, 0.5]
    resp[5] = [0.5, 0.5]
    catalog = extract_typical_scenarios(series, feats, params, resp)
    assert catalog.scenarios[0].representative == series.snapshots[0]


def test_extract_empty_component_error():
    series = small_series()
    n = len(series)
    resp = np.zeros((n, 2))
    resp[:, 0] = 1.0
    params = GmmParams(
        np.array([0.999, 0.001]) / 1.0, rng.normal(size=(2, 4)), np.stack([np.eye(4)] * 2)
    )
    with pytest.raises(EmptyComponent):
        extract_typical_scenarios(series, rng.normal(size=(n, 4)), params, resp)


def test_reseed_component_targets_worst_point():
    feats = np.vstack([rng.normal(size=(30, 2)), np.array([[40.0, 40.0]])])
    params = GmmParams(
        np.array([0.5, 0.5]),
        np.array([[0.0, 0.0], [1.0, 1.0]]),
        np.stack([np.eye(2)] * 2),
    )
    out = _reseed_component(feats, params, 1, ridge=1e-6)
    assert np.array_equal(out.means[1], feats[-1])
    assert out.weights.sum() == pytest.approx(1.0)


def test_omega_step_does_not_increase_nll():
    series = small_series()
    config = small_config(omega_steps_per_iteration=1, learning_rate=1e-3)
    images = encode_inputs(series, config.net_config.input_size)
    net = init_weights(config.net_config, seed=component_seed(config.seed, "net_init"))
    inputs = [image_to_input(img, net.dtype) for img in images]
    features = compute_features(inputs, net)
    em_cfg = dataclasses.replace(config.em_config, seed=component_seed(config.seed, "kmeans"))
    params = kmeans_init(features, config.k, em_cfg)
    resp = e_step(features, params)
    before = nll(features, params)
    new_net, refreshed = _refine_network(net, inputs, params, resp, config)
    after_feats = refreshed if refreshed is not None else compute_features(inputs, new_net)
    assert nll(after_feats, params) <= before + 1e-9


def test_lambda1_feature_norm_hook_runs():
    series = small_series()
    config = small_config(lambda1=0.25, lambda2=0.75, omega_steps_per_iteration=1, outer_iterations=2)
    _, _, _, report = dtsa_fit(series, config)
    assert all(row["l_net"] > 0 for row in report.loss_trace)


def test_non_finite_loss_aborts_with_state():
    series = small_series()
    NET_LOSS_HOOKS["explode"] = lambda feats: (float("nan"), np.zeros_like(feats))
    try:
        config = small_config(
            lambda1=0.5, lambda2=0.5, net_loss="explode", omega_steps_per_iteration=0,
            outer_iterations=2,
        )
        with pytest.raises(NonFiniteLoss) as err:
            dtsa_fit(series, config)
        assert "iteration" in err.value.state
    finally:
        del NET_LOSS_HOOKS["explode"]


def test_select_k_single_candidate():
    series = small_series()
    best, table, _ = select_k(series, small_config(), [3])
    assert best == 3
    assert len(table) == 1 and table[0]["K"] == 3


def test_select_k_k_equals_one():
    series = small_series(regimes=2)
    best, table, _ = select_k(series, small_config(k=1), [1])
    assert best == 1
    assert np.isfinite(table[0]["BIC"])


def test_select_k_range_validation():
    series = small_series()
    with pytest.raises(ConfigError):
        select_k(series, small_config(), [])
    with pytest.raises(ConfigError):
        select_k(series, small_config(), [0, 3])


def test_weight_file_config_path(tmp_path):
    from dtsa.net import save_weights

    series = small_series()
    config = small_config()
    net = init_weights(config.net_config, seed=77)
    path = tmp_path / "w.bin"
    save_weights(net, path)
    cfg2 = small_config(weights_file=str(path), net_config=desk_config(input_size=16, channels=(4, 8), dtype="float64"))
    net_used, _, _, _ = dtsa_fit(series, cfg2)
    for la, lb in zip(net_used.layers, net.layers):
        if hasattr(la, "weights"):
            assert np.allclose(la.weights, lb.weights, atol=1e-7)  # float32 file payload
