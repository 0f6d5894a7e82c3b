"""The outer training loop: joint refinement of network weights and mixture.

Each outer iteration runs one E step and closed-form mixture update on the
current features, then a configurable number of gradient-descent steps on
the clustering loss with responsibilities held fixed (a generalized EM
move for the feature extractor), and finally re-evaluates the combined
loss. With lambda1 = 0 and zero weight steps the loop degenerates to plain
mixture EM on the initial features, bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .config import component_seed, fingerprint_mapping
from .errors import ConfigError, EmptyComponent, NonFiniteLoss, SingleCluster
from .gasf import encode_series_images
from .gmm import (
    EmConfig,
    GmmParams,
    e_step,
    effective_ridge,
    frozen_nll,
    kmeans_init,
    m_step,
    nll,
    nll_grad_features,
)
from .metrics import aic, bic, silhouette
from .net import (
    NetConfig,
    NetworkState,
    apply_gradients,
    backward,
    compute_features,
    forward,
    image_to_input,
    init_weights,
    load_weights,
)
from .series import ScenarioSeries, TypicalScenario


def _feature_norm_loss(features: np.ndarray):
    value = 0.5 * float(np.mean(np.sum(features * features, axis=1)))
    grad = features / features.shape[0]
    return value, grad


def _zero_loss(features: np.ndarray):
    return 0.0, np.zeros_like(features)


NET_LOSS_HOOKS = {
    "feature_norm": _feature_norm_loss,
    "zero": _zero_loss,
}


@dataclass(frozen=True)
class DtsaConfig:
    """Knobs for the joint fit; loss weights must satisfy l1 + l2 = 1."""

    lambda1: float = 0.0
    lambda2: float = 1.0
    k: int = 4
    outer_iterations: int = 10
    omega_steps_per_iteration: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 0  # 0 means full batch
    seed: int = 0
    em_config: EmConfig = field(default_factory=EmConfig)
    net_config: NetConfig = field(default_factory=NetConfig)
    weights_file: str | None = None
    net_loss: str = "feature_norm"

    def __post_init__(self):
        validate_loss_weights(self.lambda1, self.lambda2)
        if self.net_loss not in NET_LOSS_HOOKS:
            raise ConfigError(f"unknown net loss hook {self.net_loss!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def mapping(self) -> dict:
        """Flat representation used for fingerprinting and manifests."""
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "k": self.k,
            "outer_iterations": self.outer_iterations,
            "omega_steps": self.omega_steps_per_iteration,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "net_loss": self.net_loss,
            "weights_file": self.weights_file or "",
            "em.max_iterations": self.em_config.max_iterations,
            "em.tol": self.em_config.tol,
            "em.reg_epsilon": self.em_config.reg_epsilon,
            "em.kmeans_iterations": self.em_config.kmeans_iterations,
            "em.covariance": self.em_config.covariance,
            "image_size": self.net_config.input_size,
            "net.blocks": str(self.net_config.blocks),
            "net.kernel_size": self.net_config.kernel_size,
            "net.padding": self.net_config.padding,
            "net.pool_size": self.net_config.pool_size,
            "net.pool_stride": self.net_config.pool_stride,
            "net.dtype": self.net_config.dtype,
        }

    def fingerprint(self) -> str:
        return fingerprint_mapping(self.mapping())


def validate_loss_weights(lambda1: float, lambda2: float) -> None:
    if lambda1 < 0:
        raise ConfigError("lambda1 must be non-negative")
    if lambda2 <= 0:
        raise ConfigError("lambda2 must be positive")
    if abs(lambda1 + lambda2 - 1.0) > 1e-12:
        raise ConfigError(f"lambda1 + lambda2 must equal 1, got {lambda1 + lambda2!r}")


def combined_loss(l_net: float, l_clustering: float, lambda1: float, lambda2: float) -> float:
    """Weighted training objective; lambda1 = 0 is plain clustering."""
    validate_loss_weights(lambda1, lambda2)
    return lambda1 * l_net + lambda2 * l_clustering


@dataclass(frozen=True)
class ScenarioCatalog:
    """Extracted typical scenarios plus the per-snapshot assignment."""

    scenarios: tuple
    assignment: np.ndarray  # 1-based scenario id per snapshot
    posteriors: np.ndarray  # posterior of the assigned scenario
    config_fingerprint: str

    def __post_init__(self):
        self.assignment.setflags(write=False)
        self.posteriors.setflags(write=False)
        ids = {s.id for s in self.scenarios}
        if ids != set(range(1, len(self.scenarios) + 1)):
            raise ValueError("scenario ids must be 1..K")
        if set(np.unique(self.assignment)) - ids:
            raise ValueError("assignment refers to unknown scenario ids")

    @property
    def k(self) -> int:
        return len(self.scenarios)


@dataclass
class TrainReport:
    loss_trace: list
    final_sc: float
    final_aic: float
    final_bic: float
    wall_clock: dict
    complexity: dict
    seed: int
    config_fingerprint: str
    iterations_run: int
    events: list = field(default_factory=list)


class ComplexityEstimate(NamedTuple):
    o_conv: int
    o_e: int
    o_m: int
    o_clustering: int
    total: int


def complexity_estimate(
    net_config: NetConfig, n_sample: int, k: int, d: int, n_epoch: int
) -> ComplexityEstimate:
    """Closed-form operation counts for the conv and clustering stages."""
    size = net_config.input_size
    o_conv = 0
    for block in net_config.blocks:
        for n_kernel in block:
            size = (size + 2 * net_config.padding - net_config.kernel_size) // net_config.conv_stride + 1
            o_conv += size * size * n_kernel * net_config.kernel_size * net_config.kernel_size
        size = (size - net_config.pool_size) // net_config.pool_stride + 1
    o_e = n_sample * k * d
    o_m = n_sample * d + n_sample * d * d + n_sample * k
    o_clustering = (o_e + o_m) * n_epoch
    return ComplexityEstimate(o_conv, o_e, o_m, o_clustering, o_conv + o_clustering)


def encode_inputs(series: ScenarioSeries, image_size: int):
    """Series to resized scenario images, one per snapshot."""
    from .series import normalize_series

    return encode_series_images(normalize_series(series), image_size)


def extract_typical_scenarios(series, features, params: GmmParams, resp: np.ndarray) -> ScenarioCatalog:
    """Catalog of max-posterior medoids, one per mixture component.

    The representative of component k is the historical snapshot with the
    highest posterior for k (earliest timestamp on ties); membership comes
    from each snapshot's argmax posterior.
    """
    assignment0 = resp.argmax(axis=1)
    k = params.K
    scenarios = []
    for comp in range(k):
        members = np.flatnonzero(assignment0 == comp)
        if members.size == 0:
            raise EmptyComponent(f"component {comp} has no argmax members", component=comp)
        rep_idx = int(resp[:, comp].argmax())
        scenarios.append(
            TypicalScenario(
                id=comp + 1,
                representative=series.snapshots[rep_idx],
                feature_centroid=tuple(params.means[comp]),
                member_count=int(members.size),
                mixture_weight=float(params.weights[comp]),
            )
        )
    posteriors = resp[np.arange(resp.shape[0]), assignment0]
    return ScenarioCatalog(
        tuple(scenarios),
        (assignment0 + 1).astype(np.int64),
        posteriors.astype(np.float64),
        config_fingerprint="",
    )


def _reseed_component(features, params: GmmParams, comp: int, ridge: float) -> GmmParams:
    """Move a collapsed component to the point the mixture explains worst."""
    from .gmm import _log_prob_matrix, _logsumexp_rows

    per_point = -_logsumexp_rows(_log_prob_matrix(features, params))
    target = features[int(per_point.argmax())]
    means = params.means.copy()
    means[comp] = target
    weights = params.weights.copy()
    weights[comp] = 1.0 / params.K
    weights /= weights.sum()
    covs = params.covariances.copy()
    centered = features - features.mean(axis=0)
    if params.covariance == "diag":
        covs[comp] = centered.var(axis=0) + ridge
    else:
        covs[comp] = centered.T @ centered / features.shape[0] + ridge * np.eye(params.D)
    return GmmParams(weights, means, covs, covariance=params.covariance)


def _batches(n: int, batch_size: int):
    if batch_size <= 0 or batch_size >= n:
        return [np.arange(n)]
    return [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def dtsa_fit(series: ScenarioSeries, config: DtsaConfig):
    """Full fit from a raw series: encode, train, extract.

    Returns (network, mixture params, catalog, report).
    """
    t0 = time.perf_counter()
    images = encode_inputs(series, config.net_config.input_size)
    encode_seconds = time.perf_counter() - t0
    return fit_encoded(series, images, config, encode_seconds=encode_seconds)


def fit_encoded(series: ScenarioSeries, images, config: DtsaConfig, encode_seconds: float = 0.0):
    """Fit on pre-encoded images (shared-image path used by select_k)."""
    if len(images) != len(series):
        raise ConfigError("image count does not match snapshot count")
    if len(series) < config.k:
        raise ConfigError(f"{len(series)} snapshots cannot support k={config.k}")
    wall = {"encode": encode_seconds}
    events: list = []
    t0 = time.perf_counter()

    if config.weights_file:
        net = load_weights(config.weights_file, dtype=config.net_config.dtype)
    else:
        net = init_weights(config.net_config, seed=component_seed(config.seed, "net_init"))
    inputs = [image_to_input(img, net.dtype) for img in images]
    features = compute_features(inputs, net)
    em_cfg = replace(config.em_config, seed=component_seed(config.seed, "kmeans"))
    params = kmeans_init(features, config.k, em_cfg)
    ridge = effective_ridge(features, em_cfg.reg_epsilon)
    hook = NET_LOSS_HOOKS[config.net_loss]
    wall["init"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    trace = []
    prev = np.inf
    iterations_run = 0
    for it in range(config.outer_iterations):
        resp = e_step(features, params)
        # collapsed components are re-seeded at the worst-explained point;
        # several may collapse in one sweep, so retry up to K times
        for _attempt in range(config.k + 1):
            try:
                params = m_step(features, resp, ridge, covariance=em_cfg.covariance)
                break
            except EmptyComponent as exc:
                if _attempt == config.k:
                    exc.iteration = it
                    raise
                events.append(f"iteration {it}: re-seeded component {exc.component}")
                params = _reseed_component(features, params, exc.component, ridge)
                resp = e_step(features, params)

        if config.omega_steps_per_iteration > 0:
            net, refreshed = _refine_network(net, inputs, params, resp, config)
            features = refreshed if refreshed is not None else compute_features(inputs, net)

        l_clustering = nll(features, params)
        l_net = hook(features)[0] if config.lambda1 > 0 else 0.0
        loss = combined_loss(l_net, l_clustering, config.lambda1, config.lambda2)
        trace.append(
            {"iteration": it, "loss": loss, "l_net": l_net, "l_clustering": l_clustering}
        )
        iterations_run = it + 1
        if not np.isfinite(loss):
            raise NonFiniteLoss(
                f"combined loss became {loss!r} at iteration {it}",
                state={
                    "iteration": it,
                    "l_net": l_net,
                    "l_clustering": l_clustering,
                    "weights": params.weights.tolist(),
                    "feature_norm_max": float(np.abs(features).max()),
                },
            )
        if abs(prev - loss) < em_cfg.tol:
            break
        prev = loss
    wall["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    resp = e_step(features, params)
    # a component can end up with positive weight but nobody's argmax;
    # rescue it the same way collapsed components are handled mid-fit
    for _attempt in range(config.k + 1):
        try:
            catalog = extract_typical_scenarios(series, features, params, resp)
            break
        except EmptyComponent as exc:
            if _attempt == config.k:
                raise
            events.append(f"final: re-seeded component {exc.component} with no members")
            params = _reseed_component(features, params, exc.component, ridge)
            resp = e_step(features, params)
    catalog = replace(catalog, config_fingerprint=config.fingerprint())
    labels = catalog.assignment
    try:
        sc = silhouette(features, labels) if len(np.unique(labels)) > 1 else float("nan")
    except SingleCluster:
        sc = float("nan")
    loglik = -nll(features, params)
    k_params = params.n_parameters()
    report = TrainReport(
        loss_trace=trace,
        final_sc=sc,
        final_aic=aic(k_params, loglik),
        final_bic=bic(k_params, len(series), loglik),
        wall_clock=wall,
        complexity=complexity_estimate(
            config.net_config,
            len(series),
            config.k,
            net.feature_dim,
            em_cfg.max_iterations,
        )._asdict(),
        seed=config.seed,
        config_fingerprint=config.fingerprint(),
        iterations_run=iterations_run,
        events=events,
    )
    wall["extract"] = time.perf_counter() - t0
    return net, params, catalog, report


_MAX_HALVINGS = 20
_GRAD_CLIP = 5.0  # global weight-gradient norm; near-singular mixtures
                  # produce huge raw gradients along ridge-floored axes


def _step_objective(zs: np.ndarray, params, resp_rows, config: DtsaConfig) -> float:
    """Per-sample-mean frozen-responsibility objective the weight step descends."""
    value = config.lambda2 * frozen_nll(zs, params, resp_rows) / zs.shape[0]
    if config.lambda1 > 0:
        value += config.lambda1 * NET_LOSS_HOOKS[config.net_loss](zs)[0]
    return value


def _refine_network(net, inputs, params, resp, config: DtsaConfig):
    """Gradient steps on the clustering loss with responsibilities frozen.

    The weight gradient is norm-clipped and each step backtracks (halving
    the learning rate, bounded) until the frozen-responsibility objective
    does not increase; a step that cannot be made non-increasing is
    skipped. Returns (net, features) where features are the full-set
    feature rows under the returned weights when available, else None.
    """
    n = len(inputs)
    batches = _batches(n, config.batch_size)
    full_batch = len(batches) == 1
    batch_cursor = 0
    latest_features = None
    for _ in range(config.omega_steps_per_iteration):
        idx = batches[batch_cursor % len(batches)]
        batch_cursor += 1
        batch_inputs = [inputs[i] for i in idx]
        zs = np.empty((len(idx), net.feature_dim), dtype=np.float64)
        for row, i in enumerate(idx):
            z, _ = forward(inputs[i], net)
            zs[row] = z
        if full_batch:
            latest_features = zs
        base = _step_objective(zs, params, resp[idx], config)
        # per-sample-mean step direction; scaling by the batch size keeps
        # the learning rate meaningful across dataset sizes
        gz = (config.lambda2 / len(idx)) * nll_grad_features(zs, params, resp[idx])
        if config.lambda1 > 0:
            gz += config.lambda1 * NET_LOSS_HOOKS[config.net_loss](zs)[1]
        if not np.isfinite(gz).all():
            continue

        grads_total = None
        for row, i in enumerate(idx):
            _, cache = forward(inputs[i], net)
            grads, _ = backward(gz[row], cache, net)
            if grads_total is None:
                grads_total = [g if g is None else [g[0].copy(), g[1].copy()] for g in grads]
            else:
                for acc, g in zip(grads_total, grads):
                    if g is not None:
                        acc[0] += g[0]
                        acc[1] += g[1]
        grads_total = [None if g is None else tuple(g) for g in grads_total]

        sq = 0.0
        for g in grads_total:
            if g is not None:
                sq += float(np.sum(g[0] * g[0]) + np.sum(g[1] * g[1]))
        gnorm = np.sqrt(sq)
        if not np.isfinite(gnorm) or gnorm == 0.0:
            continue
        if gnorm > _GRAD_CLIP:
            scale = _GRAD_CLIP / gnorm
            grads_total = [
                None if g is None else (g[0] * scale, g[1] * scale) for g in grads_total
            ]

        lr = config.learning_rate
        for _halving in range(_MAX_HALVINGS + 1):
            candidate = apply_gradients(net, grads_total, lr)
            zs_new = compute_features(batch_inputs, candidate)
            value = _step_objective(zs_new, params, resp[idx], config)
            if np.isfinite(value) and value <= base + 1e-12 * (1.0 + abs(base)):
                net = candidate
                if full_batch:
                    latest_features = zs_new
                break
            lr *= 0.5
        # all halvings rejected: keep the current weights for this step
    return net, latest_features


def select_k(series: ScenarioSeries, config: DtsaConfig, k_range):
    """Fit per candidate component count, pick the lowest BIC.

    Images are encoded once and shared across candidates. Failures are
    recorded in the table rather than aborting the sweep. Returns
    (best_k, table) where table rows are dicts with K/SC/AIC/BIC entries.
    """
    k_values = sorted(set(int(k) for k in k_range))
    if not k_values:
        raise ConfigError("empty K range")
    if k_values[0] < 1 or k_values[-1] > len(series):
        raise ConfigError(f"K range must lie within [1, {len(series)}]")
    t0 = time.perf_counter()
    images = encode_inputs(series, config.net_config.input_size)
    encode_seconds = time.perf_counter() - t0
    table = []
    results = {}
    for k in k_values:
        cfg = replace(config, k=k)
        try:
            net, params, catalog, report = fit_encoded(
                series, images, cfg, encode_seconds=encode_seconds
            )
            table.append(
                {
                    "K": k,
                    "SC": report.final_sc,
                    "AIC": report.final_aic,
                    "BIC": report.final_bic,
                    "error": "",
                }
            )
            results[k] = (net, params, catalog, report)
        except Exception as exc:  # recorded, not fatal
            table.append(
                {"K": k, "SC": float("nan"), "AIC": float("nan"), "BIC": float("nan"), "error": str(exc)}
            )
    ok_rows = [row for row in table if not row["error"]]
    if not ok_rows:
        raise NonFiniteLoss("every K candidate failed", state={"table": table})
    best = min(ok_rows, key=lambda row: row["BIC"])["K"]
    return best, table, results[best]


def snapshot_to_dict(s) -> dict:
    return {
        "timestamp": s.timestamp,
        "gen_traditional": list(s.gen_traditional),
        "gen_renewable": list(s.gen_renewable),
        "loads": list(s.loads),
    }


def catalog_to_dict(catalog: ScenarioCatalog) -> dict:
    members = {s.id: [] for s in catalog.scenarios}
    for idx, sid in enumerate(catalog.assignment.tolist()):
        members[sid].append(idx)
    return {
        "version": 1,
        "config_fingerprint": catalog.config_fingerprint,
        "k": catalog.k,
        "scenarios": [
            {
                "id": s.id,
                "representative": snapshot_to_dict(s.representative),
                "feature_centroid": list(s.feature_centroid),
                "member_count": s.member_count,
                "mixture_weight": s.mixture_weight,
                "member_ids": members[s.id],
            }
            for s in catalog.scenarios
        ],
        "assignment": catalog.assignment.tolist(),
        "posteriors": catalog.posteriors.tolist(),
    }


def save_catalog(catalog: ScenarioCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog_to_dict(catalog), fh, sort_keys=True)
        fh.write("\n")


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def report_to_dict(report: TrainReport) -> dict:
    """Deterministic report payload; measured wall-clock stays out of it.

    Timing is run metadata (like manifest timestamps) and is exported
    separately so primary outputs remain byte-identical across reruns.
    """
    return _json_safe(
        {
            "loss_trace": report.loss_trace,
            "final_sc": report.final_sc,
            "final_aic": report.final_aic,
            "final_bic": report.final_bic,
            "complexity": report.complexity,
            "seed": report.seed,
            "config_fingerprint": report.config_fingerprint,
            "iterations_run": report.iterations_run,
            "events": report.events,
        }
    )


def save_report(report: TrainReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True)
        fh.write("\n")
