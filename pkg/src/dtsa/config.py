"""Flat key-value config files, seed splitting, and config fingerprints.

All randomness in a run flows from one root seed. Sub-component seeds are
derived with numpy SeedSequence as entropy=root, spawn_key=(domain index,)
so they are reproducible and documented:

    synth=0  net_init=1  kmeans=2  omega=3  baseline=4  select_k=5
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError

DOMAINS = {
    "synth": 0,
    "net_init": 1,
    "kmeans": 2,
    "omega": 3,
    "baseline": 4,
    "select_k": 5,
}


def component_seed(root_seed: int, domain: str) -> int:
    """Deterministic per-domain child seed derived from the root seed."""
    try:
        key = DOMAINS[domain]
    except KeyError:
        raise ConfigError(f"unknown seed domain {domain!r}") from None
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(key,))
    return int(ss.generate_state(1)[0])


def fingerprint_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def fingerprint_mapping(mapping: dict) -> str:
    canon = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return fingerprint_text(canon)


def parse_config_file(path) -> dict:
    """Read a flat `key = value` file; '#' starts a comment, blanks ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{line_no}: empty key")
            out[key] = value.strip()
    return out


def _get(mapping, key, cast, default):
    if key not in mapping:
        return default
    raw = mapping[key]
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def _int_list(raw: str):
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def em_config_from(mapping: dict):
    from .gmm import EmConfig

    return EmConfig(
        max_iterations=_get(mapping, "em.max_iterations", int, 100),
        tol=_get(mapping, "em.tol", float, 1e-6),
        reg_epsilon=_get(mapping, "em.reg_epsilon", float, 1e-6),
        seed=_get(mapping, "em.seed", int, 0),
        kmeans_iterations=_get(mapping, "em.kmeans_iterations", int, 25),
        covariance=_get(mapping, "em.covariance", str, "full"),
    )


def net_config_from(mapping: dict):
    from .net import NetConfig

    channels = _get(mapping, "net.channels", _int_list, (8, 16, 32))
    return NetConfig(
        input_size=_get(mapping, "image_size", int, 32),
        blocks=tuple((c,) for c in channels),
        kernel_size=_get(mapping, "net.kernel_size", int, 3),
        padding=_get(mapping, "net.padding", int, 1),
        conv_stride=_get(mapping, "net.conv_stride", int, 1),
        pool_size=_get(mapping, "net.pool_size", int, 2),
        pool_stride=_get(mapping, "net.pool_stride", int, 2),
        dtype=_get(mapping, "net.dtype", str, "float64"),
    )


def dtsa_config_from(mapping: dict, seed_override: int | None = None):
    from .pipeline import DtsaConfig

    seed = seed_override if seed_override is not None else _get(mapping, "seed", int, 0)
    return DtsaConfig(
        lambda1=_get(mapping, "lambda1", float, 0.0),
        lambda2=_get(mapping, "lambda2", float, 1.0),
        k=_get(mapping, "k", int, 4),
        outer_iterations=_get(mapping, "outer_iterations", int, 10),
        omega_steps_per_iteration=_get(mapping, "omega_steps", int, 5),
        learning_rate=_get(mapping, "learning_rate", float, 1e-3),
        batch_size=_get(mapping, "batch_size", int, 0),
        seed=seed,
        em_config=em_config_from(mapping),
        net_config=net_config_from(mapping),
        weights_file=mapping.get("weights_file"),
        net_loss=_get(mapping, "net_loss", str, "feature_norm"),
    )


def grid_config_from(mapping: dict, seed_override: int | None = None):
    from . import synth

    seed = seed_override if seed_override is not None else _get(mapping, "seed", int, 0)
    name = mapping.get("grid.preset")
    days = _get(mapping, "grid.days", int, 1)
    if name:
        base = synth.preset(name, days=days, seed=seed)
    else:
        base = synth.GridConfig(
            n_thermal=_get(mapping, "grid.thermal", int, 6),
            n_renewable=_get(mapping, "grid.renewable", int, 4),
            n_load=_get(mapping, "grid.loads", int, 8),
            n_storage_loads=_get(mapping, "grid.storage_loads", int, 2),
            thermal_capacity=_get(mapping, "grid.thermal_capacity", float, 1200.0),
            renewable_capacity=_get(mapping, "grid.renewable_capacity", float, 400.0),
            peak_load=_get(mapping, "grid.peak_load", float, 900.0),
            regimes=synth._default_regimes(
                _get(mapping, "grid.regimes", int, 4),
                noise_sigma=_get(mapping, "grid.noise_sigma", float, 2.0),
                dwell=_get(mapping, "grid.dwell", float, 16.0),
            ),
            resolution=_get(mapping, "grid.resolution", int, 300),
            days=days,
            seed=seed,
            tie_line_limit=_get(mapping, "grid.tie_line_limit", float, 300.0),
            profile_amplitude=_get(mapping, "grid.profile_amplitude", float, 0.25),
        )
        return base
    # preset fields may still be overridden
    import dataclasses

    updates = {}
    if "grid.noise_sigma" in mapping or "grid.dwell" in mapping or "grid.regimes" in mapping:
        updates["regimes"] = synth._default_regimes(
            _get(mapping, "grid.regimes", int, len(base.regimes)),
            noise_sigma=_get(mapping, "grid.noise_sigma", float, base.regimes[0].noise_sigma),
            dwell=_get(mapping, "grid.dwell", float, base.regimes[0].dwell),
        )
    if "grid.profile_amplitude" in mapping:
        updates["profile_amplitude"] = _get(mapping, "grid.profile_amplitude", float, 0.25)
    if "grid.resolution" in mapping:
        updates["resolution"] = _get(mapping, "grid.resolution", int, 300)
    if "grid.tie_line_limit" in mapping:
        updates["tie_line_limit"] = _get(mapping, "grid.tie_line_limit", float, 300.0)
    return dataclasses.replace(base, **updates) if updates else base
