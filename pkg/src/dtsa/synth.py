"""Synthetic regional-grid snapshot generator with planted operating regimes.

A Markov chain switches between regimes; each regime pins a renewable
output level, a load shape, and a storage mode. Thermal units balance the
residual demand, renewables follow solar/wind profiles scaled by the
regime level, and storage-capable load nodes swing positive (charging) or
negative (discharging). Every snapshot records its regime id, giving the
ground-truth labels real grid data cannot provide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleConfig, UnknownPreset
from .series import ScenarioSeries, Snapshot

DEFAULT_EPOCH = 1_704_067_200  # 2024-01-01 00:00 UTC, a midnight

_LOAD_SHAPES = ("peak", "valley", "flat")
_STORAGE_MODES = ("charge", "discharge", "idle")

# storage swing, as fractions of a node's share of peak load; kept moderate
# so no single contrast dwarfs the others after per-snapshot normalization
CHARGE_DRAW = 0.70
DISCHARGE_KEEP = 0.2
DISCHARGE_PUSH = 0.60


@dataclass(frozen=True)
class RegimeSpec:
    """One operating regime: renewable level, load shape, storage behavior."""

    id: int
    renewable_level: float
    load_shape: str
    storage_mode: str
    dwell: float = 12.0
    noise_sigma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.renewable_level <= 1.0:
            raise ValueError("renewable_level must lie in [0, 1]")
        if self.load_shape not in _LOAD_SHAPES:
            raise ValueError(f"load_shape must be one of {_LOAD_SHAPES}")
        if self.storage_mode not in _STORAGE_MODES:
            raise ValueError(f"storage_mode must be one of {_STORAGE_MODES}")
        if self.dwell < 1:
            raise ValueError("dwell must be at least 1 snapshot")


@dataclass(frozen=True)
class GridConfig:
    n_thermal: int
    n_renewable: int
    n_load: int
    n_storage_loads: int
    thermal_capacity: float
    renewable_capacity: float
    peak_load: float
    regimes: tuple
    resolution: int = 300
    days: int = 1
    seed: int = 0
    tie_line_limit: float = 300.0
    profile_amplitude: float = 1.0  # 0 freezes diurnal/wind shapes at their means

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if self.thermal_capacity <= 0 or self.peak_load <= 0:
            raise ValueError("capacities and peak load must be positive")
        if self.n_renewable > 0 and self.renewable_capacity <= 0:
            raise ValueError("renewable capacity must be positive when renewable nodes exist")
        if self.n_storage_loads > self.n_load:
            raise ValueError("storage loads cannot exceed load count")
        if 86400 % self.resolution:
            raise ValueError("resolution must divide 86400")
        if not self.regimes:
            raise ValueError("at least one regime required")
        if not 0.0 <= self.profile_amplitude <= 1.0:
            raise ValueError("profile_amplitude must lie in [0, 1]")

    @property
    def snapshots_per_day(self) -> int:
        return 86400 // self.resolution


def _default_regimes(count: int, noise_sigma: float, dwell: float) -> tuple:
    """Regime menu: distinct (level, load shape, storage mode) corners.

    Per-snapshot normalization divides out the absolute MW level, so
    regimes sharing a storage mode keep their renewable levels at least
    0.5 apart; composition, not magnitude, is what survives encoding.
    """
    menu = [
        (1.00, "peak", "idle"),
        (0.00, "valley", "idle"),
        (0.66, "flat", "charge"),
        (0.00, "peak", "discharge"),
        (1.00, "valley", "discharge"),
        (0.33, "flat", "idle"),
        (0.66, "valley", "discharge"),
        (0.33, "peak", "discharge"),
    ]
    if count > len(menu):
        raise ValueError(f"at most {len(menu)} stock regimes available")
    # discharge states run near setpoints and their snapshots normalize to a
    # smaller scale, so give them less MW noise to keep regimes comparable
    return tuple(
        RegimeSpec(
            i,
            level,
            shape,
            mode,
            dwell=dwell,
            noise_sigma=noise_sigma * (0.3 if mode == "discharge" else 1.0),
        )
        for i, (level, shape, mode) in enumerate(menu[:count])
    )


_PRESETS = {
    # (thermal, renewable, loads, storage, thermal MW, renewable MW, peak MW, regimes)
    "low": (19, 1, 34, 1, 2670.0, 100.0, 1193.0, 4),
    "medium": (18, 4, 27, 3, 2570.0, 380.0, 1400.0, 6),
    "high": (2, 13, 19, 8, 2483.0, 1115.0, 1094.0, 8),
}


def preset(name: str, days: int = 1, seed: int = 0) -> GridConfig:
    """Stock configs for the low/medium/high renewable-penetration areas."""
    try:
        g, r, l, storage, thermal_mw, renew_mw, peak_mw, n_regimes = _PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}") from None
    return GridConfig(
        n_thermal=g,
        n_renewable=r,
        n_load=l,
        n_storage_loads=storage,
        thermal_capacity=thermal_mw,
        renewable_capacity=renew_mw,
        peak_load=peak_mw,
        regimes=_default_regimes(n_regimes, noise_sigma=0.5, dwell=16.0),
        days=days,
        seed=seed,
        tie_line_limit=0.3 * peak_mw,
        profile_amplitude=0.05,
    )


def _node_params(config: GridConfig, rng: np.random.Generator) -> dict:
    """Static per-node parameters; drawn first so call order is stable."""
    g, r, l = config.n_thermal, config.n_renewable, config.n_load
    thermal_caps = np.full(g, config.thermal_capacity / g) if g else np.zeros(0)
    renew_caps = np.full(r, config.renewable_capacity / r) if r else np.zeros(0)
    raw = rng.uniform(0.5, 1.5, size=l) if l else np.zeros(0)
    load_shares = raw / raw.sum() if l else raw
    wind_phase = rng.uniform(0.0, 2.0 * np.pi, size=r) if r else np.zeros(0)
    wind_freq = rng.uniform(1.0, 3.0, size=r) if r else np.zeros(0)
    is_solar = np.arange(r) % 2 == 0
    return {
        "thermal_caps": thermal_caps,
        "renew_caps": renew_caps,
        "load_shares": load_shares,
        "wind_phase": wind_phase,
        "wind_freq": wind_freq,
        "is_solar": is_solar,
    }


def node_bounds(config: GridConfig) -> dict:
    """Per-node capacity bounds implied by the config (lo, hi) arrays.

    Storage-capable load nodes are the only ones with a negative floor.
    """
    rng = np.random.default_rng(config.seed)
    p = _node_params(config, rng)
    load_caps = 1.25 * p["load_shares"] * config.peak_load
    lo_loads = np.where(np.arange(config.n_load) < config.n_storage_loads, -load_caps, 0.0)
    return {
        "thermal": (np.zeros(config.n_thermal), p["thermal_caps"]),
        "renewable": (np.zeros(config.n_renewable), p["renew_caps"]),
        "loads": (lo_loads, load_caps),
    }


def _load_factor(shape: str, tod: float, amp: float) -> float:
    # flat is deliberately time-invariant so degenerate configs give a
    # constant series
    if shape == "peak":
        return 0.88 + amp * 0.07 * math.sin(2.0 * math.pi * (tod - 0.40))
    if shape == "valley":
        return 0.40 + amp * 0.05 * math.sin(2.0 * math.pi * (tod - 0.90))
    return 0.62


def _solar_profile(tod: float, amp: float) -> float:
    hod = tod * 24.0
    bell = math.sin(math.pi * (hod - 6.0) / 12.0) if 6.0 <= hod <= 18.0 else 0.0
    return (1.0 - amp) * 0.35 + amp * max(bell, 0.0)


def _wind_profile(tod: float, freq: float, phase: float, amp: float) -> float:
    return 0.55 + amp * 0.35 * math.sin(2.0 * math.pi * freq * tod + phase)


def generate(config: GridConfig) -> ScenarioSeries:
    """Produce a labeled snapshot series; bit-identical per seed.

    Renewables are curtailed and thermal output clipped so the per-snapshot
    imbalance never exceeds the configured tie-line limit.
    """
    needed = config.peak_load
    available = config.thermal_capacity + config.renewable_capacity + config.tie_line_limit
    if needed > available:
        raise InfeasibleConfig(
            f"peak load {needed} MW exceeds capacity plus tie-line slack {available} MW"
        )
    rng = np.random.default_rng(config.seed)
    p = _node_params(config, rng)
    g, r, l = config.n_thermal, config.n_renewable, config.n_load
    amp = config.profile_amplitude
    load_caps = 1.25 * p["load_shares"] * config.peak_load
    storage = np.arange(l) < config.n_storage_loads
    thermal_share = p["thermal_caps"] / config.thermal_capacity if g else np.zeros(0)

    t_total = config.days * config.snapshots_per_day
    regimes = config.regimes
    state = int(rng.integers(len(regimes)))

    snapshots = []
    labels = []
    for step in range(t_total):
        regime = regimes[state]
        ts = DEFAULT_EPOCH + step * config.resolution
        tod = (ts % 86400) / 86400.0
        noise = rng.normal(0.0, regime.noise_sigma, size=g + r + l) if regime.noise_sigma > 0 else np.zeros(g + r + l)

        base_factor = _load_factor(regime.load_shape, tod, amp)
        loads = p["load_shares"] * config.peak_load * base_factor + noise[g + r :]
        if regime.storage_mode == "charge":
            loads = np.where(storage, loads + CHARGE_DRAW * p["load_shares"] * config.peak_load, loads)
        elif regime.storage_mode == "discharge":
            loads = np.where(
                storage,
                DISCHARGE_KEEP * loads - DISCHARGE_PUSH * p["load_shares"] * config.peak_load,
                loads,
            )
        lo = np.where(storage, -load_caps, 0.0)
        loads = np.clip(loads, lo, load_caps)

        renew = np.empty(r)
        for j in range(r):
            if p["is_solar"][j]:
                prof = _solar_profile(tod, amp)
            else:
                prof = _wind_profile(tod, p["wind_freq"][j], p["wind_phase"][j], amp)
            renew[j] = regime.renewable_level * p["renew_caps"][j] * prof + noise[g + j]
        renew = np.clip(renew, 0.0, p["renew_caps"])
        total_load = float(loads.sum())
        total_renew = float(renew.sum())
        headroom = total_load + config.tie_line_limit
        if total_renew > headroom > 0:
            renew *= headroom / total_renew  # curtailment
            total_renew = float(renew.sum())

        residual = min(max(total_load - total_renew, 0.0), config.thermal_capacity)
        thermal = np.clip(thermal_share * residual, 0.0, p["thermal_caps"]) if g else np.zeros(0)

        snapshots.append(Snapshot(float(ts), tuple(thermal), tuple(renew), tuple(loads)))
        labels.append(regime.id)

        stay = 1.0 - 1.0 / regime.dwell
        if rng.random() >= stay and len(regimes) > 1:
            others = [i for i in range(len(regimes)) if i != state]
            state = others[int(rng.integers(len(others)))]

    return ScenarioSeries(tuple(snapshots), resolution=float(config.resolution), labels=tuple(labels))
