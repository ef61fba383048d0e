# Copyright 2026 The Cellopt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Hexagonal multi-cell topology, UE drops and channel gains."""

import math
from typing import Callable, Dict, Tuple

import numpy as np
from flax import struct
from ml_collections import ConfigDict

import metrics

SUPPORTED_CELL_COUNTS = (1, 7, 9, 19)

# Independent RNG streams derived from one replica seed.
_DROP_STREAM = 0
_GAIN_STREAM = 1


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=np.float64) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=np.float64)) + 30.0


def macro_urban_pathloss(distance_m):
    """Macro urban law L = 128.1 + 37.6 log10(d_km)."""
    return 128.1 + 37.6 * np.log10(distance_m / 1000.0)


def log_distance_pathloss(distance_m, intercept_db=128.1, slope_db=37.6):
    return intercept_db + slope_db * np.log10(distance_m / 1000.0)


# Each law maps (distance in meters, ChannelConfig) to loss in dB. The macro
# urban law is fixed; only log_distance reads the intercept and slope keys.
PATHLOSS_MODELS: Dict[str, Callable[..., np.ndarray]] = {
    "macro_urban": lambda distance_m, cfg: macro_urban_pathloss(distance_m),
    "log_distance": lambda distance_m, cfg: log_distance_pathloss(
        distance_m, cfg.pathloss_intercept_db, cfg.pathloss_slope_db
    ),
}


@struct.dataclass
class Topology:
    hpn_positions: np.ndarray  # [J, 2] meters
    inter_site_distance: float = struct.field(pytree_node=False)

    @property
    def cell_count(self):
        return self.hpn_positions.shape[0]


@struct.dataclass
class UeSet:
    positions: np.ndarray  # [I, 2] meters
    home_cell_hint: np.ndarray  # [I] nearest HPN, ties to the lowest index

    @property
    def ue_count(self):
        return self.positions.shape[0]


@struct.dataclass
class ChannelConfig:
    pathloss_model: str = struct.field(pytree_node=False, default="macro_urban")
    pathloss_intercept_db: float = struct.field(pytree_node=False, default=128.1)
    pathloss_slope_db: float = struct.field(pytree_node=False, default=37.6)
    shadowing_sigma_db: float = struct.field(pytree_node=False, default=0.0)
    noise_dbm: float = struct.field(pytree_node=False, default=-104.5)
    noise_figure_db: float = struct.field(pytree_node=False, default=7.0)
    rb_count: int = struct.field(pytree_node=False, default=25)
    fading: bool = struct.field(pytree_node=False, default=False)
    min_distance_m: float = struct.field(pytree_node=False, default=10.0)

    @classmethod
    def from_config(cls, config: ConfigDict):
        return cls(
            pathloss_model=config.pathloss_model,
            pathloss_intercept_db=config.pathloss_intercept_db,
            pathloss_slope_db=config.pathloss_slope_db,
            shadowing_sigma_db=config.shadowing_sigma_db,
            noise_dbm=config.noise_dbm,
            noise_figure_db=config.noise_figure_db,
            rb_count=config.rb_count,
            fading=config.fading,
            min_distance_m=config.min_distance_m,
        )

    @property
    def noise_watts(self):
        # Thermal noise and noise figure compose additively in dB.
        return float(dbm_to_watt(self.noise_dbm + self.noise_figure_db))

    def pathloss_db(self, distance_m):
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ValueError(
                f"Unknown pathloss model {self.pathloss_model!r}; "
                f"available: {sorted(PATHLOSS_MODELS)}"
            )
        return PATHLOSS_MODELS[self.pathloss_model](distance_m, self)


@struct.dataclass
class Scenario:
    """Everything the solvers need for one drop."""

    topology: Topology
    ues: UeSet
    gains: np.ndarray  # GainTensor [I, J, K], linear
    noise: float = struct.field(pytree_node=False)
    limits: metrics.PowerLimits

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.gains.shape


def _axial_lattice(rings):
    coords = []
    for q in range(-rings, rings + 1):
        for r in range(max(-rings, -q - rings), min(rings, -q + rings) + 1):
            coords.append((q, r))
    coords = np.array(coords, dtype=np.float64)
    x = coords[:, 0] + 0.5 * coords[:, 1]
    y = 0.5 * math.sqrt(3.0) * coords[:, 1]
    ring = np.max(
        np.abs(np.stack([coords[:, 0], coords[:, 1], coords.sum(-1)])), axis=0
    )
    angle = np.round(np.mod(np.arctan2(y, x), 2 * np.pi), 12)
    order = np.lexsort((angle, ring))
    return np.stack([x, y], axis=-1)[order]


def _offset_grid(rows, cols):
    points = []
    for r in range(rows):
        for c in range(cols):
            points.append((c + 0.5 * (r % 2), 0.5 * math.sqrt(3.0) * r))
    points = np.array(points, dtype=np.float64)
    return points - points.mean(axis=0)


def build_hex_topology(cell_count: int, isd: float) -> Topology:
    """Centered hexagonal lattice with `cell_count` sites `isd` meters apart."""
    if cell_count not in SUPPORTED_CELL_COUNTS:
        raise ValueError(
            f"Unsupported cell_count {cell_count}; supported layouts: "
            + ", ".join(str(n) for n in SUPPORTED_CELL_COUNTS)
        )
    if not isd > 0:
        raise ValueError(f"Inter-site distance must be positive, got {isd}")

    if cell_count == 9:
        unit = _offset_grid(3, 3)
    else:
        rings = {1: 0, 7: 1, 19: 2}[cell_count]
        unit = _axial_lattice(rings)
    positions = unit * isd
    # Snap -0.0 and rounding dust so identical inputs give identical bits.
    positions = np.where(np.abs(positions) < 1e-9 * isd, 0.0, positions)
    return Topology(hpn_positions=positions, inter_site_distance=float(isd))


def in_hexagon(offsets, isd):
    """Whether [N, 2] offsets from a site lie in its hexagonal cell."""
    apothem = 0.5 * isd
    inside = np.ones(offsets.shape[0], dtype=bool)
    for theta in (0.0, np.pi / 3, 2 * np.pi / 3):
        projection = offsets[:, 0] * np.cos(theta) + offsets[:, 1] * np.sin(theta)
        inside &= np.abs(projection) <= apothem * (1 + 1e-12)
    return inside


def _sample_hexagon(rng, count, isd):
    apothem = 0.5 * isd
    circumradius = isd / math.sqrt(3.0)
    samples = np.zeros((0, 2))
    while samples.shape[0] < count:
        batch = max(8, 2 * (count - samples.shape[0]))
        candidates = np.stack(
            [
                rng.uniform(-apothem, apothem, batch),
                rng.uniform(-circumradius, circumradius, batch),
            ],
            axis=-1,
        )
        samples = np.concatenate([samples, candidates[in_hexagon(candidates, isd)]])
    return samples[:count]


def nearest_hpn(topology: Topology, positions):
    distances = np.linalg.norm(
        positions[:, None, :] - topology.hpn_positions[None, :, :], axis=-1
    )
    return np.argmin(distances, axis=1)


def drop_ues(topology: Topology, per_cell: Tuple[int, int], seed: int) -> UeSet:
    """Uniformly drops between per_cell[0] and per_cell[1] UEs in every cell."""
    low, high = per_cell
    if low > high:
        raise ValueError(f"Empty UE-per-cell range {low}..{high}")
    if low < 1 or high > 64:
        raise ValueError(f"UE-per-cell range {low}..{high} outside [1, 64]")

    rng = np.random.default_rng([seed & (2**64 - 1), _DROP_STREAM])
    counts = rng.integers(low, high + 1, size=topology.cell_count)
    positions = []
    for site, count in zip(topology.hpn_positions, counts):
        offsets = _sample_hexagon(rng, int(count), topology.inter_site_distance)
        positions.append(site[None, :] + offsets)
    positions = np.concatenate(positions, axis=0)
    return UeSet(positions=positions, home_cell_hint=nearest_hpn(topology, positions))


def compute_gains(
    topology: Topology, ues: UeSet, cfg: ChannelConfig, seed: int = 0
) -> np.ndarray:
    """Linear channel power gains G[i, j, k]."""
    distances = np.linalg.norm(
        ues.positions[:, None, :] - topology.hpn_positions[None, :, :], axis=-1
    )
    distances = np.maximum(distances, cfg.min_distance_m)
    loss_db = cfg.pathloss_db(distances)

    rng = np.random.default_rng([seed & (2**64 - 1), _GAIN_STREAM])
    if cfg.shadowing_sigma_db > 0:
        loss_db = loss_db - rng.normal(0.0, cfg.shadowing_sigma_db, loss_db.shape)
    gains = 10.0 ** (-loss_db / 10.0)

    gains = np.repeat(gains[:, :, None], cfg.rb_count, axis=-1)
    if cfg.fading:
        fading = rng.exponential(1.0, gains.shape)
        gains = gains * np.maximum(fading, np.finfo(np.float64).tiny)
    return gains


def build_scenario(config: ConfigDict, seed: int, per_cell=None) -> Scenario:
    """Builds a full scenario from the `scenario` config section."""
    if per_cell is None:
        per_cell = tuple(config.ues_per_cell)
    channel = ChannelConfig.from_config(config)
    limits = metrics.PowerLimits(
        p_max=float(dbm_to_watt(config.p_max_dbm)),
        p_min=float(dbm_to_watt(config.p_min_dbm)),
    )
    limits.validate(channel.rb_count)

    topology = build_hex_topology(config.cell_count, config.isd_m)
    ues = drop_ues(topology, per_cell, seed)
    gains = compute_gains(topology, ues, channel, seed)
    return Scenario(
        topology=topology,
        ues=ues,
        gains=gains,
        noise=channel.noise_watts,
        limits=limits,
    )


def small_scenario(
    config: ConfigDict, seed: int, num_ues: int, num_hpns: int, rb_count: int
) -> Scenario:
    """A brute-forceable drop: the first `num_hpns` sites of the 7-cell layout.

    UEs land in uniformly chosen cells of that subset. Channel parameters come
    from the `scenario` config section except for the RB count.
    """
    if not 1 <= num_hpns <= 7:
        raise ValueError(f"num_hpns must lie in [1, 7], got {num_hpns}")
    if num_ues < 1:
        raise ValueError(f"num_ues must be >= 1, got {num_ues}")
    channel = ChannelConfig.from_config(config).replace(rb_count=rb_count)
    limits = metrics.PowerLimits(
        p_max=float(dbm_to_watt(config.p_max_dbm)),
        p_min=float(dbm_to_watt(config.p_min_dbm)),
    ).validate(rb_count)

    full = build_hex_topology(7, config.isd_m)
    topology = full.replace(hpn_positions=full.hpn_positions[:num_hpns])
    rng = np.random.default_rng([seed & (2**64 - 1), _DROP_STREAM])
    cells = rng.integers(0, num_hpns, size=num_ues)
    positions = topology.hpn_positions[cells] + _sample_hexagon(
        rng, num_ues, topology.inter_site_distance
    )
    ues = UeSet(positions=positions, home_cell_hint=nearest_hpn(topology, positions))
    return Scenario(
        topology=topology,
        ues=ues,
        gains=compute_gains(topology, ues, channel, seed),
        noise=channel.noise_watts,
        limits=limits,
    )
