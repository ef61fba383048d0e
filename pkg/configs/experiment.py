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

import ml_collections


def get_config(config_string="lte9"):
    """Experiment configuration; "lte9" is the 9-cell LTE setup."""
    scenario = ml_collections.ConfigDict(
        {
            # Hexagonal layout: 1, 7, 9 or 19 cells.
            "cell_count": 9,
            # Inter-site distance in meters.
            "isd_m": 500.0,
            # Inclusive range of UEs dropped per cell when no sweep is given.
            "ues_per_cell": (4, 14),
            # Base seed; replica r uses seed + r unless campaign.seeds is set.
            "seed": 0,
            # Path-loss law: "macro_urban" or "log_distance".
            "pathloss_model": "macro_urban",
            # Parameters of the "log_distance" law, L = a + b log10(d_km).
            "pathloss_intercept_db": 128.1,
            "pathloss_slope_db": 37.6,
            # Lognormal shadowing standard deviation; 0 disables it.
            "shadowing_sigma_db": 0.0,
            # Per-RB i.i.d. Rayleigh fading on top of the path loss.
            "fading": False,
            # Distances are floored here to stay out of the near field.
            "min_distance_m": 10.0,
            # Number of resource blocks (5 MHz).
            "rb_count": 25,
            # Thermal noise per RB and UE noise figure.
            "noise_dbm": -104.5,
            "noise_figure_db": 7.0,
            # Maximum power per HPN and minimum power per RB.
            "p_max_dbm": 43.0,
            "p_min_dbm": 15.0,
        }
    )

    power = ml_collections.ConfigDict(
        {
            # Iteration cap over all barrier rounds.
            "max_iterations": 5000,
            # Relative objective change that ends a barrier round.
            "rel_tol": 1e-6,
            # Initial barrier weight and its per-round decay factor.
            "barrier_weight": 1.0,
            "barrier_decay": 0.5,
            # Armijo sufficient-increase constant and backtracking factor.
            "armijo": 1e-4,
            "shrink": 0.5,
        }
    )

    association = ml_collections.ConfigDict(
        {
            # "centralized", "distributed" or "brute_force".
            "mode": "centralized",
            # Best-response comparison: "utility_consistent" or "paper" (alias "unit_load").
            "br_rule": "utility_consistent",
            # Best-response sweeps per game; 0 means 10 x number of UEs.
            "max_rounds": 0,
            # Strategy pair per UE; only the top-2 score policy exists.
            "candidate_policy": "top2",
            # Relaxed (load balancing) solver.
            "relaxed_rel_tol": 1e-8,
            "relaxed_max_iterations": 20000,
            # Single-UE moves after rounding the relaxed solution (centralized only).
            "local_search": True,
        }
    )

    orchestrator = ml_collections.ConfigDict(
        {
            # Relative U-bar change that, with a fixed association, stops the loop.
            "rel_tol": 1e-5,
            # Outer (association, power) iterations.
            "max_outer": 50,
            # "association_first" or "power_first".
            "order": "association_first",
        }
    )

    campaign = ml_collections.ConfigDict(
        {
            # Explicit replica seeds; empty means scenario.seed + r.
            "seeds": (),
            # Number of Monte Carlo drops.
            "replica_count": 25,
            # UEs per cell for each sweep point; empty uses scenario.ues_per_cell.
            "ue_per_cell_sweep": (4, 9, 14),
            # Association schemes compared on every drop.
            "modes": ("centralized", "distributed"),
            # Replicas run concurrently (CELLOPT_PARALLELISM overrides).
            "parallelism": 1,
            # Also export every power-control iteration.
            "write_power_trace": False,
        }
    )

    config = ml_collections.ConfigDict(
        {
            "scenario": scenario,
            "power": power,
            "association": association,
            "orchestrator": orchestrator,
            "campaign": campaign,
        }
    )

    if config_string == "smoke":
        config.scenario.cell_count = 1
        config.scenario.ues_per_cell = (1, 1)
        config.campaign.replica_count = 1
        config.campaign.ue_per_cell_sweep = (1,)
    else:
        assert config_string == "lte9" or not config_string

    return config
