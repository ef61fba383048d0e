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

"""Random instance builders shared by the tests."""

import numpy as np

import metrics
import netmodel
from configs import experiment

NOISE = float(netmodel.dbm_to_watt(-104.5 + 7.0))
LIMITS = metrics.PowerLimits(
    p_max=float(netmodel.dbm_to_watt(43.0)), p_min=float(netmodel.dbm_to_watt(15.0))
)


def random_gains(rng, num_ues, num_hpns, rb_count, low_db=90.0, high_db=130.0):
    """Path-loss-like linear gains between -high_db and -low_db dB."""
    loss_db = rng.uniform(low_db, high_db, size=(num_ues, num_hpns, rb_count))
    return 10.0 ** (-loss_db / 10.0)


def random_association(rng, num_ues, num_hpns):
    return metrics.Association.create(rng.integers(0, num_hpns, num_ues), num_hpns)


def random_power(rng, num_hpns, rb_count, limits=LIMITS):
    """A random feasible allocation: floor plus a random share of the slack."""
    spare = limits.p_max - rb_count * limits.p_min
    shares = rng.dirichlet(np.ones(rb_count + 1), size=num_hpns)[:, :rb_count]
    return metrics.PowerAllocation(power=limits.p_min + spare * shares, limits=limits)


def scenario_from_gains(gains, limits=LIMITS, noise=NOISE):
    num_ues, num_hpns, _ = gains.shape
    topology = netmodel.Topology(
        hpn_positions=np.zeros((num_hpns, 2)), inter_site_distance=500.0
    )
    ues = netmodel.UeSet(
        positions=np.zeros((num_ues, 2)), home_cell_hint=np.zeros(num_ues, np.int64)
    )
    return netmodel.Scenario(
        topology=topology, ues=ues, gains=gains, noise=noise, limits=limits
    )


def small_config(**overrides):
    """The smoke preset with dotted-key overrides, e.g. {"power.rel_tol": 1e-7}."""
    config = experiment.get_config("smoke")
    for path, value in overrides.items():
        section, key = path.split(".")
        config[section][key] = value
    return config
