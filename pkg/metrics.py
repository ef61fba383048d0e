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

"""SINR, mean rates, proportional-fair utility and the surrogate utility."""

from typing import Callable, Dict

import jax
import numpy as np
from flax import struct
from jax import numpy as jnp

jax.config.update("jax_enable_x64", True)

RATE_MAPPINGS: Dict[str, Callable] = {
    "identity": lambda sinr: sinr,
}


class InfeasiblePowerLimitsError(ValueError):
    pass


@struct.dataclass
class PowerLimits:
    p_max: float = struct.field(pytree_node=False)  # watts per HPN
    p_min: float = struct.field(pytree_node=False)  # watts per RB

    def validate(self, rb_count):
        if not (self.p_max > 0 and self.p_min > 0):
            raise InfeasiblePowerLimitsError(
                f"Power limits must be positive (p_max={self.p_max} W, "
                f"p_min={self.p_min} W)"
            )
        if rb_count * self.p_min > self.p_max * (1 + 1e-12):
            raise InfeasiblePowerLimitsError(
                f"Infeasible power limits: {rb_count} RBs x p_min {self.p_min:.6g} W "
                f"= {rb_count * self.p_min:.6g} W exceeds p_max {self.p_max:.6g} W"
            )
        return self


@struct.dataclass
class PowerAllocation:
    power: np.ndarray  # [J, K] watts
    limits: PowerLimits

    @classmethod
    def uniform(cls, limits: PowerLimits, num_hpns, rb_count):
        limits.validate(rb_count)
        power = np.full((num_hpns, rb_count), limits.p_max / rb_count)
        return cls(power=power, limits=limits)

    @classmethod
    def from_log_power(cls, pi_hat, limits: PowerLimits):
        return cls(power=np.exp(np.asarray(pi_hat)), limits=limits)

    @property
    def log_power(self):
        return np.log(np.asarray(self.power))

    def max_violation(self):
        """Largest relative breach of the per-HPN cap or the per-RB floor."""
        power = np.asarray(self.power)
        cap = (power.sum(axis=1) - self.limits.p_max) / self.limits.p_max
        floor = (self.limits.p_min - power) / self.limits.p_min
        return float(max(0.0, cap.max(), floor.max()))

    def is_feasible(self, rtol=1e-9):
        return self.max_violation() <= rtol


@struct.dataclass
class Association:
    assign: np.ndarray  # [I] serving HPN per UE
    num_hpns: int = struct.field(pytree_node=False)

    @classmethod
    def create(cls, assign, num_hpns):
        assign = np.asarray(assign, dtype=np.int64)
        if assign.ndim != 1:
            raise ValueError(f"Association must be a vector, got shape {assign.shape}")
        bad = np.flatnonzero((assign < 0) | (assign >= num_hpns))
        if bad.size:
            raise ValueError(
                f"UE {int(bad[0])} is unassigned or assigned to an unknown HPN "
                f"({int(assign[bad[0]])}, {num_hpns} HPNs)"
            )
        return cls(assign=assign, num_hpns=int(num_hpns))

    @classmethod
    def from_one_hot(cls, theta):
        theta = np.asarray(theta)
        return cls.create(np.argmax(theta, axis=1), theta.shape[1])

    @property
    def ue_count(self):
        return self.assign.shape[0]

    @property
    def loads(self):
        return np.bincount(self.assign, minlength=self.num_hpns)

    def one_hot(self):
        return np.eye(self.num_hpns)[self.assign]

    def members(self, hpn):
        return np.flatnonzero(self.assign == hpn)


@struct.dataclass
class FractionalAssociation:
    theta: np.ndarray  # [I, J], rows on the probability simplex

    def validate(self, atol=1e-9):
        theta = np.asarray(self.theta)
        if np.any(theta < -atol) or np.any(theta > 1 + atol):
            raise ValueError("Fractional association entries must lie in [0, 1]")
        if np.any(np.abs(theta.sum(axis=1) - 1.0) > atol):
            raise ValueError("Fractional association rows must sum to 1")
        return self

    @property
    def loads(self):
        return np.asarray(self.theta).sum(axis=0)


@struct.dataclass
class Schedule:
    alpha: np.ndarray  # [I, J] time fractions


def _power_array(power):
    if isinstance(power, PowerAllocation):
        return jnp.asarray(power.power)
    return jnp.asarray(power)


@jax.jit
def _sinr_tensor(gains, power, noise):
    received = gains * power[None, :, :]
    num_hpns = power.shape[0]
    others = 1.0 - jnp.eye(num_hpns, dtype=gains.dtype)
    # Sum of non-negative terms; no cancellation against the serving link.
    interference = jnp.einsum("ilk,jl->ijk", received, others)
    return received / (noise + interference)


def sinr_tensor(gains, power, noise):
    """All rho[i, j, k] as an [I, J, K] array."""
    return _sinr_tensor(jnp.asarray(gains), _power_array(power), noise)


def sinr(gains, power, noise, i, j, k):
    power = _power_array(power)
    gains = jnp.asarray(gains)
    received = power[:, k] * gains[i, :, k]
    interference = jnp.sum(jnp.where(jnp.arange(power.shape[0]) == j, 0.0, received))
    return float(received[j] / (noise + interference))


def _check_association(assoc: Association):
    Association.create(assoc.assign, assoc.num_hpns)


def mean_rates(assoc: Association, sched: Schedule, gains, power, noise,
               rate_fn=RATE_MAPPINGS["identity"]):
    """r_i = alpha_ij * sum_k f(rho_ijk) on the serving HPN."""
    _check_association(assoc)
    rho = sinr_tensor(gains, power, noise)
    serving = jnp.asarray(assoc.one_hot())
    link_rates = jnp.sum(rate_fn(rho), axis=-1)  # [I, J]
    alpha = jnp.asarray(sched.alpha)
    return np.asarray(jnp.sum(serving * alpha * link_rates, axis=-1))


def mean_rate(assoc: Association, sched: Schedule, gains, power, noise, i,
              rate_fn=RATE_MAPPINGS["identity"]):
    return float(mean_rates(assoc, sched, gains, power, noise, rate_fn)[i])


def utility_pf(assoc: Association, sched: Schedule, gains, power, noise):
    """sum_i log(r_i), the direct form."""
    rates = mean_rates(assoc, sched, gains, power, noise)
    zero = np.flatnonzero(rates <= 0)
    if zero.size:
        raise ValueError(f"UE {int(zero[0])} has zero rate; utility is undefined")
    return float(np.sum(np.log(rates)))


def utility_pf_decomposed(assoc: Association, sched: Schedule, gains, power, noise):
    """sum theta log(alpha) + sum theta log(r_ij), split by serving cell."""
    _check_association(assoc)
    rho = sinr_tensor(gains, power, noise)
    ues = np.arange(assoc.ue_count)
    alpha = np.asarray(sched.alpha)[ues, assoc.assign]
    link_rates = np.asarray(jnp.sum(rho, axis=-1))[ues, assoc.assign]
    if np.any(alpha <= 0) or np.any(link_rates <= 0):
        raise ValueError("Decomposed utility needs positive alpha and rates")
    return float(np.sum(np.log(alpha)) + np.sum(np.log(link_rates)))


def surrogate_utility(assoc, gains, power, noise):
    """U-bar = sum_i sum_k log(rho_ijk / n_j) on each UE's serving HPN.

    Cells without UEs contribute nothing.
    """
    _check_association(assoc)
    rho = sinr_tensor(gains, power, noise)
    ues = np.arange(assoc.ue_count)
    serving_rho = rho[ues, assoc.assign]  # [I, K]
    loads = jnp.asarray(assoc.loads, dtype=serving_rho.dtype)[assoc.assign]
    return float(jnp.sum(jnp.log(serving_rho / loads[:, None])))


def cell_utility(assoc: Association, gains, power, noise):
    """Per-HPN terms of the power-control objective; sums to U-bar."""
    _check_association(assoc)
    power = _power_array(power)
    gains = jnp.asarray(gains)
    loads = assoc.loads
    per_cell = np.zeros(assoc.num_hpns)
    for j in range(assoc.num_hpns):
        members = assoc.members(j)
        if members.size == 0:
            continue
        interferers = np.flatnonzero(np.arange(assoc.num_hpns) != j)
        signal = power[j][None, :] * gains[members, j, :]
        interference = jnp.einsum(
            "jk,ijk->ik", power[interferers], gains[members][:, interferers, :]
        )
        per_cell[j] = float(
            jnp.sum(jnp.log(signal / (noise + interference) / loads[j]))
        )
    return per_cell


def jain_index(rates):
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size == 0 or not np.any(rates):
        return 0.0
    return float(rates.sum() ** 2 / (rates.size * np.sum(rates**2)))
