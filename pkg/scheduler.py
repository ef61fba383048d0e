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

"""Proportional-fair intra-cell scheduling."""

import numpy as np

from metrics import Association, Schedule


def pf_schedule(assoc: Association) -> Schedule:
    """Equal time shares 1/|I(j)| inside every cell; zero elsewhere."""
    alpha = np.zeros((assoc.ue_count, assoc.num_hpns))
    loads = assoc.loads
    ues = np.arange(assoc.ue_count)
    alpha[ues, assoc.assign] = 1.0 / loads[assoc.assign]
    return Schedule(alpha=alpha)


def scheduling_utility(sched: Schedule, assoc: Association) -> float:
    """sum over cells of sum_{i in I(l)} log(alpha_il)."""
    alpha = np.asarray(sched.alpha)[np.arange(assoc.ue_count), assoc.assign]
    if np.any(alpha <= 0):
        return -np.inf
    return float(np.sum(np.log(alpha)))


def check_kkt(sched: Schedule, assoc: Association, tol: float = 1e-9) -> bool:
    """Whether the schedule satisfies the first-order conditions of each cell.

    Every served pair needs 1/alpha_il within tol of a common multiplier mu_l,
    and the cell's shares must sum to one within tol. Shares on non-serving
    HPNs must vanish.
    """
    alpha = np.asarray(sched.alpha)
    serving = assoc.one_hot() > 0
    if np.any(np.abs(alpha[~serving]) > tol):
        return False
    for hpn in range(assoc.num_hpns):
        members = assoc.members(hpn)
        if members.size == 0:
            continue
        shares = alpha[members, hpn]
        if np.any(shares <= 0):
            return False
        inverse = 1.0 / shares
        # The best common mu sits at the midpoint of the extremes.
        if 0.5 * (inverse.max() - inverse.min()) > tol:
            return False
        if abs(shares.sum() - 1.0) > tol:
            return False
    return True
