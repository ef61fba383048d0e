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

"""Alternating optimization of association, power and scheduling."""

import hashlib
import itertools
from typing import NamedTuple, Tuple

import numpy as np
from absl import logging
from flax import struct
from ml_collections import ConfigDict

import assoc
import metrics
import powerctl
import scheduler
from metrics import Association, PowerAllocation, Schedule
from netmodel import Scenario

CENTRALIZED = "centralized"
DISTRIBUTED = "distributed"
BRUTE_FORCE = "brute_force"
MODES = (CENTRALIZED, DISTRIBUTED, BRUTE_FORCE)

ASSOCIATION_FIRST = "association_first"
POWER_FIRST = "power_first"
ORDERS = (ASSOCIATION_FIRST, POWER_FIRST)

CONVERGED = "converged"
MAX_OUTER = "max-outer"

ROUNDING_REJECTED = "rounding-rejected"

MONOTONICITY_TOL = 1e-9


class AlternationError(RuntimeError):
    def __init__(self, iteration, message):
        super().__init__(f"outer iteration {iteration}: {message}")
        self.iteration = iteration


class TraceRecord(NamedTuple):
    iteration: int
    u_bar: float
    u_pf: float
    power_hash: str
    assoc_hash: str
    power_status: str
    pc_iters: int
    assoc_status: str
    assoc_switches: int


@struct.dataclass
class SolutionTrace:
    records: Tuple[TraceRecord, ...] = struct.field(pytree_node=False)
    status: str = struct.field(pytree_node=False)
    # Per outer iteration: (iteration, PowerTrace) and (iteration, Switch).
    power_traces: tuple = struct.field(pytree_node=False, default=())
    switches: tuple = struct.field(pytree_node=False, default=())

    @property
    def u_bar(self):
        return np.array([record.u_bar for record in self.records])


@struct.dataclass
class AlternatingResult:
    association: Association
    power: PowerAllocation
    schedule: Schedule
    trace: SolutionTrace


def snapshot_hash(array) -> str:
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()[:16]


def initial_association(gains) -> Association:
    """Each UE to the HPN with the largest mean log channel gain."""
    gains = np.asarray(gains)
    strength = np.sum(np.log(gains), axis=-1)
    return Association.create(np.argmax(strength, axis=1), gains.shape[1])


def _surrogate(scenario: Scenario, association, power):
    return metrics.surrogate_utility(association, scenario.gains, power, scenario.noise)


def _association_step(scenario, mode, power, incumbent, config):
    """Returns (association, status, switches) for fixed power."""
    gains, noise = scenario.gains, scenario.noise
    if mode == CENTRALIZED:
        frac, _ = assoc.solve_relaxed_assoc(
            gains, power, noise, assoc.RelaxedConfig.from_config(config.association)
        )
        rounded = assoc.round_assoc(frac)
        if config.association.local_search:
            rounded = assoc.refine_assoc(rounded, gains, power, noise)
        if _surrogate(scenario, rounded, power) < _surrogate(scenario, incumbent, power):
            return incumbent, ROUNDING_REJECTED, ()
        return rounded, "rounded", ()
    if mode == DISTRIBUTED:
        candidates = assoc.pick_candidates(gains, power, noise)
        game = assoc.CrowdingGame.create(
            gains, power, noise, rule=config.association.br_rule
        )
        max_rounds = config.association.max_rounds or 10 * gains.shape[0]
        association, state, status = assoc.run_best_response(
            assoc.initial_game_state(candidates), game, max_rounds
        )
        return association, status, state.switches
    if mode == BRUTE_FORCE:
        association, _ = assoc.brute_force_assoc(gains, power, noise)
        return association, "exhaustive", ()
    raise ValueError(f"Unknown association mode {mode!r}; expected one of {MODES}")


def _power_step(scenario, association, power, solver_config):
    candidate, trace = powerctl.solve_power(
        association,
        scenario.gains,
        scenario.noise,
        scenario.limits,
        solver_config,
        init=power,
    )
    if _surrogate(scenario, association, candidate) < _surrogate(
        scenario, association, power
    ):
        return power, trace
    return candidate, trace


def alternate(scenario: Scenario, mode: str, config: ConfigDict) -> AlternatingResult:
    """Alternates association and power solves until both settle.

    The loop stops once an outer iteration leaves the association unchanged
    and moves U-bar by less than orchestrator.rel_tol (relative), or after
    orchestrator.max_outer iterations. In centralized mode U-bar never
    decreases from one iteration to the next.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown association mode {mode!r}; expected one of {MODES}")
    order = config.orchestrator.order
    if order not in ORDERS:
        raise ValueError(f"Unknown alternation order {order!r}; expected one of {ORDERS}")
    max_outer = config.orchestrator.max_outer
    if max_outer < 1:
        raise ValueError(f"max_outer must be >= 1, got {max_outer}")
    rel_tol = config.orchestrator.rel_tol
    solver_config = powerctl.SolverConfig.from_config(config.power)

    _, num_hpns, rb_count = scenario.gains.shape
    association = initial_association(scenario.gains)
    power = PowerAllocation.uniform(scenario.limits, num_hpns, rb_count)
    u_bar = _surrogate(scenario, association, power)

    records, power_traces, switch_logs = [], [], []
    status = MAX_OUTER
    for iteration in range(1, max_outer + 1):
        try:
            if order == POWER_FIRST:
                power, power_trace = _power_step(
                    scenario, association, power, solver_config
                )
            new_association, assoc_status, switches = _association_step(
                scenario, mode, power, association, config
            )
            if order == ASSOCIATION_FIRST:
                power, power_trace = _power_step(
                    scenario, new_association, power, solver_config
                )
            new_u_bar = _surrogate(scenario, new_association, power)
            u_pf = metrics.utility_pf(
                new_association,
                scheduler.pf_schedule(new_association),
                scenario.gains,
                power,
                scenario.noise,
            )
        except Exception as e:
            raise AlternationError(iteration, f"{type(e).__name__}: {e}") from e

        if assoc_status == ROUNDING_REJECTED:
            logging.warning("Outer iteration %d: rounding rejected.", iteration)
        if mode == CENTRALIZED and new_u_bar < u_bar - MONOTONICITY_TOL:
            raise AlternationError(
                iteration, f"U-bar decreased from {u_bar!r} to {new_u_bar!r}"
            )

        changed = int(np.count_nonzero(new_association.assign != association.assign))
        records.append(
            TraceRecord(
                iteration=iteration,
                u_bar=new_u_bar,
                u_pf=u_pf,
                power_hash=snapshot_hash(power.power),
                assoc_hash=snapshot_hash(new_association.assign),
                power_status=power_trace.status,
                pc_iters=power_trace.iterations,
                assoc_status=assoc_status,
                assoc_switches=changed,
            )
        )
        power_traces.append((iteration, power_trace))
        switch_logs.extend((iteration, switch) for switch in switches)
        logging.info(
            "Outer iteration %d (%s): U-bar %.6f, %d UEs moved, %d power iterations.",
            iteration,
            mode,
            new_u_bar,
            changed,
            power_trace.iterations,
        )

        settled = (
            changed == 0
            and abs(new_u_bar - u_bar) <= rel_tol * max(1.0, abs(u_bar))
        )
        association, u_bar = new_association, new_u_bar
        # A single HPN leaves nothing to alternate over.
        if settled or num_hpns == 1:
            status = CONVERGED
            break

    trace = SolutionTrace(
        records=tuple(records),
        status=status,
        power_traces=tuple(power_traces),
        switches=tuple(switch_logs),
    )
    return AlternatingResult(
        association=association,
        power=power,
        schedule=scheduler.pf_schedule(association),
        trace=trace,
    )


def joint_brute_force(scenario: Scenario, grid_points: int):
    """Exhaustive association x grid power; returns (association, power, U-bar)."""
    num_ues, num_hpns, _ = scenario.gains.shape
    if num_hpns**num_ues > assoc.MAX_ENUMERATION:
        raise ValueError(f"{num_hpns}^{num_ues} associations are too many to enumerate")
    best = (None, None, -np.inf)
    for assign in itertools.product(range(num_hpns), repeat=num_ues):
        association = Association.create(assign, num_hpns)
        power = powerctl.brute_force_power(
            association, scenario.gains, scenario.noise, scenario.limits, grid_points
        )
        value = _surrogate(scenario, association, power)
        if value > best[2]:
            best = (association, power, value)
    return best
