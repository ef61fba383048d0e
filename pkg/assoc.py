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

"""UE association for fixed power.

Two schemes share the same objective, sum_i sum_k log(rho_ijk / n_j):

  * network-centric: the association is relaxed to row-stochastic theta, the
    resulting concave program is solved by projected gradient, and each UE
    is rounded to its largest share;
  * user-centric: every UE plays a two-strategy crowding game against the
    others and best responses are iterated until nobody switches.
"""

import math
from typing import NamedTuple, Optional, Tuple, Union

import jax
import numpy as np
import optax
from absl import logging
from flax import struct
from jax import lax
from jax import numpy as jnp
from jax.scipy.special import xlogy
from ml_collections import ConfigDict

import metrics
from metrics import Association, FractionalAssociation

# Best-response comparisons. "paper" weighs the load term by 1 and is the
# external config spelling; "unit_load" is accepted for it as well.
UNIT_LOAD = "paper"
UTILITY_CONSISTENT = "utility_consistent"
RULE_ALIASES = {"unit_load": UNIT_LOAD}
RULES = (UNIT_LOAD, UTILITY_CONSISTENT) + tuple(RULE_ALIASES)

PNE_REACHED = "PNE-reached"
ROUND_CAPPED = "round-capped"

MAX_ENUMERATION = 10**7

_MIN_STEP = 1e-16
_MAX_STEP = 1e4


def link_scores(gains, power, noise) -> np.ndarray:
    """S[i, j] = sum_k log(rho_ijk), the log of the SINR product."""
    rho = metrics.sinr_tensor(gains, power, noise)
    return np.asarray(jnp.sum(jnp.log(rho), axis=-1))


def _relaxed_objective(theta, scores, rb_count):
    loads = jnp.sum(theta, axis=0)
    return jnp.sum(theta * scores) - rb_count * jnp.sum(xlogy(loads, loads))


def _relaxed_gradient(theta, scores, rb_count):
    # d/dn (n log n) = log n + 1; empty cells get a large finite pull.
    loads = jnp.sum(theta, axis=0)
    safe = jnp.maximum(loads, jnp.finfo(theta.dtype).tiny)
    return scores - rb_count * (jnp.log(safe) + 1.0)[None, :]


_project_rows = jax.vmap(optax.projections.projection_simplex)


def assoc_objective(
    assoc: Union[Association, FractionalAssociation], gains, power, noise
) -> float:
    """U^UA for a binary or fractional association (loads are column sums)."""
    if isinstance(assoc, Association):
        theta = assoc.one_hot()
    else:
        theta = np.asarray(assoc.theta)
    scores = link_scores(gains, power, noise)
    rb_count = np.shape(gains)[-1]
    return float(_relaxed_objective(jnp.asarray(theta), jnp.asarray(scores), rb_count))


@struct.dataclass
class RelaxedConfig:
    rel_tol: float = struct.field(pytree_node=False, default=1e-8)
    max_iterations: int = struct.field(pytree_node=False, default=20000)
    armijo: float = struct.field(pytree_node=False, default=1e-4)
    shrink: float = struct.field(pytree_node=False, default=0.5)

    @classmethod
    def from_config(cls, config: ConfigDict):
        return cls(
            rel_tol=config.relaxed_rel_tol,
            max_iterations=config.relaxed_max_iterations,
        )


def _frank_wolfe_gap(theta, grad):
    """max over row-stochastic theta' of <grad, theta' - theta>; bounds f* - f."""
    return jnp.sum(jnp.max(grad, axis=1)) - jnp.vdot(theta, grad)


@jax.jit
def _relaxed_step(theta, fallback_step, scores, rb_count, armijo, shrink):
    value = _relaxed_objective(theta, scores, rb_count)
    grad = _relaxed_gradient(theta, scores, rb_count)

    def candidate(s):
        moved = _project_rows(theta + s * grad)
        new_value = _relaxed_objective(moved, scores, rb_count)
        ok = new_value >= value + armijo * jnp.vdot(grad, moved - theta)
        return moved, new_value, ok

    def cond(carry):
        s, ok = carry
        return (~ok) & (s > _MIN_STEP)

    def body(carry):
        s, _ = carry
        s = (s * shrink).astype(jnp.float64)
        return s, candidate(s)[2]

    step = jnp.asarray(fallback_step).astype(jnp.float64)
    step, ok = lax.while_loop(cond, body, (step, candidate(step)[2]))
    moved, new_value, _ = candidate(step)
    moved = jnp.where(ok, moved, theta)
    return moved, step, ok, value, new_value


@jax.jit
def _relaxed_solve(theta, scores, rb_count, rel_tol, max_iterations, armijo, shrink):
    """Projected-gradient ascent until the Frank-Wolfe gap certifies rel_tol."""

    def certified(th):
        value = _relaxed_objective(th, scores, rb_count)
        gap = _frank_wolfe_gap(th, _relaxed_gradient(th, scores, rb_count))
        return gap <= rel_tol * jnp.maximum(1.0, jnp.abs(value))

    def cond(carry):
        _, _, iteration, done, _ = carry
        return (~done) & (iteration < max_iterations)

    def body(carry):
        theta, step, iteration, _, _ = carry
        moved, s, ok, _, _ = _relaxed_step(theta, step, scores, rb_count, armijo, shrink)
        step = jnp.minimum(s / shrink, _MAX_STEP).astype(jnp.float64)
        stalled = ~ok
        return moved, step, iteration + 1, stalled | certified(moved), stalled

    start = (
        theta,
        jnp.asarray(1.0, dtype=jnp.float64),
        jnp.asarray(0, dtype=jnp.int64),
        certified(theta),
        jnp.asarray(False),
    )
    theta, _, iteration, _, stalled = lax.while_loop(cond, body, start)
    return theta, iteration, certified(theta), stalled


def solve_relaxed_assoc(
    gains,
    power,
    noise,
    cfg: RelaxedConfig = RelaxedConfig(),
    init: Optional[np.ndarray] = None,
) -> Tuple[FractionalAssociation, float]:
    """Maximizes the relaxed association objective over row-stochastic theta.

    Iterates until the Frank-Wolfe gap, an upper bound on the distance to
    the optimum, drops below rel_tol * max(1, |objective|).
    """
    scores = jnp.asarray(link_scores(gains, power, noise))
    num_ues, num_hpns, rb_count = np.shape(gains)
    if init is None:
        theta = jnp.full((num_ues, num_hpns), 1.0 / num_hpns)
    else:
        theta = _project_rows(jnp.asarray(init, dtype=jnp.float64))

    theta, iterations, certified, stalled = _relaxed_solve(
        theta,
        scores,
        float(rb_count),
        cfg.rel_tol,
        cfg.max_iterations,
        cfg.armijo,
        cfg.shrink,
    )
    if not bool(certified):
        logging.warning(
            "Relaxed association stopped uncertified after %d iterations (%s).",
            int(iterations),
            "line search stalled" if bool(stalled) else "iteration cap",
        )
    theta = np.clip(np.asarray(theta), 0.0, 1.0)
    theta = theta / theta.sum(axis=1, keepdims=True)
    frac = FractionalAssociation(theta=theta)
    return frac, float(_relaxed_objective(jnp.asarray(theta), scores, rb_count))


def round_assoc(frac: FractionalAssociation) -> Association:
    """Largest share wins; ties go to the lowest HPN index."""
    return Association.from_one_hot(frac.theta)


def _nlogn(n):
    n = np.asarray(n, dtype=np.float64)
    return np.where(n > 0, n * np.log(np.maximum(n, 1.0)), 0.0)


def refine_assoc(assoc: Association, gains, power, noise) -> Association:
    """Moves single UEs while that raises the association objective.

    Each pass applies the best move over all (UE, HPN) pairs, ties to the
    lowest UE and then the lowest HPN, so the result is deterministic and
    no single move improves it further.
    """
    scores = link_scores(gains, power, noise)
    rb_count = np.shape(gains)[-1]
    num_ues, num_hpns = scores.shape
    assignment = np.asarray(assoc.assign).copy()
    ues = np.arange(num_ues)
    tol = 1e-12 * max(1.0, abs(assoc_objective(assoc, gains, power, noise)))
    while True:
        loads = np.bincount(assignment, minlength=num_hpns)
        current = loads[assignment]
        leave = _nlogn(current - 1) - _nlogn(current)  # [I]
        join = _nlogn(loads + 1) - _nlogn(loads)  # [J]
        delta = scores - scores[ues, assignment][:, None]
        delta -= rb_count * (leave[:, None] + join[None, :])
        delta[ues, assignment] = -np.inf
        best = int(np.argmax(delta))
        ue, hpn = divmod(best, num_hpns)
        if not delta[ue, hpn] > tol:
            return Association.create(assignment, num_hpns)
        assignment[ue] = hpn


def _enumeration_objectives(assignments, scores, rb_count):
    num_ues, num_hpns = scores.shape
    utility = scores[np.arange(num_ues), assignments].sum(axis=-1)
    loads = (assignments[:, :, None] == np.arange(num_hpns)).sum(axis=1)
    penalty = np.where(loads > 0, loads * np.log(np.maximum(loads, 1)), 0.0)
    return utility - rb_count * penalty.sum(axis=-1)


def brute_force_assoc(gains, power, noise) -> Tuple[Association, float]:
    """Exact maximizer over all |J|^|I| binary associations.

    Ties are broken by the lexicographically smallest assignment.
    """
    num_ues, num_hpns, rb_count = np.shape(gains)
    if num_hpns**num_ues > MAX_ENUMERATION:
        raise ValueError(
            f"{num_hpns}^{num_ues} associations exceed the enumeration limit "
            f"{MAX_ENUMERATION}"
        )
    scores = link_scores(gains, power, noise)
    total = num_hpns**num_ues
    chunk = 1 << 16
    best_value, best_assign = -np.inf, None
    for begin in range(0, total, chunk):
        index = np.arange(begin, min(begin + chunk, total))
        assignments = np.stack(
            np.unravel_index(index, (num_hpns,) * num_ues), axis=-1
        )
        values = _enumeration_objectives(assignments, scores, rb_count)
        position = int(np.argmax(values))
        if values[position] > best_value:
            best_value, best_assign = values[position], assignments[position]
    assoc = Association.create(best_assign, num_hpns)
    return assoc, assoc_objective(assoc, gains, power, noise)


def pick_candidates(gains, power, noise) -> np.ndarray:
    """Per UE, the two HPNs with the largest score, best first."""
    scores = link_scores(gains, power, noise)
    if scores.shape[1] == 1:
        return np.zeros((scores.shape[0], 2), dtype=np.int64)
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :2].astype(np.int64)


class Switch(NamedTuple):
    ue: int
    source: int
    target: int
    round: int
    seq: int = 0  # position in the log; strictly increasing across rounds


@struct.dataclass
class CrowdingGame:
    scores: np.ndarray  # [I, J]
    rb_count: int = struct.field(pytree_node=False)
    rule: str = struct.field(pytree_node=False, default=UTILITY_CONSISTENT)

    @classmethod
    def create(cls, gains, power, noise, rule=UTILITY_CONSISTENT):
        if rule not in RULES:
            raise ValueError(f"Unknown best-response rule {rule!r}; expected one of {RULES}")
        rule = RULE_ALIASES.get(rule, rule)
        return cls(
            scores=link_scores(gains, power, noise),
            rb_count=int(np.shape(gains)[-1]),
            rule=rule,
        )

    @property
    def load_weight(self):
        # Only utility_consistent carries the |K| exponent on the load.
        return float(self.rb_count) if self.rule == UTILITY_CONSISTENT else 1.0

    def payoff(self, ue, hpn, others):
        """Log payoff of `ue` joining `hpn` next to `others` UEs already there."""
        return self.scores[ue, hpn] - self.load_weight * math.log(1 + others)


@struct.dataclass
class GameState:
    assignment: np.ndarray  # [I]
    candidates: np.ndarray  # [I, 2]
    rounds: int = struct.field(pytree_node=False, default=0)
    switches: Tuple[Switch, ...] = struct.field(pytree_node=False, default=())

    def association(self, num_hpns):
        return Association.create(self.assignment, num_hpns)


def initial_game_state(candidates) -> GameState:
    """Every UE starts on its better candidate."""
    candidates = np.asarray(candidates, dtype=np.int64)
    return GameState(assignment=candidates[:, 0].copy(), candidates=candidates)


def _others(assignment, ue, hpn):
    return int(np.count_nonzero(assignment == hpn)) - int(assignment[ue] == hpn)


def _preferred(game: CrowdingGame, assignment, ue, first, second):
    current = int(assignment[ue])
    value_first = game.payoff(ue, first, _others(assignment, ue, first))
    value_second = game.payoff(ue, second, _others(assignment, ue, second))
    if value_first > value_second:
        return first
    if value_second > value_first:
        return second
    return current


def best_response_step(state: GameState, ue: int, game: CrowdingGame) -> GameState:
    first, second = (int(c) for c in state.candidates[ue])
    current = int(state.assignment[ue])
    if current not in (first, second):
        raise ValueError(f"UE {ue} sits on HPN {current}, not one of its candidates")
    if first == second:
        return state
    choice = _preferred(game, state.assignment, ue, first, second)
    if choice == current:
        return state
    assignment = state.assignment.copy()
    assignment[ue] = choice
    switch = Switch(
        ue=ue,
        source=current,
        target=choice,
        round=state.rounds,
        seq=len(state.switches),
    )
    return state.replace(assignment=assignment, switches=state.switches + (switch,))


def run_best_response(
    initial: GameState, game: CrowdingGame, max_rounds: int
) -> Tuple[Association, GameState, str]:
    """Round-robin best responses until a full sweep changes nothing."""
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")
    state = initial
    status = ROUND_CAPPED
    for sweep in range(max_rounds):
        state = state.replace(rounds=sweep)
        before = len(state.switches)
        for ue in range(state.assignment.shape[0]):
            state = best_response_step(state, ue, game)
        state = state.replace(rounds=sweep + 1)
        if len(state.switches) == before:
            status = PNE_REACHED
            break
    if status == ROUND_CAPPED:
        logging.warning(
            "Best response (%s rule) hit the round cap of %d.", game.rule, max_rounds
        )
    return state.association(game.scores.shape[1]), state, status


def is_pne(assoc: Association, candidates, game: CrowdingGame) -> bool:
    """No UE gains strictly by moving to its other candidate."""
    assignment = np.asarray(assoc.assign)
    for ue, (first, second) in enumerate(np.asarray(candidates)):
        current = int(assignment[ue])
        other = int(second) if current == int(first) else int(first)
        if other == current:
            continue
        stay = game.payoff(ue, current, _others(assignment, ue, current))
        move = game.payoff(ue, other, _others(assignment, ue, other))
        if move > stay:
            return False
    return True


def game_potential(assignment, game: CrowdingGame) -> float:
    """sum_i S[i, a_i] - w * sum_j log(n_j!); every improving switch raises it."""
    assignment = np.asarray(assignment)
    loads = np.bincount(assignment, minlength=game.scores.shape[1])
    utility = game.scores[np.arange(assignment.shape[0]), assignment].sum()
    return float(utility - game.load_weight * sum(math.lgamma(n + 1) for n in loads))


def ue_utility(assignment, ue, game: CrowdingGame) -> float:
    """The UE's own payoff at its current HPN."""
    hpn = int(assignment[ue])
    return game.payoff(ue, hpn, _others(assignment, ue, hpn))
