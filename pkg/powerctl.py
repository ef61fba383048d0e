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

"""Centralized power control in the log-power domain.

For a fixed association the surrogate utility becomes, after the change of
variables pi_hat = log(pi), a concave function of pi_hat: a linear part minus
log-sum-exp interference terms. The per-HPN power cap is a log-sum-exp
constraint as well, so the problem is convex. It is solved here by a Newton
barrier method with logarithmic barriers on the cap and on the per-RB floor.
"""

from typing import Optional, Tuple

import jax
import numpy as np
from absl import logging
from flax import struct
from jax import lax
from jax import numpy as jnp
from jax.scipy.special import logsumexp, xlogy
from ml_collections import ConfigDict

from metrics import Association, PowerAllocation, PowerLimits

CONVERGED = "converged"
ITERATION_CAPPED = "iteration-capped"

MAX_GRID_SIZE = 10**7

_MIN_STEP = 1e-14


@struct.dataclass
class SolverConfig:
    max_iterations: int = struct.field(pytree_node=False, default=5000)
    rel_tol: float = struct.field(pytree_node=False, default=1e-6)
    barrier_weight: float = struct.field(pytree_node=False, default=1.0)
    barrier_decay: float = struct.field(pytree_node=False, default=0.5)
    armijo: float = struct.field(pytree_node=False, default=1e-4)
    shrink: float = struct.field(pytree_node=False, default=0.5)

    @classmethod
    def from_config(cls, config: ConfigDict):
        return cls(
            max_iterations=config.max_iterations,
            rel_tol=config.rel_tol,
            barrier_weight=config.barrier_weight,
            barrier_decay=config.barrier_decay,
            armijo=config.armijo,
            shrink=config.shrink,
        ).validate()

    def validate(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.rel_tol < 1:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if not self.barrier_weight > 0:
            raise ValueError(f"barrier_weight must be positive, got {self.barrier_weight}")
        for name in ("barrier_decay", "armijo", "shrink"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        return self


@struct.dataclass
class PowerProblem:
    """Log-domain data of one power-control instance."""

    serving: jnp.ndarray  # [I, J] one-hot association
    log_gains: jnp.ndarray  # [I, J, K]
    log_noise: jnp.ndarray  # []
    log_p_max: jnp.ndarray  # []
    log_p_min: jnp.ndarray  # []
    active: jnp.ndarray  # [J] HPNs with at least one UE

    @classmethod
    def create(cls, assoc: Association, gains, noise, limits: PowerLimits):
        return cls(
            serving=jnp.asarray(assoc.one_hot()),
            log_gains=jnp.log(jnp.asarray(gains)),
            log_noise=jnp.log(jnp.asarray(noise, dtype=jnp.float64)),
            log_p_max=jnp.log(jnp.asarray(limits.p_max, dtype=jnp.float64)),
            log_p_min=jnp.log(jnp.asarray(limits.p_min, dtype=jnp.float64)),
            active=jnp.asarray(assoc.loads > 0),
        )


@struct.dataclass
class PowerTrace:
    rows: np.ndarray  # [T, 4]: iteration, objective, max violation, step
    status: str = struct.field(pytree_node=False)
    iterations: int = struct.field(pytree_node=False)

    @property
    def objectives(self):
        return self.rows[:, 1]


def _rb_objective(pi_k, serving, log_gains_k, log_noise):
    """Sum over UEs of log SINR on one RB; pi_k is [J], log_gains_k is [I, J]."""
    rx = pi_k[None, :] + log_gains_k
    signal = jnp.sum(serving * rx, axis=1)
    terms = jnp.concatenate([rx, jnp.broadcast_to(log_noise, signal.shape)[:, None]], 1)
    weights = jnp.concatenate([1.0 - serving, jnp.ones_like(signal)[:, None]], 1)
    return jnp.sum(signal - logsumexp(terms, axis=1, b=weights))


_per_rb_objective = jax.vmap(_rb_objective, in_axes=(1, None, 2, None))
_per_rb_hessian = jax.vmap(jax.hessian(_rb_objective), in_axes=(1, None, 2, None))


def _objective(pi_hat, serving, log_gains, log_noise):
    loads = jnp.sum(serving, axis=0)
    rb_count = pi_hat.shape[1]
    utility = jnp.sum(_per_rb_objective(pi_hat, serving, log_gains, log_noise))
    return utility - rb_count * jnp.sum(xlogy(loads, loads))


_objective_jit = jax.jit(_objective)
_gradient_jit = jax.jit(jax.grad(_objective))
_batched_objective = jax.jit(jax.vmap(_objective, in_axes=(0, None, None, None)))


def pc_objective(pi_hat, assoc: Association, gains, noise) -> float:
    """U^PC(pi_hat); equals the surrogate utility at pi = exp(pi_hat)."""
    return float(
        _objective_jit(
            jnp.asarray(pi_hat),
            jnp.asarray(assoc.one_hot()),
            jnp.log(jnp.asarray(gains)),
            jnp.log(noise),
        )
    )


def pc_gradient(pi_hat, assoc: Association, gains, noise) -> np.ndarray:
    return np.asarray(
        _gradient_jit(
            jnp.asarray(pi_hat),
            jnp.asarray(assoc.one_hot()),
            jnp.log(jnp.asarray(gains)),
            jnp.log(noise),
        )
    )


def _row_barrier(pi_j, log_p_max, log_p_min):
    return jnp.log(log_p_max - logsumexp(pi_j)) + jnp.sum(jnp.log(pi_j - log_p_min))


def _augmented(pi_hat, problem: PowerProblem, weight):
    """Objective plus log barriers on the cap and the floor of active HPNs.

    Returns -inf outside the strict interior. Inactive HPNs stay at the floor
    and carry no barrier.
    """
    f = _objective(pi_hat, problem.serving, problem.log_gains, problem.log_noise)
    rows = problem.active[:, None]
    slack = problem.log_p_max - logsumexp(pi_hat, axis=1)
    gap = pi_hat - problem.log_p_min
    inside = jnp.all(jnp.where(problem.active, slack > 0, True)) & jnp.all(
        jnp.where(rows, gap > 0, True)
    )
    safe_slack = jnp.where(problem.active & (slack > 0), slack, 1.0)
    safe_gap = jnp.where(rows & (gap > 0), gap, 1.0)
    barrier = jnp.sum(jnp.where(problem.active, jnp.log(safe_slack), 0.0))
    barrier += jnp.sum(jnp.where(rows, jnp.log(safe_gap), 0.0))
    return jnp.where(inside, f + weight * barrier, -jnp.inf), f


def _augmented_hessian(pi_hat, problem: PowerProblem, weight):
    """Hessian of the barrier objective as an [J*K, J*K] matrix.

    The utility couples HPNs only within an RB and each barrier couples RBs
    only within an HPN, so both parts are assembled from small blocks.
    Inactive rows and columns are replaced by -1 on the diagonal.
    """
    num_hpns, rb_count = pi_hat.shape
    per_rb = _per_rb_hessian(
        pi_hat, problem.serving, problem.log_gains, problem.log_noise
    )  # [K, J, J]
    hessian = jnp.einsum("kab,kc->akbc", per_rb, jnp.eye(rb_count))
    per_hpn = jax.vmap(jax.hessian(_row_barrier), in_axes=(0, None, None))(
        pi_hat, problem.log_p_max, problem.log_p_min
    )  # [J, K, K]
    per_hpn = jnp.where(problem.active[:, None, None], per_hpn, 0.0)
    hessian += weight * jnp.einsum("jkl,jm->jkml", per_hpn, jnp.eye(num_hpns))

    size = num_hpns * rb_count
    mask = jnp.repeat(problem.active, rb_count)
    hessian = jnp.where(mask[:, None] & mask[None, :], hessian.reshape(size, size), 0.0)
    return hessian - jnp.diag(jnp.where(mask, 0.0, 1.0))


def _max_violation(pi_hat, problem: PowerProblem):
    power = jnp.exp(pi_hat)
    p_max = jnp.exp(problem.log_p_max)
    p_min = jnp.exp(problem.log_p_min)
    cap = (jnp.sum(power, axis=1) - p_max) / p_max
    floor = (p_min - power) / p_min
    return jnp.maximum(0.0, jnp.maximum(jnp.max(cap), jnp.max(floor)))


@jax.jit
def _newton_step(pi_hat, problem, weight, rel_tol, armijo, shrink):
    """One damped Newton step on the barrier objective.

    Falls back to the gradient when the Newton system is singular or does not
    give an ascent direction. `done` is set, and nothing moves, once half the
    squared Newton decrement is below rel_tol * max(1, |objective|) / 2.
    """
    (aug, _), grad = jax.value_and_grad(_augmented, has_aux=True)(
        pi_hat, problem, weight
    )
    grad = jnp.where(problem.active[:, None], grad, 0.0)
    hessian = _augmented_hessian(pi_hat, problem, weight)
    direction = jnp.linalg.solve(-hessian, grad.reshape(-1)).reshape(pi_hat.shape)
    slope = jnp.vdot(grad, direction)
    usable = jnp.all(jnp.isfinite(direction)) & (slope > 0)
    direction = jnp.where(usable, direction, grad)
    slope = jnp.vdot(grad, direction)
    done = slope <= rel_tol * jnp.maximum(1.0, jnp.abs(aug))

    def candidate(t):
        x = pi_hat + t * direction
        aug_new, f_new = _augmented(x, problem, weight)
        return x, f_new, aug_new >= aug + armijo * t * slope

    def cond(carry):
        t, ok = carry
        return (~ok) & (t > _MIN_STEP)

    def body(carry):
        t, _ = carry
        t = (t * shrink).astype(jnp.float64)
        return t, candidate(t)[2]

    step = jnp.asarray(1.0, dtype=jnp.float64)
    step, ok = lax.while_loop(cond, body, (step, candidate(step)[2] | done))
    x, f_new, _ = candidate(step)
    x = jnp.where(ok & ~done, x, pi_hat)
    return x, step, ok, done, f_new, _max_violation(x, problem)


def _interior_point(pi_hat, active, limits: PowerLimits):
    """Mixes active HPNs toward the box center until they sit strictly inside."""
    power = np.exp(pi_hat)
    rb_count = power.shape[1]
    center = 0.5 * (limits.p_min + limits.p_max / rb_count)
    start = power.copy()
    eta = 1e-3
    while True:
        mixed = start.copy()
        mixed[active] = (1 - eta) * start[active] + eta * center
        rows = mixed[active]
        inside = np.all(rows > limits.p_min * (1 + 1e-9)) and np.all(
            rows.sum(axis=1) < limits.p_max * (1 - 1e-9)
        )
        if inside or eta >= 1.0:
            return np.log(mixed)
        eta = min(1.0, eta * 10)


def solve_power(
    assoc: Association,
    gains,
    noise,
    limits: PowerLimits,
    cfg: SolverConfig = SolverConfig(),
    init: Optional[PowerAllocation] = None,
) -> Tuple[PowerAllocation, PowerTrace]:
    """Maximizes U^PC for a fixed association.

    Newton rounds on the barrier objective alternate with barrier weight
    decay. The run is `converged` once the barrier bound on the distance to
    the optimum, weight times the number of active constraints, is below
    rel_tol * max(1, |objective|). A stalled line search or the iteration
    cap ends it as `iteration-capped`. The returned point is the best
    iterate, and the trace records that incumbent.
    """
    cfg.validate()
    _, num_hpns, rb_count = np.shape(gains)
    limits.validate(rb_count)
    if init is None:
        init = PowerAllocation.uniform(limits, num_hpns, rb_count)

    problem = PowerProblem.create(assoc, gains, noise, limits)
    active = assoc.loads > 0
    log_p_min = np.log(limits.p_min)

    # Empty cells sit at the floor; they still interfere.
    start = np.maximum(np.array(init.log_power, dtype=np.float64), log_p_min)
    start[~active] = log_p_min

    no_interior = rb_count * limits.p_min >= limits.p_max * (1 - 1e-12)
    if not active.any() or no_interior:
        if no_interior:
            start = np.full_like(start, log_p_min)
        trace = PowerTrace(rows=np.zeros((0, 4)), status=CONVERGED, iterations=0)
        return PowerAllocation.from_log_power(start, limits), trace

    x = jnp.asarray(_interior_point(start, active, limits))
    best_x, best_objective = x, pc_objective(x, assoc, gains, noise)
    constraints = int(active.sum()) * (1 + rb_count)
    weight = cfg.barrier_weight
    iteration = 0
    rows = []
    status = ITERATION_CAPPED
    stalled = False

    while not stalled:
        settled = False
        while iteration < cfg.max_iterations:
            x_new, step, ok, done, f_new, violation = _newton_step(
                x, problem, weight, cfg.rel_tol, cfg.armijo, cfg.shrink
            )
            if bool(done):
                settled = True
                break
            if not bool(ok):
                stalled = True
                break
            iteration += 1
            x = x_new
            if float(f_new) > best_objective:
                best_x, best_objective = x, float(f_new)
            rows.append((iteration, best_objective, float(violation), float(step)))

        if not settled:
            break
        if constraints * weight <= cfg.rel_tol * max(1.0, abs(best_objective)):
            status = CONVERGED
            break
        weight *= cfg.barrier_decay

    result = np.asarray(best_x)
    start_allocation = PowerAllocation.from_log_power(start, limits)
    if start_allocation.is_feasible() and (
        pc_objective(start, assoc, gains, noise) > best_objective
    ):
        result = start
    if stalled:
        logging.warning(
            "Power control line search stalled after %d iterations "
            "(barrier weight %.3g).",
            iteration,
            weight,
        )
    elif status == ITERATION_CAPPED:
        logging.warning(
            "Power control stopped at the iteration cap (%d iterations).", iteration
        )
    trace = PowerTrace(
        rows=np.array(rows, dtype=np.float64).reshape(-1, 4),
        status=status,
        iterations=iteration,
    )
    return PowerAllocation.from_log_power(result, limits), trace


def brute_force_power(
    assoc: Association, gains, noise, limits: PowerLimits, grid_points: int
) -> PowerAllocation:
    """Best allocation on a per-RB log-spaced grid from p_min to p_max."""
    _, num_hpns, rb_count = np.shape(gains)
    limits.validate(rb_count)
    active = np.flatnonzero(assoc.loads > 0)
    num_vars = active.size * rb_count
    if grid_points ** num_vars > MAX_GRID_SIZE:
        raise ValueError(
            f"Grid of {grid_points}^{num_vars} points exceeds {MAX_GRID_SIZE}"
        )

    base = np.full((num_hpns, rb_count), np.log(limits.p_min))
    if num_vars == 0:
        return PowerAllocation.from_log_power(base, limits)

    grid = np.log(np.geomspace(limits.p_min, limits.p_max, grid_points))
    serving = jnp.asarray(assoc.one_hot())
    log_gains = jnp.log(jnp.asarray(gains))
    log_noise = jnp.log(noise)

    total = grid_points**num_vars
    chunk = 1 << 16
    best_value, best_point = -np.inf, None
    for begin in range(0, total, chunk):
        index = np.arange(begin, min(begin + chunk, total))
        digits = np.stack(np.unravel_index(index, (grid_points,) * num_vars), axis=-1)
        candidates = np.broadcast_to(base, (index.size,) + base.shape).copy()
        candidates[:, active, :] = grid[digits].reshape(index.size, active.size, rb_count)
        feasible = np.all(
            np.exp(candidates).sum(axis=-1) <= limits.p_max * (1 + 1e-9), axis=-1
        )
        values = np.asarray(
            _batched_objective(jnp.asarray(candidates), serving, log_gains, log_noise)
        )
        values = np.where(feasible, values, -np.inf)
        position = int(np.argmax(values))
        if values[position] > best_value:
            best_value, best_point = values[position], candidates[position]

    return PowerAllocation.from_log_power(best_point, limits)


def feasible_log_power(rng, num_hpns, rb_count, limits: PowerLimits):
    """A random strictly feasible pi_hat: the floor plus a random share of the slack."""
    spare = limits.p_max - rb_count * limits.p_min
    shares = rng.dirichlet(np.ones(rb_count + 1), size=num_hpns)[:, :rb_count]
    return np.log(limits.p_min + spare * shares)

