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

"""Seeded Monte Carlo campaigns over association modes and UE densities."""

import collections
import concurrent.futures
import csv
import json
import multiprocessing
import os
import time
from typing import Any, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from absl import logging
from flax import struct
from ml_collections import ConfigDict

import assoc
import metrics
import netmodel
import orchestrator
import powerctl
from configs import experiment

PARALLELISM_ENV = "CELLOPT_PARALLELISM"

RESULT_COLUMNS = (
    "seed",
    "mode",
    "ue_per_cell",
    "u_bar",
    "u_pf",
    "outer_iters",
    "jain_index",
    "wall_ms",
)
TRACE_COLUMNS = ("seed", "mode", "outer_iter", "u_bar", "pc_iters", "assoc_switches")
SUMMARY_COLUMNS = (
    "mode",
    "ue_per_cell",
    "replicas",
    "u_bar_mean",
    "u_bar_std",
    "u_pf_mean",
    "u_pf_std",
    "jain_mean",
)
RATE_COLUMNS = ("seed", "mode", "ue_per_cell", "ue", "hpn", "rate")
SWITCH_COLUMNS = (
    "seed",
    "mode",
    "ue_per_cell",
    "outer_iter",
    "round",
    "seq",
    "ue",
    "source",
    "target",
)
ERROR_COLUMNS = ("seed", "mode", "ue_per_cell", "error")
POWER_TRACE_COLUMNS = (
    "seed",
    "mode",
    "ue_per_cell",
    "outer_iter",
    "iteration",
    "objective",
    "max_violation",
    "step",
)
ORACLE_COLUMNS = ("instance", "seed", "check", "value", "reference", "gap", "passed")

# Oracle instances: UEs x HPNs x RBs small enough for exhaustive search.
ORACLE_SHAPE = (3, 2, 2)
ORACLE_GRID_POINTS = 9
ORACLE_JOINT_TOL = 0.02
ORACLE_ROUNDING_TOL = 0.05


class ConfigError(ValueError):
    """All problems found in one configuration."""

    def __init__(self, diagnostics: List[str]):
        super().__init__("Invalid configuration:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = list(diagnostics)


def _one_of(*choices):
    return lambda v: None if v in choices else f"must be one of {choices}, got {v!r}"


def _positive(v):
    return None if v > 0 else f"must be positive, got {v!r}"


def _at_least(bound):
    return lambda v: None if v >= bound else f"must be >= {bound}, got {v!r}"


def _open_unit(v):
    return None if 0 < v < 1 else f"must lie in (0, 1), got {v!r}"


def _int64(v):
    if -(2**63) <= v < 2**63:
        return None
    return f"must fit a signed 64-bit integer, got {v!r}"


def _ue_range(v):
    if len(v) != 2:
        return f"must be a (low, high) pair, got {v!r}"
    low, high = v
    if low > high:
        return f"empty range {low}..{high}"
    if low < 1 or high > 64:
        return f"range {low}..{high} outside [1, 64]"
    return None


def _each(check):
    def run(values):
        for value in values:
            message = check(value)
            if message:
                return message
        return None

    return run


def _non_empty(v):
    return None if len(v) else "must not be empty"


def _all(*checks):
    def run(value):
        for check in checks:
            message = check(value)
            if message:
                return message
        return None

    return run


_RANGE_CHECKS = {
    "scenario.cell_count": _one_of(*netmodel.SUPPORTED_CELL_COUNTS),
    "scenario.isd_m": _positive,
    "scenario.ues_per_cell": _ue_range,
    "scenario.seed": _int64,
    "scenario.pathloss_model": _one_of(*sorted(netmodel.PATHLOSS_MODELS)),
    "scenario.shadowing_sigma_db": _at_least(0),
    "scenario.min_distance_m": _positive,
    "scenario.rb_count": _at_least(1),
    "power.max_iterations": _at_least(1),
    "power.rel_tol": _open_unit,
    "power.barrier_weight": _positive,
    "power.barrier_decay": _open_unit,
    "power.armijo": _open_unit,
    "power.shrink": _open_unit,
    "association.mode": _one_of(*orchestrator.MODES),
    "association.br_rule": _one_of(*assoc.RULES),
    "association.max_rounds": _at_least(0),
    "association.candidate_policy": _one_of("top2"),
    "association.relaxed_rel_tol": _open_unit,
    "association.relaxed_max_iterations": _at_least(1),
    "orchestrator.rel_tol": _open_unit,
    "orchestrator.max_outer": _at_least(1),
    "orchestrator.order": _one_of(*orchestrator.ORDERS),
    "campaign.seeds": _each(_int64),
    "campaign.replica_count": _at_least(1),
    "campaign.ue_per_cell_sweep": _each(lambda v: _ue_range((v, v))),
    "campaign.modes": _all(_non_empty, _each(_one_of(*orchestrator.MODES))),
    "campaign.parallelism": _at_least(1),
}


def _type_error(default, value):
    """A diagnostic when `value` cannot stand in for `default`, else None."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        expected = "a boolean"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        expected = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        ok = ok and bool(np.isfinite(value))
        expected = "a finite number"
    elif isinstance(default, str):
        ok = isinstance(value, str)
        expected = "a string"
    else:
        return None
    return None if ok else f"must be {expected}, got {value!r}"


# Element types of list-valued keys whose defaults may be empty.
_ELEMENT_DEFAULTS = {
    "scenario.ues_per_cell": 0,
    "campaign.seeds": 0,
    "campaign.ue_per_cell_sweep": 0,
    "campaign.modes": "",
}


def _leaf_paths(value, path):
    if isinstance(value, Mapping) and value:
        for key, child in value.items():
            yield from _leaf_paths(child, f"{path}.{key}")
    else:
        yield path


def _nest(raw: Mapping) -> dict:
    """Expands dotted keys such as "power.rel_tol" into nested sections."""
    nested = {}
    for key, value in raw.items():
        if isinstance(value, Mapping):
            value = _nest(value)
        *parents, leaf = str(key).split(".")
        node = nested
        for parent in parents:
            node = node.setdefault(parent, {})
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf].update(value)
        else:
            node[leaf] = value
    return nested


def _merge(defaults: Mapping, raw: Mapping, prefix: str, problems: List[str]):
    merged = {}
    for key in raw:
        if key not in defaults:
            for path in _leaf_paths(raw[key], prefix + key):
                problems.append(f"{path}: unknown key")
    for key, default in defaults.items():
        path = prefix + key
        if key not in raw:
            merged[key] = default
            continue
        value = raw[key]
        if isinstance(default, Mapping):
            if not isinstance(value, Mapping):
                problems.append(f"{path}: must be a section, got {value!r}")
                merged[key] = default
            else:
                merged[key] = _merge(default, value, path + ".", problems)
            continue
        if isinstance(default, (tuple, list)):
            if not isinstance(value, (tuple, list)):
                problems.append(f"{path}: must be a list, got {value!r}")
                continue
            element = _ELEMENT_DEFAULTS.get(path)
            bad = [_type_error(element, v) for v in value]
            bad = [message for message in bad if message]
            if bad:
                problems.append(f"{path}: every element {bad[0]}")
                continue
            value = tuple(float(v) if isinstance(element, float) else v for v in value)
        else:
            message = _type_error(default, value)
            if message:
                problems.append(f"{path}: {message}")
                continue
            if isinstance(default, float):
                value = float(value)
        check = _RANGE_CHECKS.get(path)
        message = check(value) if check else None
        if message:
            problems.append(f"{path}: {message}")
            continue
        merged[key] = value
    return merged


def validate_config(raw: Union[ConfigDict, Mapping, str]) -> ConfigDict:
    """Type- and range-checks `raw` against the default experiment config.

    `raw` may be a ConfigDict, a plain mapping or JSON text such as a config
    echo. Missing keys take their defaults. Every problem is collected and
    raised together as a ConfigError naming dotted key paths.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError([f"<root>: not valid JSON ({e})"]) from e
    if isinstance(raw, ConfigDict):
        raw = raw.to_dict()
    if not isinstance(raw, Mapping):
        raise ConfigError([f"<root>: must be a mapping, got {type(raw).__name__}"])

    problems: List[str] = []
    merged = _merge(experiment.get_config().to_dict(), _nest(raw), "", problems)
    if not problems:
        scenario = merged["scenario"]
        p_max = float(netmodel.dbm_to_watt(scenario["p_max_dbm"]))
        p_min = float(netmodel.dbm_to_watt(scenario["p_min_dbm"]))
        try:
            metrics.PowerLimits(p_max=p_max, p_min=p_min).validate(scenario["rb_count"])
        except metrics.InfeasiblePowerLimitsError as e:
            problems.append(f"scenario.p_min_dbm: {e}")
    if problems:
        raise ConfigError(problems)
    return ConfigDict(merged).lock()


def config_echo(config: ConfigDict) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def replica_seeds(config: ConfigDict) -> Tuple[int, ...]:
    if config.campaign.seeds:
        return tuple(int(s) for s in config.campaign.seeds)
    base = config.scenario.seed
    return tuple(base + r for r in range(config.campaign.replica_count))


def sweep_points(config: ConfigDict) -> Tuple[Tuple[str, Tuple[int, int]], ...]:
    """(label, per-cell range) pairs; an empty sweep uses scenario.ues_per_cell."""
    if config.campaign.ue_per_cell_sweep:
        return tuple((str(n), (n, n)) for n in config.campaign.ue_per_cell_sweep)
    low, high = config.scenario.ues_per_cell
    label = str(low) if low == high else f"{low}-{high}"
    return ((label, (low, high)),)


def resolve_parallelism(config: ConfigDict) -> int:
    override = os.environ.get(PARALLELISM_ENV)
    if override is None:
        return config.campaign.parallelism
    try:
        value = int(override)
    except ValueError:
        raise ConfigError(
            [f"{PARALLELISM_ENV}: must be an integer, got {override!r}"]
        ) from None
    if value < 1:
        raise ConfigError([f"{PARALLELISM_ENV}: must be >= 1, got {value}"])
    return value


class ResultRow(NamedTuple):
    seed: int
    mode: str
    ue_per_cell: str
    u_bar: float
    u_pf: float
    outer_iters: int
    jain_index: float
    wall_ms: float


class ModeOutcome(NamedTuple):
    """Everything one (seed, sweep point, mode) solve writes out."""

    seed: int
    mode: str
    ue_per_cell: str
    result: Optional[ResultRow]
    error: Optional[str]
    rates: Tuple[tuple, ...] = ()
    trace: Tuple[tuple, ...] = ()
    switches: Tuple[tuple, ...] = ()
    power_trace: Tuple[tuple, ...] = ()


@struct.dataclass
class RunReport:
    rows: Tuple[ResultRow, ...] = struct.field(pytree_node=False)
    errors: Tuple[tuple, ...] = struct.field(pytree_node=False)
    summary: Tuple[tuple, ...] = struct.field(pytree_node=False)
    output_dir: str = struct.field(pytree_node=False)

    @property
    def ok(self):
        return not self.errors

    @property
    def exit_code(self):
        return 0 if self.ok else 2


def _solve_mode(scenario, mode, config, seed, label, keep_power_trace):
    start = time.perf_counter()
    result = orchestrator.alternate(scenario, mode, config)
    wall_ms = (time.perf_counter() - start) * 1e3

    final = result.trace.records[-1]
    rates = metrics.mean_rates(
        result.association, result.schedule, scenario.gains, result.power, scenario.noise
    )
    row = ResultRow(
        seed=seed,
        mode=mode,
        ue_per_cell=label,
        u_bar=final.u_bar,
        u_pf=final.u_pf,
        outer_iters=len(result.trace.records),
        jain_index=metrics.jain_index(rates),
        wall_ms=wall_ms,
    )
    trace = tuple(
        (seed, mode, r.iteration, r.u_bar, r.pc_iters, r.assoc_switches)
        for r in result.trace.records
    )
    rate_rows = tuple(
        (seed, mode, label, ue, int(hpn), float(rate))
        for ue, (hpn, rate) in enumerate(zip(result.association.assign, rates))
    )
    switch_rows = tuple(
        (seed, mode, label, outer, s.round, s.seq, s.ue, s.source, s.target)
        for outer, s in result.trace.switches
    )
    power_rows = ()
    if keep_power_trace:
        power_rows = tuple(
            (seed, mode, label, outer, int(it), float(obj), float(viol), float(step))
            for outer, power_trace in result.trace.power_traces
            for it, obj, viol, step in power_trace.rows
        )
    return ModeOutcome(
        seed=seed,
        mode=mode,
        ue_per_cell=label,
        result=row,
        error=None,
        rates=rate_rows,
        trace=trace,
        switches=switch_rows,
        power_trace=power_rows,
    )


def run_replica(task) -> Tuple[ModeOutcome, ...]:
    """Solves one drop under every configured mode; never raises."""
    config_json, seed, label, per_cell = task
    config = validate_config(config_json)
    modes = tuple(config.campaign.modes)
    keep_power_trace = config.campaign.write_power_trace
    try:
        scenario = netmodel.build_scenario(config.scenario, seed, per_cell)
    except Exception as e:
        logging.error("Replica seed=%d ue_per_cell=%s: %s", seed, label, e)
        message = f"{type(e).__name__}: {e}"
        return tuple(ModeOutcome(seed, mode, label, None, message) for mode in modes)

    outcomes = []
    for mode in modes:
        try:
            outcome = _solve_mode(scenario, mode, config, seed, label, keep_power_trace)
            logging.info(
                "Replica seed=%d mode=%s ue_per_cell=%s: U-bar %.6f after %d iterations.",
                seed,
                mode,
                label,
                outcome.result.u_bar,
                outcome.result.outer_iters,
            )
        except Exception as e:
            logging.error(
                "Replica seed=%d mode=%s ue_per_cell=%s failed: %s", seed, mode, label, e
            )
            outcome = ModeOutcome(seed, mode, label, None, f"{type(e).__name__}: {e}")
        outcomes.append(outcome)
    return tuple(outcomes)


def _format(value: Any) -> str:
    # repr keeps every bit of a float so reruns compare byte-for-byte.
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class _CsvSink:
    """Appends rows to one CSV, flushing after every batch."""

    def __init__(self, path, columns):
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(columns)

    def write(self, rows):
        for row in rows:
            self._writer.writerow([_format(v) for v in row])
        self._file.flush()

    def close(self):
        self._file.close()


def summarize(rows, modes, labels) -> Tuple[tuple, ...]:
    """Mean and population std of U-bar and U per (mode, ue_per_cell)."""
    summary = []
    for mode in modes:
        for label in labels:
            group = [r for r in rows if r.mode == mode and r.ue_per_cell == label]
            if not group:
                continue
            u_bar = np.array([r.u_bar for r in group])
            u_pf = np.array([r.u_pf for r in group])
            jain = np.array([r.jain_index for r in group])
            summary.append(
                (
                    mode,
                    label,
                    len(group),
                    float(u_bar.mean()),
                    float(u_bar.std()),
                    float(u_pf.mean()),
                    float(u_pf.std()),
                    float(jain.mean()),
                )
            )
    return tuple(summary)


def _map(parallelism, tasks):
    if parallelism <= 1:
        yield from map(run_replica, tasks)
        return
    context = multiprocessing.get_context("spawn")
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=parallelism, mp_context=context
    ) as executor:
        # map() yields in submission order whatever the completion order.
        yield from executor.map(run_replica, tasks)


def run_campaign(config: ConfigDict, output_dir: str) -> RunReport:
    """Runs every (seed, sweep point, mode) and writes the campaign files.

    Rows are written in (seed, mode, sweep point) order as soon as all sweep
    points of a seed are done, so a crash never truncates finished seeds.
    """
    config = validate_config(config)
    parallelism = resolve_parallelism(config)
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "config.json"), "w") as f:
        f.write(config_echo(config))

    seeds = replica_seeds(config)
    points = sweep_points(config)
    labels = tuple(label for label, _ in points)
    modes = tuple(config.campaign.modes)
    config_json = config.to_json()
    tasks = [
        (config_json, seed, label, per_cell)
        for seed in seeds
        for label, per_cell in points
    ]
    logging.info(
        "Campaign: %d seeds x %d sweep points x %d modes, parallelism %d.",
        len(seeds),
        len(points),
        len(modes),
        parallelism,
    )

    sinks = {
        "results": _CsvSink(os.path.join(output_dir, "results.csv"), RESULT_COLUMNS),
        "trace": _CsvSink(os.path.join(output_dir, "trace.csv"), TRACE_COLUMNS),
        "rates": _CsvSink(os.path.join(output_dir, "rates.csv"), RATE_COLUMNS),
        "switches": _CsvSink(os.path.join(output_dir, "switches.csv"), SWITCH_COLUMNS),
        "errors": _CsvSink(os.path.join(output_dir, "errors.csv"), ERROR_COLUMNS),
    }
    if config.campaign.write_power_trace:
        sinks["power_trace"] = _CsvSink(
            os.path.join(output_dir, "power_trace.csv"), POWER_TRACE_COLUMNS
        )

    rows, errors = [], []
    pending = {}
    try:
        for outcomes in _map(parallelism, tasks):
            seed = outcomes[0].seed
            pending.update({(o.mode, o.ue_per_cell): o for o in outcomes})
            if len(pending) < len(modes) * len(labels):
                continue
            ordered = [pending[(mode, label)] for mode in modes for label in labels]
            pending = {}
            for outcome in ordered:
                if outcome.result is None:
                    error = (seed, outcome.mode, outcome.ue_per_cell, outcome.error)
                    errors.append(error)
                    sinks["errors"].write([error])
                    continue
                rows.append(outcome.result)
                sinks["results"].write([outcome.result])
                sinks["trace"].write(outcome.trace)
                sinks["rates"].write(outcome.rates)
                sinks["switches"].write(outcome.switches)
                if "power_trace" in sinks:
                    sinks["power_trace"].write(outcome.power_trace)
    finally:
        for sink in sinks.values():
            sink.close()

    summary = summarize(rows, modes, labels)
    with open(os.path.join(output_dir, "summary.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for entry in summary:
            writer.writerow([_format(v) for v in entry])

    if errors:
        logging.warning("%d of %d solves failed.", len(errors), len(tasks) * len(modes))
    return RunReport(
        rows=tuple(rows), errors=tuple(errors), summary=summary, output_dir=output_dir
    )


class OracleCheck(NamedTuple):
    name: str
    value: float
    reference: float
    passed: bool

    @property
    def gap(self):
        """How far `value` falls short of `reference`, relative to max(1, |ref|)."""
        return (self.reference - self.value) / max(1.0, abs(self.reference))


def _oracle_checks(config: ConfigDict, seed: int) -> List[OracleCheck]:
    num_ues, num_hpns, rb_count = ORACLE_SHAPE
    scenario = netmodel.small_scenario(config.scenario, seed, num_ues, num_hpns, rb_count)
    gains, noise, limits = scenario.gains, scenario.noise, scenario.limits
    checks = []

    # Continuous power control can only beat the grid.
    association = orchestrator.initial_association(gains)
    solver_config = powerctl.SolverConfig.from_config(config.power)
    solved, _ = powerctl.solve_power(association, gains, noise, limits, solver_config)
    grid = powerctl.brute_force_power(
        association, gains, noise, limits, ORACLE_GRID_POINTS
    )
    value = metrics.surrogate_utility(association, gains, solved, noise)
    reference = metrics.surrogate_utility(association, gains, grid, noise)
    tol = 1e-6 * max(1.0, abs(reference))
    checks.append(OracleCheck("power", value, reference, value >= reference - tol))

    # Relaxed bound >= exact optimum >= rounded relaxation.
    power = metrics.PowerAllocation.uniform(limits, num_hpns, rb_count)
    frac, relaxed = assoc.solve_relaxed_assoc(
        gains, power, noise, assoc.RelaxedConfig.from_config(config.association)
    )
    _, exact = assoc.brute_force_assoc(gains, power, noise)
    rounded = assoc.assoc_objective(assoc.round_assoc(frac), gains, power, noise)
    tol = 1e-6 * max(1.0, abs(exact))
    checks.append(OracleCheck("relaxed_bound", relaxed, exact, relaxed >= exact - tol))
    checks.append(OracleCheck("rounded", rounded, exact, rounded <= exact + tol))
    refined = assoc.refine_assoc(assoc.round_assoc(frac), gains, power, noise)
    refined = assoc.assoc_objective(refined, gains, power, noise)
    check = OracleCheck("refined", refined, exact, refined <= exact + tol)
    checks.append(check._replace(passed=check.passed and check.gap <= ORACLE_ROUNDING_TOL))

    # Alternating optimization against exhaustive association x grid power.
    result = orchestrator.alternate(scenario, orchestrator.CENTRALIZED, config)
    _, _, joint = orchestrator.joint_brute_force(scenario, ORACLE_GRID_POINTS)
    check = OracleCheck("joint", result.trace.records[-1].u_bar, joint, True)
    checks.append(check._replace(passed=check.gap <= ORACLE_JOINT_TOL))
    return checks


def run_oracles(config: ConfigDict, count: int, output_dir: str) -> int:
    """Brute-force baselines on `count` small drops; returns the failed checks."""
    config = validate_config(config)
    os.makedirs(output_dir, exist_ok=True)
    failed = 0
    gaps = collections.defaultdict(list)
    with open(os.path.join(output_dir, "oracle.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ORACLE_COLUMNS)
        for instance in range(count):
            seed = config.scenario.seed + instance
            for check in _oracle_checks(config, seed):
                values = (check.name, check.value, check.reference, check.gap)
                gaps[check.name].append(check.gap)
                writer.writerow(
                    [instance, seed] + [_format(v) for v in values] + [check.passed]
                )
                if not check.passed:
                    failed += 1
                    logging.warning(
                        "Oracle %s failed on seed %d: %.9g vs %.9g.",
                        check.name,
                        seed,
                        check.value,
                        check.reference,
                    )
    for name, values in gaps.items():
        logging.info(
            "Oracle %s gaps: min %.3g, median %.3g, max %.3g.",
            name,
            np.min(values),
            np.median(values),
            np.max(values),
        )
    logging.info("Oracle: %d instances, %d failed checks.", count, failed)
    return failed
