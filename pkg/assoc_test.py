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

import itertools
import math

import numpy as np
from absl import logging
from absl.testing import absltest, parameterized

import assoc
import metrics
import netmodel
import test_util
from configs import experiment
from metrics import Association, FractionalAssociation, PowerAllocation, PowerLimits

UNIT_LIMITS = PowerLimits(p_max=10.0, p_min=1e-3)


def _flat_power(num_hpns, rb_count, value=1.0):
    return PowerAllocation(power=np.full((num_hpns, rb_count), value), limits=UNIT_LIMITS)


def _random_instance(seed, num_ues, num_hpns, rb_count):
    rng = np.random.default_rng(seed)
    gains = test_util.random_gains(rng, num_ues, num_hpns, rb_count)
    power = test_util.random_power(rng, num_hpns, rb_count)
    return gains, power


class ObjectiveTest(parameterized.TestCase):
    @parameterized.parameters(0, 1, 2)
    def test_binary_matches_surrogate(self, seed):
        gains, power = _random_instance(seed, 6, 3, 4)
        association = test_util.random_association(np.random.default_rng(seed), 6, 3)
        value = assoc.assoc_objective(association, gains, power, test_util.NOISE)
        surrogate = metrics.surrogate_utility(association, gains, power, test_util.NOISE)
        self.assertLessEqual(abs(value - surrogate), 1e-12 * max(1.0, abs(surrogate)))

    def test_symmetric_half_shares(self):
        # No interference: rho = power * gain / noise.
        gains = np.array([[[2.0], [1e-300]], [[1e-300], [2.0]]])
        frac = FractionalAssociation(theta=np.full((2, 2), 0.5))
        value = assoc.assoc_objective(frac, gains, _flat_power(2, 1), 1.0)
        # Each column has load 1; half of the theta mass sits on ~zero SINR links.
        scores = assoc.link_scores(gains, _flat_power(2, 1), 1.0)
        self.assertAlmostEqual(value, 0.5 * scores.sum(), places=6)

    def test_better_link_same_loads(self):
        gains = np.array([[[1.0], [4.0], [1.0]], [[1.0], [1.0], [1.0]]]) * 1e-9
        power = _flat_power(3, 1)
        worse = Association.create([0, 2], 3)
        better = Association.create([1, 2], 3)
        self.assertGreater(
            assoc.assoc_objective(better, gains, power, test_util.NOISE),
            assoc.assoc_objective(worse, gains, power, test_util.NOISE),
        )

    def test_relaxed_objective_concave_on_chords(self):
        gains, power = _random_instance(3, 5, 3, 2)
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.dirichlet(np.ones(3), size=5)
            b = rng.dirichlet(np.ones(3), size=5)
            lam = rng.uniform()
            value = lambda theta: assoc.assoc_objective(
                FractionalAssociation(theta=theta), gains, power, test_util.NOISE
            )
            chord = lam * value(a) + (1 - lam) * value(b)
            self.assertGreaterEqual(value(lam * a + (1 - lam) * b), chord - 1e-9)


class RelaxedTest(parameterized.TestCase):
    def test_dominant_hpn(self):
        gains = np.array([[[1e-6, 1e-6], [1e-14, 1e-14]]])
        frac, _ = assoc.solve_relaxed_assoc(gains, _flat_power(2, 2), test_util.NOISE)
        frac.validate()
        self.assertGreater(frac.theta[0, 0], 0.99)
        self.assertEqual(assoc.round_assoc(frac).assign.tolist(), [0])

    def test_symmetric_optimum(self):
        gains = np.full((2, 2, 2), 1e-9)
        frac, _ = assoc.solve_relaxed_assoc(gains, _flat_power(2, 2), test_util.NOISE)
        np.testing.assert_allclose(frac.theta, 0.5, atol=1e-6)

    @parameterized.parameters(
        (0, 2, 2), (1, 3, 2), (2, 4, 3), (3, 5, 3), (4, 6, 2), (5, 6, 3)
    )
    def test_sandwich(self, seed, num_ues, num_hpns):
        gains, power = _random_instance(seed, num_ues, num_hpns, 2)
        frac, relaxed = assoc.solve_relaxed_assoc(gains, power, test_util.NOISE)
        exact_assoc, exact = assoc.brute_force_assoc(gains, power, test_util.NOISE)
        rounded = assoc.assoc_objective(
            assoc.round_assoc(frac), gains, power, test_util.NOISE
        )
        tol = 1e-6 * max(1.0, abs(exact))
        self.assertGreaterEqual(relaxed, exact - tol)
        self.assertLessEqual(rounded, exact + tol)
        # One-hot rows.
        np.testing.assert_array_equal(exact_assoc.one_hot().sum(axis=1), 1.0)

    @parameterized.parameters(0, 1, 2)
    def test_frank_wolfe_gap_is_certified(self, seed):
        gains, power = _random_instance(20 + seed, 8, 4, 3)
        cfg = assoc.RelaxedConfig()
        frac, value = assoc.solve_relaxed_assoc(gains, power, test_util.NOISE, cfg)
        scores = assoc.link_scores(gains, power, test_util.NOISE)
        grad = assoc._relaxed_gradient(np.asarray(frac.theta), scores, 3.0)
        gap = float(assoc._frank_wolfe_gap(np.asarray(frac.theta), grad))
        self.assertLessEqual(gap, 10 * cfg.rel_tol * max(1.0, abs(value)))


class RefineTest(parameterized.TestCase):
    def _single_move_values(self, association, gains, power):
        for ue in range(association.ue_count):
            for hpn in range(association.num_hpns):
                if hpn == association.assign[ue]:
                    continue
                moved = association.assign.copy()
                moved[ue] = hpn
                yield assoc.assoc_objective(
                    Association.create(moved, association.num_hpns),
                    gains,
                    power,
                    test_util.NOISE,
                )

    @parameterized.parameters(0, 1, 2, 3)
    def test_no_single_move_improves(self, seed):
        gains, power = _random_instance(40 + seed, 7, 3, 2)
        start = test_util.random_association(np.random.default_rng(seed), 7, 3)
        refined = assoc.refine_assoc(start, gains, power, test_util.NOISE)
        value = assoc.assoc_objective(refined, gains, power, test_util.NOISE)
        before = assoc.assoc_objective(start, gains, power, test_util.NOISE)
        self.assertGreaterEqual(value, before)
        tol = 1e-9 * max(1.0, abs(value))
        for other in self._single_move_values(refined, gains, power):
            self.assertLessEqual(other, value + tol)

    def test_optimum_is_a_fixed_point(self):
        gains, power = _random_instance(60, 5, 3, 2)
        exact_assoc, _ = assoc.brute_force_assoc(gains, power, test_util.NOISE)
        refined = assoc.refine_assoc(exact_assoc, gains, power, test_util.NOISE)
        np.testing.assert_array_equal(refined.assign, exact_assoc.assign)

    def test_splits_a_crowded_cell(self):
        # Identical links: two UEs sharing an HPN lose 2 * K * log 2.
        gains = np.full((2, 2, 3), 1e-9)
        start = Association.create([0, 0], 2)
        refined = assoc.refine_assoc(start, gains, _flat_power(2, 3), test_util.NOISE)
        self.assertEqual(sorted(refined.loads.tolist()), [1, 1])

    def test_rounded_within_five_percent(self):
        gaps = []
        for seed in range(500, 520):
            rng = np.random.default_rng(seed)
            num_hpns = int(rng.integers(2, 4))
            num_ues = int(rng.integers(2, 7))
            gains = test_util.random_gains(rng, num_ues, num_hpns, 2)
            power = test_util.random_power(rng, num_hpns, 2)
            frac, relaxed = assoc.solve_relaxed_assoc(gains, power, test_util.NOISE)
            _, exact = assoc.brute_force_assoc(gains, power, test_util.NOISE)
            rounded = assoc.round_assoc(frac)
            refined = assoc.refine_assoc(rounded, gains, power, test_util.NOISE)
            value = assoc.assoc_objective(refined, gains, power, test_util.NOISE)
            tol = 1e-6 * max(1.0, abs(exact))
            self.assertGreaterEqual(relaxed, exact - tol)
            self.assertLessEqual(value, exact + tol)
            self.assertGreaterEqual(
                value, assoc.assoc_objective(rounded, gains, power, test_util.NOISE)
            )
            gaps.append((exact - value) / max(1.0, abs(exact)))
        logging.info(
            "Rounding gaps: median %.3g, max %.3g, all %s",
            np.median(gaps),
            np.max(gaps),
            np.round(gaps, 4),
        )
        self.assertLessEqual(max(gaps), 0.05)


class RoundingTest(absltest.TestCase):
    def test_argmax(self):
        frac = FractionalAssociation(theta=np.array([[0.9, 0.1], [0.2, 0.8]]))
        self.assertEqual(assoc.round_assoc(frac).assign.tolist(), [0, 1])

    def test_tie_goes_to_lower_index(self):
        frac = FractionalAssociation(theta=np.array([[0.0, 0.5, 0.5]]))
        self.assertEqual(assoc.round_assoc(frac).assign.tolist(), [1])

    def test_one_hot_unchanged(self):
        association = Association.create([2, 0, 1], 3)
        frac = FractionalAssociation(theta=association.one_hot())
        np.testing.assert_array_equal(assoc.round_assoc(frac).assign, association.assign)


class BruteForceTest(absltest.TestCase):
    def test_single_ue_picks_best_score(self):
        gains, power = _random_instance(8, 1, 4, 3)
        association, _ = assoc.brute_force_assoc(gains, power, test_util.NOISE)
        scores = assoc.link_scores(gains, power, test_util.NOISE)
        self.assertEqual(int(association.assign[0]), int(np.argmax(scores[0])))

    def test_identical_ues_split(self):
        gains = np.full((2, 2, 2), 1e-9)
        power = _flat_power(2, 2)
        association, value = assoc.brute_force_assoc(gains, power, test_util.NOISE)
        self.assertEqual(association.assign.tolist(), [0, 1])
        together = assoc.assoc_objective(
            Association.create([0, 0], 2), gains, power, test_util.NOISE
        )
        self.assertGreater(value, together)

    def test_matches_enumeration(self):
        gains, power = _random_instance(9, 4, 3, 2)
        _, value = assoc.brute_force_assoc(gains, power, test_util.NOISE)
        best = max(
            assoc.assoc_objective(Association.create(a, 3), gains, power, test_util.NOISE)
            for a in itertools.product(range(3), repeat=4)
        )
        self.assertAlmostEqual(value, best, places=9)

    def test_too_large(self):
        gains = np.ones((30, 2, 1))
        with self.assertRaisesRegex(ValueError, "enumeration limit"):
            assoc.brute_force_assoc(gains, _flat_power(2, 1), 1.0)


class CandidatesTest(absltest.TestCase):
    def test_nearest_two(self):
        loss_db = np.array([[140.0, 130.0, 125.0, 90.0, 150.0, 100.0]])
        gains = np.repeat((10.0 ** (-loss_db / 10.0))[:, :, None], 2, axis=-1)
        candidates = assoc.pick_candidates(gains, _flat_power(6, 2), test_util.NOISE)
        self.assertEqual(candidates.tolist(), [[3, 5]])

    def test_tie_by_index(self):
        gains = np.array([[[1e-12], [1e-9], [1e-9]]])
        candidates = assoc.pick_candidates(gains, _flat_power(3, 1), 1.0)
        self.assertEqual(candidates.tolist(), [[1, 2]])

    def test_scale_invariance(self):
        gains, power = _random_instance(12, 6, 4, 2)
        scaled = PowerAllocation(power=power.power * 7.0, limits=power.limits)
        np.testing.assert_array_equal(
            assoc.pick_candidates(gains, power, test_util.NOISE),
            assoc.pick_candidates(gains, scaled, test_util.NOISE * 7.0),
        )

    def test_single_hpn_pair(self):
        candidates = assoc.pick_candidates(np.ones((3, 1, 1)), _flat_power(1, 1), 1.0)
        self.assertEqual(candidates.tolist(), [[0, 0]] * 3)


def _game(scores, rb_count, rule=assoc.UTILITY_CONSISTENT):
    return assoc.CrowdingGame(
        scores=np.asarray(scores, dtype=np.float64), rb_count=rb_count, rule=rule
    )


class BestResponseTest(parameterized.TestCase):
    def test_lone_ue_picks_better(self):
        game = _game([[1.0, 0.0]], 1)
        state = assoc.GameState(assignment=np.array([1]), candidates=np.array([[0, 1]]))
        state = assoc.best_response_step(state, 0, game)
        self.assertEqual(state.assignment.tolist(), [0])
        self.assertEqual(
            state.switches, (assoc.Switch(ue=0, source=1, target=0, round=0, seq=0),)
        )

    def test_second_mover_defects(self):
        # Both prefer HPN 0 alone; UE 1's edge log(1.5) is below the load cost log 2.
        scores = np.log([[4.0, 1.0], [1.5, 1.0]])
        game = _game(scores, 1)
        state = assoc.initial_game_state(np.array([[0, 1], [0, 1]]))
        state = assoc.best_response_step(state, 0, game)
        state = assoc.best_response_step(state, 1, game)
        self.assertEqual(state.assignment.tolist(), [0, 1])

    def test_equality_keeps_current(self):
        game = _game(np.zeros((3, 2)), 1)
        # UE 1 shares either HPN with exactly one other UE.
        state = assoc.GameState(
            assignment=np.array([0, 1, 1]), candidates=np.array([[0, 1]] * 3)
        )
        self.assertIs(assoc.best_response_step(state, 1, game), state)

    @parameterized.parameters(0, 1, 2, 3, 4)
    def test_rules_agree_with_one_rb(self, seed):
        rng = np.random.default_rng(seed)
        gains = test_util.random_gains(rng, 8, 3, 1)
        power = test_util.random_power(rng, 3, 1)
        candidates = assoc.pick_candidates(gains, power, test_util.NOISE)
        results = []
        for rule in assoc.RULES:
            game = assoc.CrowdingGame.create(gains, power, test_util.NOISE, rule=rule)
            association, _, _ = assoc.run_best_response(
                assoc.initial_game_state(candidates), game, 80
            )
            results.append(association.assign.tolist())
        for other in results[1:]:
            self.assertEqual(other, results[0])

    def test_unit_load_is_an_alias(self):
        game = assoc.CrowdingGame.create(
            np.ones((1, 2, 1)), _flat_power(2, 1), 1.0, rule="unit_load"
        )
        self.assertEqual(game.rule, assoc.UNIT_LOAD)
        self.assertEqual(assoc.UNIT_LOAD, "paper")

    def test_already_at_equilibrium(self):
        game = _game(np.log([[4.0, 1.0], [1.0, 4.0]]), 2)
        state = assoc.initial_game_state(np.array([[0, 1], [1, 0]]))
        association, final, status = assoc.run_best_response(state, game, 5)
        self.assertEqual(status, assoc.PNE_REACHED)
        self.assertEqual(final.rounds, 1)
        self.assertEqual(final.switches, ())
        self.assertEqual(association.assign.tolist(), [0, 1])

    def test_symmetric_contention_splits(self):
        game = _game(np.zeros((2, 2)), 2)
        state = assoc.initial_game_state(np.array([[0, 1], [0, 1]]))
        association, _, status = assoc.run_best_response(state, game, 10)
        self.assertEqual(status, assoc.PNE_REACHED)
        self.assertEqual(sorted(association.assign.tolist()), [0, 1])

    def test_bad_rule(self):
        with self.assertRaises(ValueError):
            assoc.CrowdingGame.create(
                np.ones((1, 2, 1)), _flat_power(2, 1), 1.0, rule="greedy"
            )

    def test_assignment_outside_candidates(self):
        game = _game(np.zeros((1, 3)), 1)
        state = assoc.GameState(assignment=np.array([2]), candidates=np.array([[0, 1]]))
        with self.assertRaises(ValueError):
            assoc.best_response_step(state, 0, game)

    @parameterized.parameters(*range(20))
    def test_finite_improvement(self, seed):
        rng = np.random.default_rng(1000 + seed)
        num_hpns = int(rng.integers(2, 10))
        num_ues = int(rng.integers(1, 61))
        rb_count = int(rng.integers(1, 5))
        gains = test_util.random_gains(rng, num_ues, num_hpns, rb_count)
        power = test_util.random_power(rng, num_hpns, rb_count)
        candidates = assoc.pick_candidates(gains, power, test_util.NOISE)
        game = assoc.CrowdingGame.create(gains, power, test_util.NOISE)
        initial = assoc.initial_game_state(candidates)
        association, final, status = assoc.run_best_response(
            initial, game, 10 * num_ues
        )
        self.assertEqual(status, assoc.PNE_REACHED)
        self.assertTrue(assoc.is_pne(association, candidates, game))

        # Replay the switch log: each mover gains and the potential rises.
        rounds = [s.round for s in final.switches]
        self.assertEqual(rounds, sorted(rounds))
        seqs = [s.seq for s in final.switches]
        self.assertEqual(seqs, list(range(len(seqs))))
        assignment = initial.assignment.copy()
        for switch in final.switches:
            self.assertIn(switch.target, candidates[switch.ue])
            before_potential = assoc.game_potential(assignment, game)
            before_utility = assoc.ue_utility(assignment, switch.ue, game)
            assignment[switch.ue] = switch.target
            self.assertGreater(assoc.game_potential(assignment, game), before_potential)
            self.assertGreater(assoc.ue_utility(assignment, switch.ue, game), before_utility)
        np.testing.assert_array_equal(assignment, association.assign)

    def test_finite_improvement_on_nine_cell_drops(self):
        config = experiment.get_config()
        for seed in range(200):
            scenario = netmodel.build_scenario(config.scenario, seed, (4, 14))
            num_ues, num_hpns, rb_count = scenario.shape
            power = PowerAllocation.uniform(scenario.limits, num_hpns, rb_count)
            candidates = assoc.pick_candidates(scenario.gains, power, scenario.noise)
            game = assoc.CrowdingGame.create(scenario.gains, power, scenario.noise)
            initial = assoc.initial_game_state(candidates)
            association, final, status = assoc.run_best_response(
                initial, game, 10 * num_ues
            )
            self.assertEqual(status, assoc.PNE_REACHED, msg=f"seed {seed}")
            self.assertTrue(assoc.is_pne(association, candidates, game))
            assignment = initial.assignment.copy()
            potential = assoc.game_potential(assignment, game)
            for switch in final.switches:
                assignment[switch.ue] = switch.target
                after = assoc.game_potential(assignment, game)
                self.assertGreater(after, potential)
                potential = after

    def test_round_cap(self):
        rng = np.random.default_rng(77)
        gains = test_util.random_gains(rng, 30, 4, 2)
        power = test_util.random_power(rng, 4, 2)
        candidates = assoc.pick_candidates(gains, power, test_util.NOISE)
        game = assoc.CrowdingGame.create(gains, power, test_util.NOISE)
        _, state, status = assoc.run_best_response(
            assoc.initial_game_state(candidates), game, 1
        )
        if state.switches:
            self.assertEqual(status, assoc.ROUND_CAPPED)
        else:
            self.assertEqual(status, assoc.PNE_REACHED)


def _stay_payoff(game, assignment, ue):
    hpn = assignment[ue]
    return game.payoff(ue, hpn, sum(a == hpn for a in assignment) - 1)


def _move_payoff(game, assignment, ue):
    hpn = 1 - assignment[ue]
    return game.payoff(ue, hpn, sum(a == hpn for a in assignment))


class PneTest(parameterized.TestCase):
    def test_forced_onto_worse_candidate(self):
        game = _game(np.log([[4.0, 1.0]]), 2)
        self.assertFalse(
            assoc.is_pne(Association.create([1], 2), np.array([[0, 1]]), game)
        )

    @parameterized.parameters(assoc.UNIT_LOAD, assoc.UTILITY_CONSISTENT)
    def test_enumerated_equilibria(self, rule):
        scores = np.log([[3.0, 2.0], [2.5, 2.0]])
        game = _game(scores, 2, rule)
        candidates = np.array([[0, 1], [0, 1]])
        for assignment in itertools.product(range(2), repeat=2):
            association = Association.create(assignment, 2)
            no_deviation = all(
                _stay_payoff(game, assignment, ue) >= _move_payoff(game, assignment, ue)
                for ue in range(2)
            )
            self.assertEqual(assoc.is_pne(association, candidates, game), no_deviation)

    def test_potential_uses_factorials(self):
        game = _game(np.zeros((3, 2)), 2)
        self.assertAlmostEqual(
            assoc.game_potential(np.array([0, 0, 0]), game), -2 * math.log(6.0)
        )


if __name__ == "__main__":
    absltest.main()
