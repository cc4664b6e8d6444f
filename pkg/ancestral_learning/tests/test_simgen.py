from typing import Dict, List, Set
from unittest import TestCase

import numpy as np
from scipy.stats import ks_2samp

from ancestral_learning.errors import DomainError
from ancestral_learning.pairspace import labels_from_truth
from ancestral_learning.simgen import (
    MAX_SPECTRAL_RADIUS,
    NO_INTERVENTION,
    InterventionLabels,
    InterventionPanel,
    PanelEntry,
    ScmSpec,
    SimulatorConfig,
    ancestral_truth,
    design_interventions,
    exclude_promiscuous,
    sample_scm,
    simulate,
    solve_equilibrium,
    spectral_radius,
    threshold_truth,
)


def _reachable(weights: np.ndarray, start: int) -> Set[int]:
    seen: Set[int] = set()
    stack = [start]
    while stack:
        node = stack.pop()
        for child in np.flatnonzero(weights[node]):
            if int(child) not in seen:
                seen.add(int(child))
                stack.append(int(child))
    seen.discard(start)
    return seen


class SampleScmTests(TestCase):
    def test_acyclic_has_a_topological_order(self) -> None:
        cfg = SimulatorConfig(p_lat=3, edge_density=0.3)
        for seed in range(5):
            with self.subTest(seed=seed):
                spec = sample_scm(12, cfg, seed)
                # Nilpotent adjacency <=> no directed cycle.
                adjacency = (spec.weights != 0.0).astype(np.int64)
                power = np.linalg.matrix_power(adjacency, spec.p_total)
                self.assertFalse(np.any(power))
                self.assertFalse(np.any(spec.weights[:12, 12:]))

    def test_weights_within_range(self) -> None:
        cfg = SimulatorConfig(p_lat=0, edge_density=0.5, weight_range=(0.3, 0.9))
        spec = sample_scm(10, cfg, seed=1)
        magnitudes = np.abs(spec.weights[spec.weights != 0.0])
        self.assertTrue(np.all((magnitudes >= 0.3) & (magnitudes <= 0.9)))
        self.assertTrue(np.all((spec.intercepts >= 2.0) & (spec.intercepts <= 5.0)))

    def test_cyclic_is_stable(self) -> None:
        cfg = SimulatorConfig(p_lat=2, edge_density=0.4, cyclic=True)
        for seed in range(5):
            with self.subTest(seed=seed):
                spec = sample_scm(10, cfg, seed)
                self.assertLess(spectral_radius(spec.weights), MAX_SPECTRAL_RADIUS)

    def test_mean_degree(self) -> None:
        for cyclic in (False, True):
            cfg = SimulatorConfig(p_lat=0, mean_degree=1.5, cyclic=cyclic)
            edges = [np.count_nonzero(sample_scm(60, cfg, seed).weights) for seed in range(10)]
            with self.subTest(cyclic=cyclic):
                self.assertGreater(np.mean(edges) / 60, 1.3)
                self.assertLess(np.mean(edges) / 60, 1.7)
        self.assertEqual(SimulatorConfig(edge_density=0.1).edge_probability(50), 0.1)
        self.assertEqual(SimulatorConfig(mean_degree=50.0).edge_probability(11), 1.0)
        with self.assertRaises(DomainError):
            SimulatorConfig(mean_degree=-1.0)

    def test_seeded(self) -> None:
        cfg = SimulatorConfig(p_lat=2, edge_density=0.2)
        np.testing.assert_array_equal(
            sample_scm(8, cfg, seed=4).weights, sample_scm(8, cfg, seed=4).weights
        )

    def test_round_trip_through_dict(self) -> None:
        spec = sample_scm(6, SimulatorConfig(p_lat=1, edge_density=0.3), seed=2)
        again = ScmSpec.from_dict(spec.to_dict())
        np.testing.assert_array_equal(again.weights, spec.weights)
        self.assertEqual(again.p_lat, 1)

    def test_invalid_specs(self) -> None:
        with self.assertRaises(DomainError):
            ScmSpec(2, 0, np.array([[0.0, 2.0], [2.0, 0.0]]), np.zeros(2), np.ones(2))
        with self.assertRaises(DomainError):
            ScmSpec(1, 1, np.array([[0.0, 0.5], [0.0, 0.0]]), np.zeros(2), np.ones(2))
        with self.assertRaises(DomainError):
            ScmSpec.from_dict({"p_obs": 2})


class EquilibriumTests(TestCase):
    def test_solution_satisfies_the_equations(self) -> None:
        spec = sample_scm(8, SimulatorConfig(p_lat=0, edge_density=0.4, cyclic=True), seed=3)
        noise = np.random.default_rng(0).normal(size=(5, 8))
        x = solve_equilibrium(spec.weights, spec.intercepts, noise)
        residual = x - (x @ spec.weights + spec.intercepts + noise)
        np.testing.assert_allclose(residual, 0.0, atol=1e-10)

    def test_two_node_cycle_covariance(self) -> None:
        weights = np.array([[0.0, 0.5], [-0.4, 0.0]])
        spec = ScmSpec(2, 0, weights, np.zeros(2), np.ones(2))
        data, _ = simulate(spec, 100000, [], seed=12)
        mixing = np.linalg.inv(np.eye(2) - weights.T)
        expected = mixing @ mixing.T
        observed = np.cov(data.values, rowvar=False)
        for i in range(2):
            for j in range(2):
                se = np.sqrt((expected[i, i] * expected[j, j] + expected[i, j] ** 2) / data.n)
                with self.subTest(i=i, j=j):
                    self.assertLess(abs(observed[i, j] - expected[i, j]), 3.0 * se)

    def test_knockdown_baseline(self) -> None:
        weights = np.array([[0.0, 0.5], [0.0, 0.0]])
        spec = ScmSpec(2, 0, weights, np.array([2.0, 1.0]), np.zeros(2), knockdown_factor=0.1)
        intervened_weights, intercepts = spec.intervened(1)
        self.assertFalse(np.any(intervened_weights[:, 1]))
        self.assertAlmostEqual(intercepts[1], 0.1 * spec.observational_mean[1])
        self.assertAlmostEqual(spec.observational_mean[1], 2.0)
        with self.assertRaises(DomainError):
            spec.intervened(2)


class AncestralTruthTests(TestCase):
    def test_matches_depth_first_search(self) -> None:
        for cyclic in (False, True):
            cfg = SimulatorConfig(p_lat=3, edge_density=0.15, cyclic=cyclic)
            for seed in range(50):
                with self.subTest(cyclic=cyclic, seed=seed):
                    spec = sample_scm(10, cfg, seed)
                    truth = ancestral_truth(spec)
                    for i in range(10):
                        expected = sorted(j for j in _reachable(spec.weights, i) if j < 10)
                        self.assertEqual(np.flatnonzero(truth[i]).tolist(), expected)

    def test_latent_confounder_is_not_ancestry(self) -> None:
        weights = np.zeros((3, 3))
        weights[2, 0] = 0.5
        weights[2, 1] = 0.5
        weights[0, 1] = 0.5
        truth = ancestral_truth(ScmSpec(2, 1, weights, np.zeros(3), np.ones(3)))
        np.testing.assert_array_equal(truth, [[0, 1], [0, 0]])


class DesignTests(TestCase):
    def test_roles_are_disjoint(self) -> None:
        designs = design_interventions(20, 6, 4, 3, replicates=2, seed=5)
        by_role: Dict[str, List[int]] = {}
        for design in designs:
            by_role.setdefault(design.role, []).append(design.target)
        counts = [len(by_role[role]) for role in ("train_test", "calibration", "nuisance")]
        self.assertEqual(counts, [6, 4, 3])
        targets = [design.target for design in designs]
        self.assertEqual(len(set(targets)), 13)
        self.assertTrue(all(design.replicates == 2 for design in designs))

    def test_too_many_interventions(self) -> None:
        with self.assertRaises(DomainError):
            design_interventions(5, 3, 2, 1, replicates=1, seed=0)


class SimulateTests(TestCase):
    def setUp(self) -> None:
        self.cfg = SimulatorConfig(p_lat=2, edge_density=0.2, n_obs=30)
        self.spec = sample_scm(10, self.cfg, seed=7)
        self.designs = design_interventions(10, 3, 2, 2, replicates=2, seed=8)

    def test_data_holds_observational_and_nuisance_rows(self) -> None:
        data, panel = simulate(self.spec, 30, self.designs, seed=9)
        nuisance = {d.target for d in self.designs if d.role == "nuisance"}
        self.assertEqual(data.n, 30 + 2 * len(nuisance))
        self.assertEqual(data.p, 10)
        self.assertEqual(int(np.sum(data.targets == NO_INTERVENTION)), 30)
        self.assertEqual(set(data.targets[data.targets >= 0].tolist()), nuisance)
        self.assertEqual(len(panel.entries("train_test")), 3)
        self.assertEqual(len(panel.entries("calibration")), 2)
        self.assertFalse(set(panel.targets()) & set(data.targets.tolist()))

    def test_independent_of_threads(self) -> None:
        first, panel = simulate(self.spec, 30, self.designs, seed=9, threads=1)
        second, again = simulate(self.spec, 30, self.designs, seed=9, threads=3)
        np.testing.assert_array_equal(first.values, second.values)
        for a, b in zip(panel.records, again.records):
            np.testing.assert_array_equal(a.values, b.values)

    def test_plain_target_tuples(self) -> None:
        data, panel = simulate(self.spec, 5, [(1, 3), (4, 1)], seed=0)
        self.assertEqual(data.n, 5)
        self.assertEqual(panel.targets("train_test"), [1, 4])

    def _intervened(self, spec: ScmSpec, target: int, n: int, seed: int) -> np.ndarray:
        _, panel = simulate(spec, 1, [(target, n)], seed=seed)
        return panel.entries("train_test")[0].values

    def test_without_edges_only_the_target_moves(self) -> None:
        intercepts = np.array([2.0, 3.0, 4.0, 5.0])
        spec = ScmSpec(4, 0, np.zeros((4, 4)), intercepts, np.zeros(4), shift=0.25)
        values = self._intervened(spec, 1, 3, seed=0)
        np.testing.assert_allclose(values[:, [0, 2, 3]], np.tile([2.0, 4.0, 5.0], (3, 1)))
        np.testing.assert_allclose(values[:, 1], 0.1 * 3.0 + 0.25)

    def test_chain_expectation(self) -> None:
        weights = np.array([[0.0, 0.6], [0.0, 0.0]])
        spec = ScmSpec(2, 0, weights, np.array([3.0, 1.0]), np.ones(2), shift=0.5)
        n = 20000
        observed, _ = simulate(spec, n, [], seed=1)
        intervened = self._intervened(spec, 0, n, seed=2)
        mu0 = spec.observational_mean[0]
        expected = 0.6 * (0.1 * mu0 + 0.5 - mu0)
        difference = intervened[:, 1].mean() - observed.values[:, 1].mean()
        se = np.sqrt(2.0 * 1.36 / n)
        self.assertLess(abs(difference - expected), 4.0 * se)

    def test_target_is_cut_from_its_parents(self) -> None:
        weights = np.zeros((3, 3))
        weights[0, 1] = 0.8
        weights[1, 2] = 0.5
        spec = ScmSpec(3, 0, weights, np.full(3, 2.0), np.ones(3))
        n = 10000
        values = self._intervened(spec, 1, n, seed=3)
        self.assertLess(abs(np.corrcoef(values[:, 0], values[:, 1])[0, 1]), 4.0 / np.sqrt(n))
        self.assertGreater(np.corrcoef(values[:, 1], values[:, 2])[0, 1], 0.2)

    def test_non_descendants_keep_their_distribution(self) -> None:
        weights = np.zeros((4, 4))
        weights[0, 1] = 0.7
        weights[2, 1] = -0.5
        weights[1, 3] = 0.9
        spec = ScmSpec(4, 0, weights, np.full(4, 3.0), np.ones(4), knockdown_factor=0.999)
        n = 10000
        observed, _ = simulate(spec, n, [], seed=4)
        intervened = self._intervened(spec, 1, n, seed=5)
        for j in (0, 2):
            with self.subTest(variable=j):
                self.assertGreater(ks_2samp(observed.values[:, j], intervened[:, j]).pvalue, 1e-6)


class ThresholdTruthTests(TestCase):
    def _panel(self) -> InterventionPanel:
        calibration = PanelEntry(3, "calibration", np.array([[0.0, 0.0, 0.0, 0.0], [1.0] * 4]))
        effect = PanelEntry(0, "train_test", np.array([[5.0, 0.5, -1.0, 1.0]]))
        other = PanelEntry(1, "train_test", np.array([[0.5, 5.0, 2.0, 0.5]]))
        return InterventionPanel(4, (other, calibration, effect))

    def test_strictly_outside_calibration_range(self) -> None:
        labels = threshold_truth(self._panel())
        np.testing.assert_array_equal(labels.sources, [0, 1])
        np.testing.assert_array_equal(labels.labels, [[-1, 0, 1, 0], [0, -1, 1, 0]])

    def test_to_pairs(self) -> None:
        labels = threshold_truth(self._panel())
        pairs, values = labels.to_pairs(np.array([1, 2]))
        # (0,1)=0 (0,2)=1 (1,2)=4
        np.testing.assert_array_equal(pairs, [0, 1, 4])
        np.testing.assert_array_equal(values, [0, 1, 1])

    def test_calibration_required(self) -> None:
        panel = InterventionPanel(2, (PanelEntry(0, "train_test", np.zeros((1, 2))),))
        with self.assertRaises(DomainError):
            threshold_truth(panel)

    def test_shared_targets_rejected(self) -> None:
        with self.assertRaises(DomainError):
            InterventionPanel(
                2,
                (
                    PanelEntry(0, "train_test", np.zeros((1, 2))),
                    PanelEntry(0, "calibration", np.zeros((1, 2))),
                ),
            )

    def test_exclude_promiscuous(self) -> None:
        labels = InterventionLabels(
            4,
            np.array([0, 1, 2]),
            np.array([[-1, 0, 1, 0], [0, -1, 1, 0], [0, 0, -1, 1]]),
        )
        with self.assertLogs("ancestral_learning.simgen", level="INFO"):
            kept = exclude_promiscuous(labels, 0.5)
        # Target 2 is affected by both interventions that define it.
        np.testing.assert_array_equal(kept, [0, 1, 3])
        np.testing.assert_array_equal(exclude_promiscuous(labels, 0.3), [0, 1])

    def test_replicated_panel_mostly_labels_ancestors(self) -> None:
        cfg = SimulatorConfig(p_lat=2, mean_degree=1.0, replicates=3)
        hits, positives = 0, 0
        for seed in range(4):
            spec = sample_scm(40, cfg, seed)
            designs = design_interventions(40, 15, 10, 0, cfg.replicates, seed)
            _, panel = simulate(spec, 10, designs, seed)
            pairs, labels = threshold_truth(panel).to_pairs()
            truth = labels_from_truth(ancestral_truth(spec), pairs[labels == 1])
            hits += int(truth.sum())
            positives += int(truth.size)
        self.assertGreater(positives, 10)
        self.assertGreater(hits / positives, 0.75)
