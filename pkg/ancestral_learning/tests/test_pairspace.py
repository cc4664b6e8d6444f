from unittest import TestCase

import numpy as np
from scipy.stats import chisquare

from ancestral_learning.errors import DomainError
from ancestral_learning.pairspace import (
    BackgroundKnowledge,
    PairSpace,
    labels_from_truth,
    linear_index,
    pair_of,
    perturb_labels,
    round_half_up,
    sample_interventionwise,
    sample_random,
    sparsify_positives,
)


class PairIndexTests(TestCase):
    def test_small_examples(self) -> None:
        for (i, j, p), k in [((0, 1, 3), 0), ((0, 2, 3), 1), ((1, 0, 3), 2), ((2, 1, 3), 5)]:
            with self.subTest(i=i, j=j, p=p):
                self.assertEqual(linear_index(i, j, p), k)
                self.assertEqual(pair_of(k, p), (i, j))

    def test_bijection(self) -> None:
        for p in (2, 3, 7, 20):
            with self.subTest(p=p):
                pspace = PairSpace(p)
                pairs = [pspace.pair_of(k) for k in range(pspace.K)]
                self.assertEqual(len(set(pairs)), p * (p - 1))
                self.assertTrue(all(i != j for i, j in pairs))
                indices = [pspace.linear_index(i, j) for i, j in pairs]
                self.assertEqual(indices, list(range(pspace.K)))

    def test_vectorized_matches_scalar(self) -> None:
        pspace = PairSpace(9)
        ks = pspace.all_pairs()
        expected = [pspace.pair_of(k) for k in ks]
        np.testing.assert_array_equal(pspace.sources(ks), [i for i, _ in expected])
        np.testing.assert_array_equal(pspace.targets(ks), [j for _, j in expected])
        np.testing.assert_array_equal(pspace.indices(pspace.sources(ks), pspace.targets(ks)), ks)

    def test_domain_errors(self) -> None:
        with self.assertRaises(DomainError):
            linear_index(1, 1, 3)
        with self.assertRaises(DomainError):
            linear_index(0, 3, 3)
        with self.assertRaises(DomainError):
            pair_of(6, 3)
        with self.assertRaises(DomainError):
            PairSpace(1)
        with self.assertRaises(DomainError):
            PairSpace(4).check([0, 12])

    def test_pairs_from_sources(self) -> None:
        pspace = PairSpace(4)
        pairs = pspace.pairs_from_sources([2, 0], targets=[1, 2])
        expected = sorted(
            [pspace.linear_index(0, 1), pspace.linear_index(0, 2), pspace.linear_index(2, 1)]
        )
        np.testing.assert_array_equal(pairs, expected)

    def test_round_half_up(self) -> None:
        self.assertEqual(round_half_up(0.5), 1)
        self.assertEqual(round_half_up(2.5), 3)
        self.assertEqual(round_half_up(2.49), 2)


class SamplingTests(TestCase):
    def test_random_split_sizes(self) -> None:
        pspace = PairSpace(10)
        for rho in (0.1, 0.5, 0.9):
            with self.subTest(rho=rho):
                train, query = sample_random(pspace, rho, seed=3)
                self.assertEqual(train.size, round_half_up(rho * 90))
                self.assertEqual(train.size + query.size, 90)
                self.assertEqual(np.intersect1d(train, query).size, 0)
                np.testing.assert_array_equal(np.union1d(train, query), pspace.all_pairs())

    def test_random_split_is_seeded(self) -> None:
        pspace = PairSpace(8)
        first = sample_random(pspace, 0.5, seed=11)
        second = sample_random(pspace, 0.5, seed=11)
        other = sample_random(pspace, 0.5, seed=12)
        np.testing.assert_array_equal(first[0], second[0])
        self.assertFalse(np.array_equal(first[0], other[0]))

    def test_random_split_of_universe(self) -> None:
        pspace = PairSpace(6)
        universe = np.arange(0, 30, 3)
        train, query = sample_random(pspace, 0.5, seed=1, universe=universe)
        self.assertEqual(train.size, 5)
        np.testing.assert_array_equal(np.union1d(train, query), universe)

    def test_random_split_is_uniform(self) -> None:
        pspace = PairSpace(6)
        counts = np.zeros(pspace.K)
        for seed in range(2000):
            train, _ = sample_random(pspace, 0.2, seed)
            counts[train] += 1
        self.assertEqual(counts.sum(), 2000 * 6)
        self.assertGreater(chisquare(counts).pvalue, 1e-4)

    def test_rho_out_of_range(self) -> None:
        for rho in (0.0, 1.0, -0.1):
            with self.subTest(rho=rho):
                with self.assertRaises(DomainError):
                    sample_random(PairSpace(5), rho, seed=0)

    def test_interventionwise_split(self) -> None:
        pspace = PairSpace(10)
        chosen, train, query = sample_interventionwise(pspace, [1, 4, 6, 8], 2, seed=5)
        self.assertEqual(chosen.size, 2)
        self.assertTrue(set(pspace.sources(train)) == set(chosen))
        self.assertTrue(set(pspace.sources(query)) == {1, 4, 6, 8} - set(chosen))
        self.assertEqual(train.size, 2 * 9)
        self.assertEqual(query.size, 2 * 9)

    def test_interventionwise_choice_is_uniform(self) -> None:
        counts = np.zeros(8)
        for seed in range(2000):
            chosen, _, _ = sample_interventionwise(PairSpace(10), range(8), 3, seed)
            counts[chosen] += 1
        self.assertGreater(chisquare(counts).pvalue, 1e-4)

    def test_interventionwise_requires_held_out_source(self) -> None:
        with self.assertRaises(DomainError):
            sample_interventionwise(PairSpace(5), [0, 1], 2, seed=0)
        with self.assertRaises(DomainError):
            sample_interventionwise(PairSpace(5), [0, 1], 0, seed=0)

    def test_background_knowledge_must_be_disjoint(self) -> None:
        pspace = PairSpace(4)
        with self.assertRaises(DomainError):
            BackgroundKnowledge(pspace, np.array([0, 1]), np.array([0, 1]), np.array([1, 2]))
        knowledge = BackgroundKnowledge(pspace, np.array([3, 0]), np.array([1, 0]), np.array([5]))
        np.testing.assert_array_equal(knowledge.train, [0, 3])
        np.testing.assert_array_equal(knowledge.labels, [0, 1])
        self.assertEqual(knowledge.positive_fraction, 0.5)

    def test_labels_from_truth(self) -> None:
        truth = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]])
        labels = labels_from_truth(truth, PairSpace(3).all_pairs())
        # k order: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        np.testing.assert_array_equal(labels, [1, 1, 0, 1, 0, 0])


class PerturbationTests(TestCase):
    def setUp(self) -> None:
        self.labels = np.array([1] * 10 + [0] * 30, dtype=np.int8)

    def test_keeps_number_of_positives(self) -> None:
        for fraction in (0.0, 0.1, 0.3, 0.5, 1.0):
            with self.subTest(fraction=fraction):
                perturbed, plan = perturb_labels(self.labels, fraction, seed=2)
                m = int(np.floor(fraction * 10))
                self.assertEqual(int(perturbed.sum()), 10)
                self.assertEqual(plan.positions.size, 2 * m)
                self.assertEqual(int(np.sum(perturbed != self.labels)), 2 * m)
                self.assertTrue(np.all(perturbed[plan.positions] != self.labels[plan.positions]))

    def test_zero_fraction_is_identity(self) -> None:
        perturbed, plan = perturb_labels(self.labels, 0.0, seed=2)
        np.testing.assert_array_equal(perturbed, self.labels)
        self.assertEqual(plan.positions.size, 0)

    def test_flipped_labels_are_uniform(self) -> None:
        counts = np.zeros(self.labels.size)
        for seed in range(2000):
            _, plan = perturb_labels(self.labels, 0.3, seed)
            counts[plan.positions] += 1
        for name, members in (("positives", slice(0, 10)), ("negatives", slice(10, 40))):
            with self.subTest(flipped=name):
                self.assertEqual(counts[members].sum(), 2000 * 3)
                self.assertGreater(chisquare(counts[members]).pvalue, 1e-4)

    def test_too_few_negatives(self) -> None:
        with self.assertRaises(DomainError):
            perturb_labels(np.array([1, 1, 1, 0]), 1.0, seed=0)

    def test_plan_pairs(self) -> None:
        train = np.arange(100, 140)
        _, plan = perturb_labels(self.labels, 0.2, seed=4)
        np.testing.assert_array_equal(plan.pairs(train), train[plan.positions])


class SparsifyTests(TestCase):
    def setUp(self) -> None:
        self.labels = np.array([1] * 20 + [0] * 80, dtype=np.int8)

    def test_keeps_subset_of_positives(self) -> None:
        for fraction in (0.05, 0.25, 1.0):
            with self.subTest(fraction=fraction):
                sparse = sparsify_positives(self.labels, fraction, seed=1)
                self.assertEqual(int(sparse.sum()), int(np.ceil(fraction * 20)))
                self.assertTrue(np.all(sparse <= self.labels))

    def test_full_fraction_is_identity(self) -> None:
        np.testing.assert_array_equal(sparsify_positives(self.labels, 1.0, seed=1), self.labels)

    def test_random_control_places_ones_anywhere(self) -> None:
        sparse = sparsify_positives(self.labels, 0.5, seed=6, control=True)
        self.assertEqual(int(sparse.sum()), 10)
        self.assertGreater(int(sparse[20:].sum()), 0)

    def test_fraction_out_of_range(self) -> None:
        with self.assertRaises(DomainError):
            sparsify_positives(self.labels, 0.0, seed=1)
