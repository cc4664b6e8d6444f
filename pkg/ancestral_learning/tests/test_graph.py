from unittest import TestCase

import numpy as np

from ancestral_learning.errors import DomainError
from ancestral_learning.graph import (
    BACKGROUND,
    PREDICTED,
    UNDEFINED,
    AncestralGraph,
    assemble,
    assemble_corrected,
)
from ancestral_learning.pairspace import PairSpace


class AssembleTests(TestCase):
    def setUp(self) -> None:
        self.pspace = PairSpace(3)
        # k order: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        self.train = np.array([0, 3])
        self.labels = np.array([1, 0])
        self.query = np.array([1, 4])
        self.scores = np.array([0.25, 0.75])

    def test_background_and_predictions(self) -> None:
        graph = assemble(self.query, self.scores, self.train, self.labels, 3)
        self.assertEqual(graph.scores[0, 1], 1.0)
        self.assertEqual(graph.scores[1, 2], 0.0)
        self.assertEqual(graph.scores[0, 2], 0.25)
        self.assertEqual(graph.scores[2, 0], 0.75)
        self.assertEqual(graph.provenance[0, 1], BACKGROUND)
        self.assertEqual(graph.provenance[2, 0], PREDICTED)
        self.assertEqual(graph.provenance[1, 0], UNDEFINED)
        self.assertTrue(np.isnan(graph.scores[1, 0]))
        self.assertTrue(np.all(np.isnan(np.diag(graph.scores))))

    def test_edges_in_row_major_order(self) -> None:
        graph = assemble(self.query, self.scores, self.train, self.labels, 3)
        self.assertEqual(
            list(graph.edges()),
            [
                (0, 1, 1.0, "background"),
                (0, 2, 0.25, "predicted"),
                (1, 2, 0.0, "background"),
                (2, 0, 0.75, "predicted"),
            ],
        )

    def test_scores_of(self) -> None:
        graph = assemble(self.query, self.scores, self.train, self.labels, 3)
        np.testing.assert_array_equal(graph.scores_of(np.array([4, 0, 1])), [0.75, 1.0, 0.25])

    def test_to_dense(self) -> None:
        graph = assemble(self.query, self.scores, self.train, self.labels, 3)
        dense = graph.to_dense(fill=-1.0)
        self.assertEqual(dense[1, 0], -1.0)
        self.assertEqual(dense[0, 0], -1.0)
        self.assertEqual(dense[2, 0], 0.75)

    def test_overlap_is_rejected(self) -> None:
        with self.assertRaises(DomainError):
            assemble(np.array([0, 1]), self.scores, self.train, self.labels, 3)

    def test_score_count_must_match(self) -> None:
        with self.assertRaises(DomainError):
            assemble(self.query, np.array([0.5]), self.train, self.labels, 3)

    def test_scores_out_of_range(self) -> None:
        with self.assertRaises(DomainError):
            assemble(self.query, np.array([0.5, 1.5]), self.train, self.labels, 3)


class CorrectedTests(TestCase):
    def test_every_pair_predicted(self) -> None:
        scores = np.linspace(0.0, 1.0, 6)
        graph = assemble_corrected(scores, 3)
        self.assertTrue(np.all(graph.provenance[~np.eye(3, dtype=bool)] == PREDICTED))
        np.testing.assert_array_equal(graph.scores_of(PairSpace(3).all_pairs()), scores)

    def test_explicit_pair_order(self) -> None:
        pairs = np.array([5, 4, 3, 2, 1, 0])
        graph = assemble_corrected(np.linspace(0.0, 1.0, 6), 3, pairs)
        self.assertEqual(graph.scores[0, 1], 1.0)
        self.assertEqual(graph.scores[2, 1], 0.0)

    def test_missing_pair(self) -> None:
        with self.assertRaises(DomainError):
            assemble_corrected(np.full(5, 0.5), 3, np.arange(5))


class ValidationTests(TestCase):
    def test_background_must_be_binary(self) -> None:
        scores = np.full((2, 2), np.nan)
        provenance = np.zeros((2, 2), dtype=np.int8)
        scores[0, 1] = 0.5
        provenance[0, 1] = BACKGROUND
        with self.assertRaises(DomainError):
            AncestralGraph(2, scores, provenance)

    def test_diagonal_cannot_be_defined(self) -> None:
        scores = np.full((2, 2), np.nan)
        provenance = np.zeros((2, 2), dtype=np.int8)
        scores[0, 0] = 0.5
        provenance[0, 0] = PREDICTED
        with self.assertRaises(DomainError):
            AncestralGraph(2, scores, provenance)

    def test_nan_only_where_undefined(self) -> None:
        with self.assertRaises(DomainError):
            AncestralGraph(2, np.full((2, 2), np.nan), np.array([[0, 2], [0, 0]]))
