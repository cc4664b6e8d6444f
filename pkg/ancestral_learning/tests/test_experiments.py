import tempfile
from typing import Any, Dict, Tuple
from unittest import TestCase

from ancestral_learning.config import config_from_dict
from ancestral_learning.pipeline import SummaryRow, run_pipeline

# Small instances with plenty of observational samples, so that the dependence signal in the
# histograms is clear and runs stay quick.
SIMULATOR = {
    "p_lat": 2,
    "mean_degree": 0.75,
    "n_obs": 2000,
    "n_train_test": 4,
    "n_calibration": 2,
    "n_nuisance": 4,
}


class ExperimentTestCase(TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def run_experiment(self, **changes: Any) -> Dict[Tuple[int, float, str], SummaryRow]:
        document: Dict[str, Any] = {
            "experiment": "vary_p",
            "p_list": [30],
            "rho": 0.5,
            "truth": "graph",
            "learners": ["l1"],
            "repetitions": 6,
            "seed": 2,
            "output_dir": self.tmp.name,
            "save_models": False,
            "simulator": SIMULATOR,
            "featurize": {"histogram": {"bins_per_axis": 8}, "dim": 16},
            "l1": {"n_lambda": 20},
        }
        document.update(changes)
        result = run_pipeline(config_from_dict(document))
        return {(row.p, row.value, row.method): row for row in result.summary}


class VaryPTests(ExperimentTestCase):
    def test_accuracy_holds_as_p_grows(self) -> None:
        summary = self.run_experiment(p_list=[30, 60])
        small, large = summary[(30, 0.5, "l1")], summary[(60, 0.5, "l1")]
        self.assertGreaterEqual(small.mean_auc, 0.75)
        self.assertGreaterEqual(large.mean_auc, 0.75)
        self.assertGreaterEqual(large.mean_auc, small.mean_auc - 0.05)


class VaryRhoTests(ExperimentTestCase):
    def test_more_background_knowledge_helps(self) -> None:
        summary = self.run_experiment(
            experiment="vary_rho", p_list=[40], grid=[0.1, 0.75], repetitions=8
        )
        self.assertGreater(summary[(40, 0.75, "l1")].mean_auc, summary[(40, 0.1, "l1")].mean_auc)


class PerturbTests(ExperimentTestCase):
    def test_robust_to_wrong_labels(self) -> None:
        summary = self.run_experiment(experiment="perturb", grid=[0.0, 0.3])
        clean, perturbed = summary[(30, 0.0, "l1")], summary[(30, 0.3, "l1")]
        self.assertGreaterEqual(clean.mean_auc, 0.75)
        self.assertLessEqual(abs(perturbed.mean_auc - clean.mean_auc), 0.1)


class ErrorCorrectionTests(ExperimentTestCase):
    def test_flipped_labels_are_recognized(self) -> None:
        summary = self.run_experiment(experiment="error_correct", p_list=[60], grid=[0.2])
        row = summary[(60, 0.2, "l1")]
        self.assertEqual(row.count, 6)
        self.assertGreaterEqual(row.mean_auc, 0.75)
        self.assertGreaterEqual(row.mean_auc - 0.5, 5.0 * row.se_auc)


class RandomControlTests(ExperimentTestCase):
    def test_random_labels_score_at_chance(self) -> None:
        summary = self.run_experiment(experiment="random_control", grid=[0.5], repetitions=12)
        row = summary[(30, 0.5, "l1")]
        self.assertGreaterEqual(row.mean_auc, 0.45)
        self.assertLessEqual(row.mean_auc, 0.55)
