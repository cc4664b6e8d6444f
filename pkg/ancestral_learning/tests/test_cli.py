import contextlib
import io
import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Tuple
from unittest import TestCase

import numpy as np

from ancestral_learning import cli, formats, json_logging

CONFIG = {
    "schema_version": 1,
    "experiment": "vary_p",
    "name": "cli",
    "p_list": [12],
    "truth": "graph",
    "learners": ["l1"],
    "repetitions": 1,
    "seed": 5,
    "simulator": {
        "p_lat": 2,
        "edge_density": 0.25,
        "n_obs": 100,
        "n_train_test": 4,
        "n_calibration": 2,
        "n_nuisance": 2,
    },
    "featurize": {"histogram": {"bins_per_axis": 4}, "dim": 8},
    "l1": {"n_lambda": 8, "folds": 3},
}


class CommandLineTests(TestCase):
    def setUp(self) -> None:
        self.root_handlers = list(logging.root.handlers)
        self.root_level = logging.root.level
        self.tmp = tempfile.TemporaryDirectory()
        self.config = self.path("config.json")
        with open(self.config, "w") as f:
            json.dump(CONFIG, f)

    def tearDown(self) -> None:
        self.tmp.cleanup()
        # cli.main configures the root logger for the whole process
        logging.captureWarnings(False)
        logging.root.handlers[:] = self.root_handlers
        logging.root.setLevel(self.root_level)
        json_logging.set_output_format()
        json_logging.clear_context()

    def path(self, *names: str) -> str:
        return os.path.join(self.tmp.name, *names)

    def run_cli(self, *argv: str) -> Tuple[int, List[Dict[str, Any]]]:
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(io.StringIO()):
            code = cli.main(list(argv))
        lines = [line for line in stdout.getvalue().splitlines() if line.startswith("{")]
        return code, [json.loads(line) for line in lines]

    def test_no_command_prints_usage(self) -> None:
        code, _ = self.run_cli()
        self.assertEqual(code, cli.EXIT_OK)

    def test_bad_arguments(self) -> None:
        for argv in (["frobnicate"], ["train", "--features", "f.bin"], ["--verbose", "--terse"]):
            with self.subTest(argv=argv):
                code, _ = self.run_cli(*argv)
                self.assertEqual(code, cli.EXIT_CONFIG_ERROR)

    def test_invalid_config(self) -> None:
        code, _ = self.run_cli("experiment", "--config", self.path("missing.json"))
        self.assertEqual(code, cli.EXIT_CONFIG_ERROR)
        code, _ = self.run_cli("experiment", "--config", self.config, "--threads", "0")
        self.assertEqual(code, cli.EXIT_CONFIG_ERROR)

    def test_runtime_error(self) -> None:
        code, _ = self.run_cli(
            "eval", "--graph", self.path("missing.npz"), "--truth", self.path("missing.csv")
        )
        self.assertEqual(code, cli.EXIT_RUNTIME_ERROR)

    def test_unexpected_error(self) -> None:
        blocker = self.path("not-a-directory")
        with open(blocker, "w") as f:
            f.write("taken\n")
        code, documents = self.run_cli("simulate", "--config", self.config, "--out", blocker)
        self.assertEqual(code, cli.EXIT_RUNTIME_ERROR)
        self.assertEqual(documents, [])

    def test_stage_by_stage(self) -> None:
        out = self.path("run")
        code, documents = self.run_cli("simulate", "--config", self.config, "--out", out)
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(documents[0]["labeled_pairs"], 132)
        for name in ("scm.json", "dataset.csv", "panel.csv", "labels.csv", "train.csv"):
            with self.subTest(name=name):
                self.assertTrue(os.path.exists(os.path.join(out, name)))

        code, documents = self.run_cli(
            "featurize",
            "--config",
            self.config,
            "--data",
            os.path.join(out, "dataset.csv"),
            "--pairs",
            os.path.join(out, "labels.csv"),
            "--out",
            out,
            "--csv",
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual((documents[0]["rows"], documents[0]["dim"]), (132, 8))

        code, documents = self.run_cli(
            "train",
            "--config",
            self.config,
            "--features",
            os.path.join(out, "features.bin"),
            "--labels",
            os.path.join(out, "train.csv"),
            "--pca",
            os.path.join(out, "pca.npz"),
            "--out",
            out,
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(documents[0]["learner"], "l1")

        code, documents = self.run_cli(
            "predict",
            "--model",
            os.path.join(out, "model.npz"),
            "--features",
            os.path.join(out, "features.bin"),
            "--labels",
            os.path.join(out, "train.csv"),
            "--out",
            out,
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(documents[0]["scored_pairs"], 66)
        graph, _ = formats.load_graph(os.path.join(out, "graph.npz"))
        self.assertEqual(int(np.sum(graph.defined)), 132)

        code, documents = self.run_cli(
            "eval",
            "--graph",
            os.path.join(out, "graph.npz"),
            "--truth",
            os.path.join(out, "query.csv"),
            "--out",
            out,
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(0.0 <= documents[0]["auc"] <= 1.0)
        self.assertEqual(formats.read_metrics(os.path.join(out, "metrics.jsonl")), documents)

    def test_untrainable_learner(self) -> None:
        code, _ = self.run_cli(
            "train",
            "--config",
            self.config,
            "--learner",
            "pearson",
            "--features",
            self.path("features.bin"),
            "--labels",
            self.path("train.csv"),
        )
        self.assertEqual(code, cli.EXIT_CONFIG_ERROR)

    def test_experiment(self) -> None:
        out = self.path("experiment")
        code, documents = self.run_cli(
            "experiment", "--config", self.config, "--out", out, "--learner", "pearson"
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(documents[0]["records"], 1)
        self.assertEqual(documents[0]["summary"][0]["method"], "pearson")
        self.assertTrue(os.path.exists(os.path.join(out, "summary.csv")))
