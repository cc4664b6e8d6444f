"""
Command line interface: run the stages one at a time or whole experiments.

Each stage reads the files written by the one before it, so a run can be taken apart:

    ancestral_learning simulate --config configs/vary_p.json --out run/
    ancestral_learning featurize --data run/dataset.csv --pairs run/labels.csv --out run/
    ancestral_learning train --features run/features.bin --labels run/train.csv --out run/
    ancestral_learning predict --model run/model.npz --features run/features.bin \
        --labels run/train.csv --out run/
    ancestral_learning eval --graph run/graph.npz --truth run/query.csv --out run/

Logs are written to stderr in JSON format; results (a short JSON summary) go to stdout.
Exit codes are 0 for success, 2 for configuration errors and 3 for any other error.
"""

import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from ancestral_learning import formats, json_logging
from ancestral_learning.classify import LEARNERS as TRAINED_LEARNERS
from ancestral_learning.classify import (
    L1LogisticModel,
    TrainingSet,
    fit,
    load_model,
    predict,
    save_model,
)
from ancestral_learning.config import (
    LEARNERS,
    ExperimentConfig,
    config_hash,
    config_to_dict,
    derive_seed,
    load_config,
    with_overrides,
)
from ancestral_learning.errors import ConfigError, FormatError
from ancestral_learning.evaluate import auc, roc
from ancestral_learning.featurize import featurize_pairs
from ancestral_learning.graph import assemble, assemble_corrected
from ancestral_learning.pairspace import PairSpace
from ancestral_learning.pipeline import run_pipeline, run_timing, simulate_instance, split_pairs

logger = json_logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises ConfigError instead of exiting on bad arguments."""

    def error(self, message: str) -> None:  # type: ignore
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _emit(document: Dict[str, Any]) -> None:
    print(json.dumps(document, sort_keys=True))


def _effective_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        cfg,
        seed=args.seed,
        output_dir=args.out,
        threads=args.threads,
        learner=getattr(args, "learner", None),
    )


def _output_path(args: argparse.Namespace, filename: str) -> str:
    return os.path.join(args.out or ".", filename)


def sub_simulate(args: argparse.Namespace) -> None:
    """Simulate one data set with its ground truth and split the labeled pairs into T and Q."""
    cfg = _effective_config(args)
    p = args.p or cfg.p_list[0]
    digest = config_hash(cfg)
    seed = derive_seed(cfg.seed, p, 0)
    json_logging.update_context(experiment=cfg.name, config_hash=digest, seed=seed)
    simulation = simulate_instance(cfg, p, seed, threads=cfg.threads)
    knowledge = split_pairs(cfg, simulation, cfg.rho)

    formats.write_json(
        _output_path(args, "config.json"), dict(config_to_dict(cfg), config_hash=digest)
    )
    formats.write_scm(_output_path(args, "scm.json"), simulation.spec, seed, digest)
    formats.write_dataset(_output_path(args, "dataset.csv"), simulation.data, seed, digest)
    formats.write_panel(_output_path(args, "panel.csv"), simulation.panel, seed, digest)
    formats.write_pair_labels(
        _output_path(args, "labels.csv"),
        p,
        simulation.universe,
        simulation.universe_labels,
        seed,
        digest,
    )
    formats.write_pair_labels(
        _output_path(args, "train.csv"), p, knowledge.train, knowledge.labels, seed, digest
    )
    formats.write_pair_labels(
        _output_path(args, "query.csv"),
        p,
        knowledge.query,
        simulation.labels_of(knowledge.query),
        seed,
        digest,
    )
    _emit(
        {
            "p": p,
            "seed": seed,
            "config_hash": digest,
            "rows": simulation.data.n,
            "labeled_pairs": int(simulation.universe.size),
            "train_pairs": int(knowledge.train.size),
            "query_pairs": int(knowledge.query.size),
        }
    )


def sub_featurize(args: argparse.Namespace) -> None:
    """Featurize the pairs of a labels file (or all pairs) of a data set."""
    cfg = _effective_config(args)
    data, header = formats.read_dataset(args.data)
    pspace = PairSpace(data.p)
    if args.pairs:
        p, pairs, _, _ = formats.read_pair_labels(args.pairs)
        if p != data.p:
            raise FormatError(f"'{args.pairs}' is for p={p} but the data set has p={data.p}")
    else:
        pairs = pspace.all_pairs()
    seed = int(header.get("seed", cfg.seed))
    digest = config_hash(cfg.featurize)
    json_logging.update_context(config_hash=digest, seed=seed)
    with json_logging.log_stage(logger, "featurize", pairs=int(pairs.size)):
        features, pca = featurize_pairs(data, pairs, cfg.featurize, cfg.threads, digest)
    formats.write_features(_output_path(args, "features.bin"), features)
    formats.save_pca(_output_path(args, "pca.npz"), pca, {"seed": seed, "config_hash": digest})
    if args.csv:
        formats.write_features_csv(_output_path(args, "features.csv"), features, seed)
    _emit(
        {
            "rows": features.rows,
            "dim": features.dim,
            "explained_variance": float(np.sum(pca.explained_variance_ratio)),
            "config_hash": digest,
        }
    )


def sub_train(args: argparse.Namespace) -> None:
    """Fit a classifier on the featurized training pairs."""
    cfg = _effective_config(args)
    learner = args.learner or cfg.learners[0]
    if learner not in TRAINED_LEARNERS:
        raise ConfigError(f"learner '{learner}' can't be trained, expected {TRAINED_LEARNERS}")
    features = formats.read_features(args.features)
    p, train, labels, header = formats.read_pair_labels(args.labels)
    if p != features.p:
        raise FormatError(f"'{args.labels}' is for p={p} but the features have p={features.p}")
    seed = int(header.get("seed", cfg.seed))
    json_logging.update_context(seed=seed)
    with json_logging.log_stage(logger, "train", learner=learner):
        model = fit(
            learner,
            TrainingSet(features.rows_for(train), labels, train),
            derive_seed(seed, "model", learner),
            cfg.l1,
            cfg.mlp,
        )
    pca = formats.load_pca(args.pca)[0] if args.pca else None
    metadata = {"seed": seed, "config_hash": features.config_hash, "p": p}
    save_model(_output_path(args, "model.npz"), model, metadata, pca)
    summary: Dict[str, Any] = {"learner": learner, "train_pairs": int(train.size)}
    if isinstance(model, L1LogisticModel):
        summary.update({"lambda": model.lam, "nonzero": model.nonzero})
    _emit(summary)


def sub_predict(args: argparse.Namespace) -> None:
    """Score the query pairs and assemble the estimated ancestral graph."""
    stored = load_model(args.model)
    features = formats.read_features(args.features)
    p, train, labels, header = formats.read_pair_labels(args.labels)
    if p != features.p:
        raise FormatError(f"'{args.labels}' is for p={p} but the features have p={features.p}")
    seed = int(header.get("seed", stored.metadata.get("seed", 0)))
    digest = str(stored.metadata.get("config_hash", features.config_hash))
    json_logging.update_context(seed=seed, config_hash=digest)
    with json_logging.log_stage(logger, "predict", learner=stored.learner):
        if args.corrected:
            scores = predict(stored.model, features.values)
            graph = assemble_corrected(scores, p, features.pairs)
        else:
            query = np.setdiff1d(features.pairs, train)
            scores = predict(stored.model, features.rows_for(query))
            graph = assemble(query, scores, train, labels, p)
    formats.save_graph(_output_path(args, "graph.npz"), graph, seed, digest)
    formats.write_graph_csv(_output_path(args, "graph.csv"), graph, seed, digest)
    _emit({"p": p, "scored_pairs": int(scores.size), "corrected": bool(args.corrected)})


def sub_eval(args: argparse.Namespace) -> None:
    """Compare the graph's scores with the labels of a truth file."""
    graph, metadata = formats.load_graph(args.graph)
    p, pairs, labels, _ = formats.read_pair_labels(args.truth)
    if p != graph.p:
        raise FormatError(f"'{args.truth}' is for p={p} but the graph has p={graph.p}")
    seed = int(metadata.get("seed", 0))
    digest = str(metadata.get("config_hash", ""))
    json_logging.update_context(seed=seed, config_hash=digest)
    scores = graph.scores_of(pairs)
    area = auc(scores, labels)
    formats.write_roc_csv(_output_path(args, "roc.csv"), roc(scores, labels), seed, digest)
    record = {"seed": seed, "config_hash": digest, "p": p, "auc": area, "pairs": int(pairs.size)}
    formats.write_metrics(_output_path(args, "metrics.jsonl"), [record])
    logger.info(f"AUC on {pairs.size} pairs: {area:.4f}", extra={"auc": area})
    _emit(record)


def sub_experiment(args: argparse.Namespace) -> None:
    cfg = _effective_config(args)
    if cfg.experiment == "timing":
        sub_timing(args)
        return
    result = run_pipeline(cfg)
    _emit(
        {
            "experiment": cfg.name,
            "config_hash": result.config_hash,
            "output_dir": result.output_dir,
            "records": len(result.records),
            "summary": [
                {"p": row.p, "value": row.value, "method": row.method, "mean_auc": row.mean_auc}
                for row in result.summary
            ],
        }
    )


def sub_timing(args: argparse.Namespace) -> None:
    cfg = _effective_config(args)
    table = run_timing(cfg)
    _emit(
        {
            "experiment": cfg.name,
            "output_dir": cfg.output_dir,
            "stages": [
                {"p": row.p, "stage": row.stage, "mean_ms": round(row.mean_ms, 3)}
                for row in table
            ],
        }
    )


def _add_common_arguments(parser: argparse.ArgumentParser, learner: bool = True) -> None:
    parser.add_argument("--config", help="experiment configuration file (JSON)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="number of worker threads")
    if learner:
        parser.add_argument("--learner", choices=LEARNERS, help="learner (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(description="Supervised learning of ancestral causal relations")
    parser.set_defaults(func=None)
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--verbose", action="store_true", help="log debug messages")
    group.add_argument("--terse", action="store_true", help="log only time, level and message")
    parser.add_argument(
        "--pretty-print", action="store_true", help="indent log records (default if on a tty)"
    )
    subparsers = parser.add_subparsers(parser_class=ArgumentParser)

    simulate_parser = subparsers.add_parser(
        "simulate", help="simulate a data set with ground truth and a train/query split"
    )
    _add_common_arguments(simulate_parser, learner=False)
    simulate_parser.add_argument("--p", type=int, help="number of observed variables")
    simulate_parser.set_defaults(func=sub_simulate)

    featurize_parser = subparsers.add_parser("featurize", help="featurize pairs of a data set")
    _add_common_arguments(featurize_parser, learner=False)
    featurize_parser.add_argument("--data", required=True, help="data set (CSV)")
    featurize_parser.add_argument("--pairs", help="labels file naming the pairs to featurize")
    featurize_parser.add_argument("--csv", action="store_true", help="also write features.csv")
    featurize_parser.set_defaults(func=sub_featurize)

    train_parser = subparsers.add_parser("train", help="fit a classifier on labeled pairs")
    _add_common_arguments(train_parser)
    train_parser.add_argument("--features", required=True, help="feature file")
    train_parser.add_argument("--labels", required=True, help="labels of the training pairs")
    train_parser.add_argument("--pca", help="PCA file to store with the model")
    train_parser.set_defaults(func=sub_train)

    predict_parser = subparsers.add_parser("predict", help="estimate the ancestral graph")
    _add_common_arguments(predict_parser, learner=False)
    predict_parser.add_argument("--model", required=True, help="model file")
    predict_parser.add_argument("--features", required=True, help="feature file")
    predict_parser.add_argument("--labels", required=True, help="labels of the training pairs")
    predict_parser.add_argument(
        "--corrected",
        action="store_true",
        help="score every featurized pair, replacing the training labels by predictions",
    )
    predict_parser.set_defaults(func=sub_predict)

    eval_parser = subparsers.add_parser("eval", help="compute AUC and ROC of a graph")
    _add_common_arguments(eval_parser, learner=False)
    eval_parser.add_argument("--graph", required=True, help="graph file (.npz)")
    eval_parser.add_argument("--truth", required=True, help="labels to evaluate against")
    eval_parser.set_defaults(func=sub_eval)

    experiment_parser = subparsers.add_parser("experiment", help="run a whole experiment")
    _add_common_arguments(experiment_parser)
    experiment_parser.set_defaults(func=sub_experiment)

    timing_parser = subparsers.add_parser("timing", help="measure wall-clock time per stage")
    _add_common_arguments(timing_parser)
    timing_parser.set_defaults(func=sub_timing)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError:
        return EXIT_CONFIG_ERROR
    if not args.func:
        parser.print_usage()
        return EXIT_OK

    json_logging.configure_logging("DEBUG" if args.verbose else "INFO")
    json_logging.set_output_format(
        pretty=args.pretty_print, pretty_if_tty=not args.pretty_print, terse=args.terse
    )
    try:
        with json_logging.log_stack_trace(logger):
            args.func(args)
    except ConfigError as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_CONFIG_ERROR
    except Exception:
        # The stack trace was logged above.
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
