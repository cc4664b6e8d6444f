"""
Run experiments end to end: simulate, featurize, split, train, predict and evaluate.

Every (p, repetition) draws one synthetic instance from its own seed. The instance and its
features are shared by all grid values and learners, and so is the train/query split seed,
which makes runs at different grid values directly comparable (a perturbation fraction of 0
reproduces the unperturbed run). Repetitions may run in worker threads; results are
collected in job order so the output doesn't depend on the number of threads.
"""

import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ancestral_learning import formats, json_logging
from ancestral_learning.classify import L1LogisticModel, TrainingSet, fit, predict, save_model
from ancestral_learning.classify import LEARNERS as TRAINED_LEARNERS
from ancestral_learning.config import (
    ExperimentConfig,
    config_hash,
    config_to_dict,
    derive_seed,
    effective_grid,
)
from ancestral_learning.errors import DomainError, StageError
from ancestral_learning.evaluate import (
    RocCurve,
    auc,
    average_roc,
    correlation_scores,
    roc,
    summarize,
)
from ancestral_learning.featurize import FeatureMatrix, PcaModel, featurize_pairs
from ancestral_learning.graph import assemble
from ancestral_learning.pairspace import (
    BackgroundKnowledge,
    PairSpace,
    labels_from_truth,
    perturb_labels,
    round_half_up,
    sample_interventionwise,
    sample_random,
    sparsify_positives,
)
from ancestral_learning.simgen import (
    DataMatrix,
    InterventionPanel,
    ScmSpec,
    ancestral_truth,
    design_interventions,
    exclude_promiscuous,
    sample_scm,
    simulate,
    threshold_truth,
)

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

# Fields of a metrics record that measure time and so differ between runs.
TIMING_FIELDS = ("wall_ms",)


@contextmanager
def run_stage(
    stage: str, seed: int, repetition: Optional[int] = None
) -> Iterator[json_logging.log_stage]:
    """Time a stage and wrap anything it raises into a StageError naming the stage and seed."""
    try:
        with json_logging.log_stage(logger, stage) as timer:
            yield timer
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, seed, repetition, exc) from exc


def repetition_seed(cfg: ExperimentConfig, p: int, repetition: int) -> int:
    return derive_seed(cfg.seed, p, repetition)


@dataclass(frozen=True)
class Simulation:
    """One simulated data set with the ground truth of the pairs that can be labeled."""

    p: int
    seed: int
    spec: ScmSpec
    data: DataMatrix
    panel: InterventionPanel
    universe: np.ndarray
    universe_labels: np.ndarray
    sources: np.ndarray
    targets: Optional[np.ndarray]

    @property
    def pspace(self) -> PairSpace:
        return PairSpace(self.p)

    def labels_of(self, pairs: np.ndarray) -> np.ndarray:
        return self.universe_labels[np.searchsorted(self.universe, pairs)]


@dataclass(frozen=True)
class Instance:
    """A simulation of one repetition together with the features of its labeled pairs."""

    repetition: int
    simulation: Simulation
    features: FeatureMatrix
    pca: PcaModel

    @property
    def p(self) -> int:
        return self.simulation.p

    @property
    def seed(self) -> int:
        return self.simulation.seed


def assert_strict_split(data: DataMatrix, panel: InterventionPanel) -> None:
    """Measurements under train/test or calibration interventions must never enter X."""
    in_data = set(np.unique(data.targets).tolist())
    for role in ("train_test", "calibration"):
        leaked = in_data & set(panel.targets(role))
        if leaked:
            raise DomainError(f"{role} intervention(s) {sorted(leaked)} appear in the data matrix")


def simulate_instance(
    cfg: ExperimentConfig, p: int, seed: int, repetition: Optional[int] = None, threads: int = 1
) -> Simulation:
    """Sample an SCM, measure it and derive the labels of every pair the truth covers."""
    sim = cfg.simulator
    pspace = PairSpace(p)
    with run_stage("simulate", seed, repetition):
        spec = sample_scm(p, sim, derive_seed(seed, "scm"))
        designs = design_interventions(
            p,
            sim.n_train_test,
            sim.n_calibration,
            sim.n_nuisance,
            sim.replicates,
            derive_seed(seed, "design"),
        )
        data, panel = simulate(spec, sim.n_obs, designs, derive_seed(seed, "noise"), threads)
    with run_stage("truth", seed, repetition):
        sources = np.array(panel.targets("train_test"), dtype=np.int64)
        targets: Optional[np.ndarray] = None
        if cfg.truth == "threshold":
            labels = threshold_truth(panel)
            targets = exclude_promiscuous(labels, cfg.max_promiscuous_fraction)
            universe, universe_labels = labels.to_pairs(targets)
        else:
            if cfg.sampling == "random":
                universe = pspace.all_pairs()
            else:
                universe = pspace.pairs_from_sources(sources)
            universe_labels = labels_from_truth(ancestral_truth(spec), universe)
        logger.info(
            f"Ground truth covers {universe.size} pairs",
            extra={"positive_fraction": float(universe_labels.mean()) if universe.size else 0.0},
        )
    return Simulation(p, seed, spec, data, panel, universe, universe_labels, sources, targets)


def prepare_instance(
    cfg: ExperimentConfig, p: int, repetition: int, threads: int = 1
) -> Instance:
    seed = repetition_seed(cfg, p, repetition)
    simulation = simulate_instance(cfg, p, seed, repetition, threads)
    with run_stage("featurize", seed, repetition):
        assert_strict_split(simulation.data, simulation.panel)
        features, pca = featurize_pairs(
            simulation.data,
            simulation.universe,
            cfg.featurize,
            threads,
            config_hash(cfg.featurize),
        )
    return Instance(repetition, simulation, features, pca)


def split_pairs(cfg: ExperimentConfig, simulation: Simulation, rho: float) -> BackgroundKnowledge:
    """Split the labeled pairs into T and Q, at random or by intervened source."""
    seed = derive_seed(simulation.seed, "split")
    if cfg.sampling == "random":
        train, query = sample_random(simulation.pspace, rho, seed, simulation.universe)
    else:
        n_sources = simulation.sources.size
        n_train = cfg.n_train_interventions or min(
            max(round_half_up(rho * n_sources), 1), n_sources - 1
        )
        _, train, query = sample_interventionwise(
            simulation.pspace, simulation.sources, n_train, seed, simulation.targets
        )
    return BackgroundKnowledge(simulation.pspace, train, simulation.labels_of(train), query)


@dataclass(frozen=True)
class Protocol:
    """What the learner is trained on and where it is evaluated."""

    train_labels: np.ndarray
    eval_pairs: np.ndarray
    eval_labels: np.ndarray
    corrected: bool = False


def apply_protocol(
    cfg: ExperimentConfig,
    value: float,
    knowledge: BackgroundKnowledge,
    query_labels: np.ndarray,
    seed: int,
) -> Protocol:
    """Derive the training labels and the evaluation pairs for one grid value."""
    kind = cfg.experiment
    if kind == "error_correct":
        perturbed, plan = perturb_labels(knowledge.labels, value, derive_seed(seed, "perturb"))
        if plan.positions.size == 0:
            raise DomainError(f"fraction {value} perturbs no labels")
        return Protocol(
            perturbed, plan.pairs(knowledge.train), knowledge.labels[plan.positions], True
        )
    if kind == "perturb":
        train_labels, _ = perturb_labels(knowledge.labels, value, derive_seed(seed, "perturb"))
    elif kind in ("sparse_positive", "random_control"):
        train_labels = sparsify_positives(
            knowledge.labels,
            value,
            derive_seed(seed, "sparsify"),
            control=(kind == "random_control"),
        )
    else:
        train_labels = knowledge.labels
    return Protocol(train_labels, knowledge.query, query_labels, False)


@dataclass(frozen=True)
class Outcome:
    record: Dict[str, Any]
    curve: RocCurve


def _model_path(cfg: ExperimentConfig, learner: str, p: int, value: float, rep: int) -> str:
    return os.path.join(cfg.output_dir, "models", f"{learner}_p{p}_{value:g}_rep{rep}.npz")


def score_pairs(
    cfg: ExperimentConfig,
    instance: Instance,
    learner: str,
    knowledge: BackgroundKnowledge,
    protocol: Protocol,
    value: float,
    digest: str,
) -> Tuple[np.ndarray, Optional[Any]]:
    """Return the scores of the evaluation pairs (and the fitted model, if any)."""
    seed = instance.seed
    if learner in TRAINED_LEARNERS:
        with run_stage("train", seed, instance.repetition):
            train_set = TrainingSet(
                instance.features.rows_for(knowledge.train), protocol.train_labels, knowledge.train
            )
            model = fit(learner, train_set, derive_seed(seed, "model", learner), cfg.l1, cfg.mlp)
        if cfg.save_models:
            metadata = {
                "seed": seed,
                "config_hash": digest,
                "p": instance.p,
                "repetition": instance.repetition,
                "value": value,
                "featurize": asdict(cfg.featurize),
            }
            save_model(
                _model_path(cfg, learner, instance.p, value, instance.repetition),
                model,
                metadata,
                instance.pca,
            )
        with run_stage("predict", seed, instance.repetition):
            if protocol.corrected:
                return predict(model, instance.features.rows_for(protocol.eval_pairs)), model
            scores = predict(model, instance.features.rows_for(knowledge.query))
    else:
        model = None
        with run_stage("correlate", seed, instance.repetition):
            if protocol.corrected:
                data = instance.simulation.data
                return correlation_scores(data, protocol.eval_pairs, learner), None
            scores = correlation_scores(instance.simulation.data, knowledge.query, learner)
    graph = assemble(
        knowledge.query, scores, knowledge.train, protocol.train_labels, instance.p
    )
    return graph.scores_of(protocol.eval_pairs), model


def run_repetition(
    cfg: ExperimentConfig, p: int, repetition: int, digest: str, threads: int = 1
) -> List[Outcome]:
    seed = repetition_seed(cfg, p, repetition)
    json_logging.update_context(
        experiment=cfg.name, config_hash=digest, seed=seed, repetition=repetition, run_id=digest
    )
    instance = prepare_instance(cfg, p, repetition, threads)
    outcomes = []
    for value in effective_grid(cfg):
        rho = value if cfg.experiment in ("vary_p", "vary_rho") else cfg.rho
        with run_stage("split", seed, repetition):
            knowledge = split_pairs(cfg, instance.simulation, rho)
            protocol = apply_protocol(
                cfg, value, knowledge, instance.simulation.labels_of(knowledge.query), seed
            )
        for learner in cfg.learners:
            with json_logging.log_stage(logger, "score", learner=learner, value=value) as timer:
                scores, model = score_pairs(
                    cfg, instance, learner, knowledge, protocol, value, digest
                )
            with run_stage("evaluate", seed, repetition):
                area = auc(scores, protocol.eval_labels)
                curve = roc(scores, protocol.eval_labels)
            record: Dict[str, Any] = {
                "experiment": cfg.name,
                "kind": cfg.experiment,
                "config_hash": digest,
                "seed": seed,
                "repetition": repetition,
                "p": p,
                "rho": rho,
                "value": value,
                "method": learner,
                "auc": area,
                "n_train": int(knowledge.train.size),
                "n_query": int(knowledge.query.size),
                "n_eval": int(protocol.eval_pairs.size),
                "n_train_positive": int(np.sum(protocol.train_labels)),
                "wall_ms": round(timer.elapsed_ms, 3),
            }
            if isinstance(model, L1LogisticModel):
                record["lambda"] = model.lam
                record["nonzero"] = model.nonzero
            outcomes.append(Outcome(record, curve))
    return outcomes


@dataclass(frozen=True)
class SummaryRow:
    p: int
    value: float
    method: str
    mean_auc: float
    se_auc: float
    count: int


@dataclass(frozen=True)
class PipelineResult:
    records: List[Dict[str, Any]]
    summary: List[SummaryRow]
    output_dir: str
    config_hash: str


def _start_run(cfg: ExperimentConfig) -> str:
    digest = config_hash(cfg)
    json_logging.update_context(experiment=cfg.name, config_hash=digest, run_id=digest)
    os.makedirs(cfg.output_dir, exist_ok=True)
    formats.write_json(
        os.path.join(cfg.output_dir, "config.json"),
        dict(config_to_dict(cfg), config_hash=digest),
    )
    return digest


def _run_jobs(
    cfg: ExperimentConfig, jobs: Sequence[Tuple[int, int]], digest: str
) -> List[List[Outcome]]:
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(
            max_workers=cfg.threads, thread_name_prefix="repetition"
        ) as executor:
            return list(executor.map(lambda job: run_repetition(cfg, *job, digest), jobs))
    return [run_repetition(cfg, p, rep, digest, cfg.threads) for p, rep in jobs]


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    """Run every repetition of the experiment and write metrics, summaries, ROC curves."""
    if cfg.experiment == "timing":
        raise DomainError("timing experiments run through run_timing")
    digest = _start_run(cfg)
    jobs = [(p, rep) for p in cfg.p_list for rep in range(cfg.repetitions)]
    logger.info(
        f"Starting experiment '{cfg.name}' with {len(jobs)} repetition(s)",
        extra={"kind": cfg.experiment, "learners": list(cfg.learners)},
    )
    outcomes = [outcome for batch in _run_jobs(cfg, jobs, digest) for outcome in batch]
    json_logging.update_context(seed=None, repetition=None, stage=None)

    records = [outcome.record for outcome in outcomes]
    formats.write_metrics(os.path.join(cfg.output_dir, "metrics.jsonl"), records)

    grouped: Dict[Tuple[int, float, str], List[Outcome]] = defaultdict(list)
    for outcome in outcomes:
        record = outcome.record
        grouped[(record["p"], record["value"], record["method"])].append(outcome)
    summary = []
    for (p, value, method), group in grouped.items():
        stats = summarize(outcome.record["auc"] for outcome in group)
        summary.append(SummaryRow(p, value, method, stats.mean, stats.se, stats.count))
        curve = average_roc([outcome.curve for outcome in group])
        formats.write_roc_csv(
            os.path.join(cfg.output_dir, f"roc_{method}_p{p}_{value:g}.csv"),
            curve,
            cfg.seed,
            digest,
        )
        logger.info(
            f"AUC of {method} at p={p}, value={value:g}: {stats.mean:.3f} +- {stats.se:.3f}",
            extra={"p": p, "value": value, "method": method, "mean_auc": stats.mean},
        )
    formats.write_table(
        os.path.join(cfg.output_dir, "summary.csv"),
        ["p", "value", "method", "mean_auc", "se_auc", "count"],
        ([r.p, r.value, r.method, r.mean_auc, r.se_auc, r.count] for r in summary),
        seed=cfg.seed,
        config_hash=digest,
    )
    return PipelineResult(records, summary, cfg.output_dir, digest)


def strip_timing(record: Dict[str, Any]) -> Dict[str, Any]:
    return {key: value for key, value in record.items() if key not in TIMING_FIELDS}


@dataclass(frozen=True)
class TimingRow:
    p: int
    stage: str
    mean_ms: float
    se_ms: float
    rows: int


def run_timing(cfg: ExperimentConfig) -> List[TimingRow]:
    """
    Measure wall-clock time per stage for every p, averaged over repeated runs.

    Training uses a fixed number of labeled pairs so that its cost doesn't grow with p;
    prediction covers all remaining pairs.
    """
    digest = _start_run(cfg)
    learners = [learner for learner in cfg.learners if learner in TRAINED_LEARNERS] or ["l1"]
    sim = cfg.simulator
    table: List[TimingRow] = []
    for p in cfg.p_list:
        pspace = PairSpace(p)
        times: Dict[str, List[float]] = defaultdict(list)
        rows: Dict[str, int] = {}
        for rep in range(cfg.timing_repeats):
            seed = derive_seed(cfg.seed, "timing", p, rep)
            json_logging.update_context(seed=seed, repetition=rep)
            with run_stage("simulate", seed, rep) as timer:
                spec = sample_scm(p, sim, derive_seed(seed, "scm"))
                designs = design_interventions(
                    p,
                    sim.n_train_test,
                    sim.n_calibration,
                    sim.n_nuisance,
                    sim.replicates,
                    derive_seed(seed, "design"),
                )
                data, _ = simulate(spec, sim.n_obs, designs, derive_seed(seed, "noise"))
            times["simulate"].append(timer.elapsed_ms)
            rows["simulate"] = data.n
            pairs = pspace.all_pairs()
            with run_stage("featurize", seed, rep) as timer:
                features, _ = featurize_pairs(data, pairs, cfg.featurize, cfg.threads)
            times["featurize"].append(timer.elapsed_ms)
            rows["featurize"] = pairs.size

            n_train = min(cfg.timing_train_pairs, pspace.K - 1)
            train, query = sample_random(pspace, n_train / pspace.K, derive_seed(seed, "split"))
            labels = labels_from_truth(ancestral_truth(spec), train)
            for learner in learners:
                with run_stage(f"train_{learner}", seed, rep) as timer:
                    model = fit(
                        learner,
                        TrainingSet(features.rows_for(train), labels, train),
                        derive_seed(seed, "model", learner),
                        cfg.l1,
                        cfg.mlp,
                    )
                times[f"train_{learner}"].append(timer.elapsed_ms)
                rows[f"train_{learner}"] = train.size
                with run_stage(f"predict_{learner}", seed, rep) as timer:
                    predict(model, features.rows_for(query))
                times[f"predict_{learner}"].append(timer.elapsed_ms)
                rows[f"predict_{learner}"] = query.size
        for stage, values in times.items():
            stats = summarize(values)
            table.append(TimingRow(p, stage, stats.mean, stats.se, rows[stage]))
    json_logging.update_context(seed=None, repetition=None, stage=None)

    formats.write_table(
        os.path.join(cfg.output_dir, "timing.csv"),
        ["p", "stage", "mean_ms", "se_ms", "rows"],
        ([row.p, row.stage, row.mean_ms, row.se_ms, row.rows] for row in table),
        seed=cfg.seed,
        config_hash=digest,
    )
    slope = featurize_slope(table)
    if slope is not None:
        logger.info(
            f"Featurization time grows like p^{slope:.2f}", extra={"featurize_slope": slope}
        )
    return table


def featurize_slope(table: Sequence[TimingRow]) -> Optional[float]:
    """Slope of log(featurization time) against log(p), if there are two or more p."""
    points = [(row.p, row.mean_ms) for row in table if row.stage == "featurize"]
    if len(points) < 2 or any(ms <= 0.0 for _, ms in points):
        return None
    ps, ms = zip(*points)
    return float(np.polyfit(np.log(ps), np.log(ms), 1)[0])


__all__ = [
    "Instance",
    "PipelineResult",
    "SummaryRow",
    "TimingRow",
    "apply_protocol",
    "assert_strict_split",
    "featurize_slope",
    "prepare_instance",
    "run_pipeline",
    "run_repetition",
    "run_stage",
    "run_timing",
    "split_pairs",
    "strip_timing",
]
