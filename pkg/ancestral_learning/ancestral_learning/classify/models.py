"""
Dispatch between the learners and store fitted models as .npz files.

A stored model has its arrays plus one "metadata" entry holding a JSON document
with the learner name, its hyper-parameters and whatever the caller adds (seed, config hash).
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy.special import expit

from ancestral_learning import json_logging
from ancestral_learning.classify.logistic import (
    CvPoint,
    L1Config,
    L1LogisticModel,
    fit_l1_logistic,
)
from ancestral_learning.classify.mlp import MlpConfig, MlpModel, fit_mlp
from ancestral_learning.classify.training import TrainingSet
from ancestral_learning.errors import DomainError, FormatError
from ancestral_learning.featurize import PcaModel

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

LEARNERS = ("l1", "nn")
MODEL_FORMAT_VERSION = 1

Model = Union[L1LogisticModel, MlpModel]


@dataclass(frozen=True)
class StoredModel:
    model: Model
    metadata: Dict[str, Any] = field(default_factory=dict)
    pca: Optional[PcaModel] = None

    @property
    def learner(self) -> str:
        return learner_of(self.model)


def learner_of(model: Model) -> str:
    if isinstance(model, L1LogisticModel):
        return "l1"
    if isinstance(model, MlpModel):
        return "nn"
    raise DomainError(f"not a model: {type(model).__name__}")


def fit(
    learner: str,
    train: TrainingSet,
    seed: int,
    l1: L1Config = L1Config(),
    mlp: MlpConfig = MlpConfig(),
) -> Model:
    if learner == "l1":
        return fit_l1_logistic(train, l1, seed)
    if learner == "nn":
        return fit_mlp(train, mlp, seed)
    raise DomainError(f"unknown learner '{learner}', expected one of {LEARNERS}")


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    """Return one score in [0, 1] per row, the sigmoid of the model's output."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise DomainError(
            f"model expects {model.input_dim} features per row, got shape {features.shape}"
        )
    if not np.all(np.isfinite(features)):
        raise DomainError("query features contain non-finite entries")
    return expit(model.decision_function(features))


def _l1_arrays(model: L1LogisticModel) -> Dict[str, np.ndarray]:
    return {
        "intercept": np.array(model.intercept),
        "coefficients": model.coefficients,
        "lam": np.array(model.lam),
        "cv_lambda": np.array([point.lam for point in model.cv_report]),
        "cv_mean_auc": np.array([point.mean_auc for point in model.cv_report]),
        "cv_se_auc": np.array([point.se_auc for point in model.cv_report]),
        "objective_trace": np.array(model.objective_trace),
    }


def _mlp_arrays(model: MlpModel) -> Dict[str, np.ndarray]:
    arrays = {"loss_trace": np.array(model.loss_trace)}
    for index, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"weight_{index}"] = w
        arrays[f"bias_{index}"] = b
    return arrays


def _pca_arrays(pca: Optional[PcaModel]) -> Dict[str, np.ndarray]:
    if pca is None:
        return {}
    return {
        "pca_mean": pca.mean,
        "pca_components": pca.components,
        "pca_eigenvalues": pca.eigenvalues,
        "pca_total_variance": np.array(pca.total_variance),
    }


def save_model(
    path: str,
    model: Model,
    metadata: Optional[Dict[str, Any]] = None,
    pca: Optional[PcaModel] = None,
) -> None:
    """Write the model, and the PCA used to featurize its inputs, to a .npz file."""
    learner = learner_of(model)
    config: Dict[str, Any] = asdict(model.config) if isinstance(model, MlpModel) else {}
    document = dict(
        metadata or {},
        format_version=MODEL_FORMAT_VERSION,
        learner=learner,
        hyper_parameters=config,
    )
    arrays = _l1_arrays(model) if isinstance(model, L1LogisticModel) else _mlp_arrays(model)
    arrays.update(_pca_arrays(pca))
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, metadata=np.array(json.dumps(document, sort_keys=True)), **arrays)
    logger.debug(f"Saved {learner} model to '{path}'")


def load_model(path: str) -> StoredModel:
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read model file '{path}': {exc}") from exc
    if "metadata" not in arrays:
        raise FormatError(f"model file '{path}' has no metadata")
    try:
        metadata = json.loads(str(arrays.pop("metadata")))
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file '{path}' has corrupt metadata: {exc}") from exc
    if metadata.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(
            f"model file '{path}' has format version {metadata.get('format_version')}, "
            f"expected {MODEL_FORMAT_VERSION}"
        )
    learner = metadata.get("learner")
    try:
        if learner == "l1":
            cv_report = tuple(
                CvPoint(float(lam), float(mean), float(se))
                for lam, mean, se in zip(
                    arrays["cv_lambda"], arrays["cv_mean_auc"], arrays["cv_se_auc"]
                )
            )
            model: Model = L1LogisticModel(
                float(arrays["intercept"]),
                arrays["coefficients"],
                float(arrays["lam"]),
                cv_report,
                tuple(float(v) for v in arrays["objective_trace"]),
            )
        elif learner == "nn":
            n_layers = sum(1 for name in arrays if name.startswith("weight_"))
            hyper = dict(metadata.get("hyper_parameters", {}))
            if "hidden" in hyper:
                hyper["hidden"] = tuple(hyper["hidden"])
            model = MlpModel(
                tuple(arrays[f"weight_{index}"] for index in range(n_layers)),
                tuple(arrays[f"bias_{index}"] for index in range(n_layers)),
                MlpConfig(**hyper),
                tuple(float(v) for v in arrays["loss_trace"]),
            )
        else:
            raise FormatError(f"model file '{path}' names unknown learner '{learner}'")
        pca = None
        if "pca_mean" in arrays:
            pca = PcaModel(
                arrays["pca_mean"],
                arrays["pca_components"],
                arrays["pca_eigenvalues"],
                float(arrays["pca_total_variance"]),
            )
    except (KeyError, TypeError, DomainError) as exc:
        raise FormatError(f"model file '{path}' is incomplete: {exc}") from exc
    return StoredModel(model, metadata, pca)
