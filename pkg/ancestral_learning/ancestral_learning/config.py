"""
Experiment configuration: JSON files loaded into frozen dataclasses, plus seeds and hashes.

A config file is a JSON object with "schema_version": 1. Every section maps onto one
dataclass; keys that a dataclass doesn't know about are an error, as are values outside the
range an operation accepts. The hash of a config identifies its outputs and ignores settings
that don't change results (the output directory and the number of threads).
"""

import dataclasses
import hashlib
import json
import typing
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

from ancestral_learning import json_logging
from ancestral_learning.classify import L1Config, MlpConfig
from ancestral_learning.errors import ConfigError, DomainError
from ancestral_learning.featurize import FeaturizeConfig
from ancestral_learning.simgen import SimulatorConfig

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

SCHEMA_VERSION = 1

KINDS = (
    "vary_p",
    "vary_rho",
    "perturb",
    "error_correct",
    "sparse_positive",
    "random_control",
    "timing",
)
LEARNERS = ("l1", "nn", "pearson", "kendall")
SAMPLINGS = ("random", "interventionwise")
TRUTHS = ("threshold", "graph")

DEFAULT_GRIDS: Dict[str, Tuple[float, ...]] = {
    "vary_rho": (0.1, 0.25, 0.5, 0.75, 0.9),
    "perturb": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
    "error_correct": (0.1, 0.2, 0.3, 0.4, 0.5),
    "sparse_positive": (0.01, 0.05, 0.1, 0.25, 0.5, 1.0),
    "random_control": (0.01, 0.05, 0.1, 0.25, 0.5, 1.0),
}

# Settings that don't change results and so don't enter the config hash.
UNHASHED_FIELDS = ("output_dir", "threads")

T = TypeVar("T")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "vary_p"
    name: str = ""
    p_list: Tuple[int, ...] = (50, 100, 200, 500)
    rho: float = 0.5
    grid: Optional[Tuple[float, ...]] = None
    sampling: str = "random"
    n_train_interventions: Optional[int] = None
    truth: str = "threshold"
    max_promiscuous_fraction: float = 0.5
    learners: Tuple[str, ...] = ("l1",)
    repetitions: int = 10
    seed: int = 0
    threads: int = 1
    output_dir: str = "results"
    save_models: bool = True
    timing_train_pairs: int = 2000
    timing_repeats: int = 3
    schema_version: int = SCHEMA_VERSION
    simulator: SimulatorConfig = dataclasses.field(default_factory=SimulatorConfig)
    featurize: FeaturizeConfig = dataclasses.field(default_factory=FeaturizeConfig)
    l1: L1Config = dataclasses.field(default_factory=L1Config)
    mlp: MlpConfig = dataclasses.field(default_factory=MlpConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_list", tuple(int(p) for p in self.p_list))
        object.__setattr__(self, "learners", tuple(self.learners))
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        if not self.name:
            object.__setattr__(self, "name", self.experiment)
        self._validate()

    def _validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version must be {SCHEMA_VERSION}, got {self.schema_version}"
            )
        if self.experiment not in KINDS:
            raise ConfigError(f"experiment must be one of {KINDS}, got '{self.experiment}'")
        if not self.p_list:
            raise ConfigError("p_list must not be empty")
        smallest = min(self.p_list)
        if smallest < max(3, self.simulator.n_interventions):
            raise ConfigError(
                f"p_list: p={smallest} is too small for "
                f"{self.simulator.n_interventions} intervention targets"
            )
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"sampling must be one of {SAMPLINGS}, got '{self.sampling}'")
        if self.truth not in TRUTHS:
            raise ConfigError(f"truth must be one of {TRUTHS}, got '{self.truth}'")
        if self.n_train_interventions is not None and not (
            0 < self.n_train_interventions < self.simulator.n_train_test
        ):
            raise ConfigError(
                f"n_train_interventions must be in (0, {self.simulator.n_train_test})"
            )
        if not 0.0 < self.max_promiscuous_fraction <= 1.0:
            raise ConfigError("max_promiscuous_fraction must be in (0, 1]")
        if not self.learners or len(set(self.learners)) != len(self.learners):
            raise ConfigError("learners must be a non-empty list without duplicates")
        unknown = [learner for learner in self.learners if learner not in LEARNERS]
        if unknown:
            raise ConfigError(f"learners: unknown learner(s) {unknown}, expected {LEARNERS}")
        if self.repetitions < 1 or self.threads < 1 or self.timing_repeats < 1:
            raise ConfigError("repetitions, threads and timing_repeats must be positive")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.timing_train_pairs < 2:
            raise ConfigError("timing_train_pairs must be at least 2")
        closed = self.experiment in ("perturb",)
        open_high = self.experiment in ("vary_p", "vary_rho", "timing")
        for value in effective_grid(self):
            too_low = value < 0.0 or (value == 0.0 and not closed)
            too_high = value > 1.0 or (value == 1.0 and open_high)
            if too_low or too_high:
                raise ConfigError(f"grid value {value} out of range for '{self.experiment}'")


def effective_grid(cfg: ExperimentConfig) -> Tuple[float, ...]:
    """
    Return the values the experiment varies besides p.

    That's rho for vary_p and vary_rho, the perturbed fraction for perturb and error_correct,
    and the fraction of kept positives for sparse_positive and random_control.
    """
    if cfg.experiment in ("vary_p", "timing"):
        return (cfg.rho,)
    if cfg.grid is not None:
        return cfg.grid
    return DEFAULT_GRIDS[cfg.experiment]


def _is_dataclass_type(hint: Any) -> bool:
    return isinstance(hint, type) and dataclasses.is_dataclass(hint)


def _plain(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_plain(item) for item in value)
    return value


def build_dataclass(cls: Type[T], document: Any, path: str = "") -> T:
    """Build (nested) frozen dataclasses from a JSON document, naming bad keys by their path."""
    if not isinstance(document, dict):
        raise ConfigError(f"'{path or cls.__name__}' must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}  # type: ignore
    unknown = sorted(set(document) - names)
    if unknown:
        raise ConfigError(f"unknown key '{path}{unknown[0]}' in configuration")
    kwargs = {}
    for key, value in document.items():
        if _is_dataclass_type(hints[key]):
            kwargs[key] = build_dataclass(hints[key], value, f"{path}{key}.")
        else:
            kwargs[key] = _plain(value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in '{path.rstrip('.') or cls.__name__}': {exc}") from exc


def config_from_dict(document: Dict[str, Any]) -> ExperimentConfig:
    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version}")
    return build_dataclass(ExperimentConfig, document)


def load_config(path: str) -> ExperimentConfig:
    logger.info(f"Loading configuration from '{path}'")
    try:
        with open(path) as f:
            document = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file '{path}' is not valid JSON: {exc}") from exc
    return config_from_dict(document)


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def config_hash(cfg: Any) -> str:
    """Return the first 16 hex digits of the SHA-256 of the canonical JSON of the config."""
    document = config_to_dict(cfg)
    if isinstance(cfg, ExperimentConfig):
        for key in UNHASHED_FIELDS:
            document.pop(key, None)
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def derive_seed(master: int, *keys: Any) -> int:
    """Derive a 63-bit seed from the master seed and any number of keys."""
    text = ":".join(str(key) for key in (master,) + keys)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    threads: Optional[int] = None,
    learner: Optional[str] = None,
) -> ExperimentConfig:
    """Apply command-line overrides; a learner given on the command line replaces the list."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if output_dir is not None:
        changes["output_dir"] = output_dir
    if threads is not None:
        changes["threads"] = threads
    if learner is not None:
        changes["learners"] = (learner,)
    return dataclasses.replace(cfg, **changes) if changes else cfg
