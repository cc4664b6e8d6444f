"""
Simulate observational and interventional data from random linear structural causal models.

Each variable follows x = W'x + b + e, solved at equilibrium as x = (I - W')^-1 (b + e), which
also covers cyclic systems as long as the spectral radius of W stays below one. Latent
variables are simulated like the others and dropped from the output.

A knockdown intervention on t severs the incoming edges of t and lowers its baseline to
gamma * mu_t + delta, where mu is the observational mean. Ground truth comes either from
reachability in the graph of W or from the panel-threshold rule that compares interventional
measurements to the range seen across a separate calibration panel.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from ancestral_learning import json_logging
from ancestral_learning.errors import DomainError
from ancestral_learning.pairspace import PairSpace

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

ROLES = ("train_test", "calibration", "nuisance")
NO_INTERVENTION = -1

MAX_SPECTRAL_RADIUS = 0.95
RESCALED_SPECTRAL_RADIUS = 0.9
MAX_CONDITION_NUMBER = 1e12


@dataclass(frozen=True)
class SimulatorConfig:
    p_lat: int = 5
    edge_density: float = 0.02
    mean_degree: Optional[float] = None
    cyclic: bool = False
    weight_range: Tuple[float, float] = (0.3, 0.9)
    intercept_range: Tuple[float, float] = (2.0, 5.0)
    noise_sd: float = 1.0
    knockdown_factor: float = 0.1
    shift: float = 0.0
    n_obs: int = 200
    n_train_test: int = 20
    n_calibration: int = 10
    n_nuisance: int = 10
    replicates: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "weight_range", tuple(float(v) for v in self.weight_range))
        object.__setattr__(self, "intercept_range", tuple(float(v) for v in self.intercept_range))
        if self.p_lat < 0:
            raise DomainError(f"p_lat must be non-negative, got {self.p_lat}")
        if not 0.0 <= self.edge_density < 1.0:
            raise DomainError(f"edge_density must be in [0, 1), got {self.edge_density}")
        if self.mean_degree is not None and self.mean_degree < 0.0:
            raise DomainError(f"mean_degree must be non-negative, got {self.mean_degree}")
        lo, hi = self.weight_range
        if not 0.0 <= lo <= hi:
            raise DomainError(f"weight_range must satisfy 0 <= low <= high: {self.weight_range}")
        if self.intercept_range[0] > self.intercept_range[1]:
            raise DomainError(f"intercept_range is empty: {self.intercept_range}")
        if self.noise_sd < 0.0:
            raise DomainError(f"noise_sd must be non-negative, got {self.noise_sd}")
        if not 0.0 < self.knockdown_factor < 1.0:
            raise DomainError(f"knockdown_factor must be in (0, 1), got {self.knockdown_factor}")
        if self.n_obs < 0 or self.n_nuisance < 0:
            raise DomainError("n_obs and n_nuisance must be non-negative")
        if self.n_train_test < 2 or self.n_calibration < 1 or self.replicates < 1:
            raise DomainError(
                "need at least two train/test interventions, one calibration intervention "
                "and one replicate"
            )

    @property
    def n_interventions(self) -> int:
        return self.n_train_test + self.n_calibration + self.n_nuisance

    def edge_probability(self, n: int) -> float:
        """
        Probability of each allowed edge among n variables.

        With `mean_degree` set, it is chosen so that a variable has that many parents on
        average, which keeps the graphs equally sparse as n grows; otherwise it is
        `edge_density`.
        """
        if self.mean_degree is None or n < 2:
            return self.edge_density
        candidates = (n - 1) if self.cyclic else (n - 1) / 2.0
        return min(self.mean_degree / candidates, 1.0)


@dataclass(frozen=True)
class ScmSpec:
    """
    Linear SCM over p_obs observed variables followed by p_lat latent ones.

    weights[a, b] is the direct effect of a on b.
    """

    p_obs: int
    p_lat: int
    weights: np.ndarray
    intercepts: np.ndarray
    noise_sd: np.ndarray
    knockdown_factor: float = 0.1
    shift: float = 0.0

    def __post_init__(self) -> None:
        n = self.p_obs + self.p_lat
        if self.p_obs < 1 or self.p_lat < 0:
            raise DomainError(f"invalid variable counts p_obs={self.p_obs}, p_lat={self.p_lat}")
        for name, shape in (("weights", (n, n)), ("intercepts", (n,)), ("noise_sd", (n,))):
            value = np.array(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise DomainError(f"{name} must have shape {shape}, got {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if np.any(np.diag(self.weights) != 0.0):
            raise DomainError("weights must have a zero diagonal")
        if np.any(self.weights[: self.p_obs, self.p_obs :] != 0.0):
            raise DomainError("latent variables cannot have observed parents")
        if np.any(self.noise_sd < 0.0):
            raise DomainError("noise standard deviations must be non-negative")
        radius = spectral_radius(self.weights)
        if radius >= MAX_SPECTRAL_RADIUS:
            raise DomainError(f"spectral radius {radius:.3f} is not below {MAX_SPECTRAL_RADIUS}")

    @property
    def p_total(self) -> int:
        return self.p_obs + self.p_lat

    @property
    def observational_mean(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.p_total) - self.weights.T, self.intercepts)

    def intervened(self, target: int) -> Tuple[np.ndarray, np.ndarray]:
        """Return (weights, intercepts) with a knockdown applied to the target."""
        if not 0 <= target < self.p_obs:
            raise DomainError(f"intervention target {target} is not an observed variable")
        weights = np.array(self.weights)
        weights[:, target] = 0.0
        intercepts = np.array(self.intercepts)
        intercepts[target] = self.knockdown_factor * self.observational_mean[target] + self.shift
        return weights, intercepts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_obs": self.p_obs,
            "p_lat": self.p_lat,
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "noise_sd": self.noise_sd.tolist(),
            "knockdown_factor": self.knockdown_factor,
            "shift": self.shift,
        }

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "ScmSpec":
        try:
            return cls(
                int(document["p_obs"]),
                int(document["p_lat"]),
                np.asarray(document["weights"], dtype=np.float64),
                np.asarray(document["intercepts"], dtype=np.float64),
                np.asarray(document["noise_sd"], dtype=np.float64),
                float(document["knockdown_factor"]),
                float(document["shift"]),
            )
        except KeyError as exc:
            raise DomainError(f"SCM description lacks field {exc}") from exc


def spectral_radius(weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(weights))))


def sample_scm(p_obs: int, cfg: SimulatorConfig, seed: int) -> ScmSpec:
    """
    Draw a random SCM: edges independently with the configured probability, weights
    +-U[low, high].

    Without cycles, edges only point forward in a random order that lists the latents first.
    With cycles, any edge is allowed except from an observed to a latent variable, and the
    weights are scaled down if the spectral radius reaches the allowed maximum.
    """
    if p_obs < 1:
        raise DomainError(f"need at least one observed variable, got {p_obs}")
    rng = np.random.default_rng(seed)
    n = p_obs + cfg.p_lat
    if cfg.cyclic:
        allowed = ~np.eye(n, dtype=bool)
    else:
        order = np.concatenate([p_obs + rng.permutation(cfg.p_lat), rng.permutation(p_obs)])
        position = np.empty(n, dtype=np.int64)
        position[order] = np.arange(n)
        allowed = position[:, None] < position[None, :]
    allowed[:p_obs, p_obs:] = False

    mask = allowed & (rng.random((n, n)) < cfg.edge_probability(n))
    magnitude = rng.uniform(cfg.weight_range[0], cfg.weight_range[1], size=(n, n))
    sign = rng.choice(np.array([-1.0, 1.0]), size=(n, n))
    weights = np.where(mask, sign * magnitude, 0.0)
    if cfg.cyclic:
        radius = spectral_radius(weights)
        if radius >= MAX_SPECTRAL_RADIUS:
            weights *= RESCALED_SPECTRAL_RADIUS / radius
            logger.debug("Rescaled cyclic weights", extra={"spectral_radius": radius})
    intercepts = rng.uniform(cfg.intercept_range[0], cfg.intercept_range[1], size=n)
    logger.debug(
        "Sampled SCM", extra={"p_obs": p_obs, "p_lat": cfg.p_lat, "edges": int(mask.sum())}
    )
    return ScmSpec(
        p_obs,
        cfg.p_lat,
        weights,
        intercepts,
        np.full(n, cfg.noise_sd),
        cfg.knockdown_factor,
        cfg.shift,
    )


def solve_equilibrium(weights: np.ndarray, intercepts: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Solve x = W'x + b + e for every row e of the noise matrix."""
    system = np.eye(weights.shape[0]) - weights.T
    if np.linalg.cond(system) > MAX_CONDITION_NUMBER:
        raise DomainError("I - W' is numerically singular")
    return np.linalg.solve(system, (intercepts + noise).T).T


@dataclass(frozen=True)
class InterventionDesign:
    target: int
    replicates: int = 1
    role: str = "train_test"

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise DomainError(f"role must be one of {ROLES}, got '{self.role}'")
        if self.replicates < 1:
            raise DomainError(f"replicates must be positive, got {self.replicates}")


def design_interventions(
    p_obs: int,
    n_train_test: int,
    n_calibration: int,
    n_nuisance: int,
    replicates: int,
    seed: int,
) -> Tuple[InterventionDesign, ...]:
    """Pick disjoint sets of targets for the three roles, each sorted by target."""
    needed = n_train_test + n_calibration + n_nuisance
    if needed > p_obs:
        raise DomainError(f"{needed} interventions need distinct targets, but p_obs={p_obs}")
    targets = np.random.default_rng(seed).permutation(p_obs)[:needed]
    bounds = np.cumsum([0, n_train_test, n_calibration, n_nuisance])
    designs = []
    for role, lo, hi in zip(ROLES, bounds[:-1], bounds[1:]):
        for target in sorted(targets[lo:hi].tolist()):
            designs.append(InterventionDesign(int(target), replicates, role))
    return tuple(designs)


@dataclass(frozen=True)
class DataMatrix:
    """n x p_obs measurements; `targets` holds the intervened variable per row, -1 for none."""

    values: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.int64).reshape(-1)
        if values.ndim != 2 or targets.size != values.shape[0]:
            raise DomainError(f"got {targets.size} row targets for data of shape {values.shape}")
        bad = ~np.isfinite(values)
        if np.any(bad):
            row, col = np.argwhere(bad)[0]
            raise DomainError(f"non-finite value {values[row, col]} at cell ({row}, {col})")
        if targets.size and (targets.min() < NO_INTERVENTION or targets.max() >= values.shape[1]):
            raise DomainError("row targets must be -1 or an observed variable")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    @property
    def variable_names(self) -> List[str]:
        return [f"X{j}" for j in range(self.p)]


@dataclass(frozen=True)
class PanelEntry:
    target: int
    role: str
    values: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)


@dataclass(frozen=True)
class InterventionPanel:
    p: int
    records: Tuple[PanelEntry, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for entry in self.records:
            if entry.role not in ROLES or entry.values.ndim != 2 or entry.values.shape[1] != self.p:
                raise DomainError(f"malformed panel entry for target {entry.target}")
        overlap = set(self.targets("train_test")) & set(self.targets("calibration"))
        if overlap:
            raise DomainError(
                f"calibration and train/test panels share target(s) {sorted(overlap)}"
            )

    def entries(self, role: Optional[str] = None) -> Tuple[PanelEntry, ...]:
        return tuple(e for e in self.records if role is None or e.role == role)

    def targets(self, role: Optional[str] = None) -> List[int]:
        return sorted(e.target for e in self.entries(role))


Intervention = Union[InterventionDesign, Tuple[int, int]]


def simulate(
    spec: ScmSpec,
    n_obs: int,
    interventions: Sequence[Intervention],
    seed: int,
    threads: int = 1,
) -> Tuple[DataMatrix, InterventionPanel]:
    """
    Draw n_obs observational samples and the replicates of every intervention.

    Every condition draws its noise from its own seed stream, so results don't depend on
    the number of threads. Only observational and nuisance rows go into the data matrix;
    train/test and calibration measurements stay in the panel.
    """
    designs = [
        d if isinstance(d, InterventionDesign) else InterventionDesign(int(d[0]), int(d[1]))
        for d in interventions
    ]
    if n_obs < 0:
        raise DomainError(f"n_obs must be non-negative, got {n_obs}")

    def run(condition: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([seed, condition]))
        if condition == 0:
            weights, intercepts, rows = spec.weights, spec.intercepts, n_obs
        else:
            design = designs[condition - 1]
            weights, intercepts = spec.intervened(design.target)
            rows = design.replicates
        noise = rng.normal(0.0, 1.0, size=(rows, spec.p_total)) * spec.noise_sd
        return solve_equilibrium(weights, intercepts, noise)[:, : spec.p_obs]

    conditions = range(len(designs) + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="simulate") as executor:
            blocks = list(executor.map(run, conditions))
    else:
        blocks = [run(c) for c in conditions]

    rows = [blocks[0]]
    row_targets = [np.full(n_obs, NO_INTERVENTION)]
    entries = []
    for design, block in zip(designs, blocks[1:]):
        if design.role == "nuisance":
            rows.append(block)
            row_targets.append(np.full(block.shape[0], design.target))
        else:
            entries.append(PanelEntry(design.target, design.role, block))
    data = DataMatrix(np.vstack(rows), np.concatenate(row_targets))
    logger.debug(
        "Simulated data", extra={"rows": data.n, "p_obs": spec.p_obs, "panel": len(entries)}
    )
    return data, InterventionPanel(spec.p_obs, tuple(entries))


def ancestral_truth(spec: ScmSpec) -> np.ndarray:
    """Reachability among observed variables in the graph of W (paths via latents count)."""
    graph = csr_matrix((spec.weights != 0.0).astype(np.float64))
    distances = shortest_path(graph, directed=True, unweighted=True)
    truth = np.isfinite(distances[: spec.p_obs, : spec.p_obs]).astype(np.int8)
    np.fill_diagonal(truth, 0)
    return truth


@dataclass(frozen=True)
class InterventionLabels:
    """
    Labels per (intervened source, target variable); -1 where undefined (the source itself).

    Row r of `labels` belongs to `sources[r]`.
    """

    p: int
    sources: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        sources = np.asarray(self.sources, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (sources.size, self.p):
            raise DomainError(f"labels must have shape ({sources.size}, {self.p})")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "labels", labels)

    def to_pairs(self, targets: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Return (pair indices, labels) of the defined entries, optionally only for `targets`."""
        keep = np.ones(self.p, dtype=bool)
        if targets is not None:
            keep[:] = False
            keep[np.asarray(targets, dtype=np.int64)] = True
        rows, cols = np.nonzero((self.labels >= 0) & keep[None, :])
        pairs = PairSpace(self.p).indices(self.sources[rows], cols)
        labels = self.labels[rows, cols]
        order = np.argsort(pairs)
        return pairs[order], labels[order]


def threshold_truth(panel: InterventionPanel) -> InterventionLabels:
    """
    Label i -> j as causal when the mean of x_j under intervention on i lies strictly outside
    the range of x_j over all calibration measurements.
    """
    calibration = panel.entries("calibration")
    if not calibration:
        raise DomainError("the calibration panel is empty")
    stacked = np.vstack([entry.values for entry in calibration])
    low, high = stacked.min(axis=0), stacked.max(axis=0)
    entries = sorted(panel.entries("train_test"), key=lambda entry: entry.target)
    labels = np.empty((len(entries), panel.p), dtype=np.int8)
    for row, entry in enumerate(entries):
        mean = entry.mean
        labels[row] = ((mean < low) | (mean > high)).astype(np.int8)
        labels[row, entry.target] = -1
    return InterventionLabels(panel.p, np.array([e.target for e in entries]), labels)


def exclude_promiscuous(labels: InterventionLabels, max_fraction: float = 0.5) -> np.ndarray:
    """Return the sorted target variables affected by fewer than max_fraction of interventions."""
    if not 0.0 < max_fraction <= 1.0:
        raise DomainError(f"max_fraction must be in (0, 1], got {max_fraction}")
    defined = labels.labels >= 0
    affected = (labels.labels == 1).sum(axis=0)
    counted = defined.sum(axis=0)
    fraction = np.divide(
        affected, counted, out=np.zeros(labels.p, dtype=np.float64), where=counted > 0
    )
    removed = np.flatnonzero(fraction >= max_fraction)
    if removed.size:
        logger.info(
            f"Excluding {removed.size} promiscuous target variable(s)",
            extra={"removed": removed.tolist(), "max_fraction": max_fraction},
        )
    return np.flatnonzero(fraction < max_fraction)
