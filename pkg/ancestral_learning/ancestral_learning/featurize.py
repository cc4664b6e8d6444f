"""
Featurize variable pairs by their bivariate histograms, reduced to d dimensions by PCA.

Each variable is first rescaled to [0, 1] (by rank or min-max), then every ordered pair (i, j)
is binned on an equal-width grid. The vectorized, normalized bin counts of all pairs are
centered and projected onto the leading eigenvectors of their covariance.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Protocol, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from ancestral_learning import json_logging
from ancestral_learning.errors import ConvergenceError, DomainError
from ancestral_learning.pairspace import PairSpace

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

TRANSFORMS = ("rank", "minmax")
SOLVERS = ("jacobi", "eigh")

# Pairs binned together in one vectorized call to bincount.
CHUNK_SIZE = 512


@dataclass(frozen=True)
class HistogramConfig:
    bins_per_axis: int = 16
    transform: str = "rank"

    def __post_init__(self) -> None:
        if int(self.bins_per_axis) != self.bins_per_axis or self.bins_per_axis < 2:
            raise DomainError(f"bins_per_axis must be an integer >= 2, got {self.bins_per_axis}")
        if self.transform not in TRANSFORMS:
            raise DomainError(f"transform must be one of {TRANSFORMS}, got '{self.transform}'")

    @property
    def raw_length(self) -> int:
        return self.bins_per_axis * self.bins_per_axis


@dataclass(frozen=True)
class FeaturizeConfig:
    histogram: HistogramConfig = field(default_factory=HistogramConfig)
    dim: int = 100
    solver: str = "jacobi"

    def __post_init__(self) -> None:
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dim must be a positive integer, got {self.dim}")
        if self.solver not in SOLVERS:
            raise DomainError(f"solver must be one of {SOLVERS}, got '{self.solver}'")


@dataclass(frozen=True)
class PcaModel:
    """Immutable PCA transform: rows of `components` are orthonormal, eigenvalues descending."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    def __post_init__(self) -> None:
        for name in ("mean", "components", "eigenvalues"):
            value = np.array(getattr(self, name), dtype=np.float64)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.components.ndim != 2 or self.components.shape[1] != self.mean.size:
            raise DomainError(
                f"components of shape {self.components.shape} don't match mean {self.mean.shape}"
            )

    @property
    def dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.mean.size)

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0.0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return pca_transform(self, raw)

    def inverse_transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.dim:
            raise DomainError(f"expected {self.dim} features, got {features.shape[-1]}")
        return features @ self.components + self.mean


@dataclass(frozen=True)
class FeatureMatrix:
    """
    Rows of features aligned with the (sorted) pair indices in `pairs`.

    `config_hash` identifies the featurization settings that produced the matrix.
    """

    p: int
    pairs: np.ndarray
    values: np.ndarray
    config_hash: str = ""

    def __post_init__(self) -> None:
        pairs = PairSpace(self.p).check(self.pairs)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != pairs.size:
            raise DomainError(f"got {values.shape} feature values for {pairs.size} pairs")
        if not np.all(np.isfinite(values)):
            raise DomainError("feature matrix contains non-finite entries")
        order = np.argsort(pairs, kind="stable")
        object.__setattr__(self, "pairs", pairs[order])
        object.__setattr__(self, "values", values[order])

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def rows_for(self, pairs: Iterable[int]) -> np.ndarray:
        """Return the feature rows of the given pairs (in the given order)."""
        wanted = np.asarray(pairs if isinstance(pairs, np.ndarray) else list(pairs), np.int64)
        positions = np.searchsorted(self.pairs, wanted)
        found = positions < self.pairs.size
        found[found] = self.pairs[positions[found]] == wanted[found]
        if not np.all(found):
            raise DomainError(f"pair {wanted[~found][0]} has no feature row")
        return self.values[positions]


def rank_transform(column: np.ndarray) -> np.ndarray:
    """Return average ranks divided by n, values in (0, 1]."""
    column = np.asarray(column, dtype=np.float64)
    if column.ndim != 1 or column.size == 0:
        raise DomainError("rank transform needs a non-empty 1-d column")
    return rankdata(column, method="average") / column.size


def minmax_transform(column: np.ndarray) -> np.ndarray:
    column = np.asarray(column, dtype=np.float64)
    if column.ndim != 1 or column.size == 0:
        raise DomainError("min-max transform needs a non-empty 1-d column")
    lo, hi = column.min(), column.max()
    if hi == lo:
        return np.full(column.size, 0.5)
    return (column - lo) / (hi - lo)


class HasValues(Protocol):
    values: np.ndarray


def _transform(column: np.ndarray, transform: str) -> np.ndarray:
    if transform == "rank":
        return rank_transform(column)
    return minmax_transform(column)


def _bin_codes(scaled: np.ndarray, bins: int) -> np.ndarray:
    return np.minimum((scaled * bins).astype(np.int64), bins - 1)


def bivariate_histogram(xi: np.ndarray, xj: np.ndarray, cfg: HistogramConfig) -> np.ndarray:
    """Return the row-major (bin_i, bin_j) histogram of the pair, normalized to sum to one."""
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if xi.shape != xj.shape or xi.ndim != 1:
        raise DomainError(f"columns must be 1-d of equal length, got {xi.shape} and {xj.shape}")
    b = cfg.bins_per_axis
    ci = _bin_codes(_transform(xi, cfg.transform), b)
    cj = _bin_codes(_transform(xj, cfg.transform), b)
    return np.bincount(ci * b + cj, minlength=b * b) / xi.size


def _values_of(data: Union[np.ndarray, HasValues]) -> np.ndarray:
    values = getattr(data, "values", data)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DomainError(f"data must be an n x p matrix, got shape {values.shape}")
    bad = ~np.isfinite(values)
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        raise DomainError(f"non-finite value {values[row, col]} at cell ({row}, {col})")
    return values


def build_raw_features(
    data: Union[np.ndarray, HasValues],
    pairs: Iterable[int],
    cfg: HistogramConfig,
    threads: int = 1,
) -> np.ndarray:
    """
    Return one histogram row per pair, in the order the pairs are given.

    Rows are computed in chunks that may run in parallel; each chunk writes only its own
    rows, so the output doesn't depend on the number of threads.
    """
    values = _values_of(data)
    n, p = values.shape
    pspace = PairSpace(p)
    ks = pspace.check(pairs if isinstance(pairs, np.ndarray) else list(pairs))
    src, tgt = pspace.sources(ks), pspace.targets(ks)
    b = cfg.bins_per_axis
    size = cfg.raw_length
    codes = np.empty((n, p), dtype=np.int64)
    for col in range(p):
        codes[:, col] = _bin_codes(_transform(values[:, col], cfg.transform), b)

    raw = np.empty((ks.size, size), dtype=np.float64)

    def fill(start: int) -> None:
        stop = min(start + CHUNK_SIZE, ks.size)
        cells = codes[:, src[start:stop]] * b + codes[:, tgt[start:stop]]
        offsets = np.arange(stop - start, dtype=np.int64) * size
        counts = np.bincount((cells + offsets).ravel(), minlength=(stop - start) * size)
        raw[start:stop] = counts.reshape(stop - start, size) / n

    starts = list(range(0, ks.size, CHUNK_SIZE))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="featurize") as executor:
            list(executor.map(fill, starts))
    else:
        for start in starts:
            fill(start)
    logger.debug("Built raw features", extra={"rows": int(ks.size), "raw_length": size})
    return raw


def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Pair up indices 0..n-1 into rounds of disjoint (p, q) pairs covering all pairs once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p_idx, q_idx = [], []
        for a, b in zip(players[: m // 2], reversed(players[m // 2 :])):
            if a < n and b < n:
                p_idx.append(min(a, b))
                q_idx.append(max(a, b))
        rounds.append((np.array(p_idx, dtype=np.int64), np.array(q_idx, dtype=np.int64)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(
    matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Rotations are scheduled in round-robin order so that each round applies n/2 disjoint
    rotations at once. Iteration stops once the largest off-diagonal entry is at most
    tol * trace. Returns (eigenvalues, eigenvectors as columns), unsorted.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    vectors = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), vectors
    threshold = tol * max(float(np.trace(a)), 0.0)
    schedule = _round_robin(n)
    off = np.inf
    for sweep in range(max_sweeps + 1):
        off = float(np.max(np.abs(a - np.diag(np.diag(a)))))
        if off <= threshold:
            logger.debug("Jacobi converged", extra={"sweeps": sweep, "max_off_diagonal": off})
            return np.diag(a).copy(), vectors
        if sweep == max_sweeps:
            break
        for p_idx, q_idx in schedule:
            apq = a[p_idx, q_idx]
            active = apq != 0.0
            if not np.any(active):
                continue
            p_idx, q_idx, apq = p_idx[active], q_idx[active], apq[active]
            theta = (a[q_idx, q_idx] - a[p_idx, p_idx]) / (2.0 * apq)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            col_p, col_q = a[:, p_idx].copy(), a[:, q_idx].copy()
            a[:, p_idx] = c * col_p - s * col_q
            a[:, q_idx] = s * col_p + c * col_q
            row_p, row_q = a[p_idx, :].copy(), a[q_idx, :].copy()
            a[p_idx, :] = c[:, None] * row_p - s[:, None] * row_q
            a[q_idx, :] = s[:, None] * row_p + c[:, None] * row_q
            a[p_idx, q_idx] = 0.0
            a[q_idx, p_idx] = 0.0
            vec_p, vec_q = vectors[:, p_idx].copy(), vectors[:, q_idx].copy()
            vectors[:, p_idx] = c * vec_p - s * vec_q
            vectors[:, q_idx] = s * vec_p + c * vec_q
        a = 0.5 * (a + a.T)
    raise ConvergenceError(
        "Jacobi eigensolver did not converge",
        {"sweeps": max_sweeps, "max_off_diagonal": off, "threshold": threshold},
    )


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude coordinate is positive."""
    if components.size == 0:
        return components
    lead = components[np.arange(components.shape[0]), np.argmax(np.abs(components), axis=1)]
    return components * np.where(lead < 0.0, -1.0, 1.0)[:, None]


def pca_fit(raw: np.ndarray, dim: int, solver: str = "jacobi") -> PcaModel:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 2:
        raise DomainError(f"PCA needs at least two rows, got shape {raw.shape}")
    if solver not in SOLVERS:
        raise DomainError(f"solver must be one of {SOLVERS}, got '{solver}'")
    mean = raw.mean(axis=0)
    centered = raw - mean
    covariance = centered.T @ centered / (raw.shape[0] - 1)
    if solver == "jacobi":
        values, vectors = jacobi_eigh(covariance)
    else:
        values, vectors = np.linalg.eigh(covariance)
    order = np.argsort(-values, kind="stable")[: min(dim, raw.shape[1])]
    components = _fix_signs(vectors[:, order].T)
    eigenvalues = np.maximum(values[order], 0.0)
    logger.debug(
        "Fitted PCA",
        extra={"rows": raw.shape[0], "raw_length": raw.shape[1], "dim": int(order.size)},
    )
    return PcaModel(mean, components, eigenvalues, float(np.trace(covariance)))


def pca_transform(model: PcaModel, raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != model.input_dim:
        raise DomainError(f"expected rows of length {model.input_dim}, got {raw.shape[-1]}")
    return (raw - model.mean) @ model.components.T


def featurize_pairs(
    data: Union[np.ndarray, HasValues],
    pairs: Iterable[int],
    cfg: FeaturizeConfig,
    threads: int = 1,
    config_hash: str = "",
    pca: Optional[PcaModel] = None,
) -> Tuple[FeatureMatrix, PcaModel]:
    """
    Build the feature matrix of the pairs.

    Unless a fitted PCA is given, it is fit on the raw rows of all ordered pairs of the data,
    whichever subset of them is featurized.
    """
    values = _values_of(data)
    pspace = PairSpace(values.shape[1])
    ks = np.sort(pspace.check(pairs))
    if pca is None:
        everything = build_raw_features(values, pspace.all_pairs(), cfg.histogram, threads=threads)
        pca = pca_fit(everything, cfg.dim, cfg.solver)
        raw = everything[ks]
    else:
        raw = build_raw_features(values, ks, cfg.histogram, threads=threads)
    features = FeatureMatrix(values.shape[1], ks, pca.transform(raw), config_hash)
    return features, pca
