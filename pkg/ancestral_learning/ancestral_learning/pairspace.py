"""
Linear indexing of ordered variable pairs and the background knowledge defined on them.

Pairs (i, j) with i != j are numbered row-major over i with the diagonal removed, so that
k = i * (p - 1) + (j if j < i else j - 1). Sampling schemes split a universe of pairs into
a labeled set T and a query set Q; perturbation protocols corrupt labels on T while keeping
the number of positive labels fixed.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from ancestral_learning import json_logging
from ancestral_learning.errors import DomainError

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


class PairSpace:
    """All ordered pairs of p variables, without the diagonal."""

    __slots__ = ("p",)

    def __init__(self, p: int) -> None:
        if int(p) != p or p < 2:
            raise DomainError(f"need at least two variables, got p={p}")
        self.p = int(p)

    def __repr__(self) -> str:
        return f"PairSpace(p={self.p})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PairSpace) and other.p == self.p

    def __hash__(self) -> int:
        return hash(self.p)

    @property
    def K(self) -> int:
        return self.p * (self.p - 1)

    def linear_index(self, i: int, j: int) -> int:
        return linear_index(i, j, self.p)

    def pair_of(self, k: int) -> Tuple[int, int]:
        return pair_of(k, self.p)

    def all_pairs(self) -> np.ndarray:
        return np.arange(self.K, dtype=np.int64)

    def check(self, ks: Iterable[int]) -> np.ndarray:
        """Return pair indices as an int64 array after checking that they are in range."""
        arr = np.asarray(list(ks) if not isinstance(ks, np.ndarray) else ks, dtype=np.int64)
        arr = arr.reshape(-1)
        if arr.size and (arr.min() < 0 or arr.max() >= self.K):
            bad = arr[(arr < 0) | (arr >= self.K)][0]
            raise DomainError(f"pair index {bad} out of range for p={self.p} (K={self.K})")
        return arr

    def sources(self, ks: Iterable[int]) -> np.ndarray:
        return self.check(ks) // (self.p - 1)

    def targets(self, ks: Iterable[int]) -> np.ndarray:
        arr = self.check(ks)
        i = arr // (self.p - 1)
        r = arr % (self.p - 1)
        return r + (r >= i)

    def indices(self, i: Iterable[int], j: Iterable[int]) -> np.ndarray:
        """Vectorized linear_index."""
        i_arr = np.asarray(i, dtype=np.int64).reshape(-1)
        j_arr = np.asarray(j, dtype=np.int64).reshape(-1)
        if i_arr.shape != j_arr.shape:
            raise DomainError("source and target arrays must have the same length")
        if i_arr.size:
            if min(i_arr.min(), j_arr.min()) < 0 or max(i_arr.max(), j_arr.max()) >= self.p:
                raise DomainError(f"vertex out of range for p={self.p}")
            if np.any(i_arr == j_arr):
                raise DomainError("diagonal pairs (i, i) have no linear index")
        return i_arr * (self.p - 1) + np.where(j_arr < i_arr, j_arr, j_arr - 1)

    def pairs_from_sources(
        self, sources: Iterable[int], targets: Optional[Iterable[int]] = None
    ) -> np.ndarray:
        """Return the sorted pair indices (i, j) with i in sources and j in targets, j != i."""
        target_arr = (
            np.arange(self.p, dtype=np.int64)
            if targets is None
            else np.unique(np.asarray(list(targets), dtype=np.int64))
        )
        blocks = []
        for i in sorted(set(int(s) for s in sources)):
            js = target_arr[target_arr != i]
            blocks.append(self.indices(np.full(js.size, i), js))
        if not blocks:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(blocks))


def linear_index(i: int, j: int, p: int) -> int:
    if not (0 <= i < p and 0 <= j < p):
        raise DomainError(f"vertex out of range: (i={i}, j={j}) for p={p}")
    if i == j:
        raise DomainError(f"diagonal pair (i={i}, j={j}) has no linear index")
    return i * (p - 1) + (j if j < i else j - 1)


def pair_of(k: int, p: int) -> Tuple[int, int]:
    if p < 2 or not (0 <= k < p * (p - 1)):
        raise DomainError(f"pair index {k} out of range for p={p}")
    i, r = divmod(int(k), p - 1)
    return i, r + (1 if r >= i else 0)


@dataclass(frozen=True)
class BackgroundKnowledge:
    """
    Known ancestral statuses on the pairs T (aligned with `labels`) and the query pairs Q.

    T and Q are sorted arrays of linear indices.
    """

    pspace: PairSpace
    train: np.ndarray
    labels: np.ndarray
    query: np.ndarray

    def __post_init__(self) -> None:
        train = self.pspace.check(self.train)
        query = self.pspace.check(self.query)
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if labels.shape != train.shape:
            raise DomainError(f"got {labels.size} labels for {train.size} training pairs")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise DomainError("labels must be 0 or 1")
        order = np.argsort(train, kind="stable")
        object.__setattr__(self, "train", train[order])
        object.__setattr__(self, "labels", labels[order])
        object.__setattr__(self, "query", np.sort(query))
        self.assert_disjoint()

    def assert_disjoint(self) -> None:
        overlap = np.intersect1d(self.train, self.query)
        if overlap.size:
            raise DomainError(
                f"training and query pairs overlap in {overlap.size} pair(s), e.g. k={overlap[0]}"
            )
        if np.unique(self.train).size != self.train.size:
            raise DomainError("training pairs contain duplicates")

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if self.labels.size else 0.0


@dataclass(frozen=True)
class PerturbationPlan:
    """Positions (into the label vector over T) of the flipped labels."""

    flipped_to_zero: np.ndarray
    flipped_to_one: np.ndarray
    fraction: float

    @property
    def positions(self) -> np.ndarray:
        return np.sort(np.concatenate([self.flipped_to_zero, self.flipped_to_one]))

    def pairs(self, train: np.ndarray) -> np.ndarray:
        """Return the linear indices of all perturbed pairs given the training pairs T."""
        return np.asarray(train)[self.positions]


def labels_from_truth(truth: np.ndarray, pairs: Iterable[int]) -> np.ndarray:
    """Read labels y_k = truth[i(k), j(k)] off a binary p x p ancestral matrix."""
    truth = np.asarray(truth)
    if truth.ndim != 2 or truth.shape[0] != truth.shape[1]:
        raise DomainError(f"truth must be a square matrix, got shape {truth.shape}")
    if np.any(np.diag(truth) != 0):
        raise DomainError("truth must have a zero diagonal")
    pspace = PairSpace(truth.shape[0])
    ks = pspace.check(pairs)
    return (truth[pspace.sources(ks), pspace.targets(ks)] != 0).astype(np.int8)


def sample_random(
    pspace: PairSpace, rho: float, seed: int, universe: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split the universe of pairs (all of K by default) at random into T and Q.

    |T| = round-half-up(rho * |universe|); both sets are returned sorted.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must be in (0, 1), got {rho}")
    pairs = pspace.all_pairs() if universe is None else np.unique(pspace.check(universe))
    n_train = round_half_up(rho * pairs.size)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pairs.size)
    train = np.sort(pairs[perm[:n_train]])
    query = np.sort(pairs[perm[n_train:]])
    logger.debug(
        "Sampled pairs at random",
        extra={"n_train": int(train.size), "n_query": int(query.size), "rho": rho},
    )
    return train, query


def sample_interventionwise(
    pspace: PairSpace,
    interventions: Iterable[int],
    n_train: int,
    seed: int,
    targets: Optional[Iterable[int]] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split at the level of intervened sources: pick I' from I, train on all pairs leaving I'.

    Returns (I', T, Q). Only pairs whose source was intervened on appear in T or Q.
    """
    sources = np.unique(np.asarray(list(interventions), dtype=np.int64))
    if not 0 < n_train < sources.size:
        raise DomainError(f"n_train must be in (0, {sources.size}), got {n_train}")
    if sources.min() < 0 or sources.max() >= pspace.p:
        raise DomainError(f"intervention target out of range for p={pspace.p}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(sources, size=n_train, replace=False))
    held_out = np.setdiff1d(sources, chosen)
    target_list = None if targets is None else list(targets)
    train = pspace.pairs_from_sources(chosen, target_list)
    query = pspace.pairs_from_sources(held_out, target_list)
    return chosen, train, query


def perturb_labels(
    labels: np.ndarray, fraction: float, seed: int
) -> Tuple[np.ndarray, PerturbationPlan]:
    """
    Flip m = floor(fraction * #positives) positives to 0 and the same number of negatives to 1.

    The number of positive labels is unchanged and every flipped label differs from its
    original value.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"fraction must be in [0, 1], got {fraction}")
    labels = np.asarray(labels, dtype=np.int8).reshape(-1)
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    m = int(math.floor(fraction * positives.size + 1e-9))
    if negatives.size < m:
        raise DomainError(
            f"cannot balance {m} flipped positive(s) with only {negatives.size} negative(s)"
        )
    rng = np.random.default_rng(seed)
    to_zero = np.sort(rng.choice(positives, size=m, replace=False))
    to_one = np.sort(rng.choice(negatives, size=m, replace=False))
    perturbed = labels.copy()
    perturbed[to_zero] = 0
    perturbed[to_one] = 1
    actual = m / positives.size if positives.size else 0.0
    return perturbed, PerturbationPlan(to_zero, to_one, actual)


def sparsify_positives(
    labels: np.ndarray, fraction: float, seed: int, control: bool = False
) -> np.ndarray:
    """
    Keep ceil(fraction * #positives) randomly chosen positive labels and set all others to 0.

    With `control`, the same number of ones is placed uniformly at random over all of T.
    """
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must be in (0, 1], got {fraction}")
    labels = np.asarray(labels, dtype=np.int8).reshape(-1)
    positives = np.flatnonzero(labels == 1)
    n_keep = int(math.ceil(fraction * positives.size - 1e-9))
    rng = np.random.default_rng(seed)
    pool = np.arange(labels.size) if control else positives
    keep = rng.choice(pool, size=n_keep, replace=False)
    sparse = np.zeros_like(labels)
    sparse[keep] = 1
    return sparse
