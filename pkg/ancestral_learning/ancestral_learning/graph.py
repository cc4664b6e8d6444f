"""
The estimated ancestral graph: a p x p matrix of scores with the source of each entry.

In the standard mode, pairs with background knowledge keep their labels and query pairs
receive classifier scores. In the error-correcting mode, every pair gets the classifier score
so that the output may disagree with (possibly wrong) input labels.
"""

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from ancestral_learning.errors import DomainError
from ancestral_learning.pairspace import PairSpace

UNDEFINED = 0
BACKGROUND = 1
PREDICTED = 2

PROVENANCE_NAMES = {UNDEFINED: "undefined", BACKGROUND: "background", PREDICTED: "predicted"}


@dataclass(frozen=True)
class AncestralGraph:
    """Entry (i, j) scores "i is an ancestor of j"; undefined entries (and the diagonal) are NaN."""

    p: int
    scores: np.ndarray
    provenance: np.ndarray

    def __post_init__(self) -> None:
        scores = np.array(self.scores, dtype=np.float64)
        provenance = np.array(self.provenance, dtype=np.int8)
        if scores.shape != (self.p, self.p) or provenance.shape != (self.p, self.p):
            raise DomainError(f"graph arrays must be {self.p} x {self.p}")
        if np.any(np.diag(provenance) != UNDEFINED):
            raise DomainError("diagonal entries cannot be defined")
        defined = provenance != UNDEFINED
        if np.any(np.isnan(scores) == defined):
            raise DomainError("scores must be NaN exactly where entries are undefined")
        values = scores[defined]
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise DomainError("scores must lie in [0, 1]")
        background = scores[provenance == BACKGROUND]
        if not np.all((background == 0.0) | (background == 1.0)):
            raise DomainError("background entries must be 0 or 1")
        scores.setflags(write=False)
        provenance.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "provenance", provenance)

    @property
    def defined(self) -> np.ndarray:
        return self.provenance != UNDEFINED

    def edges(self) -> Iterator[Tuple[int, int, float, str]]:
        """Yield (i, j, score, provenance) for the defined entries in row-major order."""
        for i, j in np.argwhere(self.defined):
            yield int(i), int(j), float(self.scores[i, j]), PROVENANCE_NAMES[
                int(self.provenance[i, j])
            ]

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        dense = np.array(self.scores)
        dense[~self.defined] = fill
        return dense

    def scores_of(self, pairs: np.ndarray) -> np.ndarray:
        """Look up the scores of the given pair indices."""
        pspace = PairSpace(self.p)
        ks = pspace.check(pairs)
        return self.scores[pspace.sources(ks), pspace.targets(ks)]


def _scores_array(scores: np.ndarray, size: int, what: str) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != size:
        raise DomainError(f"got {scores.size} {what} for {size} pairs")
    return scores


def assemble(
    query_pairs: np.ndarray,
    query_scores: np.ndarray,
    train_pairs: np.ndarray,
    train_labels: np.ndarray,
    p: int,
) -> AncestralGraph:
    """Labels on the training pairs T, classifier scores on the query pairs Q, NaN elsewhere."""
    pspace = PairSpace(p)
    q = pspace.check(query_pairs)
    t = pspace.check(train_pairs)
    overlap = np.intersect1d(q, t)
    if overlap.size:
        raise DomainError(f"training and query pairs overlap, e.g. k={overlap[0]}")
    q_scores = _scores_array(query_scores, q.size, "scores")
    labels = _scores_array(train_labels, t.size, "labels")

    scores = np.full((p, p), np.nan)
    provenance = np.full((p, p), UNDEFINED, dtype=np.int8)
    scores[pspace.sources(q), pspace.targets(q)] = q_scores
    provenance[pspace.sources(q), pspace.targets(q)] = PREDICTED
    scores[pspace.sources(t), pspace.targets(t)] = labels
    provenance[pspace.sources(t), pspace.targets(t)] = BACKGROUND
    return AncestralGraph(p, scores, provenance)


def assemble_corrected(
    scores: np.ndarray, p: int, pairs: Optional[np.ndarray] = None
) -> AncestralGraph:
    """
    Classifier scores on every ordered pair.

    Without `pairs`, the scores are taken to be in linear-index order over all of K.
    """
    pspace = PairSpace(p)
    if pairs is None:
        ks = pspace.all_pairs()
    else:
        ks = pspace.check(pairs)
        missing = np.setdiff1d(pspace.all_pairs(), ks)
        if missing.size:
            raise DomainError(f"{missing.size} pair(s) have no score, e.g. k={missing[0]}")
    values = _scores_array(scores, ks.size, "scores")
    dense = np.full((p, p), np.nan)
    dense[pspace.sources(ks), pspace.targets(ks)] = values
    provenance = np.full((p, p), PREDICTED, dtype=np.int8)
    np.fill_diagonal(provenance, UNDEFINED)
    return AncestralGraph(p, dense, provenance)
