"""
ROC analysis of score vectors against binary ground truth, plus correlation baselines.

The AUC is the Mann-Whitney statistic: the probability that a random positive outscores a
random negative, ties counting one half. It is computed from average ranks.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import kendalltau, rankdata

from ancestral_learning import json_logging
from ancestral_learning.errors import DomainError
from ancestral_learning.featurize import HasValues
from ancestral_learning.graph import AncestralGraph
from ancestral_learning.pairspace import PairSpace

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

CORRELATION_METHODS = ("pearson", "kendall")


def _scores_and_labels(scores: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DomainError(f"got {s.size} scores for {y.size} labels")
    if np.any(np.isnan(s)):
        raise DomainError("scores contain NaN")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == y.size:
        raise DomainError(f"need both classes, got {n_pos} positive(s) out of {y.size}")
    return s, y.astype(bool)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    s, y = _scores_and_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_bruteforce(scores: np.ndarray, labels: np.ndarray) -> float:
    """Count wins and ties over all positive-negative couples."""
    s, y = _scores_and_labels(scores, labels)
    diff = s[y][:, None] - s[~y][None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self) -> None:
        for name in ("fpr", "tpr", "thresholds"):
            value = np.array(getattr(self, name), dtype=np.float64)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if not self.fpr.shape == self.tpr.shape == self.thresholds.shape or self.fpr.size < 2:
            raise DomainError("ROC arrays must have equal length of at least two")
        if (self.fpr[0], self.tpr[0]) != (0.0, 0.0) or (self.fpr[-1], self.tpr[-1]) != (1.0, 1.0):
            raise DomainError("ROC curves run from (0, 0) to (1, 1)")
        if np.any(np.diff(self.fpr) < 0.0) or np.any(np.diff(self.tpr) < 0.0):
            raise DomainError("ROC curves must be non-decreasing")

    @property
    def auc(self) -> float:
        """Trapezoidal area under the curve."""
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1])) / 2.0)


def roc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """
    One point per distinct score threshold, predicting positive when score >= threshold.

    A block of tied scores moves the curve along a single (diagonal) segment.
    """
    s, y = _scores_and_labels(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last_of_block = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tps = np.cumsum(y_sorted)[last_of_block]
    fps = last_of_block + 1 - tps
    return RocCurve(
        np.r_[0.0, fps / fps[-1]],
        np.r_[0.0, tps / tps[-1]],
        np.r_[np.inf, s_sorted[last_of_block]],
    )


def average_roc(curves: Sequence[RocCurve], grid: Optional[np.ndarray] = None) -> RocCurve:
    """
    Average curves vertically: mean TPR at each false-positive rate of the grid.

    At a vertical step the curve's highest TPR at that FPR is used; between points the TPR
    is interpolated linearly. The averaged curve has no thresholds (NaN).
    """
    if not curves:
        raise DomainError("need at least one ROC curve to average")
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or grid[-1] != 1.0:
        raise DomainError("the FPR grid must run from 0 to 1")
    if np.any(np.diff(grid) <= 0.0):
        raise DomainError("the FPR grid must be increasing")
    tprs = np.empty((len(curves), grid.size))
    for row, curve in enumerate(curves):
        last = np.searchsorted(curve.fpr, grid, side="right") - 1
        at = curve.fpr[last] == grid
        following = np.minimum(last + 1, curve.fpr.size - 1)
        span = curve.fpr[following] - curve.fpr[last]
        weight = np.divide(grid - curve.fpr[last], span, out=np.zeros(grid.size), where=span > 0)
        interpolated = curve.tpr[last] + weight * (curve.tpr[following] - curve.tpr[last])
        tprs[row] = np.where(at, curve.tpr[last], interpolated)
    mean_tpr = tprs.mean(axis=0)
    return RocCurve(
        np.r_[0.0, grid],
        np.r_[0.0, mean_tpr],
        np.full(grid.size + 1, np.nan),
    )


def correlation_scores(
    data: Union[np.ndarray, HasValues], pairs: Iterable[int], method: str = "pearson"
) -> np.ndarray:
    """Score each pair (i, j) by |corr(x_i, x_j)|; Kendall's correlation is tau-b."""
    if method not in CORRELATION_METHODS:
        raise DomainError(f"method must be one of {CORRELATION_METHODS}, got '{method}'")
    values = np.asarray(getattr(data, "values", data), dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 3:
        raise DomainError(f"need at least three samples, got data of shape {values.shape}")
    n, p = values.shape
    pspace = PairSpace(p)
    ks = pspace.check(pairs if isinstance(pairs, np.ndarray) else list(pairs))
    src, tgt = pspace.sources(ks), pspace.targets(ks)

    constant = np.flatnonzero(np.ptp(values, axis=0) == 0.0)
    if constant.size:
        logger.warning(
            f"Scoring pairs with {constant.size} zero-variance column(s) as 0",
            extra={"columns": constant.tolist()},
        )

    if method == "pearson":
        std = values.std(axis=0)
        safe = np.where(std > 0.0, std, 1.0)
        z = (values - values.mean(axis=0)) / safe
        z[:, std == 0.0] = 0.0
        corr = np.clip(z.T @ z / n, -1.0, 1.0)
        return np.abs(corr[src, tgt])

    # Kendall is symmetric, so each unordered pair is computed once.
    lo, hi = np.minimum(src, tgt), np.maximum(src, tgt)
    unordered, inverse = np.unique(lo * p + hi, return_inverse=True)
    taus = np.zeros(unordered.size)
    is_constant = np.zeros(p, dtype=bool)
    is_constant[constant] = True
    for index, code in enumerate(unordered):
        i, j = divmod(int(code), p)
        if is_constant[i] or is_constant[j]:
            continue
        tau, _ = kendalltau(values[:, i], values[:, j])
        taus[index] = 0.0 if math.isnan(tau) else abs(tau)
    return taus[inverse.reshape(-1)]


def threshold(graph: AncestralGraph, t: float) -> np.ndarray:
    """Binary p x p matrix with 1 where the score exceeds t; undefined entries are 0."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"threshold must be in [0, 1], got {t}")
    return (np.nan_to_num(graph.scores, nan=-1.0) > t).astype(np.int8)


@dataclass(frozen=True)
class Summary:
    mean: float
    se: float
    count: int


def summarize(values: Iterable[float]) -> Summary:
    """Mean and standard error (sample standard deviation over sqrt(n))."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return Summary(math.nan, math.nan, 0)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
    return Summary(float(arr.mean()), se, int(arr.size))
