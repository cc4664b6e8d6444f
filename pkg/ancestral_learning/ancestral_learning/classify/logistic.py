"""
L1-regularized logistic regression fitted by coordinate descent, glmnet style.

The objective is  (1/sum(v)) * sum_i v_i * logloss_i + lam * ||beta||_1  with an unpenalized
intercept (v are sample weights, all one unless class weighting is on). Each outer iteration
forms the weighted least-squares approximation at the current point and minimizes it by
cyclic coordinate descent over the Gram matrix, cycling over the active set until it settles
before the next full sweep. A backtracking step keeps the objective from increasing.
The penalty is chosen along a geometric path from lambda_max down by stratified K-fold
cross-validated AUC, with warm starts and strong-rule screening along the path. Features are
standardized before fitting, so one penalty (and one tolerance) fits all of them.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from ancestral_learning import json_logging
from ancestral_learning.classify.training import TrainingSet
from ancestral_learning.errors import ConvergenceError, DomainError
from ancestral_learning.evaluate import auc

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

CLASS_WEIGHTS = (None, "balanced")

# Lower bound of the IRLS weights p * (1 - p), as in glmnet.
MIN_IRLS_WEIGHT = 1e-5

# The path stops once the deviance explained reaches MAX_DEVIANCE_EXPLAINED, or once it grows
# by less than MIN_DEVIANCE_GAIN (relative) from one lambda to the next after MIN_PATH_FITS fits.
MAX_DEVIANCE_EXPLAINED = 0.999
MIN_DEVIANCE_GAIN = 1e-5
MIN_PATH_FITS = 5


@dataclass(frozen=True)
class L1Config:
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3
    lambda_path: Optional[Tuple[float, ...]] = None
    folds: int = 5
    tol: float = 1e-7
    max_iter: int = 100
    max_sweeps: int = 10000
    class_weight: Optional[str] = None
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.n_lambda < 1:
            raise DomainError(f"n_lambda must be positive, got {self.n_lambda}")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise DomainError(f"lambda_min_ratio must be in (0, 1), got {self.lambda_min_ratio}")
        if self.lambda_path is not None:
            if not self.lambda_path or min(self.lambda_path) < 0.0:
                raise DomainError("lambda_path must be a non-empty list of values >= 0")
            object.__setattr__(self, "lambda_path", tuple(float(v) for v in self.lambda_path))
        if self.folds < 2:
            raise DomainError(f"folds must be at least 2, got {self.folds}")
        if self.tol <= 0.0 or self.max_iter < 1 or self.max_sweeps < 1:
            raise DomainError("tol, max_iter and max_sweeps must be positive")
        if self.class_weight not in CLASS_WEIGHTS:
            raise DomainError(f"class_weight must be one of {CLASS_WEIGHTS}")


@dataclass(frozen=True)
class CvPoint:
    lam: float
    mean_auc: float
    se_auc: float


@dataclass(frozen=True)
class L1LogisticModel:
    intercept: float
    coefficients: np.ndarray
    lam: float
    cv_report: Tuple[CvPoint, ...] = ()
    objective_trace: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        coefficients = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def input_dim(self) -> int:
        return int(self.coefficients.size)

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(features, dtype=np.float64) @ self.coefficients


@dataclass(frozen=True)
class L1Solution:
    intercept: float
    coefficients: np.ndarray
    iterations: int
    objective_trace: Tuple[float, ...]


def _normalized_weights(labels: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.full(labels.size, 1.0 / labels.size)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size != labels.size or np.any(weights < 0.0) or weights.sum() <= 0.0:
        raise DomainError("sample weights must be non-negative, one per label, not all zero")
    return weights / weights.sum()


def class_weights(labels: np.ndarray, class_weight: Optional[str]) -> Optional[np.ndarray]:
    """Return per-sample weights for the class weighting mode (None means unweighted)."""
    if class_weight is None:
        return None
    labels = np.asarray(labels)
    n_pos = float(np.sum(labels == 1))
    n_neg = float(labels.size - n_pos)
    return np.where(labels == 1, labels.size / (2.0 * n_pos), labels.size / (2.0 * n_neg))


def l1_objective(
    features: np.ndarray,
    labels: np.ndarray,
    intercept: float,
    coefficients: np.ndarray,
    lam: float,
    weights: Optional[np.ndarray] = None,
) -> float:
    y = np.asarray(labels, dtype=np.float64)
    vn = _normalized_weights(y, weights)
    eta = intercept + np.asarray(features, dtype=np.float64) @ coefficients
    loss = np.logaddexp(0.0, eta) - y * eta
    return float(vn @ loss + lam * np.abs(coefficients).sum())


def l1_gradient(
    features: np.ndarray,
    labels: np.ndarray,
    intercept: float,
    coefficients: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Gradient of the smooth (log-loss) part with respect to intercept and coefficients."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    vn = _normalized_weights(y, weights)
    residual = vn * (expit(intercept + x @ coefficients) - y)
    return float(residual.sum()), x.T @ residual


def lambda_max(
    features: np.ndarray, labels: np.ndarray, weights: Optional[np.ndarray] = None
) -> float:
    """Smallest penalty at which all coefficients vanish: max |X'(y - ybar)| / n."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    vn = _normalized_weights(y, weights)
    ybar = float(vn @ y)
    return float(np.max(np.abs(x.T @ (vn * (y - ybar))))) if x.shape[1] else 0.0


def lambda_path(lam_max: float, n_lambda: int = 50, min_ratio: float = 1e-3) -> np.ndarray:
    if lam_max <= 0.0:
        return np.zeros(1)
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * min_ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def _coordinate_descent(
    gram: np.ndarray,
    corr: np.ndarray,
    lam: float,
    beta: np.ndarray,
    tol: float,
    max_sweeps: int,
) -> np.ndarray:
    """
    Minimize 1/2 b'Gb - c'b + lam * |b|_1 cyclically, iterating on the active set.

    A sweep has converged when no coordinate moved by more than `tol` standard deviations,
    that is when max_j sqrt(G_jj) * |delta b_j| < tol.
    """
    beta = beta.copy()
    diag = np.diag(gram).copy()
    spread = np.sqrt(np.maximum(diag, 0.0))
    g_beta = gram @ beta
    sweeps = 0

    def sweep(coords: Iterable[int]) -> float:
        nonlocal g_beta, sweeps
        sweeps += 1
        biggest = 0.0
        for j in coords:
            old = beta[j]
            if diag[j] <= 0.0:
                new = 0.0
            else:
                rho = corr[j] - g_beta[j] + diag[j] * old
                new = math.copysign(max(abs(rho) - lam, 0.0), rho) / diag[j]
            if new != old:
                g_beta += gram[j] * (new - old)
                beta[j] = new
                biggest = max(biggest, spread[j] * abs(new - old))
        return biggest

    everything = range(beta.size)
    while sweeps < max_sweeps:
        if sweep(everything) < tol:
            return beta
        active = np.flatnonzero(beta).tolist()
        while sweeps < max_sweeps and sweep(active) >= tol:
            pass
    raise ConvergenceError(
        "coordinate descent did not converge", {"lambda": lam, "sweeps": sweeps}
    )


def solve_l1_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float,
    weights: Optional[np.ndarray] = None,
    warm_start: Optional[Tuple[float, np.ndarray]] = None,
    tol: float = 1e-7,
    max_iter: int = 100,
    max_sweeps: int = 10000,
    screen: Optional[np.ndarray] = None,
) -> L1Solution:
    """
    Minimize the penalized log-loss at a single value of lambda.

    Coefficient changes are measured in (weighted) standard deviations of their feature.
    With `screen`, coordinate descent only visits the marked coefficients; the others are
    added back whenever they violate the optimality conditions at the solution.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    vn = _normalized_weights(y, weights)
    ybar = float(vn @ y)
    if not 0.0 < ybar < 1.0:
        raise DomainError("labels contain a single class")
    null_intercept = math.log(ybar / (1.0 - ybar))
    d = x.shape[1]

    if lam >= lambda_max(x, y, weights):
        beta = np.zeros(d)
        obj = l1_objective(x, y, null_intercept, beta, lam, weights)
        return L1Solution(null_intercept, beta, 0, (obj,))

    if warm_start is None:
        b0, beta = null_intercept, np.zeros(d)
    else:
        b0, beta = float(warm_start[0]), np.array(warm_start[1], dtype=np.float64)
    keep = np.ones(d, dtype=bool) if screen is None else np.array(screen, dtype=bool)
    keep |= beta != 0.0
    spread = np.sqrt(vn @ (x - vn @ x) ** 2)
    obj = l1_objective(x, y, b0, beta, lam, weights)
    trace = [obj]
    change = np.inf
    for iteration in range(1, max_iter + 1):
        eta = b0 + x @ beta
        prob = expit(eta)
        w = np.maximum(prob * (1.0 - prob), MIN_IRLS_WEIGHT)
        z = eta + (y - prob) / w
        ww = vn * w
        total = ww.sum()
        x_bar = (ww @ x) / total
        z_bar = float(ww @ z) / total
        centered = x[:, keep] - x_bar[keep]
        weighted = centered * ww[:, None]
        new_beta = np.zeros(d)
        new_beta[keep] = _coordinate_descent(
            weighted.T @ centered,
            weighted.T @ (z - z_bar),
            lam,
            beta[keep],
            tol * 0.1,
            max_sweeps,
        )
        new_b0 = z_bar - float(x_bar @ new_beta)

        d_beta, d_b0 = new_beta - beta, new_b0 - b0
        step = 1.0
        while True:
            cand_beta, cand_b0 = beta + step * d_beta, b0 + step * d_b0
            cand_obj = l1_objective(x, y, cand_b0, cand_beta, lam, weights)
            if cand_obj <= obj or step < 1e-10:
                break
            step *= 0.5
        if cand_obj > obj:
            # No descent left at machine precision.
            return L1Solution(b0, beta, iteration, tuple(trace))
        change = step * max(abs(d_b0), float(np.max(spread * np.abs(d_beta))) if d else 0.0)
        b0, beta, obj = cand_b0, cand_beta, cand_obj
        trace.append(obj)
        if change < tol:
            _, gradient = l1_gradient(x, y, b0, beta, weights)
            violations = ~keep & (np.abs(gradient) > lam)
            if not violations.any():
                return L1Solution(b0, beta, iteration, tuple(trace))
            keep |= violations
    raise ConvergenceError(
        "L1 logistic regression did not converge",
        {"lambda": lam, "iterations": max_iter, "last_change": change, "objective": obj},
    )


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Assign each sample to a fold so that every fold sees both classes in proportion."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=np.int64)
    for value in (0, 1):
        members = np.flatnonzero(labels == value)
        assignment[rng.permutation(members)] = np.arange(members.size) % folds
    return assignment


def standardize(
    features: np.ndarray, weights: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the features centered and scaled to unit weighted variance, with center and scale."""
    x = np.asarray(features, dtype=np.float64)
    vn = _normalized_weights(np.zeros(x.shape[0]), weights)
    center = vn @ x
    scale = np.sqrt(vn @ (x - center) ** 2)
    scale[scale <= 0.0] = 1.0
    return (x - center) / scale, center, scale


def deviance_explained(
    features: np.ndarray,
    labels: np.ndarray,
    intercept: float,
    coefficients: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> float:
    """Fraction of the null model's deviance that the fit explains."""
    y = np.asarray(labels, dtype=np.float64)
    vn = _normalized_weights(y, weights)
    ybar = float(vn @ y)
    null = -(ybar * math.log(ybar) + (1.0 - ybar) * math.log(1.0 - ybar))
    fitted = l1_objective(features, y, intercept, coefficients, 0.0, weights)
    return 1.0 - fitted / null


def _solve_path(
    x: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray],
    path: np.ndarray,
    cfg: L1Config,
) -> List[L1Solution]:
    """
    Solve along the path with warm starts and the sequential strong rule.

    The path stops early once the deviance explained saturates, or with a warning at the first
    lambda that doesn't converge. Every lambda before that is kept.
    """
    solutions: List[L1Solution] = []
    explained: List[float] = []
    screen: Optional[np.ndarray] = None
    warm: Optional[Tuple[float, np.ndarray]] = None
    for index, lam in enumerate(path):
        try:
            solution = solve_l1_logistic(
                x, y, float(lam), weights, warm, cfg.tol, cfg.max_iter, cfg.max_sweeps, screen
            )
        except ConvergenceError as exc:
            if not solutions:
                raise
            logger.warning(
                f"Stopping the lambda path at {len(solutions)} of {path.size} values: {exc}",
                extra={"lambda_index": index},
            )
            break
        solutions.append(solution)
        explained.append(
            deviance_explained(x, y, solution.intercept, solution.coefficients, weights)
        )
        if explained[-1] >= MAX_DEVIANCE_EXPLAINED:
            break
        if (
            len(explained) >= MIN_PATH_FITS
            and explained[-1] - explained[-2] < MIN_DEVIANCE_GAIN * explained[-1]
        ):
            break
        warm = (solution.intercept, solution.coefficients)
        if index + 1 < path.size:
            _, gradient = l1_gradient(x, y, solution.intercept, solution.coefficients, weights)
            screen = np.abs(gradient) >= 2.0 * path[index + 1] - lam
    return solutions


def fit_l1_logistic(
    train: TrainingSet, cfg: L1Config = L1Config(), seed: int = 0, lam: Optional[float] = None
) -> L1LogisticModel:
    """
    Fit at a fixed lambda if one is given, otherwise pick lambda by cross-validated AUC.

    With `cfg.standardize` (the default) the penalty applies to standardized features and the
    coefficients are mapped back to the original scale. The path is solved on all samples
    first; cross-validation only covers the lambdas that path reached. Ties in the mean
    held-out AUC go to the larger lambda.
    """
    train.require_both_classes()
    y = train.labels
    weights = class_weights(y, cfg.class_weight)
    if cfg.standardize:
        x, center, scale = standardize(train.features, weights)
    else:
        x, center, scale = train.features, np.zeros(train.dim), np.ones(train.dim)

    def to_model(
        solution: L1Solution, lam_: float, cv_report: Tuple[CvPoint, ...]
    ) -> L1LogisticModel:
        coefficients = solution.coefficients / scale
        return L1LogisticModel(
            solution.intercept - float(center @ coefficients),
            coefficients,
            lam_,
            cv_report,
            solution.objective_trace,
        )

    if lam is not None:
        if lam < 0.0:
            raise DomainError(f"lambda must be non-negative, got {lam}")
        solution = solve_l1_logistic(
            x, y, lam, weights, None, cfg.tol, cfg.max_iter, cfg.max_sweeps
        )
        return to_model(solution, lam, ())

    if cfg.lambda_path is not None:
        path = np.sort(np.asarray(cfg.lambda_path))[::-1]
    else:
        path = lambda_path(lambda_max(x, y, weights), cfg.n_lambda, cfg.lambda_min_ratio)
    solutions = _solve_path(x, y, weights, path, cfg)
    path = path[: len(solutions)]

    n_pos = int(y.sum())
    n_folds = min(cfg.folds, n_pos, y.size - n_pos)
    cv_report: Tuple[CvPoint, ...] = ()
    if n_folds < 2 or path.size == 1:
        selected = path.size - 1
        if path.size > 1:
            logger.warning(
                "Too few samples per class for cross-validation, using smallest lambda",
                extra={"n_positive": n_pos, "n_negative": int(y.size - n_pos)},
            )
    else:
        assignment = stratified_folds(y, n_folds, seed)
        aucs = np.empty((n_folds, path.size))
        for fold in range(n_folds):
            held_out = assignment == fold
            fold_weights = None if weights is None else weights[~held_out]
            fold_path = _solve_path(x[~held_out], y[~held_out], fold_weights, path, cfg)
            for index in range(path.size):
                # Past the end of a shorter fold path, its last fit stands in.
                solution = fold_path[min(index, len(fold_path) - 1)]
                scores = solution.intercept + x[held_out] @ solution.coefficients
                aucs[fold, index] = auc(scores, y[held_out])
        mean_auc = aucs.mean(axis=0)
        se_auc = aucs.std(axis=0, ddof=1) / math.sqrt(n_folds)
        selected = int(np.argmax(mean_auc))
        cv_report = tuple(
            CvPoint(float(lam_), float(m), float(s)) for lam_, m, s in zip(path, mean_auc, se_auc)
        )
        logger.info(
            f"Selected lambda={path[selected]:.3g} by {n_folds}-fold CV",
            extra={"cv_auc": float(mean_auc[selected]), "lambda_index": selected},
        )
    return to_model(solutions[selected], float(path[selected]), cv_report)
