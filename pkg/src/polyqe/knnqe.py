"""Non-parametric score predictors over retrieved neighbors.

Two variants: averaging base-model scores of neighboring translations of
the same source, and averaging retrieved gold scores from an annotated
knowledge base. Both support a weighted average with weights
exp(-d/gamma), d being one minus the cosine similarity used for retrieval.
``math.inf`` is the first-class "simple average" bandwidth: it yields
exactly uniform weights rather than approximating them with a large float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import validation
from .corpus import AnnotatedSegment
from .metrics import mae
from .retrieval import RetrievalIndex, RetrievalQuery, topk

DEFAULT_GAMMA_GRID = (1e-4, 1e-2, 1.0, math.inf)


@dataclass(frozen=True)
class KernelConfig:
    gamma: float = math.inf

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def kernel_weights(similarities, gamma: float) -> np.ndarray:
    """Normalized weights exp(-(1 - sim)/gamma) over one neighbor set.

    Weights are computed relative to the smallest distance in the set, which
    leaves the normalized result unchanged but avoids underflow to 0/0 for
    tiny bandwidths.
    """
    sims = validation.as_float_vector(similarities, "similarities")
    if gamma == math.inf:
        return np.full(sims.size, 1.0 / sims.size)
    distances = 1.0 - sims
    shifted = distances - distances.min()
    weights = np.exp(-shifted / gamma)
    return weights / weights.sum()


def weighted_score_average(scores, similarities, kernel: KernelConfig) -> float:
    scores = validation.as_float_vector(scores, "scores")
    sims = validation.as_float_vector(similarities, "similarities")
    if sims.size != scores.size:
        raise ValueError("scores and similarities differ in length")
    if kernel.gamma == math.inf:
        # symbolic infinity IS the simple average, bit for bit
        return float(np.mean(scores))
    return float(kernel_weights(sims, kernel.gamma) @ scores)


def knn_polycand(
    pool: Sequence[tuple[AnnotatedSegment, float]],
    base_scorer: Callable[[AnnotatedSegment], float],
    k: int = 1,
    kernel: Optional[KernelConfig] = None,
) -> float:
    """Weighted average of base-model scores over the k nearest alternatives.

    ``pool`` is the ranked same-source pool from the retrieval module:
    (candidate segment, cosine similarity to the query translation) pairs,
    similarity descending.
    """
    if not pool:
        raise ValueError("empty candidate pool")
    if k < 1:
        raise ValueError("k must be >= 1")
    kernel = kernel or KernelConfig()
    neighbors = pool[:k]
    scores = [float(base_scorer(seg)) for seg, _ in neighbors]
    sims = [sim for _, sim in neighbors]
    return weighted_score_average(scores, sims, kernel)


def knn_polyic(
    query: RetrievalQuery,
    index: RetrievalIndex,
    k: int = 1,
    kernel: Optional[KernelConfig] = None,
) -> float:
    """Weighted average of retrieved gold scores from the knowledge base."""
    if not len(index):
        raise ValueError("empty knowledge base")
    if k < 1:
        raise ValueError("k must be >= 1")
    kernel = kernel or KernelConfig()
    neighbors = topk(index, replace(query, k=k))
    if not neighbors:
        raise ValueError("retrieval returned no neighbors (filters too strict?)")
    scores = []
    for seg_id, _ in neighbors:
        payload = index.payload(seg_id)
        if payload.score is None:
            raise ValueError(f"knowledge-base segment '{seg_id}' has no gold score")
        scores.append(payload.score)
    sims = [sim for _, sim in neighbors]
    return weighted_score_average(scores, sims, kernel)


def tune_gamma(
    predict: Callable[[float], Sequence[float]],
    gold: Sequence[float],
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
) -> float:
    """Pick the grid bandwidth minimizing validation MAE (ties: first wins)."""
    best_gamma, best_mae = None, None
    for gamma in grid:
        error = mae(list(predict(gamma)), list(gold))
        if best_mae is None or error < best_mae:
            best_gamma, best_mae = gamma, error
    return best_gamma


class KernelKnnRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn style kernel-weighted nearest-neighbor score regressor.

    fit(X, y) stores unit-normalized key rows with their scores; predict(X)
    returns for each query row the kernel-weighted average of the scores of
    its k most cosine-similar training rows.
    """

    def __init__(self, k: int = 5, gamma: float = math.inf):
        self.k = k
        self.gamma = gamma

    def fit(self, X, y) -> "KernelKnnRegressor":
        X = validation.as_float_matrix(X)
        y = validation.as_float_vector(y, "y")
        if y.size != X.shape[0]:
            raise ValueError("X and y disagree on the number of rows")
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero-norm key row")
        self.keys_ = X / norms
        self.scores_ = y
        KernelConfig(gamma=self.gamma)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "keys_"):
            raise ValueError("regressor is not fitted")
        X = validation.as_float_matrix(X)
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero-norm query row")
        sims = (X / norms) @ self.keys_.T
        np.clip(sims, -1.0, 1.0, out=sims)
        k = min(self.k, self.keys_.shape[0])
        kernel = KernelConfig(gamma=self.gamma)
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            order = np.argsort(-sims[i], kind="stable")[:k]
            out[i] = weighted_score_average(self.scores_[order], sims[i][order], kernel)
        return out
