"""Weight-importance scores.

The standardized-importance (SI) score of weight ``W[i, j]`` is

    S[i, j] = standardize(mu)[i, j] * ||X[:, j]||_2
    mu[i, j] = |W[i, j]| / sum_j |W[i, :]| + |W[i, j]| / sum_i |W[:, j]|

where ``standardize`` subtracts the mean of ``mu`` and divides by its
population standard deviation, both taken over the whole layer. Magnitude
and activation-weighted (``|W| * ||X[:, j]||``) scorers serve as baselines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxis, ShapeMismatch


class ScorerKind(str, enum.Enum):
    STANDARDIZED_IMPORTANCE = "si"
    MAGNITUDE = "magnitude"
    ACTIVATION_WEIGHTED = "actweighted"


def _ratio(num, den):
    # 0/0 -> 0 for all-zero rows/columns
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def relative_magnitude(W, strict: bool = False) -> np.ndarray:
    """Row-L1-normalized plus column-L1-normalized magnitude.

    An all-zero row or column makes its term 0/0; that term is taken as 0
    unless ``strict`` is set, in which case ``DegenerateAxis`` is raised.
    """
    a = np.abs(np.asarray(W, dtype=np.float64))
    row = a.sum(axis=1, keepdims=True)
    col = a.sum(axis=0, keepdims=True)
    if strict and (np.any(row == 0) or np.any(col == 0)):
        raise DegenerateAxis("weight matrix has an all-zero row or column")
    return _ratio(a, row) + _ratio(a, col)


def standardize(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    std = mu.std()
    if std == 0:
        return np.zeros_like(mu)
    return (mu - mu.mean()) / std


def feature_norms(X) -> np.ndarray:
    return np.linalg.norm(np.asarray(X, dtype=np.float64), axis=0)


def _check_shapes(W, X):
    if np.shape(X)[1] != np.shape(W)[1]:
        raise ShapeMismatch(f"X has {np.shape(X)[1]} features, W has {np.shape(W)[1]} columns")


@dataclass(frozen=True)
class SIStatistics:
    """Layer-wide quantities frozen before quantization starts.

    Block scoring reuses them so that scores do not depend on the block
    size: the first block scored this way equals the matching slice of
    ``si_scores`` on the full layer.
    """

    row_l1: np.ndarray
    col_l1: np.ndarray
    mean: float
    std: float
    norms: np.ndarray

    @classmethod
    def from_layer(cls, W, X, strict=False):
        _check_shapes(W, X)
        a = np.abs(np.asarray(W, dtype=np.float64))
        mu = relative_magnitude(a, strict=strict)
        return cls(a.sum(axis=1), a.sum(axis=0), float(mu.mean()), float(mu.std()),
                   feature_norms(X))

    def score_block(self, W_block, start: int) -> np.ndarray:
        a = np.abs(np.asarray(W_block, dtype=np.float64))
        stop = start + a.shape[1]
        mu = _ratio(a, self.row_l1[:, None]) + _ratio(a, self.col_l1[None, start:stop])
        if self.std == 0:
            z = np.zeros_like(mu)
        else:
            z = (mu - self.mean) / self.std
        return z * self.norms[None, start:stop]


def si_scores(W, X, strict: bool = False) -> np.ndarray:
    _check_shapes(W, X)
    return standardize(relative_magnitude(W, strict=strict)) * feature_norms(X)[None, :]


def baseline_scores(kind, W, X) -> np.ndarray:
    kind = ScorerKind(kind)
    _check_shapes(W, X)
    if kind is ScorerKind.STANDARDIZED_IMPORTANCE:
        return si_scores(W, X)
    mag = np.abs(np.asarray(W, dtype=np.float64))
    if kind is ScorerKind.MAGNITUDE:
        return mag
    return mag * feature_norms(X)[None, :]


class BlockScorer:
    """Scores column blocks of a layer whose tail may have been updated."""

    def __init__(self, kind, W, X):
        self.kind = ScorerKind(kind)
        _check_shapes(W, X)
        self._norms = feature_norms(X)
        self._stats = (SIStatistics.from_layer(W, X)
                       if self.kind is ScorerKind.STANDARDIZED_IMPORTANCE else None)

    def __call__(self, W_block, start: int) -> np.ndarray:
        if self._stats is not None:
            return self._stats.score_block(W_block, start)
        mag = np.abs(np.asarray(W_block, dtype=np.float64))
        if self.kind is ScorerKind.MAGNITUDE:
            return mag
        return mag * self._norms[None, start:start + mag.shape[1]]
