"""Calibration Hessian and block-wise error propagation.

``H = 2 * X.T @ X`` is the feature-by-feature Hessian of the layer's
squared output error. ``hc`` is the upper Cholesky factor of the damped
inverse ``(H + lam * I)^-1``. After a column block ``[b, e)`` is quantized,
its error, scaled column-wise by ``1 / hc[j, j]``, is pushed into the
not-yet-quantized columns through the rows ``hc[b:e, e:]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, ValidationError

MAX_RETRIES = 5


@dataclass(frozen=True)
class HessianContext:
    H: np.ndarray
    hc: np.ndarray
    lambda_used: float
    retries: int = 0

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.hc)


def build_hessian(X, lambda_rel: float = 0.01) -> HessianContext:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("calibration matrix needs at least one row")
    if not lambda_rel > 0:
        raise ValidationError("lambda_rel must be positive")
    H = 2.0 * (X.T @ X)
    d = H.shape[0]
    base = float(np.mean(np.diag(H)))
    if base <= 0:
        base = 1.0  # all-zero calibration: damping alone defines the factor
    lam = lambda_rel * base
    for attempt in range(MAX_RETRIES + 1):
        try:
            lower = scipy.linalg.cholesky(H + lam * np.eye(d), lower=True)
            inv = scipy.linalg.cho_solve((lower, True), np.eye(d))
            inv = (inv + inv.T) / 2.0
            hc = scipy.linalg.cholesky(inv, lower=False)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if np.all(np.isfinite(hc)) and np.all(np.diag(hc) > 0):
            return HessianContext(H, hc, lam, attempt)
        lam *= 10.0
    raise NotPositiveDefinite(f"damped Hessian not positive definite after {MAX_RETRIES} retries")


def compensate_block(W, B_block, ctx: HessianContext, start: int, stop: int) -> None:
    """Update ``W[:, stop:]`` in place; columns before ``stop`` are untouched."""
    if not 0 <= start < stop <= W.shape[1]:
        raise ValidationError(f"block [{start}, {stop}) out of range")
    if stop == W.shape[1]:
        return
    err = (W[:, start:stop] - B_block) / np.diag(ctx.hc)[start:stop][None, :]
    W[:, stop:] -= err @ ctx.hc[start:stop, stop:]
