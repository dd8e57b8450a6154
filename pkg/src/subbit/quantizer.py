"""Structured binarization of one column block.

A block is processed in four steps:

1. an N:M mask keeps the ``n`` best-scoring entries of every bank of ``m``
   consecutive columns (banks aligned to absolute column 0 of the layer);
2. salient columns are chosen from the Hessian-scaled saliency
   ``sum_i W[i, j]**2 / hc[j]**2`` by searching the best prefix of the
   ranking;
3. kept salient entries get two stacked row-wise binarizations (the second
   one fits the residual of the first);
4. kept non-salient entries are split by magnitude into sparse
   (``|w| > p2``), intermediate (``p1 < |w| <= p2``) and dense
   (``|w| <= p1``) regions, each binarized on its own, with ``p2 = sigma * p1``
   picked by a grid search.

Every binarization is row-wise: a row's scale is the mean absolute value of
its supported entries and ``sign(0) = +1``. Pruned entries never enter any
support.
"""

from __future__ import annotations

import enum
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .allocation import NMRatio
from .errors import DegenerateHessian, NoFeasibleCandidate, ValidationError

# relative slack when comparing search errors; within it the earlier
# candidate (fewer salient columns, smaller p1) wins
TIE_RTOL = 1e-12


class Region(enum.IntEnum):
    PRUNED = 0
    SALIENT = 1
    SPARSE = 2
    INTERMEDIATE = 3
    DENSE = 4


def _same(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


class _ArrayEq:
    """Field-wise equality that compares ndarrays bit for bit."""

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return all(_same(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    __hash__ = None


@dataclass(eq=False)
class BinaryAtom(_ArrayEq):
    """``alpha[i] * signs[i, j]``; ``signs`` is +-1 on the support, 0 elsewhere."""

    alpha: np.ndarray
    signs: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.signs != 0

    def dense(self) -> np.ndarray:
        return self.alpha.astype(np.float64)[:, None] * self.signs

    @classmethod
    def empty(cls, rows, cols, scale_dtype=np.float32):
        return cls(np.zeros(rows, dtype=scale_dtype), np.zeros((rows, cols), dtype=np.int8))


@dataclass(frozen=True)
class TrisectionParams:
    p1: float
    p2: float

    @property
    def sigma_ratio(self) -> float:
        return self.p2 / self.p1 if self.p1 > 0 else float("nan")


@dataclass(eq=False)
class BlockQuantResult(_ArrayEq):
    col_start: int
    col_end: int
    nm_mask: np.ndarray
    salient_cols: np.ndarray
    salient_atoms: tuple  # (original, residual)
    nonsalient_atoms: tuple  # (sparse, intermediate, dense)
    trisection: TrisectionParams
    region_codes: np.ndarray

    @property
    def width(self):
        return self.col_end - self.col_start

    def dense(self) -> np.ndarray:
        out = np.zeros(self.nm_mask.shape, dtype=np.float64)
        for atom in (*self.salient_atoms, *self.nonsalient_atoms):
            out += atom.dense()
        return out

    def salient_mask(self) -> np.ndarray:
        return self.region_codes == Region.SALIENT

    def nonsalient_mask(self) -> np.ndarray:
        return self.region_codes >= Region.SPARSE

    def check(self, n: int, m: int) -> None:
        """Raise ``ValidationError`` if a structural invariant is broken."""
        mask, codes = self.nm_mask, self.region_codes
        if not np.array_equal(codes == Region.PRUNED, ~mask):
            raise ValidationError("PRUNED codes must be exactly the unmasked entries")
        col_sel = np.zeros(self.width, dtype=bool)
        col_sel[self.salient_cols] = True
        if not np.array_equal(codes == Region.SALIENT, mask & col_sel[None, :]):
            raise ValidationError("SALIENT codes must be the kept entries of salient columns")
        for atom, region in zip(self.nonsalient_atoms,
                                (Region.SPARSE, Region.INTERMEDIATE, Region.DENSE)):
            if not np.array_equal(atom.support, codes == region):
                raise ValidationError(f"{region.name} atom support disagrees with region codes")
        for atom in self.salient_atoms:
            if not np.array_equal(atom.support, codes == Region.SALIENT):
                raise ValidationError("salient atom support disagrees with region codes")
        for start, stop in bank_pieces(self.col_start, self.col_end, m):
            kept = mask[:, start - self.col_start:stop - self.col_start].sum(axis=1)
            if np.any(kept != min(n, stop - start)):
                raise ValidationError(f"bank [{start}, {stop}) violates {n}:{m}")


@dataclass(eq=False)
class StructuredBinaryLayer(_ArrayEq):
    name: str
    rows: int
    cols: int
    block_size: int
    nm: NMRatio
    blocks: list

    def __post_init__(self):
        self.blocks = list(self.blocks)

    def check(self) -> None:
        pos = 0
        for blk in self.blocks:
            if blk.col_start != pos or blk.col_end <= blk.col_start:
                raise ValidationError("blocks must tile the columns without gaps or overlap")
            blk.check(self.nm.n, self.nm.m)
            pos = blk.col_end
        if pos != self.cols:
            raise ValidationError("blocks do not cover every column")

    def region_codes(self) -> np.ndarray:
        return np.concatenate([b.region_codes for b in self.blocks], axis=1)

    def mask(self) -> np.ndarray:
        return np.concatenate([b.nm_mask for b in self.blocks], axis=1)


@contextmanager
def stage(timer, name):
    if timer is None:
        yield
        return
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timer[name] = timer.get(name, 0.0) + time.perf_counter() - t0


def _tie_first(errors, scale):
    """Index of the first error within the tie slack of the minimum."""
    errors = np.asarray(errors)
    tol = TIE_RTOL * max(float(scale), 1e-300)
    return int(np.flatnonzero(errors <= errors.min() + tol)[0])


def _support(W, support):
    return np.ones(W.shape, dtype=bool) if support is None else np.asarray(support, dtype=bool)


# -- primitives -------------------------------------------------------------

def binarize_rowwise(W, support=None, scale_dtype=np.float64) -> BinaryAtom:
    """Per row: ``alpha = mean |w|`` over the support, ``sign(w)`` with sign(0)=+1.

    Rows with an empty support get ``alpha = 0``. ``scale_dtype`` sets the
    storage precision of ``alpha``; float32 is what the packed format holds.
    """
    W = np.asarray(W, dtype=np.float64)
    support = _support(W, support)
    cnt = support.sum(axis=1)
    total = np.where(support, np.abs(W), 0.0).sum(axis=1)
    alpha = np.divide(total, cnt, out=np.zeros_like(total), where=cnt > 0)
    signs = np.where(W >= 0, 1, -1).astype(np.int8)
    signs[~support] = 0
    return BinaryAtom(alpha.astype(scale_dtype), signs)


def residual_binarize(W, support=None, scale_dtype=np.float64):
    W = np.asarray(W, dtype=np.float64)
    support = _support(W, support)
    first = binarize_rowwise(W, support, scale_dtype)
    residual = np.where(support, W - first.dense(), 0.0)
    second = binarize_rowwise(residual, support, scale_dtype)
    return first, second


def bank_pieces(start: int, stop: int, m: int):
    """Intersections of the absolute banks ``[k*m, (k+1)*m)`` with ``[start, stop)``."""
    pos = start
    while pos < stop:
        end = min((pos // m + 1) * m, stop)
        yield pos, end
        pos = end


def apply_nm_mask(scores, n: int, m: int, bank_offset: int = 0) -> np.ndarray:
    """Keep the ``n`` highest scores per row in every bank; ties go to the
    lower column. A bank cut short by the block edge keeps ``min(n, width)``."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= n <= m:
        raise ValidationError(f"invalid N:M {n}:{m}")
    rows, width = scores.shape
    mask = np.zeros((rows, width), dtype=bool)
    row_idx = np.arange(rows)[:, None]
    for start, stop in bank_pieces(bank_offset, bank_offset + width, m):
        lo, hi = start - bank_offset, stop - bank_offset
        keep = min(n, hi - lo)
        top = np.argsort(-scores[:, lo:hi], axis=1, kind="stable")[:, :keep]
        mask[row_idx, lo + top] = True
    return mask


def column_saliency(W, hc_diag) -> np.ndarray:
    hc_diag = np.asarray(hc_diag, dtype=np.float64)
    if hc_diag.shape != (np.shape(W)[1],):
        raise ValidationError("Hessian diagonal length must equal block width")
    if not np.all(np.isfinite(hc_diag)) or np.any(hc_diag <= 0):
        raise DegenerateHessian("Hessian Cholesky diagonal must be finite and positive")
    W = np.asarray(W, dtype=np.float64)
    return np.abs(W * W / (hc_diag * hc_diag)[None, :]).sum(axis=0)


def salient_candidates(width: int, budget_cap: float) -> int:
    return min(max(math.ceil(budget_cap * width - 1e-9), 1), width)


def select_salient(W_block, hc_diag, budget_cap: float = 0.3, support=None,
                   backend=None) -> np.ndarray:
    """Sorted block-local salient columns.

    ``W_block`` should already be masked; ``support`` defaults to its
    nonzero pattern only if given explicitly, otherwise every entry counts.
    The best prefix of the top ``ceil(budget_cap * width)`` saliency ranking
    is the one minimizing the error of binarizing prefix and complement
    separately; ties keep fewer columns.
    """
    W = np.asarray(W_block, dtype=np.float64)
    support = _support(W, support)
    W = np.where(support, W, 0.0)
    sal = column_saliency(W, hc_diag)
    k = salient_candidates(W.shape[1], budget_cap)
    order = np.argsort(-sal, kind="stable")[:k]
    errs = kernels.prefix_errors(np.abs(W), support, order, k, backend=backend)
    best = _tie_first(errs, np.sum(W * W))
    return np.sort(order[:best + 1])


def trisection_grid(max_abs: float, sigma_ratio: float = 2.0, grid_points: int = 160):
    """Feasible ``(p1, p2)`` candidates, rounded to float32 as stored."""
    if sigma_ratio <= 1:
        raise ValidationError("sigma_ratio must exceed 1")
    if grid_points < 2:
        raise ValidationError("grid_points must be >= 2")
    fracs = np.linspace(0.1, 0.9, grid_points)
    p1 = (fracs * max_abs).astype(np.float32).astype(np.float64)
    p2 = (sigma_ratio * p1).astype(np.float32).astype(np.float64)
    keep = p2 <= 0.9 * max_abs
    return p1[keep], p2[keep]


def trisection_search(W_ns, sigma_ratio: float = 2.0, grid_points: int = 160, support=None,
                      backend=None) -> TrisectionParams:
    W = np.asarray(W_ns, dtype=np.float64)
    support = _support(W, support)
    if not support.any():
        raise ValidationError("trisection search needs at least one supported entry")
    absw = np.where(support, np.abs(W), 0.0)
    max_abs = float(absw.max())
    p1s, p2s = trisection_grid(max_abs, sigma_ratio, grid_points)
    if p1s.size == 0:
        raise NoFeasibleCandidate(f"sigma_ratio={sigma_ratio} leaves no feasible break-point")
    errs = kernels.trisection_errors(absw, support, p1s, p2s, backend=backend)
    best = _tie_first(errs, np.sum(absw * absw))
    return TrisectionParams(float(p1s[best]), float(p2s[best]))


def trisection_regions(W, params: TrisectionParams, support=None) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    support = _support(W, support)
    a = np.abs(W)
    codes = np.where(a > params.p2, Region.SPARSE,
                     np.where(a > params.p1, Region.INTERMEDIATE, Region.DENSE)).astype(np.uint8)
    codes[~support] = Region.PRUNED
    return codes


def trisection_quantize(W_ns, params: TrisectionParams, support=None, scale_dtype=np.float64):
    """Returns ``(sparse, intermediate, dense, codes)``; unsupported entries
    carry code ``PRUNED``."""
    W = np.asarray(W_ns, dtype=np.float64)
    codes = trisection_regions(W, params, support)
    atoms = tuple(binarize_rowwise(W, codes == region, scale_dtype)
                  for region in (Region.SPARSE, Region.INTERMEDIATE, Region.DENSE))
    return (*atoms, codes)


def trisection_error(W_ns, params: TrisectionParams, support=None) -> float:
    W = np.asarray(W_ns, dtype=np.float64)
    support = _support(W, support)
    sparse, inter, dense, _ = trisection_quantize(W, params, support)
    approx = sparse.dense() + inter.dense() + dense.dense()
    return float(np.sum(np.where(support, W - approx, 0.0) ** 2))


# -- block ------------------------------------------------------------------

def quantize_block(W_block, scores, n: int, m: int, hc_diag, col_start: int = 0, *,
                   sigma_ratio: float = 2.0, grid_points: int = 160, salient_cap: float = 0.3,
                   timer=None, backend=None) -> BlockQuantResult:
    W = np.asarray(W_block, dtype=np.float64)
    rows, width = W.shape
    with stage(timer, "mask"):
        mask = apply_nm_mask(scores, n, m, col_start)
    with stage(timer, "salient"):
        cols = select_salient(W, hc_diag, salient_cap, support=mask, backend=backend)
        col_sel = np.zeros(width, dtype=bool)
        col_sel[cols] = True
        sal_support = mask & col_sel[None, :]
        ns_support = mask & ~col_sel[None, :]
        salient_atoms = residual_binarize(W, sal_support, np.float32)
    with stage(timer, "trisection"):
        if ns_support.any():
            params = trisection_search(W, sigma_ratio, grid_points, ns_support, backend=backend)
        else:
            params = TrisectionParams(0.0, 0.0)
        sparse, inter, dense, codes = trisection_quantize(W, params, ns_support, np.float32)
    codes[sal_support] = Region.SALIENT
    return BlockQuantResult(
        col_start=col_start,
        col_end=col_start + width,
        nm_mask=mask,
        salient_cols=cols.astype(np.int64),
        salient_atoms=salient_atoms,
        nonsalient_atoms=(sparse, inter, dense),
        trisection=params,
        region_codes=codes,
    )


def reconstruct(layer: StructuredBinaryLayer) -> np.ndarray:
    out = np.zeros((layer.rows, layer.cols), dtype=np.float64)
    for blk in layer.blocks:
        out[:, blk.col_start:blk.col_end] = blk.dense()
    return out.astype(np.float32)
