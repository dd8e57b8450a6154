"""End-to-end layer and model quantization, evaluation and the sign-flip probe."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from .allocation import (
    AllocationPlan,
    NMRatio,
    Strategy,
    assign_nm,
    layer_importance,
    sin_shape_plan,
    uniform_plan,
)
from .compensation import build_hessian, compensate_block
from .errors import SubbitError, ValidationError
from .packing import bit_report, encode
from .quantizer import (
    BinaryAtom,
    BlockQuantResult,
    Region,
    StructuredBinaryLayer,
    quantize_block,
    reconstruct,
    stage,
)
from .scoring import BlockScorer, ScorerKind
from .tensorio import LayerRecord, ModelManifest

STAGES = ("score", "mask", "salient", "trisection", "compensate")


@dataclass(frozen=True)
class QuantConfig:
    scorer: ScorerKind = ScorerKind.STANDARDIZED_IMPORTANCE
    strategy: Strategy = Strategy.ADAPTIVE
    nm: NMRatio = NMRatio(4, 8)
    block_size: int = 128
    lambda_rel: float = 0.01
    sigma_ratio: float = 2.0
    grid_points: int = 160
    salient_cap: float = 0.3
    renormalize: bool = True
    compensate: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scorer", ScorerKind(self.scorer))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.block_size < self.nm.m:
            raise ValidationError(f"block size {self.block_size} must be >= m={self.nm.m}")
        if self.grid_points < 2 or not 0 < self.salient_cap <= 1:
            raise ValidationError("grid_points must be >= 2 and salient_cap in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scorer"] = self.scorer.value
        d["strategy"] = self.strategy.value
        d["nm"] = str(self.nm)
        return d


def quantize_layer(W, X, nm: NMRatio, config: QuantConfig = QuantConfig(), name: str = "layer",
                   timer=None, backend=None) -> StructuredBinaryLayer:
    """Quantize one weight matrix block by block, compensating the tail after
    each block unless ``config.compensate`` is off."""
    W = np.array(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    rows, cols = W.shape
    ctx = build_hessian(X, config.lambda_rel)
    hc_diag = ctx.diag
    scorer = BlockScorer(config.scorer, W, X)
    beta = config.block_size
    blocks = []
    for start in range(0, cols, beta):
        stop = min(start + beta, cols)
        try:
            with stage(timer, "score"):
                scores = scorer(W[:, start:stop], start)
            blk = quantize_block(
                W[:, start:stop], scores, nm.n, nm.m, hc_diag[start:stop], start,
                sigma_ratio=config.sigma_ratio, grid_points=config.grid_points,
                salient_cap=config.salient_cap, timer=timer, backend=backend)
            with stage(timer, "compensate"):
                if config.compensate:
                    compensate_block(W, blk.dense(), ctx, start, stop)
        except SubbitError as exc:
            raise type(exc)(f"layer {name!r}, block [{start}, {stop}): {exc}") from exc
        blocks.append(blk)
    return StructuredBinaryLayer(name, rows, cols, beta, nm, blocks)


def evaluate_layer(W_orig, layer: StructuredBinaryLayer, X) -> dict:
    """Frobenius and output errors of ``reconstruct(layer)`` against the
    original weights, with the squared error split by region code."""
    W = np.asarray(W_orig, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    B = reconstruct(layer).astype(np.float64)
    diff = W - B
    sq = diff * diff
    codes = layer.region_codes()
    breakdown = {r.name.lower(): float(sq[codes == r].sum()) for r in Region}
    return {
        "frobenius_error": float(np.sqrt(sq.sum())),
        "output_error": float(np.linalg.norm(diff @ X.T)),
        "squared_error": float(sq.sum()),
        "breakdown": breakdown,
    }


# -- sign flips ---------------------------------------------------------------

def nonsalient_count(layer: StructuredBinaryLayer) -> int:
    return int(sum(np.count_nonzero(b.nonsalient_mask()) for b in layer.blocks))


def flip_signs(layer: StructuredBinaryLayer, positions) -> StructuredBinaryLayer:
    """Copy of ``layer`` with the given kept non-salient sign bits negated.

    Positions index the non-salient entries in stream order: blocks left to
    right, row-major within a block.
    """
    positions = np.asarray(positions, dtype=np.int64)
    total = nonsalient_count(layer)
    if positions.size and (positions.min() < 0 or positions.max() >= total):
        raise ValidationError("flip position out of range")
    blocks = []
    offset = 0
    for blk in layer.blocks:
        ns = blk.nonsalient_mask()
        count = int(ns.sum())
        local = positions[(positions >= offset) & (positions < offset + count)] - offset
        if local.size:
            flip = np.zeros(count, dtype=bool)
            flip[local] = True
            flip_mask = np.zeros(ns.shape, dtype=bool)
            flip_mask[ns] = flip
            atoms = tuple(BinaryAtom(a.alpha, np.where(flip_mask, -a.signs, a.signs).astype(np.int8))
                          for a in blk.nonsalient_atoms)
            blk = BlockQuantResult(blk.col_start, blk.col_end, blk.nm_mask, blk.salient_cols,
                                   blk.salient_atoms, atoms, blk.trisection, blk.region_codes)
        blocks.append(blk)
        offset += count
    return StructuredBinaryLayer(layer.name, layer.rows, layer.cols, layer.block_size,
                                 layer.nm, blocks)


def flip_experiment(layer: StructuredBinaryLayer, X, fractions, trials: int = 20, seed: int = 0,
                    W_orig=None) -> list[tuple[float, float, float]]:
    """Output error after negating random non-salient sign bits.

    For each fraction ``p`` and trial, ``floor(p * count)`` distinct
    non-salient positions are flipped. Errors are measured against
    ``W_orig`` (the unflipped reconstruction when omitted). Returns
    ``(fraction, mean, std)`` rows.
    """
    X = np.asarray(X, dtype=np.float64)
    W = (reconstruct(layer) if W_orig is None else np.asarray(W_orig)).astype(np.float64)
    total = nonsalient_count(layer)
    rng = Generator(Philox(seed))
    rows = []
    for p in fractions:
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"flip fraction {p} outside [0, 1]")
        k = int(np.floor(p * total))
        errs = []
        for _ in range(trials):
            pos = rng.choice(total, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
            B = reconstruct(flip_signs(layer, pos)).astype(np.float64)
            errs.append(float(np.linalg.norm((W - B) @ X.T)))
        rows.append((p, float(np.mean(errs)), float(np.std(errs))))
    return rows


# -- model --------------------------------------------------------------------

@dataclass
class QuantReport:
    config: dict
    plan: dict
    layers: list
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {"config": self.config, "plan": self.plan, "layers": self.layers}
        if include_timings:
            d["timings"] = self.timings
        return d


def make_plan(records, config: QuantConfig) -> AllocationPlan:
    names = [r.name for r in records]
    sizes = [r.weight.size for r in records]
    target, m = config.nm.ratio, config.nm.m
    if config.strategy is Strategy.ADAPTIVE:
        alphas = layer_importance([r.weight for r in records])
        return assign_nm(alphas, target, m, config.renormalize, names, sizes)
    if config.strategy is Strategy.UNIFORM:
        return uniform_plan(len(records), target, m, names, sizes)
    return sin_shape_plan(len(records), target, m, names, sizes)


def _layer_job(rec: LayerRecord, nm: NMRatio, config: QuantConfig):
    timer = {s: 0.0 for s in STAGES}
    layer = quantize_layer(rec.weight, rec.calibration, nm, config, rec.name, timer)
    t0 = time.perf_counter()
    blob = encode(layer)
    timer["pack"] = time.perf_counter() - t0
    return layer, blob, timer


def quantize_model(model, config: QuantConfig = QuantConfig(), out_dir=None):
    """Quantize every layer of a manifest (or list of ``LayerRecord``).

    Returns ``(packed, report)`` where ``packed`` maps layer name to bytes.
    With ``out_dir`` the packed layers are also written as ``<name>.stbl``.
    """
    records = model.load_layers() if isinstance(model, ModelManifest) else list(model)
    if not records:
        raise ValidationError("model has no layers")
    plan = make_plan(records, config)

    jobs = [(rec, plan.nm(rec.name), config) for rec in records]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda j: _layer_job(*j), jobs))
    else:
        results = [_layer_job(*j) for j in jobs]

    packed, entries, timings = {}, [], {}
    for rec, (layer, blob, timer) in zip(records, results):
        packed[rec.name] = blob
        ev = evaluate_layer(rec.weight, layer, rec.calibration)
        bits = bit_report(layer, len(blob))
        p1 = [b.trisection.p1 for b in layer.blocks]
        p2 = [b.trisection.p2 for b in layer.blocks]
        entries.append({
            "name": rec.name,
            "nm": str(layer.nm),
            "file": f"{rec.name}.stbl",
            "packed_bytes": len(blob),
            "bits": bits.to_dict(),
            "reconstruction_error": ev["frobenius_error"],
            "output_error": ev["output_error"],
            "salient_fraction": bits.r_salient,
            "trisection": {"blocks": len(p1), "p1_mean": float(np.mean(p1)),
                           "p2_mean": float(np.mean(p2))},
        })
        timings[rec.name] = timer
    report = QuantReport(config.to_dict(), plan.to_dict(), entries, timings)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, blob in packed.items():
            (out_dir / f"{name}.stbl").write_bytes(blob)
    return packed, report
