"""Tensor files, model manifests and deterministic synthetic layers.

Tensors on disk are raw little-endian float32, row-major, with no header;
their shapes live in ``manifest.json``::

    {"version": 1,
     "layers": [{"name": "l0", "weight": "l0.w.f32", "calib": "l0.x.f32",
                 "n": 64, "m": 64, "r": 128}]}

In memory a tensor is a 2-D C-contiguous ``float32`` ndarray.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import Philox

from .errors import (
    MissingFile,
    NonFiniteValue,
    SchemaViolation,
    ShapeMismatch,
    SizeMismatch,
    ValidationError,
)

MANIFEST_VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class LayerRecord:
    name: str
    weight: np.ndarray
    calibration: np.ndarray

    def __post_init__(self):
        if self.calibration.shape[1] != self.weight.shape[1]:
            raise ShapeMismatch(
                f"layer {self.name!r}: calibration has {self.calibration.shape[1]} "
                f"features but weight has {self.weight.shape[1]} input columns"
            )


@dataclass(frozen=True)
class LayerEntry:
    name: str
    weight: Path
    calib: Path
    n: int
    m: int
    r: int

    def load(self) -> LayerRecord:
        return LayerRecord(
            self.name,
            load_tensor(self.weight, self.n, self.m),
            load_tensor(self.calib, self.r, self.m),
        )


@dataclass(frozen=True)
class ModelManifest:
    version: int
    layers: tuple[LayerEntry, ...]
    root: Path

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def load_layers(self) -> list[LayerRecord]:
        return [entry.load() for entry in self.layers]


def check_tensor(t, what="tensor") -> np.ndarray:
    """Validate and normalize to a C-contiguous float32 matrix."""
    arr = np.ascontiguousarray(t, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{what}: expected a 2-D matrix, got shape {arr.shape}")
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        raise NonFiniteValue(f"{what}: non-finite value at flat index {bad[0]}", int(bad[0]))
    return arr


def load_tensor(path, rows: int, cols: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"tensor file not found: {path}")
    raw = path.read_bytes()
    expected = rows * cols * 4
    if len(raw) != expected:
        raise SizeMismatch(
            f"{path}: {len(raw)} bytes on disk, {rows}x{cols} float32 needs {expected}"
        )
    arr = np.frombuffer(raw, dtype=_LE_F32).astype(np.float32).reshape(rows, cols)
    return check_tensor(arr, str(path))


def save_tensor(path, t) -> None:
    arr = check_tensor(t)
    Path(path).write_bytes(arr.astype(_LE_F32).tobytes())


def _require(cond, msg):
    if not cond:
        raise SchemaViolation(msg)


def load_manifest(path) -> ModelManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: not valid UTF-8 JSON ({exc})") from exc
    _require(isinstance(doc, dict), "manifest must be a JSON object")
    _require(doc.get("version") == MANIFEST_VERSION,
             f"unsupported manifest version {doc.get('version')!r}")
    layers = doc.get("layers")
    _require(isinstance(layers, list) and layers, "manifest needs a non-empty 'layers' list")

    root = path.parent
    seen = set()
    entries = []
    for i, item in enumerate(layers):
        _require(isinstance(item, dict), f"layer #{i} is not an object")
        name = item.get("name")
        _require(isinstance(name, str) and name, f"layer #{i}: missing name")
        _require(name not in seen, f"layer {name!r}: duplicate name")
        seen.add(name)
        for key in ("weight", "calib"):
            _require(isinstance(item.get(key), str), f"layer {name!r}: '{key}' must be a path string")
        for key in ("n", "m", "r"):
            v = item.get(key)
            _require(isinstance(v, int) and not isinstance(v, bool) and v >= 1,
                     f"layer {name!r}: '{key}' must be a positive integer")
        entry = LayerEntry(name, root / item["weight"], root / item["calib"],
                           item["n"], item["m"], item["r"])
        for f, rows in ((entry.weight, entry.n), (entry.calib, entry.r)):
            if not f.is_file():
                raise MissingFile(f"layer {name!r}: file not found: {f}")
            size = f.stat().st_size
            if size != rows * entry.m * 4:
                raise ShapeMismatch(
                    f"layer {name!r}: {f.name} has {size} bytes, expected "
                    f"{rows}x{entry.m} float32 ({rows * entry.m * 4} bytes)"
                )
        entries.append(entry)
    return ModelManifest(MANIFEST_VERSION, tuple(entries), root)


def write_manifest(out_dir, records) -> Path:
    """Write ``records`` as ``.f32`` files plus ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    for rec in records:
        w_name, x_name = f"{rec.name}.weight.f32", f"{rec.name}.calib.f32"
        save_tensor(out_dir / w_name, rec.weight)
        save_tensor(out_dir / x_name, rec.calibration)
        n, m = rec.weight.shape
        layers.append({"name": rec.name, "weight": w_name, "calib": x_name,
                       "n": n, "m": m, "r": rec.calibration.shape[0]})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps({"version": MANIFEST_VERSION, "layers": layers}, indent=2) + "\n",
                    encoding="utf-8")
    return path


# -- deterministic sampling -------------------------------------------------
#
# Philox4x64-10 (Random123). numpy's implementation increments the 256-bit
# counter before each block, so with key k and initial counter 0 the first
# four outputs are the Philox block of (counter=1, key=k). Uniforms take the
# top 53 bits; normals use the basic Box-Muller transform, two per pair.

_TWO_POW_M53 = 2.0 ** -53


class NormalStream:
    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValidationError("seed and stream must be non-negative")
        key = (seed & 0xFFFFFFFFFFFFFFFF) | ((stream & 0xFFFFFFFFFFFFFFFF) << 64)
        self._bits = Philox(key=key, counter=0)

    def raw(self, count: int) -> np.ndarray:
        return self._bits.random_raw(count)

    def uniform(self, count: int) -> np.ndarray:
        """Uniforms in (0, 1]."""
        return ((self.raw(count) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_M53

    def normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1).ravel()
        return z[:count]


def constant_correlation_factor(d: int, correlation: float) -> np.ndarray:
    """Lower Cholesky factor of the d x d matrix with unit diagonal and
    ``correlation`` everywhere else."""
    corr = np.full((d, d), correlation, dtype=np.float64)
    np.fill_diagonal(corr, 1.0)
    return np.linalg.cholesky(corr)


def synth_layer(n: int, m: int, r: int, seed: int, correlation: float = 0.0,
                name: str = "layer0", stream: int = 0) -> LayerRecord:
    """Gaussian weights (n x m) and correlated Gaussian calibration rows (r x m).

    A pure function of its arguments; ``stream`` selects an independent
    Philox key for the same seed (used to derive per-layer streams).
    """
    if min(n, m, r) < 1:
        raise ValidationError("n, m, r must all be >= 1")
    if not 0.0 <= correlation < 1.0:
        raise ValidationError("correlation must lie in [0, 1)")
    rng = NormalStream(seed, stream)
    weight = rng.normal(n * m).reshape(n, m)
    z = rng.normal(r * m).reshape(r, m)
    calib = z @ constant_correlation_factor(m, correlation).T
    return LayerRecord(name, weight.astype(np.float32), calib.astype(np.float32))


def synth_model(layers: int, n: int, m: int, r: int, seed: int,
                correlation: float = 0.5) -> list[LayerRecord]:
    return [synth_layer(n, m, r, seed, correlation, name=f"layer{i}", stream=i)
            for i in range(layers)]
