"""Per-layer N:M assignment.

Adaptive plans give layer ``i`` the keep ratio ``a_i + (1 - a_i) * target``
where ``a_i`` is the layer's share of the summed Frobenius norms. That
formula is biased upward (every layer keeps at least ``target``), so by
default a greedy repair pass walks the rounded ``n_i`` back toward the
target. Both the raw ratios and the repaired ``n_i`` are kept in the plan.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroModel, InfeasibleBudget, ValidationError

DEFAULT_M = 8
SUPPORTED_M = (4, 8, 16)


class Strategy(str, enum.Enum):
    ADAPTIVE = "adaptive"
    UNIFORM = "uniform"
    SINSHAPE = "sinshape"


@dataclass(frozen=True)
class NMRatio:
    n: int
    m: int

    def __post_init__(self):
        if not (1 <= self.m <= 255 and 1 <= self.n <= self.m):
            raise ValidationError(f"invalid N:M ratio {self.n}:{self.m}")

    @property
    def ratio(self) -> float:
        return self.n / self.m

    @classmethod
    def parse(cls, text: str) -> "NMRatio":
        try:
            n, m = (int(p) for p in text.split(":"))
        except ValueError as exc:
            raise ValidationError(f"expected N:M, got {text!r}") from exc
        return cls(n, m)

    def __str__(self):
        return f"{self.n}:{self.m}"


@dataclass(frozen=True)
class LayerAllocation:
    name: str
    alpha: float
    raw_ratio: float
    n: int


@dataclass(frozen=True)
class AllocationPlan:
    strategy: Strategy
    target_ratio: float
    m: int
    layers: tuple[LayerAllocation, ...]
    sizes: tuple[int, ...] = field(default=(), repr=False)

    @property
    def realized_ratio(self) -> float:
        sizes = self.sizes or (1,) * len(self.layers)
        return _weighted_ratio([la.n for la in self.layers], sizes, self.m)

    def nm(self, name: str) -> NMRatio:
        for la in self.layers:
            if la.name == name:
                return NMRatio(la.n, self.m)
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "target_ratio": self.target_ratio,
            "m": self.m,
            "layers": [{"name": la.name, "alpha": la.alpha, "raw_ratio": la.raw_ratio, "n": la.n}
                       for la in self.layers],
            "realized_ratio": self.realized_ratio,
        }

    @classmethod
    def from_dict(cls, doc: dict, sizes=()) -> "AllocationPlan":
        layers = tuple(LayerAllocation(d["name"], float(d["alpha"]), float(d["raw_ratio"]), int(d["n"]))
                       for d in doc["layers"])
        return cls(Strategy(doc["strategy"]), float(doc["target_ratio"]), int(doc["m"]),
                   layers, tuple(sizes))


def _weighted_ratio(ns, sizes, m):
    sizes = np.asarray(sizes, dtype=np.float64)
    return float(np.dot(np.asarray(ns, dtype=np.float64), sizes) / (sizes.sum() * m))


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _to_n(raw_ratio, m):
    return min(max(round_half_away(raw_ratio * m), 1), m)


def _check_target(target_ratio):
    if not 0.0 < target_ratio <= 1.0:
        raise ValidationError(f"target ratio must lie in (0, 1], got {target_ratio}")


def _names(count, names):
    names = list(names) if names is not None else [f"layer{i}" for i in range(count)]
    if len(names) != count:
        raise ValidationError("one name per layer required")
    return names


def layer_importance(layers) -> list[float]:
    if not layers:
        raise ValidationError("need at least one layer")
    norms = np.array([np.linalg.norm(np.asarray(w, dtype=np.float64)) for w in layers])
    total = norms.sum()
    if total == 0:
        raise AllZeroModel("every layer is all-zero; importances are undefined")
    return list(norms / total)


def _repair(ns, raw, sizes, m, target):
    """Greedy +-1 steps toward the target until no step reduces the gap.

    Each step moves the layer whose rounded ratio deviates most from its raw
    ratio in the direction of the error; the stopping point is therefore
    within half a step, and never farther than 1/m, of the target.
    """
    ns = list(ns)
    weights = np.asarray(sizes, dtype=np.float64)
    weights = weights / weights.sum()
    while True:
        gap = _weighted_ratio(ns, sizes, m) - target
        direction = -1 if gap > 0 else 1
        # most over-rounded layers first when decreasing, most under-rounded when increasing
        dev = [(ns[i] / m - raw[i]) * -direction for i in range(len(ns))]
        order = sorted(range(len(ns)), key=lambda i: (-dev[i], i))
        for i in order:
            if not 1 <= ns[i] + direction <= m:
                continue
            new_gap = gap + direction * weights[i] / m
            if abs(new_gap) < abs(gap) - 1e-15:
                ns[i] += direction
                break
        else:
            return ns


def assign_nm(importances, target_ratio: float, m: int = DEFAULT_M, renormalize: bool = True,
              names=None, sizes=None) -> AllocationPlan:
    _check_target(target_ratio)
    alphas = [float(a) for a in importances]
    if not alphas or abs(sum(alphas) - 1.0) > 1e-6:
        raise ValidationError("importances must be non-empty and sum to 1")
    names = _names(len(alphas), names)
    sizes = tuple(sizes) if sizes is not None else (1,) * len(alphas)
    raw = [a + (1.0 - a) * target_ratio for a in alphas]
    ns = [_to_n(r, m) for r in raw]
    if renormalize:
        ns = _repair(ns, raw, sizes, m, target_ratio)
        if abs(_weighted_ratio(ns, sizes, m) - target_ratio) > 1.0 / m + 1e-12:
            raise InfeasibleBudget(f"cannot reach target ratio {target_ratio} with m={m}")
    layers = tuple(LayerAllocation(nm, a, r, n) for nm, a, r, n in zip(names, alphas, raw, ns))
    return AllocationPlan(Strategy.ADAPTIVE, target_ratio, m, layers, sizes)


def uniform_plan(L: int, target_ratio: float, m: int = DEFAULT_M, names=None, sizes=None) -> AllocationPlan:
    _check_target(target_ratio)
    n = round_half_away(target_ratio * m)
    if not 1 <= n <= m:
        raise ValidationError(f"target {target_ratio} rounds to n={n}, outside [1, {m}]")
    names = _names(L, names)
    layers = tuple(LayerAllocation(nm, 1.0 / L, target_ratio, n) for nm in names)
    return AllocationPlan(Strategy.UNIFORM, target_ratio, m, layers,
                          tuple(sizes) if sizes is not None else ())


def sin_shape_plan(L: int, target_ratio: float, m: int = DEFAULT_M, names=None, sizes=None) -> AllocationPlan:
    """Keep ratios follow half a sine period: highest at layer 0, lowest at
    the last layer, averaging to the target."""
    _check_target(target_ratio)
    if L < 1:
        raise ValidationError("need at least one layer")
    if L == 1:
        plan = uniform_plan(1, target_ratio, m, names, sizes)
        return AllocationPlan(Strategy.SINSHAPE, plan.target_ratio, m, plan.layers, plan.sizes)
    names = _names(L, names)
    amp = min(target_ratio, 1.0 - target_ratio) / 2.0
    layers = []
    for idx, nm in enumerate(names):
        raw = target_ratio - amp * math.sin(math.pi * (idx / (L - 1) - 0.5))
        layers.append(LayerAllocation(nm, 1.0 / L, raw, _to_n(raw, m)))
    return AllocationPlan(Strategy.SINSHAPE, target_ratio, m, tuple(layers),
                          tuple(sizes) if sizes is not None else ())
