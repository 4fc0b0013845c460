"""Difficulty classes, metric normalization, targets and the fitness function."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .rng import stream


@dataclass(frozen=True)
class MetricSpec:
    """Normalization range of one raw metric."""

    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"metric {self.name!r}: lo must be < hi")


@dataclass(frozen=True)
class MetricBound:
    min: float
    max: float
    weight: float = 1.0


@dataclass(frozen=True)
class DifficultyClass:
    name: str
    rank: int  # 0 is the hardest
    bounds: dict = field(default_factory=dict)  # metric -> MetricBound

    def __post_init__(self):
        for metric, b in self.bounds.items():
            if not 0.0 <= b.min <= b.max <= 1.0:
                raise ValueError(f"class {self.name!r}, metric {metric!r}: need 0 <= min <= max <= 1")
            if b.weight < 0:
                raise ValueError(f"class {self.name!r}, metric {metric!r}: negative weight")
        if self.bounds and not any(b.weight > 0 for b in self.bounds.values()):
            raise ValueError(f"class {self.name!r}: all weights are zero")

    @property
    def metrics(self) -> list:
        return sorted(self.bounds)

    @property
    def weights(self) -> dict:
        return {m: b.weight for m, b in self.bounds.items()}


def check_ranks(classes) -> list:
    ranked = sorted(classes, key=lambda c: c.rank)
    if [c.rank for c in ranked] != list(range(len(ranked))):
        raise ValueError("class ranks must be unique and contiguous from 0")
    return ranked


def normalize(raw: dict, specs) -> dict:
    """Scale raw metric values into [0, 1] by each metric's [lo, hi]."""
    by_name = {s.name: s for s in specs}
    out = {}
    for name, value in raw.items():
        spec = by_name.get(name)
        if spec is None:
            raise KeyError(f"unknown metric {name!r}")
        v = (value - spec.lo) / (spec.hi - spec.lo)
        out[name] = min(1.0, max(0.0, v))
    return out


def denormalize(norm: dict, specs) -> dict:
    by_name = {s.name: s for s in specs}
    return {k: by_name[k].lo + v * (by_name[k].hi - by_name[k].lo) for k, v in norm.items()}


def sample_targets(cls: DifficultyClass, seed: int, *names) -> dict:
    rng = stream(seed, "targets", cls.name, *names)
    return {m: rng.uniform(cls.bounds[m].min, cls.bounds[m].max) for m in cls.metrics}


def fitness(feedback: dict, targets: dict, weights: dict, eps: float = 1e-4) -> float:
    """Reciprocal of the weighted absolute deviation from the targets."""
    if set(feedback) != set(targets) or set(targets) != set(weights):
        raise ValueError("feedback, targets and weights must cover the same metrics")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    total = 0.0
    for m in sorted(targets):
        total += weights[m] * abs(feedback[m] - targets[m])
    return 1.0 / (total + eps)


def class_fitness(norm_feedback: dict, targets: dict, cls: DifficultyClass, eps: float = 1e-4) -> float:
    sub = {m: norm_feedback[m] for m in targets}
    return fitness(sub, targets, {m: cls.bounds[m].weight for m in targets}, eps)


def matches(norm_feedback: dict, cls: DifficultyClass) -> bool:
    return all(b.min <= norm_feedback[m] <= b.max for m, b in cls.bounds.items())


def classify(norm_feedback: dict, classes) -> Optional[str]:
    """Hardest class whose closed intervals all contain the feedback."""
    for cls in sorted(classes, key=lambda c: c.rank):
        if matches(norm_feedback, cls):
            return cls.name
    return None


def adapt_class(cls: DifficultyClass, user_feedback: dict, step: float,
                name: Optional[str] = None) -> DifficultyClass:
    """Shift intervals toward where a player actually performs."""
    bounds = {}
    for m, b in cls.bounds.items():
        v = user_feedback.get(m)
        lo, hi = b.min, b.max
        if v is not None and v > hi:
            lo, hi = lo + step, hi + step
        elif v is not None and v < lo:
            lo, hi = lo - step, hi - step
        lo, hi = min(1.0, max(0.0, lo)), min(1.0, max(0.0, hi))
        bounds[m] = MetricBound(round(lo, 12), round(hi, 12), b.weight)
    return replace(cls, name=name or cls.name, bounds=bounds)
