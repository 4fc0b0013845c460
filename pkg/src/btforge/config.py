"""YAML pipeline configuration with defaults and validation."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .arena import METRICS, ArenaConfig
from .difficulty import DifficultyClass, MetricBound, MetricSpec
from .evolution import DifficultySpec, EvolutionParams
from .tree import parse


class ConfigError(ValueError):
    pass


# normalization ranges used when the config names a metric without lo/hi
DEFAULT_METRIC_RANGES = {
    "kills": (0.0, 3.0),
    "deaths": (0.0, 2.0),
    "distance_traveled": (0.0, 60.0),
    "low_health_escapes": (0.0, 2.0),
    "shield_boxes": (0.0, 2.0),
    "weapon_boxes": (0.0, 2.0),
    "ammo_boxes": (0.0, 2.0),
    "health_boxes": (0.0, 2.0),
    "damage_dealt": (0.0, 200.0),
    "survival_ticks": (0.0, 3600.0),
}


@dataclass
class PipelineConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    evolution: EvolutionParams = field(default_factory=EvolutionParams)
    k_rounds: int = 3
    difficulty: Optional[DifficultySpec] = None
    RT: int = 20
    batch_size: Optional[int] = None  # defaults to arena.agent_count
    mixed_batches: bool = False
    cluster_k: dict = field(default_factory=dict)  # class -> K
    votes: Optional[str] = None
    vote_threshold: int = 1
    size_threshold: int = 5
    coverage_rounds: int = 4
    library: list = field(default_factory=list)  # BehaviorTree
    seed: int = 0
    jobs: int = 1
    out: str = "out"

    @property
    def tournament_batch(self) -> int:
        return self.batch_size or self.arena.agent_count


TOP_KEYS = {"seed", "jobs", "out", "arena", "evolution", "difficulty", "tournament", "cluster",
            "votes", "exploit", "coverage", "library"}


def _section(raw: dict, key: str) -> dict:
    v = raw.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return v


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _difficulty(d: dict) -> DifficultySpec:
    _check_keys(d, {"eps", "metrics", "classes"}, "difficulty")
    classes_raw = d.get("classes")
    if not classes_raw:
        raise ConfigError("difficulty.classes: at least one class is required")
    metric_raw = d.get("metrics") or {}
    specs = {}
    for name, rng in metric_raw.items():
        if name not in METRICS:
            raise ConfigError(f"difficulty.metrics.{name}: unknown metric")
        lo, hi = DEFAULT_METRIC_RANGES[name]
        rng = rng or {}
        _check_keys(rng, {"lo", "hi"}, f"difficulty.metrics.{name}")
        try:
            specs[name] = MetricSpec(name, float(rng.get("lo", lo)), float(rng.get("hi", hi)))
        except ValueError as e:
            raise ConfigError(f"difficulty.metrics.{name}: {e}") from None
    classes = []
    for i, c in enumerate(classes_raw):
        where = f"difficulty.classes[{i}]"
        if "name" not in c:
            raise ConfigError(f"{where}.name: missing")
        _check_keys(c, {"name", "rank", "metrics"}, where)
        bounds = {}
        for m, b in (c.get("metrics") or {}).items():
            if m not in METRICS:
                raise ConfigError(f"{where}.metrics.{m}: unknown metric")
            b = b or {}
            _check_keys(b, {"min", "max", "weight"}, f"{where}.metrics.{m}")
            for req in ("min", "max"):
                if req not in b:
                    raise ConfigError(f"{where}.metrics.{m}.{req}: missing")
            bounds[m] = MetricBound(float(b["min"]), float(b["max"]), float(b.get("weight", 1.0)))
            if m not in specs:
                specs[m] = MetricSpec(m, *DEFAULT_METRIC_RANGES[m])
        if not bounds:
            raise ConfigError(f"{where}.metrics: at least one metric is required")
        try:
            classes.append(DifficultyClass(str(c["name"]), int(c.get("rank", i)), bounds))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
    try:
        return DifficultySpec([specs[m] for m in sorted(specs)], classes, float(d.get("eps", 1e-4)))
    except ValueError as e:
        raise ConfigError(f"difficulty: {e}") from None


def from_dict(raw: dict, base_dir: str = ".") -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(raw, TOP_KEYS, "config")
    cfg = PipelineConfig()

    try:
        cfg.arena = ArenaConfig.from_dict(_section(raw, "arena"))
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"arena: {e.args[0]}") from None

    evo = dict(_section(raw, "evolution"))
    cfg.k_rounds = int(evo.pop("k_rounds", cfg.k_rounds))
    if cfg.k_rounds < 1:
        raise ConfigError("evolution.k_rounds: must be >= 1")
    _check_keys(evo, {f.name for f in dataclasses.fields(EvolutionParams)}, "evolution")
    try:
        cfg.evolution = EvolutionParams(**evo)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"evolution: {e}") from None

    if "difficulty" not in raw:
        raise ConfigError("difficulty: missing")
    cfg.difficulty = _difficulty(_section(raw, "difficulty"))

    tour = _section(raw, "tournament")
    _check_keys(tour, {"RT", "batch_size", "mixed"}, "tournament")
    cfg.RT = int(tour.get("RT", cfg.RT))
    cfg.batch_size = tour.get("batch_size")
    cfg.mixed_batches = bool(tour.get("mixed", False))
    if cfg.RT < 1:
        raise ConfigError("tournament.RT: must be >= 1")
    if cfg.batch_size is not None and not 2 <= int(cfg.batch_size) <= cfg.arena.agent_count:
        raise ConfigError("tournament.batch_size: must be within 2..arena.agent_count")

    names = {c.name for c in cfg.difficulty.classes}
    ks = _section(raw, "cluster")
    for c, k in ks.items():
        if c not in names:
            raise ConfigError(f"cluster.{c}: unknown class")
        if int(k) < 1:
            raise ConfigError(f"cluster.{c}: K must be >= 1")
    cfg.cluster_k = {c: int(k) for c, k in ks.items()}

    votes = _section(raw, "votes")
    _check_keys(votes, {"file", "threshold"}, "votes")
    if votes.get("file"):
        cfg.votes = os.path.join(base_dir, votes["file"])
    cfg.vote_threshold = int(votes.get("threshold", 1))
    if cfg.vote_threshold < 1:
        raise ConfigError("votes.threshold: must be >= 1")

    exploit = _section(raw, "exploit")
    _check_keys(exploit, {"size_threshold"}, "exploit")
    cfg.size_threshold = int(exploit.get("size_threshold", cfg.size_threshold))

    cov = _section(raw, "coverage")
    _check_keys(cov, {"rounds"}, "coverage")
    cfg.coverage_rounds = int(cov.get("rounds", cfg.coverage_rounds))

    lib = raw.get("library") or []
    for path in lib:
        full = os.path.join(base_dir, path)
        try:
            with open(full) as f:
                cfg.library.append(parse(f.read(), os.path.splitext(os.path.basename(path))[0]))
        except OSError as e:
            raise ConfigError(f"library: cannot read {path}: {e.strerror}") from None
        except ValueError as e:
            raise ConfigError(f"library: {path}: {e}") from None

    cfg.seed = int(raw.get("seed", 0))
    cfg.jobs = int(raw.get("jobs", 1))
    cfg.out = os.path.join(base_dir, raw["out"]) if "out" in raw else "out"
    return cfg


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path}: {e}") from None
    return from_dict(raw, os.path.dirname(os.path.abspath(path)))
