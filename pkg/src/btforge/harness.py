"""Functional-testing helpers: coverage from traces, determinism checks and
exploit scanning."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .tree import NodeKind, TemplateCatalog, distinct_actions, metrics

BUCKETS = 10


@dataclass
class CoverageReport:
    catalog_size: int
    executed: Counter = field(default_factory=Counter)  # template -> exec count
    transitions: Counter = field(default_factory=Counter)  # (action, action) -> count
    buckets: dict = field(default_factory=dict)  # (template, param) -> set of buckets

    @property
    def template_coverage(self) -> float:
        return len(self.executed) / self.catalog_size if self.catalog_size else 0.0

    @property
    def transition_coverage(self) -> set:
        return set(self.transitions)

    @property
    def parameter_diversity(self) -> dict:
        return {k: len(v) for k, v in self.buckets.items()}

    def merge(self, other: "CoverageReport") -> "CoverageReport":
        if other.catalog_size != self.catalog_size:
            raise ValueError("reports were built against different catalogs")
        buckets = {k: set(v) for k, v in self.buckets.items()}
        for k, v in other.buckets.items():
            buckets.setdefault(k, set()).update(v)
        return CoverageReport(self.catalog_size, self.executed + other.executed,
                              self.transitions + other.transitions, buckets)

    def to_tsv(self) -> str:
        lines = ["section\tkey\tvalue", f"summary\ttemplate_coverage\t{self.template_coverage!r}",
                 f"summary\ttransitions\t{len(self.transitions)}"]
        for name in sorted(self.executed):
            lines.append(f"template\t{name}\t{self.executed[name]}")
        for (a, b) in sorted(self.transitions):
            lines.append(f"transition\t{a}>{b}\t{self.transitions[(a, b)]}")
        for (t, p) in sorted(self.buckets):
            lines.append(f"parameter\t{t}.{p}\t{len(self.buckets[(t, p)])}")
        return "\n".join(lines) + "\n"

    def summary(self, catalog: Optional[TemplateCatalog] = None) -> str:
        out = [f"template coverage: {self.template_coverage:.1%} "
               f"({len(self.executed)}/{self.catalog_size})",
               f"distinct action transitions: {len(self.transitions)}"]
        if catalog is not None:
            missing = sorted(t.name for t in catalog.templates() if t.name not in self.executed)
            out.append("never executed: " + (", ".join(missing) if missing else "-"))
        return "\n".join(out) + "\n"


def _bucket(spec, value) -> int:
    if spec.discrete:
        return spec.values.index(value) if value in spec.values else -1
    if spec.width == 0:
        return 0
    return min(BUCKETS - 1, int((value - spec.lo) / spec.width * BUCKETS))


def coverage(traces: list, catalog: TemplateCatalog) -> CoverageReport:
    """Aggregate executed templates, per-agent action transitions and
    bucketed parameter values."""
    report = CoverageReport(len(catalog))
    actions = {t.name for t in catalog.of_kind(NodeKind.ACTION)}
    for trace in traces:
        last = {}
        for _, agent, kind, payload in trace.events:
            if kind != "exec":
                continue
            name, params = payload
            if name not in catalog:
                continue
            report.executed[name] += 1
            t = catalog.get(name)
            for p, v in params:
                report.buckets.setdefault((name, p), set()).add(_bucket(t.param(p), v))
            if name in actions:
                if agent in last:
                    report.transitions[(last[agent], name)] += 1
                last[agent] = name
    return report


@dataclass
class DeterminismResult:
    ok: bool
    tick: Optional[int] = None
    hashes: Optional[tuple] = None  # (reference, divergent)
    repeat: Optional[int] = None

    def __str__(self):
        if self.ok:
            return "deterministic"
        return f"diverged at tick {self.tick} on repeat {self.repeat}: {self.hashes[0]} != {self.hashes[1]}"


def determinism_check(trees: list, config, seed: int, repeats: int = 2,
                      runner: Optional[Callable] = None, library: Optional[dict] = None) -> DeterminismResult:
    """Replay one round ``repeats`` times and compare checkpoint hashes.

    ``runner(trees, config, seed)`` must return ``(feedback, trace)``; the
    default is the arena.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    if runner is None:
        from .arena import run_round

        def runner(trees, config, seed):
            return run_round(trees, config, seed, library=library, record_exec=False)
    ref = runner(trees, config, seed)[1].checkpoints
    for r in range(1, repeats):
        cur = runner(trees, config, seed)[1].checkpoints
        for (t1, h1), (t2, h2) in zip(ref, cur):
            if t1 != t2 or h1 != h2:
                return DeterminismResult(False, min(t1, t2), (h1, h2), r)
        if len(ref) != len(cur):
            shorter = ref if len(ref) < len(cur) else cur
            longer = cur if shorter is ref else ref
            t, h = longer[len(shorter)]
            return DeterminismResult(False, t, ("<missing>", h) if longer is cur else (h, "<missing>"), r)
    return DeterminismResult(True)


@dataclass
class ExploitFlag:
    tree: str
    cls: str
    node_count: int
    depth: int
    width: int
    tscore: float
    reason: str


def exploit_scan(classes: dict, tscores: dict, hardest: str, size_threshold: int = 5,
                 min_actions: int = 2) -> list:
    """Flag small or action-poor trees that score at least their class average
    in the hardest class."""
    members = [m for m in classes.get(hardest, []) if m.name in tscores]
    if not members:
        return []
    avg = sum(tscores[m.name] for m in members) / len(members)
    flags = []
    for m in members:
        ts = tscores[m.name]
        if ts < avg:
            continue
        tm = metrics(m.tree)
        reasons = []
        if tm.depth + tm.width <= size_threshold:
            reasons.append(f"depth+width={tm.depth + tm.width}<={size_threshold}")
        n_actions = len(distinct_actions(m.tree))
        if n_actions <= min_actions:
            reasons.append(f"distinct_actions={n_actions}<={min_actions}")
        if reasons:
            flags.append(ExploitFlag(m.name, hardest, tm.node_count, tm.depth, tm.width, ts,
                                     "; ".join(reasons)))
    return sorted(flags, key=lambda f: f.tree)


def exploits_tsv(flags: list) -> str:
    lines = ["tree\tclass\tnode_count\tdepth\twidth\ttscore\treason"]
    for f in flags:
        lines.append(f"{f.tree}\t{f.cls}\t{f.node_count}\t{f.depth}\t{f.width}\t{f.tscore!r}\t{f.reason}")
    return "\n".join(lines) + "\n"
