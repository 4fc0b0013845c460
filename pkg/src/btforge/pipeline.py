"""Full chain: evolve, classify, tournament, rank elimination, clustering,
votes, exploit scan, coverage and reports."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import artifacts as art
from .arena import Arena, builtin_catalog
from .config import PipelineConfig
from .evolution import ArenaEvaluator, run_evolution
from .harness import coverage, exploit_scan, exploits_tsv
from .pruning import Member, TournamentConfig, cluster, eliminate_by_rank, ingest_votes, read_votes, \
    tournament
from .rng import derive_seed, stream

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass
class PipelineResult:
    out: str
    evolution: object = None
    tscores: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    pruning_rows: list = field(default_factory=list)
    exploits: list = field(default_factory=list)
    coverage: object = None
    warnings: list = field(default_factory=list)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as e:  # every failure is reported with its stage
                raise StageError(name, f"{type(e).__name__}: {e}") from e
        return inner
    return wrap


def _library_map(cfg):
    return {t.name: t for t in cfg.library} or None


@_stage("evolve")
def evolve(cfg: PipelineConfig, out: str, catalog=None, on_generation: Optional[Callable] = None):
    catalog = catalog or builtin_catalog()
    sim = ArenaEvaluator(cfg.arena, catalog, derive_seed(cfg.seed, "eval"), cfg.k_rounds, cfg.jobs,
                         _library_map(cfg))
    report = run_evolution(catalog, sim, cfg.evolution, cfg.difficulty, derive_seed(cfg.seed, "evolve"),
                           library=cfg.library or None, on_generation=on_generation)
    order = [c.name for c in cfg.difficulty.classes]
    classes = {c: [Member(e.tree, e.cls, e.targets) for e in report.archive[c]] for c in order}
    info = {e.tree.name: {"fitness": e.fitness, "generation": e.generation,
                          "source": e.tree.provenance.get("source", "")}
            for c in order for e in report.archive[c]}
    art.write_archive(os.path.join(out, "archive"), classes, order, info)
    art.write_text(os.path.join(out, "fitness.csv"), art.fitness_csv(report.history))
    art.write_text(os.path.join(out, "funnel.tsv"), art.funnel_tsv(report.funnel()))
    art.write_text(os.path.join(out, "events.tsv"), art.events_tsv(report.events))
    return report, classes


class _RoundPlayer:
    def __init__(self, cfg, catalog):
        self.arena = Arena(cfg.arena, catalog)
        self.library = _library_map(cfg)

    def play(self, trees, seed):
        fb, _ = self.arena.run(trees, seed, library=self.library, record_exec=False)
        return [(dict(m), c) for m, c in zip(fb.agents, fb.crashed)]


@_stage("tournament")
def run_tournament(cfg: PipelineConfig, classes: dict, catalog=None, mixed: Optional[bool] = None):
    live = {c: ms for c, ms in classes.items() if ms}
    if not live:
        return {}, []
    tcfg = TournamentConfig(cfg.RT, cfg.tournament_batch, derive_seed(cfg.seed, "tournament"),
                            cfg.mixed_batches if mixed is None else mixed)
    table = tournament(live, _RoundPlayer(cfg, catalog or builtin_catalog()), tcfg, cfg.difficulty)
    return table, table.removed


@_stage("cluster")
def run_clustering(cfg: PipelineConfig, classes: dict, catalog=None, warnings=None):
    catalog = catalog or builtin_catalog()
    out, assignments = {}, {}
    for c, members in classes.items():
        if not members:
            out[c] = []
            continue
        k = cfg.cluster_k.get(c, len(members))
        if k > len(members):
            msg = f"cluster K for {c} lowered from {k} to class size {len(members)}"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            k = len(members)
        a = cluster([m.tree for m in members], k, derive_seed(cfg.seed, "cluster", c), catalog)
        assignments[c] = a
        keep = set(a.representatives)
        out[c] = [m for m in members if m.name in keep]
    return out, assignments


@_stage("coverage")
def run_coverage(cfg: PipelineConfig, trees: list, catalog=None):
    catalog = catalog or builtin_catalog()
    pool = list(trees)
    names = {t.name for t in pool}
    for t in cfg.library:
        if t.name not in names:
            pool.append(t)
    if len(pool) < 2:
        return None
    arena = Arena(cfg.arena, catalog)
    rng = stream(cfg.seed, "coverage")
    traces = []
    n = min(cfg.arena.agent_count, len(pool))
    for r in range(cfg.coverage_rounds):
        lineup = rng.sample(pool, n)
        _, trace = arena.run(lineup, derive_seed(cfg.seed, "coverage", r), library=_library_map(cfg))
        traces.append(trace)
    return coverage(traces, catalog)


def run_pipeline(cfg: PipelineConfig, out: Optional[str] = None, on_generation: Optional[Callable] = None,
                 render: bool = True) -> PipelineResult:
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    catalog = builtin_catalog()
    res = PipelineResult(out)
    order = [c.name for c in cfg.difficulty.classes]

    report, classes = evolve(cfg, out, catalog, on_generation)
    res.evolution = report

    table, never_drawn = run_tournament(cfg, classes, catalog)
    tscores = table.scores() if table else {}
    res.tscores = tscores
    art.write_text(os.path.join(out, "tscores.tsv"),
                   table.to_tsv() if table else "tree\trounds_played\tscore_sum\ttscore\n")
    survivors = _stage("eliminate")(eliminate_by_rank)(classes, tscores, order)

    clustered, assignments = run_clustering(cfg, survivors, catalog, res.warnings)
    art.write_text(os.path.join(out, "clusters.tsv"), art.clusters_tsv(assignments))

    removed = {c: [] for c in order}
    final = clustered
    if cfg.votes:
        @_stage("votes")
        def _votes():
            with open(cfg.votes) as f:
                return ingest_votes(read_votes(f.read()), clustered, cfg.vote_threshold)
        final, removed, warns = _votes()
        res.warnings.extend(warns)
    res.final = final

    rows = []
    for c in order:
        rows.append((c, len(classes[c]), len(classes[c]) - len(survivors[c]), len(clustered[c]),
                     len(removed.get(c, [])), len(final[c])))
    res.pruning_rows = rows
    art.write_text(os.path.join(out, "pruning.tsv"), art.pruning_tsv(rows))
    art.write_archive(os.path.join(out, "final"), final, order)

    res.exploits = _stage("exploit-scan")(exploit_scan)(survivors, tscores, order[0], cfg.size_threshold)
    art.write_text(os.path.join(out, "exploits.tsv"), exploits_tsv(res.exploits))

    cov = run_coverage(cfg, [m.tree for c in order for m in final[c]], catalog)
    res.coverage = cov
    if cov is not None:
        art.write_text(os.path.join(out, "coverage.tsv"), cov.to_tsv())
        art.write_text(os.path.join(out, "coverage.txt"), cov.summary(catalog))

    art.write_text(os.path.join(out, "summary.txt"), summary_text(res, order, never_drawn))
    if render:
        render_report(out)
    return res


def summary_text(res: PipelineResult, order: list, never_drawn: list) -> str:
    ev = res.evolution
    lines = ["# run summary"]
    for k, v in ev.funnel():
        lines.append(f"{k}\t{v}")
    lines.append(f"generations\t{ev.history[-1][0] if ev.history else 0}")
    lines.append(f"restarts\t{ev.restarts}")
    lines.append(f"stopped_on_plateau\t{int(ev.stopped)}")
    lines.append(f"never_drawn_in_tournament\t{len(never_drawn)}")
    for c in order:
        lines.append(f"final[{c}]\t{len(res.final.get(c, []))}")
    lines.append(f"exploit_flags\t{len(res.exploits)}")
    if res.coverage is not None:
        lines.append(f"template_coverage\t{res.coverage.template_coverage!r}")
    for w in res.warnings:
        lines.append(f"warning\t{w}")
    return "\n".join(lines) + "\n"


@_stage("report")
def render_report(out: str) -> list:
    """Render figures for whatever artifacts exist in ``out``; returns paths."""
    from . import plotting

    figs = []
    fig_dir = os.path.join(out, "figures")
    fit = os.path.join(out, "fitness.csv")
    if os.path.exists(fit):
        figs.append(plotting.fitness_range_figure(art.read_fitness_csv(fit), os.path.join(fig_dir, "fitness.png")))
    fun = os.path.join(out, "funnel.tsv")
    if os.path.exists(fun):
        figs.append(plotting.funnel_figure(art.read_funnel(fun), os.path.join(fig_dir, "funnel.png")))
    pr = os.path.join(out, "pruning.tsv")
    if os.path.exists(pr):
        rows = art.read_pruning(pr)
        if rows:
            figs.append(plotting.pruning_figure(rows, os.path.join(fig_dir, "pruning.png")))
    return figs
