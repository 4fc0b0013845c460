"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import artifacts as art
from .arena import ArenaConfig, builtin_catalog, run_round
from .config import ConfigError, PipelineConfig, load_config
from .harness import coverage, determinism_check, exploit_scan, exploits_tsv
from .pipeline import StageError, evolve, render_report, run_pipeline
from .pruning import TournamentConfig, cluster, eliminate_by_rank, tournament
from .rng import derive_seed
from .tree import ParseError, parse, validate

log = logging.getLogger("btforge")


class UsageError(Exception):
    pass


def _seed_arg(v: str) -> int:
    n = int(v, 0)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="YAML pipeline config")
    p.add_argument("--seed", type=_seed_arg, help="master seed (env BTFORGE_SEED)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=_positive, help="worker processes (env BTFORGE_JOBS)")


def _load(args, required=True) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif required:
        raise UsageError("--config is required")
    else:
        cfg = PipelineConfig()
    env_seed, env_jobs = os.environ.get("BTFORGE_SEED"), os.environ.get("BTFORGE_JOBS")
    if env_seed is not None:
        cfg.seed = _seed_arg(env_seed)
    if env_jobs is not None:
        cfg.jobs = _positive(env_jobs)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "mixed_batches", False):
        cfg.mixed_batches = True
    return cfg


def _read_trees(paths, catalog):
    trees = []
    for p in paths:
        with open(p) as f:
            t = parse(f.read(), os.path.splitext(os.path.basename(p))[0])
        trees.append(t)
    names = [t.name for t in trees]
    dupes = sorted({n for n in names if names.count(n) > 1})
    for i, t in enumerate(trees):
        if names.count(t.name) > 1:
            t.name = f"{t.name}_{i}"
    if dupes:
        log.info("renamed duplicate tree names: %s", ", ".join(dupes))
    library = {t.name: t for t in trees}
    for t in trees:
        bad = validate(t, catalog, library)
        if bad:
            raise UsageError(f"{t.name}: {bad[0]}")
    return trees


def cmd_run(args):
    cfg = _load(args)
    res = run_pipeline(cfg, cfg.out)
    print(art.funnel_tsv(res.evolution.funnel()), end="")
    print(f"artifacts written to {cfg.out}")
    return 0


def cmd_evolve(args):
    cfg = _load(args)
    os.makedirs(cfg.out, exist_ok=True)
    report, _ = evolve(cfg, cfg.out)
    print(art.funnel_tsv(report.funnel()), end="")
    return 0


def cmd_tournament(args):
    cfg = _load(args)
    classes, _ = art.read_archive(args.archive)
    classes = {c: ms for c, ms in classes.items() if ms}
    if not classes:
        raise UsageError("archive has no trees")
    unknown = set(classes) - {c.name for c in cfg.difficulty.classes}
    if unknown:
        raise UsageError(f"archive classes not in config: {', '.join(sorted(unknown))}")
    from .pipeline import _RoundPlayer
    tcfg = TournamentConfig(args.rounds or cfg.RT, cfg.tournament_batch, derive_seed(cfg.seed, "tournament"),
                            cfg.mixed_batches)
    table = tournament(classes, _RoundPlayer(cfg, builtin_catalog()), tcfg, cfg.difficulty)
    order = [c.name for c in cfg.difficulty.classes]
    kept = eliminate_by_rank(classes, table.scores(), order)
    out = cfg.out
    art.write_text(os.path.join(out, "tscores.tsv"), table.to_tsv())
    art.write_archive(os.path.join(out, "survivors"), kept, [c for c in order if c in kept])
    sys.stdout.write(table.to_tsv())
    return 0


def cmd_cluster(args):
    classes, _ = art.read_archive(args.archive)
    names = [args.cls] if args.cls else [c for c in classes if classes[c]]
    catalog = builtin_catalog()
    assignments = {}
    for c in names:
        if c not in classes:
            raise UsageError(f"class {c!r} not in archive")
        members = classes[c]
        if args.k > len(members):
            raise UsageError(f"--k {args.k} exceeds size {len(members)} of class {c}")
        assignments[c] = cluster([m.tree for m in members], args.k, derive_seed(args.seed or 0, "cluster", c),
                                 catalog)
    text = art.clusters_tsv(assignments)
    if args.out:
        art.write_text(os.path.join(args.out, "clusters.tsv"), text)
    sys.stdout.write(text)
    return 0


def _arena_cfg(args) -> ArenaConfig:
    return load_config(args.config).arena if args.config else ArenaConfig()


def cmd_simulate(args):
    catalog = builtin_catalog()
    trees = _read_trees(args.trees, catalog)
    cfg = _arena_cfg(args)
    if not 2 <= len(trees) <= cfg.agent_count:
        raise UsageError(f"need 2..{cfg.agent_count} trees, got {len(trees)}")
    fb, trace = run_round(trees, cfg, args.seed or 0, catalog, {t.name: t for t in trees})
    if args.trace:
        art.write_text(args.trace, trace.to_tsv())
    sys.stdout.write(fb.table())
    return 0


def cmd_check_determinism(args):
    catalog = builtin_catalog()
    trees = _read_trees(args.trees, catalog)
    res = determinism_check(trees, _arena_cfg(args), args.seed or 0, args.repeats,
                            library={t.name: t for t in trees})
    print(res)
    return 0 if res.ok else 1


def cmd_coverage(args):
    catalog = builtin_catalog()
    trees = _read_trees(args.trees, catalog)
    cfg = _arena_cfg(args)
    from .rng import stream
    rng = stream(args.seed or 0, "coverage")
    traces = []
    n = min(cfg.agent_count, len(trees))
    if n < 2:
        raise UsageError("need at least 2 trees")
    for r in range(args.rounds):
        lineup = rng.sample(trees, n)
        _, tr = run_round(lineup, cfg, derive_seed(args.seed or 0, "coverage", r), catalog,
                          {t.name: t for t in trees})
        traces.append(tr)
    rep = coverage(traces, catalog)
    if args.out:
        art.write_text(os.path.join(args.out, "coverage.tsv"), rep.to_tsv())
    sys.stdout.write(rep.summary(catalog))
    return 0


def cmd_exploit_scan(args):
    classes, _ = art.read_archive(args.archive)
    tscores = art.read_tscores(args.tscores)
    hardest = args.hardest
    if hardest is None:
        if not args.config:
            raise UsageError("give --hardest or --config to name the hardest class")
        hardest = load_config(args.config).difficulty.classes[0].name
    if hardest not in classes:
        raise UsageError(f"class {hardest!r} not in archive")
    flags = exploit_scan(classes, tscores, hardest, args.size_threshold)
    text = exploits_tsv(flags)
    if args.out:
        art.write_text(os.path.join(args.out, "exploits.tsv"), text)
    sys.stdout.write(text)
    return 0


def cmd_report(args):
    fun = os.path.join(args.dir, "funnel.tsv")
    if not os.path.exists(fun):
        raise UsageError(f"{args.dir} has no funnel.tsv")
    rows = art.read_funnel(fun)
    sys.stdout.write(art.funnel_tsv(rows))
    pr = os.path.join(args.dir, "pruning.tsv")
    if os.path.exists(pr):
        with open(pr) as f:
            sys.stdout.write("\n" + f.read())
    for path in render_report(args.dir):
        print(f"figure\t{path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btforge", description="Evolve, prune and test behavior-tree bots.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="full pipeline")
    _common(s, config_required=True)
    s.add_argument("--mixed-batches", action="store_true", help="tournament batches mix classes")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evolve", help="genetic algorithm only")
    _common(s, config_required=True)
    s.set_defaults(func=cmd_evolve)

    s = sub.add_parser("tournament", help="tournament re-scoring and rank elimination of an archive")
    _common(s, config_required=True)
    s.add_argument("--archive", required=True)
    s.add_argument("--rounds", type=_positive, help="override tournament RT")
    s.add_argument("--mixed-batches", action="store_true")
    s.set_defaults(func=cmd_tournament)

    s = sub.add_parser("cluster", help="k-medoids representatives per class")
    s.add_argument("--archive", required=True)
    s.add_argument("--k", type=_positive, required=True)
    s.add_argument("--class", dest="cls")
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("simulate", help="play one round and print per-agent metrics")
    s.add_argument("--trees", nargs="+", required=True)
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--config")
    s.add_argument("--trace", help="write the event trace as TSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check-determinism", help="replay a round and compare checkpoint hashes")
    s.add_argument("--trees", nargs="+", required=True)
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--config")
    s.add_argument("--repeats", type=int, default=2)
    s.set_defaults(func=cmd_check_determinism)

    s = sub.add_parser("coverage", help="template and transition coverage of a tree suite")
    s.add_argument("--trees", nargs="+", required=True)
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--config")
    s.add_argument("--rounds", type=_positive, default=4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("exploit-scan", help="flag small high scorers in the hardest class")
    s.add_argument("--archive", required=True)
    s.add_argument("--tscores", required=True)
    s.add_argument("--hardest", help="hardest class name (default: rank 0 class of --config)")
    s.add_argument("--config")
    s.add_argument("--size-threshold", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_exploit_scan)

    s = sub.add_parser("report", help="print funnel and pruning tables, render figures")
    s.add_argument("dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        print(f"error: stage {e.stage}: {e}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, ParseError, ValueError, OSError, argparse.ArgumentTypeError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
