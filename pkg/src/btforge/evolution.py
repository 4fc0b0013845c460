"""Genetic algorithm over behavior trees."""

from __future__ import annotations

import copy
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import difficulty as dif
from .rng import derive_seed, stream
from .tree import (BehaviorTree, NodeKind, TemplateCatalog, TreeNode, metrics, renumber,
                   structure_key, validate)

log = logging.getLogger(__name__)

FIXED_POINT_BITS = 16


class EvolutionError(RuntimeError):
    pass


@dataclass
class EvolutionParams:
    N: int = 20
    K_elite: Optional[int] = None  # defaults to ceil(0.25 * N)
    EL: float = 0.75
    RW: float = 0.15
    RR: float = 0.10
    Pm: float = 0.2
    Pc: float = 0.1
    PmMax: float = 0.5
    PcMax: float = 0.4
    epsilon_plateau: float = 1e-4
    NG: int = 5
    rate_ramp_generations: int = 5
    maxNumberOfGenerations: int = 50
    bloat_tolerance: float = 0.05
    max_depth: int = 12
    max_width: int = 12
    fitness_eps: float = 1e-4

    def __post_init__(self):
        if self.K_elite is None:
            self.K_elite = max(1, math.ceil(0.25 * self.N))
        problems = self.problems()
        if problems:
            raise ValueError("invalid evolution params: " + "; ".join(problems))

    def problems(self) -> list:
        out = []
        if self.N < 2:
            out.append("N must be >= 2")
        if abs(self.EL + self.RW + self.RR - 1.0) > 1e-9:
            out.append(f"EL+RW+RR must equal 1 (got {self.EL + self.RW + self.RR:g})")
        if min(self.EL, self.RW, self.RR) < 0:
            out.append("selection fractions must be >= 0")
        if not 0 <= self.Pm <= self.PmMax <= 1:
            out.append("need 0 <= Pm <= PmMax <= 1")
        if not 0 <= self.Pc <= self.PcMax <= 1:
            out.append("need 0 <= Pc <= PcMax <= 1")
        if not 1 <= self.K_elite <= self.N:
            out.append("need 1 <= K_elite <= N")
        if self.NG < 1 or self.rate_ramp_generations < 1:
            out.append("NG and rate_ramp_generations must be >= 1")
        if self.maxNumberOfGenerations < 0:
            out.append("maxNumberOfGenerations must be >= 0")
        if self.epsilon_plateau <= 0 or self.fitness_eps <= 0:
            out.append("epsilons must be > 0")
        return out


@dataclass
class Individual:
    id: int
    tree: BehaviorTree
    cls: Optional[str] = None
    targets: dict = field(default_factory=dict)
    fitness: Optional[float] = None
    feedback: Optional[dict] = None  # normalized, averaged over rounds
    raw: Optional[dict] = None
    crashed: bool = False
    generation: int = 0

    @property
    def name(self) -> str:
        return self.tree.name


@dataclass
class Population:
    generation_index: int
    individuals: list
    fitness_history: list = field(default_factory=list)


# --------------------------------------------------------------------------
# tree surgery helpers


def _path_to(root: TreeNode, node_id: int) -> Optional[list]:
    stack = [(root, [root])]
    while stack:
        node, path = stack.pop()
        if node.id == node_id:
            return path
        for c in node.children:
            stack.append((c, path + [c]))
    return None


def _cut_point(path: list):
    """(parent, node) whose removal deletes path[-1] and every ancestor left
    childless by it; None when the root itself would go."""
    i = len(path) - 1
    while i >= 1 and len(path[i - 1].children) == 1:
        i -= 1
    if i == 0:
        return None
    return path[i - 1], path[i]


def _detach(parent: TreeNode, node: TreeNode):
    parent.children = [c for c in parent.children if c is not node]
    if parent.kind is NodeKind.PARALLEL and parent.k is not None:
        parent.k = max(1, min(parent.k, len(parent.children)))


def remove_subtree(tree: BehaviorTree, node_id: int) -> bool:
    path = _path_to(tree.root, node_id)
    if path is None:
        return False
    cut = _cut_point(path)
    if cut is None:
        return False
    _detach(*cut)
    return True


def _within(tree: BehaviorTree, max_depth, max_width) -> bool:
    if max_depth is None and max_width is None:
        return True
    m = metrics(tree)
    return (max_depth is None or m.depth <= max_depth) and (max_width is None or m.width <= max_width)


def _new_templated(kind: NodeKind, catalog: TemplateCatalog, rng, nid: int, child=None) -> TreeNode:
    t = rng.choice(catalog.of_kind(kind))
    return TreeNode(nid, kind, t.name, t.sample_params(rng), [child] if child is not None else [])


def flip_param(spec, value: float, rng) -> float:
    """Flip one bit of the value's fixed-point code inside its range."""
    if spec.discrete:
        others = [v for v in spec.values if v != value]
        return rng.choice(others) if others else value
    levels = (1 << FIXED_POINT_BITS) - 1
    q = round((value - spec.lo) / spec.width * levels)
    q = min(max(q, 0), levels)
    q ^= 1 << rng.randrange(FIXED_POINT_BITS)
    return min(max(spec.lo + q / levels * spec.width, spec.lo), spec.hi)


# --------------------------------------------------------------------------
# mutation


def _param_options(tree, catalog):
    out = []
    for n in tree.root.walk():
        t = catalog.get(n.name) if n.name else None
        if t is None or n.kind is NodeKind.PROXY:
            continue
        for p in t.params:
            if (p.discrete and len(p.values) > 1) or (not p.discrete and p.width > 0):
                out.append((n.id, p))
    return out


def _add_options(tree, catalog):
    out = []
    for n in tree.root.walk():
        if n.kind not in (NodeKind.SELECTOR, NodeKind.SEQUENCE):
            continue
        if catalog.actions:
            for pos in range(len(n.children) + 1):
                out.append(("action", n.id, pos))
        for pos, c in enumerate(n.children):
            if catalog.conditions:
                out.append(("condition", n.id, pos))
            if catalog.decorators and c.kind is not NodeKind.DECORATOR:
                out.append(("decorator", n.id, pos))
    return out


def _apply_add(tree, catalog, rng, option):
    what, pid, pos = option
    parent = tree.find(pid)
    nid = tree.max_id() + 1
    if what == "action":
        parent.children.insert(pos, _new_templated(NodeKind.ACTION, catalog, rng, nid))
    else:
        kind = NodeKind.CONDITION if what == "condition" else NodeKind.DECORATOR
        parent.children[pos] = _new_templated(kind, catalog, rng, nid, parent.children[pos])


def _try_add(tree, catalog, rng, max_depth=None, max_width=None) -> Optional[BehaviorTree]:
    options = _add_options(tree, catalog)
    rng.shuffle(options)
    for opt in options:
        out = tree.copy()
        _apply_add(out, catalog, rng, opt)
        if _within(out, max_depth, max_width):
            return out
    return None


def _delete_options(tree):
    out = []
    for n in tree.root.walk():
        if n is tree.root:
            continue
        path = _path_to(tree.root, n.id)
        if _cut_point(path) is not None:
            out.append(n.id)
    return out


MUTATIONS = ("parameter", "add", "flip", "delete")


def mutate(tree: BehaviorTree, catalog: TemplateCatalog, rng,
           max_depth: Optional[int] = None, max_width: Optional[int] = None) -> BehaviorTree:
    """Apply exactly one mutation sub-operator chosen uniformly among those
    applicable.  The operator used is recorded in ``provenance["operator"]``;
    ``"none"`` means nothing applied and the tree is unchanged."""
    applicable = []
    params = _param_options(tree, catalog)
    if params:
        applicable.append("parameter")
    if _add_options(tree, catalog):
        applicable.append("add")
    flips = [n.id for n in tree.root.walk() if n.kind in (NodeKind.SELECTOR, NodeKind.SEQUENCE)]
    if flips:
        applicable.append("flip")
    deletes = _delete_options(tree)
    if deletes:
        applicable.append("delete")

    while applicable:
        op = rng.choice(applicable)
        out = None
        if op == "parameter":
            nid, spec = rng.choice(params)
            out = tree.copy()
            node = out.find(nid)
            node.params[spec.name] = float(flip_param(spec, node.params[spec.name], rng))
        elif op == "add":
            out = _try_add(tree, catalog, rng, max_depth, max_width)
        elif op == "flip":
            out = tree.copy()
            node = out.find(rng.choice(flips))
            node.kind = NodeKind.SEQUENCE if node.kind is NodeKind.SELECTOR else NodeKind.SELECTOR
        else:
            out = tree.copy()
            remove_subtree(out, rng.choice(deletes))
        if out is not None:
            out.provenance = dict(tree.provenance, operator=op)
            return out
        applicable.remove(op)
    out = tree.copy()
    out.provenance = dict(tree.provenance, operator="none")
    return out


# --------------------------------------------------------------------------
# crossover


def _repair(tree: BehaviorTree):
    """Collapse decorator->decorator edges and drop childless internal nodes."""
    changed = True
    while changed:
        changed = False
        if tree.root.kind is NodeKind.DECORATOR and tree.root.child is not None \
                and tree.root.child.kind is NodeKind.DECORATOR:
            tree.root = tree.root.child
            changed = True
        for node in list(tree.root.walk()):
            for i, c in enumerate(node.children):
                if c.kind is NodeKind.DECORATOR and c.child is not None \
                        and c.child.kind is NodeKind.DECORATOR:
                    if node.kind is NodeKind.DECORATOR:
                        continue  # handled when the parent itself is visited
                    node.children[i] = c.child
                    changed = True
        for node in list(tree.root.walk()):
            for c in list(node.children):
                needs = c.kind in (NodeKind.SELECTOR, NodeKind.SEQUENCE, NodeKind.PARALLEL,
                                   NodeKind.DECORATOR)
                if needs and not c.children:
                    _detach(node, c)
                    changed = True


def crossover(a: BehaviorTree, b: BehaviorTree, rng, catalog: Optional[TemplateCatalog] = None,
              max_depth: Optional[int] = None, max_width: Optional[int] = None, tries: int = 20):
    """Swap one non-root subtree between ``a`` and ``b``; returns ``(a', b')``.

    When no swap yields two valid trees within ``tries`` attempts both parents
    come back unchanged with ``provenance["operator"] == "crossover-failed"``.
    """
    ids_a = [n.id for n in a.root.walk() if n is not a.root]
    ids_b = [n.id for n in b.root.walk() if n is not b.root]
    if ids_a and ids_b:
        for _ in range(tries):
            ca, cb = a.copy(), b.copy()
            pa = _path_to(ca.root, rng.choice(ids_a))
            pb = _path_to(cb.root, rng.choice(ids_b))
            na, nb = pa[-1], pb[-1]
            # fresh ids for the incoming subtrees keep ids unique per tree
            into_a, into_b = copy.deepcopy(nb), copy.deepcopy(na)
            renumber(into_a, ca.max_id() + 1)
            renumber(into_b, cb.max_id() + 1)
            pa[-2].children = [into_a if c is na else c for c in pa[-2].children]
            pb[-2].children = [into_b if c is nb else c for c in pb[-2].children]
            _repair(ca)
            _repair(cb)
            if all(not validate(t, catalog, strict=True) and _within(t, max_depth, max_width)
                   for t in (ca, cb)):
                ca.provenance = dict(a.provenance, operator="crossover")
                cb.provenance = dict(b.provenance, operator="crossover")
                return ca, cb
    ca, cb = a.copy(), b.copy()
    ca.provenance = dict(a.provenance, operator="crossover-failed")
    cb.provenance = dict(b.provenance, operator="crossover-failed")
    return ca, cb


# --------------------------------------------------------------------------
# population


def random_tree(catalog: TemplateCatalog, rng, name: str = "tree", additions: Optional[int] = None,
                max_depth: Optional[int] = 12, max_width: Optional[int] = 12) -> BehaviorTree:
    if not catalog.actions:
        raise ValueError("catalog has no actions")
    root = TreeNode(0, NodeKind.SELECTOR, children=[_new_templated(NodeKind.ACTION, catalog, rng, 1)])
    tree = BehaviorTree(name, root)
    for _ in range(additions if additions is not None else rng.randint(2, 8)):
        grown = _try_add(tree, catalog, rng, max_depth, max_width)
        if grown is None:
            break
        tree = grown
    tree.provenance = {"operator": "random"}
    return tree


def init_population(catalog: TemplateCatalog, N: int, seed: int, library: Optional[list] = None,
                    max_depth: Optional[int] = 12, max_width: Optional[int] = 12) -> Population:
    if N < 2:
        raise ValueError("population size must be >= 2")
    if not len(catalog) or not catalog.actions:
        raise ValueError("catalog is empty")
    rng = stream(seed, "init")
    trees = []
    if library:
        for j in range(N):
            src = library[j % len(library)]
            t = src.copy()
            if j >= len(library):
                t = mutate(t, catalog, rng, max_depth, max_width)
            t.provenance = dict(t.provenance, source=src.name)
            trees.append(t)
    else:
        seen = set()
        while len(trees) < N:
            t = random_tree(catalog, rng, f"random{len(trees)}", max_depth=max_depth, max_width=max_width)
            key = structure_key(t)
            if key in seen and len(seen) < 50 * N:
                continue
            seen.add(key)
            trees.append(t)
    return Population(0, [Individual(i, t) for i, t in enumerate(trees)])


# --------------------------------------------------------------------------
# selection


def selection_counts(K: int, EL: float, RW: float, RR: float):
    n_el = math.floor(EL * K + 1e-9)
    n_rw = math.floor(RW * K + 1e-9)
    if RW > 0 and n_rw == 0 and n_el < K:
        n_rw = 1
    return n_el, n_rw, K - n_el - n_rw


def rank_order(individuals) -> list:
    """Worst first; ties put the higher id lower so lower ids rank higher."""
    return sorted(individuals, key=lambda i: (i.fitness, -i.id))


def rank_roulette(candidates: list, count: int, rng) -> list:
    """Draw ``count`` distinct candidates, weight = rank (best = len)."""
    ranked = rank_order(candidates)
    weights = list(range(1, len(ranked) + 1))
    chosen = []
    for _ in range(min(count, len(ranked))):
        total = sum(weights)
        r = rng.random() * total
        acc = 0.0
        pick = len(ranked) - 1
        for j, w in enumerate(weights):
            acc += w
            if r < acc:
                pick = j
                break
        chosen.append(ranked.pop(pick))
        weights.pop(pick)
    return chosen


def select(individuals: list, params: EvolutionParams, rng):
    """Return ``(survivors, pool)``: K_elite distinct survivors and the rest."""
    K = params.K_elite
    if K > len(individuals):
        raise ValueError(f"K_elite={K} exceeds population size {len(individuals)}")
    if any(i.fitness is None for i in individuals):
        raise ValueError("all individuals must be evaluated before selection")
    n_el, n_rw, n_rr = selection_counts(K, params.EL, params.RW, params.RR)
    by_fit = sorted(individuals, key=lambda i: (-i.fitness, i.id))
    elite = by_fit[:n_el]
    rest = by_fit[n_el:]
    roulette = rank_roulette(rest, n_rw, rng)
    taken = {id(i) for i in elite + roulette}
    remaining = [i for i in individuals if id(i) not in taken]
    randoms = rng.sample(remaining, n_rr)
    survivors = elite + roulette + randoms
    chosen = {id(i) for i in survivors}
    pool = [i for i in individuals if id(i) not in chosen]
    return survivors, pool


# --------------------------------------------------------------------------
# plateau and rates


def detect_plateau(history: list, epsilon: float) -> bool:
    """Sum of squared slot-wise fitness changes between the last two
    generations is below ``epsilon``.  Slots are compared after sorting so a
    reordering by selection is not mistaken for change."""
    if len(history) < 2:
        raise ValueError("need at least two generations")
    prev, cur = history[-2], history[-1]
    if len(prev) != len(cur):
        raise ValueError("fitness vectors differ in length")
    total = sum((x - y) ** 2 for x, y in zip(sorted(cur), sorted(prev)))
    return total < epsilon


def adapt_rates(Pm: float, Pc: float, params: EvolutionParams, stalled_generations: int):
    """One step of the linear ramp toward (PmMax, PcMax)."""
    if stalled_generations < params.NG:
        return Pm, Pc
    ramp = params.rate_ramp_generations

    def step(v, base, top):
        nv = v + (top - base) / ramp
        return top if nv >= top - 1e-12 else nv

    return step(Pm, params.Pm, params.PmMax), step(Pc, params.Pc, params.PcMax)


# --------------------------------------------------------------------------
# anti-bloat


def bloat_candidates(tree: BehaviorTree) -> list:
    """Nodes one or two levels under the root with weight = subtree depth."""
    out = []
    level1 = list(tree.root.children)
    for n in level1 + [g for c in level1 for g in c.children]:
        if _cut_point(_path_to(tree.root, n.id)) is not None:
            out.append((n, metrics(n).depth))
    return out


def choose_bloat_candidate(tree: BehaviorTree, rng):
    cands = bloat_candidates(tree)
    if not cands:
        return None
    total = sum(w for _, w in cands)
    r = rng.random() * total
    acc = 0.0
    for node, w in cands:
        acc += w
        if r < acc:
            return node
    return cands[-1][0]


def anti_bloat(tree: BehaviorTree, evaluate: Callable, tolerance: float, rng,
               baseline: Optional[float] = None) -> BehaviorTree:
    """Try removing one near-root subtree; keep the removal when fitness stays
    within ``tolerance`` (relative).  Returns the original object when the
    subtree is put back."""
    node = choose_bloat_candidate(tree, rng)
    if node is None:
        return tree
    base = evaluate(tree) if baseline is None else baseline
    pruned = tree.copy()
    remove_subtree(pruned, node.id)
    f = evaluate(pruned)
    if abs(f - base) <= tolerance * abs(base):
        pruned.provenance = dict(tree.provenance, pruned=node.id)
        return pruned
    return tree


# --------------------------------------------------------------------------
# evaluation backends


class ArenaEvaluator:
    """Scores trees by simulated rounds against rotating batches of peers.

    ``evaluate`` plays ``k_rounds`` rounds per tree and averages the raw
    metrics; ``replay`` re-runs exactly those rounds with a substitute tree,
    which is what anti-bloat compares against.
    """

    def __init__(self, config, catalog, seed: int, k_rounds: int = 3, jobs: int = 1,
                 library: Optional[dict] = None):
        from .arena import Arena
        self.arena = Arena(config, catalog)
        self.config = config
        self.seed = seed
        self.k_rounds = k_rounds
        self.jobs = jobs
        self.library = library
        self._records = {}

    def _play(self, tasks):
        if self.jobs > 1 and len(tasks) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(self.jobs) as ex:
                results = list(ex.map(_round_worker, [(self.config, t, s, self.library)
                                                     for t, s in tasks]))
        else:
            results = []
            for trees, seed in tasks:
                fb, _ = self.arena.run(trees, seed, library=self.library, record_exec=False)
                results.append(fb)
        return results

    def play(self, trees: list, seed: int) -> list:
        """One round; ``(raw, crashed)`` per tree, in order."""
        fb = self._play([(trees, seed)])[0]
        return [(dict(m), c) for m, c in zip(fb.agents, fb.crashed)]

    def evaluate(self, trees: list, peers: list, tag) -> list:
        n_agents = self.config.agent_count
        records = {i: [] for i in range(len(trees))}
        tasks, slots = [], []
        for r in range(self.k_rounds):
            rng = stream(self.seed, "eval", *tag, r)
            order = rng.sample(range(len(trees)), len(trees))
            for b in range(0, len(order), n_agents):
                idxs = order[b:b + n_agents]
                lineup = [trees[i] for i in idxs]
                pool = peers or trees
                while len(lineup) < n_agents:
                    lineup.append(rng.choice(pool))
                seed = derive_seed(self.seed, "eval", *tag, r, b)
                tasks.append((lineup, seed))
                slots.append(idxs)
                for slot, i in enumerate(idxs):
                    records[i].append((len(tasks) - 1, slot))
        results = self._play(tasks)
        out = []
        for i in range(len(trees)):
            fbs = [(results[t], s) for t, s in records[i]]
            out.append(_average(fbs))
            self._records[(tag, i)] = [(tasks[t][0], tasks[t][1], s) for t, s in records[i]]
        return out

    def replay(self, tag, index: int, tree: BehaviorTree):
        recs = self._records[(tag, index)]
        tasks = []
        for lineup, seed, slot in recs:
            lineup = list(lineup)
            lineup[slot] = tree
            tasks.append((lineup, seed))
        results = self._play(tasks)
        return _average([(fb, slot) for fb, (_, _, slot) in zip(results, recs)])

    def forget(self, tag):
        for key in [k for k in self._records if k[0] == tag]:
            del self._records[key]


def _round_worker(args):
    from .arena import Arena
    config, trees, seed, library = args
    fb, _ = Arena(config).run(trees, seed, library=library, record_exec=False)
    return fb


def _average(results):
    """Average raw metrics of one agent slot over rounds; (raw, crashed)."""
    from .arena import METRICS
    crashed = any(fb.crashed[s] for fb, s in results)
    if crashed:
        return dict.fromkeys(METRICS, 0.0), True
    raw = {m: sum(fb.agents[s][m] for fb, s in results) / len(results) for m in METRICS}
    return raw, False


# --------------------------------------------------------------------------
# main loop


@dataclass
class ArchiveEntry:
    tree: BehaviorTree
    cls: str
    targets: dict
    fitness: float
    feedback: dict
    generation: int

    @property
    def name(self) -> str:
        return self.tree.name


@dataclass
class EvolutionReport:
    history: list = field(default_factory=list)  # [(generation, [(name, fitness)])]
    archive: dict = field(default_factory=dict)  # class -> [ArchiveEntry]
    crashes: list = field(default_factory=list)  # [(generation, name)]
    events: list = field(default_factory=list)  # [(generation, kind, detail)]
    created: int = 0
    crashed: int = 0
    failed_metrics: int = 0
    restarts: int = 0
    stopped: bool = False
    final_population: list = field(default_factory=list)

    @property
    def classified(self) -> int:
        return sum(len(v) for v in self.archive.values())

    def funnel(self) -> list:
        return [
            ("created", self.created),
            ("crashed", self.crashed),
            ("unclassified", self.failed_metrics),
            ("classified", self.classified),
        ]


@dataclass
class DifficultySpec:
    metrics: list  # MetricSpec
    classes: list  # DifficultyClass
    eps: float = 1e-4

    def __post_init__(self):
        if not self.classes:
            raise ValueError("no difficulty classes defined")
        self.classes = dif.check_ranks(self.classes)
        known = {m.name for m in self.metrics}
        for c in self.classes:
            missing = set(c.bounds) - known
            if missing:
                raise ValueError(f"class {c.name!r} uses unknown metric(s) {sorted(missing)}")

    def normalize(self, raw: dict) -> dict:
        """Normalized values of the metrics this spec declares."""
        return dif.normalize({m.name: raw[m.name] for m in self.metrics}, self.metrics)

    def get(self, name):
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)


def run_evolution(catalog: TemplateCatalog, sim, params: EvolutionParams, spec: DifficultySpec,
                  seed: int, library: Optional[list] = None,
                  on_generation: Optional[Callable] = None) -> EvolutionReport:
    """Evolve trees and archive those whose feedback falls in a difficulty class.

    ``sim`` needs ``evaluate(trees, peers, tag) -> [(raw, crashed)]`` and
    ``replay(tag, index, tree) -> (raw, crashed)``.
    """
    rng = stream(seed, "evolve")
    ids = itertools.count()
    report = EvolutionReport(archive={c.name: [] for c in spec.classes})
    seen_names = set()
    limits = dict(max_depth=params.max_depth, max_width=params.max_width)

    def score(raw, targets, cls_name):
        norm = spec.normalize(raw)
        cls = spec.get(cls_name)
        return norm, dif.class_fitness(norm, targets, cls, spec.eps)

    def fresh_population(restart, gen):
        pop = init_population(catalog, params.N, derive_seed(seed, "init", restart),
                              library, **limits)
        out = []
        for j, ind in enumerate(pop.individuals):
            iid = next(ids)
            cls = spec.classes[j % len(spec.classes)]
            tree = ind.tree.copy(f"bt{iid:05d}")
            tree.provenance = dict(tree.provenance, generation=gen)
            out.append(Individual(iid, tree, cls.name, dif.sample_targets(cls, seed, "ind", iid),
                                  generation=gen))
        return out

    def evaluate(inds, peers, gen, tag):
        results = sim.evaluate([i.tree for i in inds], [p.tree for p in peers], tag)
        for ind, (raw, crashed) in zip(inds, results):
            ind.raw, ind.crashed = raw, crashed
            ind.feedback, ind.fitness = score(raw, ind.targets, ind.cls)
            if crashed:
                report.crashes.append((gen, ind.name))
        if inds and all(i.crashed for i in inds):
            raise EvolutionError(f"every individual crashed in generation {gen}")

    def archive(inds, gen):
        for ind in inds:
            if ind.name in seen_names:
                continue
            seen_names.add(ind.name)
            report.created += 1
            if ind.crashed:
                report.crashed += 1
                continue
            c = dif.classify(ind.feedback, spec.classes)
            if c is None:
                report.failed_metrics += 1
                continue
            targets, fit = dict(ind.targets), ind.fitness
            if c != ind.cls:
                # scored later against the class it landed in
                targets = dif.sample_targets(spec.get(c), seed, "ind", ind.id)
                fit = dif.class_fitness(ind.feedback, targets, spec.get(c), spec.eps)
            report.archive[c].append(ArchiveEntry(ind.tree, c, targets, fit, dict(ind.feedback), gen))

    def record(pop, gen):
        if report.history and report.history[-1][0] == gen:
            report.history.pop()
        report.history.append((gen, [(i.name, i.fitness) for i in pop]))

    def make_child(parent_pool, survivors, gen, Pm, Pc):
        parent = rng.choice(parent_pool)
        tree = parent.tree.copy()
        ops = []
        if rng.random() < Pc:
            mates = [p for p in parent_pool if p is not parent] or [s for s in survivors]
            if mates:
                mate = rng.choice(mates)
                a2, _ = crossover(tree, mate.tree, rng, catalog, **limits)
                if a2.provenance.get("operator") == "crossover":
                    tree = a2
                    ops.append(f"crossover:{mate.name}")
        if rng.random() < Pm or not ops:
            tree = mutate(tree, catalog, rng, **limits)
            ops.append(tree.provenance.get("operator", "none"))
        iid = next(ids)
        tree.name = f"bt{iid:05d}"
        tree.provenance = {"generation": gen, "parent": parent.name, "operator": "+".join(ops)}
        if "source" in parent.tree.provenance:
            tree.provenance["source"] = parent.tree.provenance["source"]
        return Individual(iid, tree, parent.cls, dict(parent.targets), generation=gen)

    restart = 0
    pop = fresh_population(restart, 0)
    evaluate(pop, pop, 0, (restart, 0))
    archive(pop, 0)
    record(pop, 0)
    if on_generation:
        on_generation(0, pop, report)
    Pm, Pc = params.Pm, params.Pc
    best_avg = _mean(i.fitness for i in pop)
    stalled = 0

    for gen in range(1, params.maxNumberOfGenerations + 1):
        survivors, pool = select(pop, params, rng)
        parents = pool or survivors
        offspring = [make_child(parents, survivors, gen, Pm, Pc)
                     for _ in range(params.N - len(survivors))]
        tag = (restart, gen)
        evaluate(offspring, pop, gen, tag)
        for j, child in enumerate(offspring):
            if child.crashed:
                continue

            def fit_of(tree, j=j, child=child):
                raw, crashed = sim.replay(tag, j, tree)
                return score(raw, child.targets, child.cls)[1] if not crashed else 0.0

            pruned = anti_bloat(child.tree, fit_of, params.bloat_tolerance, rng, child.fitness)
            if pruned is not child.tree:
                raw, crashed = sim.replay(tag, j, pruned)
                child.tree = pruned
                child.raw, child.crashed = raw, crashed
                child.feedback, child.fitness = score(raw, child.targets, child.cls)
        if hasattr(sim, "forget"):
            sim.forget(tag)
        prev_fit = [i.fitness for i in pop]
        pop = survivors + offspring
        archive(offspring, gen)
        record(pop, gen)
        cur_fit = [i.fitness for i in pop]

        plateau = detect_plateau([prev_fit, cur_fit], params.epsilon_plateau)
        if plateau:
            report.events.append((gen, "plateau", None))
        avg = _mean(cur_fit)
        if avg > best_avg:
            best_avg = avg
            stalled = 0
            if (Pm, Pc) != (params.Pm, params.Pc):
                Pm, Pc = params.Pm, params.Pc
                report.events.append((gen, "reset", (Pm, Pc)))
        else:
            stalled += 1
        at_max = Pm >= params.PmMax and Pc >= params.PcMax
        if stalled >= params.NG:
            if at_max and plateau:
                if restart == 0:
                    restart += 1
                    report.restarts += 1
                    report.events.append((gen, "restart", None))
                    pop = fresh_population(restart, gen)
                    evaluate(pop, pop, gen, (restart, gen, "init"))
                    archive(pop, gen)
                    record(pop, gen)
                    Pm, Pc = params.Pm, params.Pc
                    best_avg = _mean(i.fitness for i in pop)
                    stalled = 0
                else:
                    report.events.append((gen, "stop", None))
                    report.stopped = True
                    if on_generation:
                        on_generation(gen, pop, report)
                    break
            elif not at_max:
                Pm, Pc = adapt_rates(Pm, Pc, params, stalled)
                report.events.append((gen, "ramp", (round(Pm, 12), round(Pc, 12))))
        if on_generation:
            on_generation(gen, pop, report)
    report.final_population = pop
    return report


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)
