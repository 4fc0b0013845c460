"""Post-evolution pruning: tournament re-scoring, rank elimination,
similarity clustering and player votes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import difficulty as dif
from .rng import derive_seed, stream
from .tree import BehaviorTree, NodeKind, TemplateCatalog, TreeNode

log = logging.getLogger(__name__)

GROUPS = (NodeKind.SELECTOR, NodeKind.SEQUENCE, NodeKind.PARALLEL)
GATES = (NodeKind.CONDITION, NodeKind.DECORATOR)
LEAVES = (NodeKind.ACTION, NodeKind.PROXY)
EXTRA_CHILD_PENALTY = 0.2
TEMPLATE_MISMATCH = 0.2


@dataclass
class TournamentConfig:
    RT: int = 20
    batch_size: int = 8
    seed: int = 0
    mixed: bool = False
    max_redraws: int = 5

    def __post_init__(self):
        if self.RT < 1:
            raise ValueError("RT must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class TScoreRow:
    rounds_played: int = 0
    score_sum: float = 0.0

    @property
    def tscore(self) -> float:
        return self.score_sum / self.rounds_played


@dataclass
class TScoreTable:
    rows: dict = field(default_factory=dict)  # tree name -> TScoreRow
    removed: list = field(default_factory=list)  # never drawn
    discarded_rounds: int = 0

    def add(self, name: str, score: float):
        row = self.rows.setdefault(name, TScoreRow())
        row.rounds_played += 1
        row.score_sum += score

    def tscore(self, name: str) -> Optional[float]:
        row = self.rows.get(name)
        return row.tscore if row else None

    def scores(self) -> dict:
        return {n: r.tscore for n, r in self.rows.items()}

    def to_tsv(self) -> str:
        lines = ["tree\trounds_played\tscore_sum\ttscore"]
        for name in sorted(self.rows):
            r = self.rows[name]
            lines.append(f"{name}\t{r.rounds_played}\t{r.score_sum!r}\t{r.tscore!r}")
        return "\n".join(lines) + "\n"


@dataclass
class Member:
    """A classified tree as the pruning stages see it."""

    tree: BehaviorTree
    cls: str
    targets: dict

    @property
    def name(self) -> str:
        return self.tree.name


def draw_batches(classes: dict, tconfig: TournamentConfig, rng):
    """One tournament round's batches: ``[(scored members, filler members)]``."""
    out = []
    groups = [sum((classes[c] for c in sorted(classes)), [])] if tconfig.mixed else \
        [classes[c] for c in sorted(classes)]
    for members in groups:
        if not members:
            continue
        size = tconfig.batch_size
        if len(members) >= size:
            out.append((rng.sample(members, size), []))
        else:
            fill = [rng.choice(members) for _ in range(size - len(members))]
            out.append((list(members), fill))
    return out


def tournament(classes: dict, sim, tconfig: TournamentConfig, spec) -> TScoreTable:
    """Score every tree by its class fitness over RT rounds of batched play.

    ``sim.play(trees, seed)`` returns one ``(raw, crashed)`` pair per tree.
    """
    for c, members in classes.items():
        if not members:
            raise ValueError(f"class {c!r} is empty")
    rng = stream(tconfig.seed, "tournament")
    table = TScoreTable()
    for r in range(tconfig.RT):
        for b, (scored, fill) in enumerate(draw_batches(classes, tconfig, rng)):
            for attempt in range(tconfig.max_redraws + 1):
                seed = derive_seed(tconfig.seed, "tournament", r, b, attempt)
                results = sim.play([m.tree for m in scored + fill], seed)
                if not any(crashed for _, crashed in results):
                    break
                table.discarded_rounds += 1
                log.warning("tournament round %d batch %d: crash, redrawing", r, b)
            else:
                continue
            for m, (raw, _) in zip(scored, results):
                norm = spec.normalize(raw)
                table.add(m.name, dif.class_fitness(norm, m.targets, spec.get(m.cls), spec.eps))
    names = {m.name for members in classes.values() for m in members}
    table.removed = sorted(names - set(table.rows))
    return table


def class_averages(classes: dict, tscores: dict) -> dict:
    out = {}
    for c, members in classes.items():
        vals = [tscores[m.name] for m in members if m.name in tscores]
        out[c] = sum(vals) / len(vals) if vals else None
    return out


def eliminate_by_rank(classes: dict, tscores: dict, order: list) -> dict:
    """Drop trees scoring below the next easier class's average.

    ``order`` lists class names hardest first.  Trees without a tournament
    score are dropped too.  The easiest class is exempt.
    """
    avg = class_averages(classes, tscores)
    out = {}
    for r, c in enumerate(order):
        members = [m for m in classes.get(c, []) if m.name in tscores]
        below = avg.get(order[r + 1]) if r + 1 < len(order) else None
        if below is not None:
            members = [m for m in members if not tscores[m.name] < below]
        if classes.get(c) and not members:
            log.warning("class %s emptied by rank elimination", c)
        out[c] = members
    return out


# --------------------------------------------------------------------------
# similarity


def params_diff(a: TreeNode, b: TreeNode, catalog: Optional[TemplateCatalog] = None) -> float:
    if a.name != b.name:
        return TEMPLATE_MISMATCH
    shared = sorted(set(a.params) & set(b.params))
    if not shared:
        return 0.0
    t = catalog.get(a.name) if catalog is not None else None
    total = 0.0
    for p in shared:
        width = t.param(p).width if t is not None else 1.0
        total += abs(a.params[p] - b.params[p]) / width if width > 0 else 0.0
    return total / len(shared)


def _children_sim(xs, ys, catalog) -> float:
    total = sum(similarity(x, y, catalog) for x, y in zip(xs, ys))
    return total + EXTRA_CHILD_PENALTY * abs(len(xs) - len(ys))


def similarity(a: TreeNode, b: TreeNode, catalog: Optional[TemplateCatalog] = None) -> float:
    """Ordered dissimilarity of two subtrees; the first matching rule wins."""
    if a.kind in GROUPS and b.kind != a.kind:
        return 1.0
    if a.kind in GATES and b.kind not in GATES:
        return 0.2 + (similarity(a.child, b, catalog) if a.children else 0.0)
    if a.kind in GATES and b.kind in GATES:
        return params_diff(a, b, catalog) + _children_sim(a.children, b.children, catalog)
    if a.kind in LEAVES and b.kind in LEAVES:
        return 0.0 if (a.kind, a.name) == (b.kind, b.name) else 0.2
    if a.children and b.children:
        return _children_sim(a.children, b.children, catalog)
    return 0.0


def distance(a, b, catalog: Optional[TemplateCatalog] = None) -> float:
    a = a.root if isinstance(a, BehaviorTree) else a
    b = b.root if isinstance(b, BehaviorTree) else b
    return max(similarity(a, b, catalog), similarity(b, a, catalog))


def distance_matrix(trees: list, catalog: Optional[TemplateCatalog] = None) -> list:
    n = len(trees)
    d = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d[i][j] = d[j][i] = distance(trees[i], trees[j], catalog)
    return d


# --------------------------------------------------------------------------
# clustering


@dataclass
class ClusterAssignment:
    names: list
    medoids: list  # indices into names
    labels: list  # per member: index into medoids
    cost: float

    @property
    def k(self) -> int:
        return len(self.medoids)

    @property
    def representatives(self) -> list:
        return [self.names[i] for i in self.medoids]

    def members_of(self, c: int) -> list:
        return [self.names[i] for i, lab in enumerate(self.labels) if lab == c]


def medoid_cost(d: list, medoids) -> float:
    return sum(min(row[m] for m in medoids) for row in d)


def _assign(d, medoids):
    return [min(range(len(medoids)), key=lambda c: (row[medoids[c]], c)) for row in d]


def _swap(d, medoids):
    """Best-improvement PAM swap phase; returns a locally optimal medoid list."""
    n = len(d)
    medoids = list(medoids)
    cost = medoid_cost(d, medoids)
    while True:
        best = (cost, None, None)
        for mi in range(len(medoids)):
            for h in range(n):
                if h in medoids:
                    continue
                trial = medoids[:mi] + [h] + medoids[mi + 1:]
                c = medoid_cost(d, trial)
                if c < best[0] - 1e-12:
                    best = (c, mi, h)
        if best[1] is None:
            return medoids, cost
        cost, mi, h = best
        medoids[mi] = h


def _build(d, k):
    n = len(d)
    medoids = [min(range(n), key=lambda i: (sum(d[i]), i))]
    while len(medoids) < k:
        cand = [h for h in range(n) if h not in medoids]
        medoids.append(min(cand, key=lambda h: (medoid_cost(d, medoids + [h]), h)))
    return medoids


def pam(d: list, k: int, seed: int = 0, restarts: int = 8):
    """K-medoids on a precomputed distance matrix: BUILD then SWAP, plus
    seeded random restarts.  Returns (medoids, cost)."""
    n = len(d)
    if not 1 <= k <= n:
        raise ValueError(f"K_cluster={k} must be within 1..{n}")
    best_m, best_c = _swap(d, _build(d, k))
    rng = stream(seed, "cluster")
    for _ in range(restarts):
        m, c = _swap(d, rng.sample(range(n), k))
        if c < best_c - 1e-12 or (abs(c - best_c) <= 1e-12 and sorted(m) < sorted(best_m)):
            best_m, best_c = m, c
    return sorted(best_m), best_c


def cluster(trees: list, k: int, seed: int = 0, catalog: Optional[TemplateCatalog] = None,
            restarts: int = 8) -> ClusterAssignment:
    if k > len(trees):
        raise ValueError(f"K_cluster={k} exceeds class size {len(trees)}")
    if k < 1:
        raise ValueError("K_cluster must be >= 1")
    d = distance_matrix(trees, catalog)
    medoids, cost = pam(d, k, seed, restarts)
    return ClusterAssignment([t.name for t in trees], medoids, _assign(d, medoids), cost)


# --------------------------------------------------------------------------
# votes


def read_votes(text: str) -> list:
    """Parse ``tree<TAB>voter`` lines; blank lines and ``#`` comments skipped."""
    votes = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ValueError(f"vote file line {n}: expected 'tree<TAB>voter'")
        votes.append((parts[0].strip(), parts[1].strip()))
    return votes


def ingest_votes(votes: list, classes: dict, threshold: int = 1):
    """Remove trees with at least ``threshold`` distinct voters.

    Returns ``(classes', removed: class -> [names], warnings)``.
    """
    if threshold < 1:
        raise ValueError("vote threshold must be >= 1")
    known = {m.name for members in classes.values() for m in members}
    voters = {}
    warnings = []
    for name, voter in votes:
        if name not in known:
            warnings.append(f"vote for unknown tree {name!r} skipped")
            continue
        voters.setdefault(name, set()).add(voter)
    for w in warnings:
        log.warning(w)
    out, removed = {}, {}
    for c, members in classes.items():
        out[c] = [m for m in members if len(voters.get(m.name, ())) < threshold]
        removed[c] = [m.name for m in members if len(voters.get(m.name, ())) >= threshold]
    return out, removed, warnings
