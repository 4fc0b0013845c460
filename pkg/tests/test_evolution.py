import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from btforge.arena import ArenaConfig, run_round
from btforge.difficulty import DifficultyClass, MetricBound, MetricSpec
from btforge.evolution import (DifficultySpec, EvolutionParams, Individual, _repair, adapt_rates, anti_bloat,
                               bloat_candidates, choose_bloat_candidate, crossover, detect_plateau, flip_param,
                               init_population, mutate, rank_roulette, remove_subtree, run_evolution, select,
                               selection_counts)
from btforge.tree import NodeKind, TemplateCatalog, metrics, parse, serialize, structure_key, validate
from conftest import any_tree

SEL_SEQ = {NodeKind.SELECTOR, NodeKind.SEQUENCE}
GATES = {NodeKind.CONDITION, NodeKind.DECORATOR}


# ---------------------------------------------------------------- diff oracle

def _index(tree):
    nodes, parent = {}, {}
    for n in tree.root.walk():
        nodes[n.id] = n
        for c in n.children:
            parent[c.id] = n.id
    return nodes, parent


def _attrs(n, with_k=True):
    return (n.kind, n.name, dict(n.params), n.order) + ((n.k,) if with_k else ())


def _kids(n):
    return [c.id for c in n.children]


def _subtree_ids(n):
    return {m.id for m in n.walk()}


def diff_signatures(a, b) -> set:
    """Which single-edit signatures explain the change from ``a`` to ``b``."""
    na, pa = _index(a)
    nb, pb = _index(b)
    sigs = set()
    if a.root.id != b.root.id and set(na) == set(nb):
        return sigs
    if set(na) == set(nb):
        shape = all(_kids(na[i]) == _kids(nb[i]) and na[i].name == nb[i].name and na[i].k == nb[i].k
                    and na[i].order == nb[i].order for i in na)
        kinds = [i for i in na if na[i].kind != nb[i].kind]
        params = [i for i in na if na[i].params != nb[i].params]
        if shape and not params and len(kinds) == 1 and {na[kinds[0]].kind, nb[kinds[0]].kind} == SEL_SEQ:
            sigs.add("flip")
        if shape and not kinds and len(params) == 1:
            pa_, pb_ = na[params[0]].params, nb[params[0]].params
            if pa_.keys() == pb_.keys() and sum(pa_[k] != pb_[k] for k in pa_) == 1:
                sigs.add("parameter")
        return sigs
    new, gone = set(nb) - set(na), set(na) - set(nb)
    if len(new) == 1 and not gone:
        x = next(iter(new))
        node, p = nb[x], pb.get(x)
        if p is not None and nb[p].kind in SEL_SEQ:
            expected = list(_kids(nb[p]))
            if node.kind is NodeKind.ACTION and not node.children:
                expected.remove(x)
                other_ok = True
            elif node.kind in GATES and len(node.children) == 1:
                expected[expected.index(x)] = node.children[0].id
                other_ok = node.kind is not NodeKind.DECORATOR or node.children[0].kind is not NodeKind.DECORATOR
            else:
                other_ok = False
            rest = all(_attrs(na[i]) == _attrs(nb[i]) and (i == p or i == x or _kids(na[i]) == _kids(nb[i]))
                       for i in na)
            if other_ok and rest and expected == _kids(na[p]):
                sigs.add("add")
    if gone and not new:
        tops = [i for i in gone if pa.get(i) not in gone]
        if len(tops) == 1 and tops[0] != a.root.id:
            t = tops[0]
            p = pa[t]
            rest = all(_attrs(na[i], with_k=i != p) == _attrs(nb[i], with_k=i != p) and
                       [c for c in _kids(na[i]) if c not in gone] == _kids(nb[i]) for i in nb)
            if gone == _subtree_ids(na[t]) and rest:
                sigs.add("delete")
    return sigs


# ---------------------------------------------------------------- mutation

@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_mutation_closure_and_single_signature(catalog, seed):
    rng = random.Random(seed)
    t = any_tree(rng, catalog, max_depth=4)
    out = mutate(t, catalog, rng)
    assert validate(out, catalog) == []
    op = out.provenance["operator"]
    assert diff_signatures(t, out) == {op}
    assert serialize(t) == serialize(any_tree(random.Random(seed), catalog, max_depth=4))  # input untouched


def test_mutation_operators_all_reachable(catalog):
    rng = random.Random(0)
    ops = Counter(mutate(any_tree(rng, catalog, 4), catalog, rng).provenance["operator"] for _ in range(2000))
    assert set(ops) == {"parameter", "add", "flip", "delete"}
    for v in ops.values():
        assert v > 200


def test_flip_selector_to_sequence(catalog):
    t = parse("(selector (action name=idle) (action name=fire_forward))")
    for seed in range(200):
        out = mutate(t, catalog, random.Random(seed))
        if out.provenance["operator"] == "flip":
            assert out.root.kind is NodeKind.SEQUENCE
            out.root.kind = NodeKind.SELECTOR
            assert structure_key(out) == structure_key(t)
            return
    pytest.fail("flip never chosen")


def test_delete_only_child_removes_parent():
    t = parse("(selector (sequence (action name=fire_forward)) (action name=idle))")
    fire = t.root.children[0].children[0].id
    assert remove_subtree(t, fire)
    assert [(n.id, n.kind, n.name) for n in t.root.walk()] == [(0, NodeKind.SELECTOR, None),
                                                                (3, NodeKind.ACTION, "idle")]
    assert not remove_subtree(parse("(selector (sequence (action name=idle)))"), 2)


def test_parameter_flip_respects_range(catalog):
    spec = catalog.get("low_health").param("threshold")
    rng = random.Random(1)
    v = 0.15
    for _ in range(5000):
        nv = flip_param(spec, v, rng)
        assert spec.lo <= nv <= spec.hi and nv != v
        v = nv


def test_mutate_nothing_applicable():
    empty = TemplateCatalog()
    t = parse("(action name=idle)")
    out = mutate(t, empty, random.Random(0))
    assert out.provenance["operator"] == "none"
    assert structure_key(out) == structure_key(t)


# ---------------------------------------------------------------- crossover

def _names(*trees):
    return Counter(n.name or n.kind.value for t in trees for n in t.root.walk())


def test_leaf_swap_conserves_node_multiset(catalog):
    a = parse("(selector (action name=idle) (action name=fire_forward))")
    b = parse("(sequence (action name=seek_cover) (action name=move_backward))")
    for seed in range(50):
        a2, b2 = crossover(a, b, random.Random(seed), catalog)
        assert a2.provenance["operator"] == "crossover"
        assert validate(a2, catalog, strict=True) == [] and validate(b2, catalog, strict=True) == []
        assert _names(a2, b2) == _names(a, b)
        assert _names(a2) != _names(a)


def test_repair_collapses_decorator_chain(catalog):
    t = parse("(selector (decorator name=invert (decorator name=chance p=0.5 (action name=idle))) "
              "(sequence (action name=idle)))")
    t.root.children[1].children = []  # left childless by a swap
    _repair(t)
    assert validate(t, catalog, strict=True) == []
    assert [(n.kind, n.name) for n in t.root.walk()] == [
        (NodeKind.SELECTOR, None), (NodeKind.DECORATOR, "chance"), (NodeKind.ACTION, "idle")]


def test_crossover_of_decorated_trees_always_valid(catalog):
    a = parse("(selector (decorator name=invert (action name=idle)) (decorator name=cooldown seconds=1 "
              "(sequence (action name=fire_forward))))")
    b = parse("(sequence (decorator name=chance p=0.3 (selector (action name=seek_cover))) "
              "(decorator name=time_limit seconds=2 (action name=move_backward)))")
    for seed in range(300):
        for t in crossover(a, b, random.Random(seed), catalog):
            assert validate(t, catalog, strict=True) == [], serialize(t)


def test_self_crossover_valid(catalog):
    rng = random.Random(4)
    for _ in range(200):
        t = any_tree(rng, catalog, 4, gates_only=True)
        for out in crossover(t, t, rng, catalog):
            assert validate(out, catalog, strict=True) == []
            assert len({n.id for n in out.root.walk()}) == metrics(out).node_count


def test_crossover_gives_up_and_returns_parents(catalog):
    a = parse("(selector (sequence (action name=idle) (action name=idle)))")
    b = parse("(selector (sequence (sequence (action name=idle))))")
    a2, b2 = crossover(a, b, random.Random(0), catalog, max_depth=3)
    assert a2.provenance["operator"] == "crossover-failed"
    assert serialize(a2.copy()) != "" and structure_key(a2) == structure_key(a)
    assert structure_key(b2) == structure_key(b)


# ---------------------------------------------------------------- population

def test_library_population_equals_library(catalog, suite):
    lib = [suite[n] for n in sorted(suite)]
    pop = init_population(catalog, 20, 3, lib)
    assert [structure_key(i.tree) for i in pop.individuals] == [structure_key(t) for t in lib]
    assert [i.tree.provenance["source"] for i in pop.individuals] == sorted(suite)


def test_library_cycled_and_mutated_past_its_length(catalog, suite):
    lib = [suite["strong"], suite["idle"]]
    pop = init_population(catalog, 5, 1, lib)
    assert [i.tree.provenance["source"] for i in pop.individuals] == ["strong", "idle"] * 2 + ["strong"]
    for i in pop.individuals:
        assert validate(i.tree, catalog) == []


def test_random_population_distinct_and_valid(catalog):
    pop = init_population(catalog, 8, 11)
    trees = [i.tree for i in pop.individuals]
    assert len(trees) == 8 and len({structure_key(t) for t in trees}) == 8
    for t in trees:
        assert validate(t, catalog, strict=True) == []


def test_population_preconditions(catalog):
    with pytest.raises(ValueError):
        init_population(catalog, 0, 1)
    with pytest.raises(ValueError):
        init_population(TemplateCatalog(), 4, 1)


# ---------------------------------------------------------------- selection

def _pop(fits):
    return [Individual(i, parse("(selector (action name=idle))", f"x{i}"), fitness=f) for i, f in enumerate(fits)]


def test_selection_counts():
    assert selection_counts(5, 0.75, 0.15, 0.10) == (3, 1, 1)
    assert selection_counts(4, 1.0, 0.0, 0.0) == (4, 0, 0)
    assert selection_counts(10, 0.5, 0.3, 0.2) == (5, 3, 2)


def test_all_equal_fitness_elite_lowest_ids():
    params = EvolutionParams(N=20)
    survivors, pool = select(_pop([1.0] * 20), params, random.Random(0))
    assert [s.id for s in survivors[:3]] == [0, 1, 2]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=30), st.integers(0, 10 ** 6))
def test_selection_partition(fits, seed):
    params = EvolutionParams(N=len(fits))
    pop = _pop(fits)
    survivors, pool = select(pop, params, random.Random(seed))
    ids = [s.id for s in survivors]
    assert len(ids) == params.K_elite == len(set(ids))
    assert not set(ids) & {p.id for p in pool}
    assert sorted(ids + [p.id for p in pool]) == list(range(len(fits)))
    n_el = selection_counts(params.K_elite, params.EL, params.RW, params.RR)[0]
    top = sorted(pop, key=lambda i: (-i.fitness, i.id))[:n_el]
    assert ids[:n_el] == [i.id for i in top]


def test_rank_roulette_frequencies():
    cands = _pop([5.0, 1.0, 9.0, 3.0])  # ranks: 9 -> 4, 5 -> 3, 3 -> 2, 1 -> 1
    rng = random.Random(8)
    n = 100_000
    counts = Counter(rank_roulette(cands, 1, rng)[0].id for _ in range(n))
    expected = {2: 0.4, 0: 0.3, 3: 0.2, 1: 0.1}
    for i, p in expected.items():
        assert abs(counts[i] / n - p) <= 0.01


def test_select_rejects_oversized_elite():
    with pytest.raises(ValueError):
        EvolutionParams(N=4, K_elite=5)
    params = EvolutionParams(N=20)
    with pytest.raises(ValueError):
        select(_pop([1.0] * 3), params, random.Random(0))


# ---------------------------------------------------------------- plateau and rates

def test_plateau_examples():
    assert detect_plateau([[1, 2, 3], [1, 2, 3]], 1e-4)
    assert not detect_plateau([[1.0, 0.0], [1.0, 0.01]], 1e-4)  # 1e-4 < 1e-4 is false
    assert not detect_plateau([[1, 2], [1, 2.5]], 1e-4)
    assert detect_plateau([[3, 1, 2], [1, 2, 3]], 1e-4)  # reordering is not change
    with pytest.raises(ValueError):
        detect_plateau([[1, 2], [1]], 1e-4)


def test_plateau_boundary_exact():
    # 0.25 - 0.24 is not exactly 0.01 in binary; use values whose square is exact
    assert not detect_plateau([[0.0], [2 ** -7]], 2 ** -14)
    assert detect_plateau([[0.0], [2 ** -7]], 2 ** -14 + 2 ** -40)


def test_rate_ramp():
    p = EvolutionParams(rate_ramp_generations=10, NG=5)
    assert adapt_rates(0.2, 0.1, p, 5) == pytest.approx((0.23, 0.13))
    assert adapt_rates(0.5, 0.4, p, 9) == (0.5, 0.4)
    assert adapt_rates(0.2, 0.1, p, 4) == (0.2, 0.1)


# ---------------------------------------------------------------- anti-bloat

TWO_CANDIDATES = "(selector (sequence (sequence (decorator name=invert (action name=idle))) (action name=idle)))"


def test_bloat_candidate_weights():
    t = parse(TWO_CANDIDATES)
    assert sorted(w for _, w in bloat_candidates(t)) == [1, 3]
    rng = random.Random(2)
    n = 100_000
    deep = sum(choose_bloat_candidate(t, rng).kind is NodeKind.SEQUENCE for _ in range(n))
    assert abs(deep / n - 0.75) <= 0.01


def test_anti_bloat_removes_neutral_subtree():
    t = parse(TWO_CANDIDATES)
    out = anti_bloat(t, lambda tree: 5.0, 0.05, random.Random(0))
    assert out is not t and metrics(out).node_count < metrics(t).node_count
    assert anti_bloat(parse("(action name=idle)"), lambda tree: 1.0, 0.05, random.Random(0)).root.name == "idle"


def test_anti_bloat_restores_firing_subtree(suite):
    cfg = ArenaConfig(agent_count=2, lives=1, max_round_ticks=900)
    idle = suite["idle"]

    def damage_fitness(tree):
        total = 0.0
        for seed in range(3):
            fb, _ = run_round([tree, idle], cfg, seed)
            total += fb.agents[0]["damage_dealt"]
        return 1.0 / (abs(1.0 - min(total / 300, 1.0)) + 1e-4)

    strong = suite["strong"]
    for seed in range(6):
        assert anti_bloat(strong, damage_fitness, 0.05, random.Random(seed)) is strong


# ---------------------------------------------------------------- main loop

class StubSim:
    def __init__(self, raw_of):
        self.raw_of = raw_of

    def evaluate(self, trees, peers, tag):
        return [(self.raw_of(t), False) for t in trees]

    def replay(self, tag, index, tree):
        return self.raw_of(tree), False


POINT = DifficultySpec([MetricSpec("kills", 0, 20)], [DifficultyClass("Only", 0, {"kills": MetricBound(0.9, 0.9)})])


def test_constant_stub_event_sequence(catalog, suite):
    params = EvolutionParams(N=8, NG=2, rate_ramp_generations=3, maxNumberOfGenerations=30)
    rep = run_evolution(catalog, StubSim(lambda t: {"kills": 3.0}), params, POINT, 1,
                        library=list(suite.values()))
    assert rep.events == [
        (1, "plateau", None),
        (2, "plateau", None), (2, "ramp", (0.3, 0.2)),
        (3, "plateau", None), (3, "ramp", (0.4, 0.3)),
        (4, "plateau", None), (4, "ramp", (0.5, 0.4)),
        (5, "plateau", None), (5, "restart", None),
        (6, "plateau", None),
        (7, "plateau", None), (7, "ramp", (0.3, 0.2)),
        (8, "plateau", None), (8, "ramp", (0.4, 0.3)),
        (9, "plateau", None), (9, "ramp", (0.5, 0.4)),
        (10, "plateau", None), (10, "stop", None),
    ]
    assert rep.restarts == 1 and rep.stopped


def _growth(t):
    return {"kills": float(metrics(t).node_count)}


def test_elitism_and_population_size(catalog, suite):
    params = EvolutionParams(N=10, NG=100, maxNumberOfGenerations=12)
    sizes = []
    rep = run_evolution(catalog, StubSim(_growth), params, POINT, 5, library=list(suite.values()),
                        on_generation=lambda g, pop, r: sizes.append(len(pop)))
    assert sizes == [10] * 13
    best = [max(f for _, f in entries) for _, entries in rep.history]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_evolution_reproducible(catalog, suite):
    params = EvolutionParams(N=8, NG=3, maxNumberOfGenerations=6)

    def go():
        rep = run_evolution(catalog, StubSim(_growth), params, POINT, 9, library=list(suite.values()))
        arch = {c: [(e.name, serialize(e.tree), e.fitness) for e in v] for c, v in rep.archive.items()}
        return rep.history, arch, rep.events

    assert go() == go()


def test_funnel_partitions_created(catalog, suite):
    params = EvolutionParams(N=8, NG=3, maxNumberOfGenerations=4)
    rep = run_evolution(catalog, StubSim(_growth), params, POINT, 2, library=list(suite.values()))
    f = dict(rep.funnel())
    assert f["created"] == f["crashed"] + f["unclassified"] + f["classified"]
    assert f["created"] == 8 + 4 * (8 - params.K_elite)
