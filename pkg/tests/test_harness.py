import random
import time

import pytest

from btforge.arena import Arena, ArenaConfig, run_round
from btforge.harness import coverage, determinism_check, exploit_scan, exploits_tsv
from btforge.pruning import Member
from btforge.tree import parse, serialize
from conftest import any_tree

SMALL = ArenaConfig(agent_count=4, max_round_ticks=600)


def _suite_traces(suite, catalog):
    names = sorted(suite)
    cfg = ArenaConfig(agent_count=4, max_round_ticks=1800)
    return [run_round([suite[n] for n in names[i:i + 4]], cfg, i, catalog, suite)[1] for i in range(0, 20, 4)]


def test_golden_suite_coverage_pinned(suite, catalog):
    rep = coverage(_suite_traces(suite, catalog), catalog)
    assert rep.template_coverage == 1.0
    assert len(rep.transition_coverage) == 38
    assert rep.parameter_diversity == {
        ("chance", "p"): 1, ("cooldown", "seconds"): 1, ("enemy_health_below", "threshold"): 1,
        ("go_to_position", "x"): 4, ("go_to_position", "y"): 4, ("low_ammo", "threshold"): 1,
        ("low_health", "threshold"): 3, ("time_limit", "seconds"): 1,
    }
    assert "never executed: -" in rep.summary(catalog)
    actions = {t.name for t in catalog.actions}
    assert all(a in actions and b in actions for a, b in rep.transition_coverage)


def test_coverage_additive(suite, catalog):
    traces = _suite_traces(suite, catalog)
    whole = coverage(traces, catalog)
    merged = coverage(traces[:2], catalog).merge(coverage(traces[2:], catalog))
    assert merged == whole
    assert whole.to_tsv() == merged.to_tsv()


def test_idle_agents_only_idle_transitions(catalog):
    idle = parse("(selector (action name=idle))")
    _, tr = run_round([idle, idle], ArenaConfig(agent_count=2, max_round_ticks=50), 0, catalog)
    rep = coverage([tr], catalog)
    assert rep.transition_coverage == {("idle", "idle")}
    assert rep.template_coverage == pytest.approx(1 / len(catalog))


def test_determinism_passes_on_arena(suite, catalog):
    names = sorted(suite)
    rng = random.Random(21)
    for _ in range(10):
        trees = [suite[n] for n in rng.sample(names, 4)]
        res = determinism_check(trees, SMALL, rng.randrange(2 ** 32), library=suite)
        assert res.ok, str(res)


def wall_clock_runner(trees, config, seed):
    """Arena round in which agent 0 is nudged by the wall clock on tick 1."""
    arena = Arena(config)

    def nudge(state):
        if state.tick == 1:
            state.agents[0].x += (time.perf_counter_ns() % 10 ** 6 + 1) * 1e-12

    return arena.run(trees, seed, on_tick=nudge)


def test_wall_clock_fixture_diverges_at_first_checkpoint(suite):
    trees = [suite[n] for n in ("idle", "camper", "sentry", "wary")]
    res = determinism_check(trees, SMALL, 3, runner=wall_clock_runner)
    assert not res.ok
    # tick 0 is hashed before the nudge; the next checkpoint is the first one it can reach
    assert res.tick == SMALL.checkpoint_every
    assert res.hashes[0] != res.hashes[1] and res.repeat == 1
    assert "diverged at tick" in str(res)


def test_repeats_precondition(suite):
    with pytest.raises(ValueError):
        determinism_check([suite["idle"], suite["idle"]], SMALL, 0, repeats=1)


def test_determinism_check_reports_length_mismatch():
    calls = []

    class T:
        def __init__(self, cps):
            self.checkpoints = cps

    def runner(trees, config, seed):
        calls.append(1)
        return None, T([(0, "a"), (60, "b")] + ([(90, "c")] if len(calls) > 1 else []))

    res = determinism_check([], None, 0, runner=runner)
    assert not res.ok and res.tick == 90


# ---------------------------------------------------------------- exploits

TINY = "(selector (condition name=enemy_in_view (action name=fire_lead)))"
LARGE = """(selector
  (sequence (condition name=low_health threshold=0.2 (action name=seek_cover)) (action name=move_backward))
  (sequence (condition name=enemy_in_view (action name=aim_closest_enemy)) (action name=fire_forward))
  (action name=pathfind_closest_box)
  (action name=pathfind_closest_enemy))"""
PADDED = """(selector
  (condition name=enemy_has_shield (condition name=enemy_has_weapon_upgrade (action name=seek_cover)))
  (condition name=low_ammo threshold=0.05 (condition name=low_health threshold=0.05 (action name=fire_forward)))
  (condition name=enemy_health_below threshold=0.1 (action name=seek_cover))
  (sequence (action name=fire_forward) (action name=seek_cover) (action name=fire_forward)))"""


def _hard(**trees):
    return {"Hard": [Member(parse(t, n), "Hard", {}) for n, t in trees.items()],
            "Easy": [Member(parse(TINY, "easy_tiny"), "Easy", {})]}


def test_exploit_examples():
    classes = _hard(tiny=TINY, large=LARGE, padded=PADDED, low=TINY)
    ts = {"tiny": 9.0, "large": 6.0, "padded": 7.0, "low": 2.0, "easy_tiny": 100.0}  # Hard average 6.0
    flags = {f.tree: f for f in exploit_scan(classes, ts, "Hard")}
    assert set(flags) == {"tiny", "padded"}
    assert "depth+width=4<=5" in flags["tiny"].reason
    assert flags["padded"].reason == "distinct_actions=2<=2"
    assert flags["tiny"].node_count == 3 and flags["tiny"].cls == "Hard"


def test_exploit_flags_subset_and_stable(catalog):
    rng = random.Random(6)
    trees = {f"t{i}": any_tree(rng, catalog, 4, name=f"t{i}") for i in range(30)}
    classes = {"Hard": [Member(t, "Hard", {}) for t in list(trees.values())[:20]],
               "Easy": [Member(t, "Easy", {}) for t in list(trees.values())[20:]]}
    ts = {n: rng.uniform(1, 10) for n in trees}
    flags = exploit_scan(classes, ts, "Hard")
    hard = {m.name for m in classes["Hard"]}
    assert {f.tree for f in flags} <= hard
    again = {c: [Member(parse(serialize(m.tree)), c, {}) for m in ms] for c, ms in classes.items()}
    assert exploits_tsv(exploit_scan(again, ts, "Hard")) == exploits_tsv(flags)
    assert exploit_scan(classes, ts, "Nope") == []
