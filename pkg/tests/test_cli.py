import os

import pytest
import yaml

from btforge import artifacts as art
from btforge.cli import main
from conftest import TREES

MINI = {
    "seed": 4,
    "arena": {"agent_count": 4, "lives": 1, "max_round_ticks": 300},
    "evolution": {"N": 6, "maxNumberOfGenerations": 2, "k_rounds": 1},
    "difficulty": {
        "metrics": {"damage_dealt": {"lo": 0, "hi": 200}},
        "classes": [
            {"name": "Hard", "rank": 0, "metrics": {"damage_dealt": {"min": 0.2, "max": 1.0}}},
            {"name": "Easy", "rank": 1, "metrics": {"damage_dealt": {"min": 0.0, "max": 0.2}}},
        ],
    },
    "tournament": {"RT": 3},
    "cluster": {"Hard": 2, "Easy": 2},
    "coverage": {"rounds": 1},
    "library": [os.path.join(TREES, f"{n}.bt") for n in ("strong", "idle", "rusher", "camper")],
}


def tree_file(name):
    return os.path.join(TREES, f"{name}.bt")


def write_config(tmp_path, **overrides):
    raw = {**MINI, **overrides}
    p = tmp_path / "mini.yaml"
    p.write_text(yaml.safe_dump(raw))
    return str(p)


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("mini")
    cfg = write_config(d)
    out = str(d / "out")
    assert main(["run", "--config", cfg, "--out", out]) == 0
    return cfg, out


def test_run_writes_every_artifact(mini_run):
    _, out = mini_run
    for f in ("archive/index.tsv", "fitness.csv", "funnel.tsv", "events.tsv", "tscores.tsv", "clusters.tsv",
              "pruning.tsv", "final/index.tsv", "exploits.tsv", "coverage.tsv", "coverage.txt", "summary.txt",
              "figures/fitness.png", "figures/funnel.png", "figures/pruning.png"):
        assert os.path.exists(os.path.join(out, f)), f


def test_artifacts_reparse(mini_run):
    _, out = mini_run
    classes, rows = art.read_archive(os.path.join(out, "archive"))
    assert sum(len(v) for v in classes.values()) == len(rows)
    funnel = dict(art.read_funnel(os.path.join(out, "funnel.tsv")))
    assert funnel["created"] == funnel["crashed"] + funnel["unclassified"] + funnel["classified"]
    assert funnel["classified"] == len(rows)
    history = art.read_fitness_csv(os.path.join(out, "fitness.csv"))
    assert [g for g, _ in history] == [0, 1, 2] and all(len(v) == 6 for _, v in history)
    tscores = art.read_tscores(os.path.join(out, "tscores.tsv"))
    assert set(tscores) <= {r["tree"] for r in rows}
    for r in art.read_pruning(os.path.join(out, "pruning.tsv")):
        assert int(r["final"]) <= int(r["cluster_kept"]) <= int(r["initial"]) - int(r["tournament_rejected"])


def test_report_subcommand(mini_run, capsys):
    _, out = mini_run
    assert main(["report", out]) == 0
    text = capsys.readouterr().out
    counts = dict(line.split("\t") for line in text.splitlines()[1:5])
    assert int(counts["created"]) == sum(int(counts[k]) for k in ("crashed", "unclassified", "classified"))
    assert "tournament_rejected" in text


def test_evolve_then_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "evo")
    assert main(["evolve", "--config", cfg, "--out", out]) == 0
    assert main(["report", out]) == 0
    assert os.path.exists(os.path.join(out, "figures", "funnel.png"))
    assert not os.path.exists(os.path.join(out, "pruning.tsv"))


def test_tournament_and_exploit_scan(mini_run, tmp_path, capsys):
    cfg, out = mini_run
    t_out = str(tmp_path / "t")
    assert main(["tournament", "--config", cfg, "--archive", os.path.join(out, "archive"), "--out", t_out,
                 "--rounds", "2"]) == 0
    assert capsys.readouterr().out.startswith("tree\trounds_played")
    assert os.path.exists(os.path.join(t_out, "survivors", "index.tsv"))
    assert main(["exploit-scan", "--archive", os.path.join(out, "archive"),
                 "--tscores", os.path.join(t_out, "tscores.tsv"), "--config", cfg]) == 0
    assert capsys.readouterr().out.startswith("tree\tclass\tnode_count")
    assert main(["exploit-scan", "--archive", os.path.join(out, "archive"),
                 "--tscores", os.path.join(t_out, "tscores.tsv")]) == 2


def test_cluster_k_larger_than_class_fails(tmp_path, capsys):
    from btforge.pruning import Member
    from btforge.tree import parse
    arch = str(tmp_path / "arch")
    members = [Member(parse("(selector (action name=idle))", f"t{i}"), "Hard", {}) for i in range(2)]
    art.write_archive(arch, {"Hard": members}, ["Hard"])
    assert main(["cluster", "--archive", arch, "--k", "3"]) == 2
    assert "exceeds size 2" in capsys.readouterr().err
    assert main(["cluster", "--archive", arch, "--k", "2", "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "clusters.tsv")


def test_simulate_eight_trees(tmp_path, capsys):
    names = ["strong", "idle", "camper", "sniper", "rusher", "looter", "patrol", "coward"]
    trace = str(tmp_path / "trace.tsv")
    assert main(["simulate", "--trees", *map(tree_file, names), "--seed", "7", "--trace", trace]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("agent\tkills\tdeaths") and len(lines) == 9
    with open(trace) as f:
        assert all(len(line.split("\t")) == 4 for line in f.read().splitlines())


def test_simulate_rejects_bad_input(tmp_path, capsys):
    assert main(["simulate", "--trees", tree_file("idle")]) == 2
    bad = tmp_path / "bad.bt"
    bad.write_text("(selector (action name=teleport))")
    assert main(["simulate", "--trees", str(bad), tree_file("idle")]) == 2
    assert "unknown template" in capsys.readouterr().err


def test_check_determinism_and_coverage(tmp_path, capsys):
    trees = [tree_file(n) for n in ("strong", "rusher")]
    assert main(["check-determinism", "--trees", *trees, "--seed", "3"]) == 0
    assert "deterministic" in capsys.readouterr().out
    assert main(["check-determinism", "--trees", *trees, "--repeats", "1"]) == 2
    assert main(["coverage", "--trees", *trees, "--rounds", "1", "--out", str(tmp_path)]) == 0
    assert "template coverage" in capsys.readouterr().out
    assert os.path.exists(tmp_path / "coverage.tsv")


def test_empty_classes_fail_before_simulation(tmp_path, capsys):
    cfg = write_config(tmp_path, difficulty={"classes": []})
    out = tmp_path / "never"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 2
    assert "difficulty.classes" in capsys.readouterr().err
    assert not out.exists()


def test_stage_errors_name_the_stage(tmp_path, capsys):
    cfg = write_config(tmp_path, votes={"file": "missing_votes.tsv"})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "error: stage votes" in capsys.readouterr().err


def test_env_overrides(tmp_path, monkeypatch):
    from btforge.cli import _load, build_parser
    cfg = write_config(tmp_path)
    monkeypatch.setenv("BTFORGE_SEED", "99")
    monkeypatch.setenv("BTFORGE_JOBS", "3")
    args = build_parser().parse_args(["run", "--config", cfg])
    loaded = _load(args)
    assert (loaded.seed, loaded.jobs) == (99, 3)
    args = build_parser().parse_args(["run", "--config", cfg, "--seed", "5", "--mixed-batches"])
    loaded = _load(args)
    assert loaded.seed == 5 and loaded.mixed_batches


def test_bad_flags_exit_nonzero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "--config", "x", "--seed", "-1"])
    assert e.value.code == 2
