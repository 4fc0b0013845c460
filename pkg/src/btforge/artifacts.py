"""On-disk formats shared by the pipeline and the CLI subcommands."""

from __future__ import annotations

import csv
import io
import json
import os
import shutil

from .pruning import Member
from .tree import parse, serialize

INDEX = "index.tsv"
INDEX_COLUMNS = ("tree", "class", "fitness", "generation", "source", "targets")


def write_text(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(text)


def write_archive(root: str, classes: dict, order: list, info: dict = None):
    """One ``<class>/<tree>.bt`` file per member plus an index.

    ``info`` maps tree name to optional ``fitness``, ``generation`` and
    ``source`` columns.
    """
    info = info or {}
    if os.path.isdir(root) and os.listdir(root):
        if not os.path.exists(os.path.join(root, INDEX)):
            raise FileExistsError(f"{root} exists and is not an archive; refusing to overwrite")
        shutil.rmtree(root)
    os.makedirs(root, exist_ok=True)
    rows = ["\t".join(INDEX_COLUMNS)]
    for c in order:
        for m in sorted(classes.get(c, []), key=lambda m: m.name):
            write_text(os.path.join(root, c, m.name + ".bt"), serialize(m.tree))
            extra = info.get(m.name, {})
            fit = extra.get("fitness")
            rows.append("\t".join([
                m.name, c, "" if fit is None else repr(fit), str(extra.get("generation", "")),
                str(extra.get("source", "")), json.dumps(m.targets, sort_keys=True),
            ]))
        os.makedirs(os.path.join(root, c), exist_ok=True)
    write_text(os.path.join(root, INDEX), "\n".join(rows) + "\n")


def read_archive(root: str):
    """Returns ``(classes: class -> [Member], rows: [dict])`` in index order."""
    path = os.path.join(root, INDEX)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{root} is not an archive (no {INDEX})")
    with open(path) as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    classes = {}
    for c in sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))):
        classes.setdefault(c, [])
    for row in rows:
        with open(os.path.join(root, row["class"], row["tree"] + ".bt")) as f:
            tree = parse(f.read(), row["tree"])
        classes.setdefault(row["class"], []).append(
            Member(tree, row["class"], json.loads(row["targets"] or "{}")))
    return classes, rows


def fitness_csv(history: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "individual", "fitness"])
    for gen, entries in history:
        for name, fit in entries:
            w.writerow([gen, name, repr(fit)])
    return buf.getvalue()


def read_fitness_csv(path: str) -> list:
    """``[(generation, [fitness, ...])]`` in file order."""
    out = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            out.setdefault(int(row["generation"]), []).append(float(row["fitness"]))
    return sorted(out.items())


def funnel_tsv(rows: list) -> str:
    return "stage\tcount\n" + "".join(f"{k}\t{v}\n" for k, v in rows)


def read_funnel(path: str) -> list:
    with open(path) as f:
        return [(r["stage"], int(r["count"])) for r in csv.DictReader(f, delimiter="\t")]


def events_tsv(events: list) -> str:
    lines = ["generation\tevent\tdetail"]
    for gen, kind, detail in events:
        d = "" if detail is None else " ".join(repr(x) for x in detail)
        lines.append(f"{gen}\t{kind}\t{d}")
    return "\n".join(lines) + "\n"


def read_tscores(path: str) -> dict:
    with open(path) as f:
        return {r["tree"]: float(r["tscore"]) for r in csv.DictReader(f, delimiter="\t")}


def pruning_tsv(rows: list) -> str:
    head = "class\tinitial\ttournament_rejected\tcluster_kept\tvote_removed\tfinal"
    return head + "\n" + "".join("\t".join(str(x) for x in r) + "\n" for r in rows)


def read_pruning(path: str) -> list:
    with open(path) as f:
        return list(csv.DictReader(f, delimiter="\t"))


def clusters_tsv(assignments: dict) -> str:
    lines = ["class\tcluster\tmedoid\tmember"]
    for c in assignments:
        a = assignments[c]
        for k, mi in enumerate(a.medoids):
            for name in a.members_of(k):
                lines.append(f"{c}\t{k}\t{a.names[mi]}\t{name}")
    return "\n".join(lines) + "\n"
