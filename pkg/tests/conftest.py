import os
import random

import pytest

from btforge.arena import builtin_catalog
from btforge.tree import BehaviorTree, NodeKind, TreeNode, parse

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")
TREES = os.path.join(CONFIGS, "trees")


@pytest.fixture(scope="session")
def catalog():
    return builtin_catalog()


def load_suite():
    out = {}
    for f in sorted(os.listdir(TREES)):
        if f.endswith(".bt"):
            with open(os.path.join(TREES, f)) as fh:
                out[f[:-3]] = parse(fh.read(), f[:-3])
    return out


@pytest.fixture(scope="session")
def suite():
    return load_suite()


def any_tree(rng: random.Random, catalog, max_depth=5, name="t", gates_only=False) -> BehaviorTree:
    """Random valid tree using every node kind the grammar allows (no proxies).

    ``gates_only`` keeps conditions in gate form so the tree is also valid
    under the generator rules."""
    ids = iter(range(10 ** 6))

    def node(depth):
        leaf_only = depth >= max_depth
        kinds = ["action", "condition_leaf"] if leaf_only else \
            ["action", "condition_leaf", "condition", "decorator", "selector", "sequence", "parallel"]
        if gates_only:
            kinds.remove("condition_leaf")
        k = rng.choice(kinds)
        nid = next(ids)
        if k == "action":
            t = rng.choice(catalog.of_kind(NodeKind.ACTION))
            return TreeNode(nid, NodeKind.ACTION, t.name, t.sample_params(rng))
        if k in ("condition", "condition_leaf"):
            t = rng.choice(catalog.of_kind(NodeKind.CONDITION))
            kids = [node(depth + 1)] if k == "condition" else []
            return TreeNode(nid, NodeKind.CONDITION, t.name, t.sample_params(rng), kids)
        if k == "decorator":
            t = rng.choice(catalog.of_kind(NodeKind.DECORATOR))
            child = node(depth + 1)
            while child.kind is NodeKind.DECORATOR:
                child = node(depth + 1)
            return TreeNode(nid, NodeKind.DECORATOR, t.name, t.sample_params(rng), [child])
        kids = [node(depth + 1) for _ in range(rng.randint(1, 3))]
        if k == "parallel":
            return TreeNode(nid, NodeKind.PARALLEL, children=kids, k=rng.randint(1, len(kids)))
        kind = NodeKind.SELECTOR if k == "selector" else NodeKind.SEQUENCE
        return TreeNode(nid, kind, children=kids, order=rng.choice(["det", "shuffle"]))

    root = TreeNode(next(ids), NodeKind.SELECTOR, children=[node(1) for _ in range(rng.randint(1, 3))])
    return BehaviorTree(name, root)
