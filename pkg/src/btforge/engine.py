"""Blackboards, binding and tick evaluation.

Binding compiles a tree into nested closures.  Every blackboard read a node
makes is resolved at bind time to a ``(values_list, index)`` slot, so ticks do
no key lookups.  Nodes keep no memory between ticks; state that has to
survive a tick (cooldown stamps, time-limit starts) lives in the local
blackboard under a per-node key.
"""

from __future__ import annotations

import random
from typing import Callable, Optional

from .tree import BehaviorTree, NodeKind, Status, TemplateCatalog, TreeNode, validate

SUCCESS, FAILURE, RUNNING = Status.SUCCESS, Status.FAILURE, Status.RUNNING

DECORATORS = ("invert", "chance", "cooldown", "shuffle_children", "time_limit")


class Blackboard:
    """Keyed store with stable integer slots."""

    def __init__(self, scope: str = "local", entries: Optional[dict] = None):
        if scope not in ("global", "local"):
            raise ValueError(f"bad scope {scope!r}")
        self.scope = scope
        self.values = []
        self._slots = {}
        for key, value in (entries or {}).items():
            self.declare(key, value)

    def declare(self, key: str, value=None) -> int:
        slot = self._slots.get(key)
        if slot is None:
            slot = self._slots[key] = len(self.values)
            self.values.append(value)
        else:
            self.values[slot] = value
        return slot

    def slot(self, key: str) -> int:
        return self._slots[key]

    def keys(self):
        return self._slots.keys()

    def __contains__(self, key) -> bool:
        return key in self._slots

    def __getitem__(self, key):
        return self.values[self._slots[key]]

    def __setitem__(self, key, value):
        self.values[self._slots[key]] = value

    def __delitem__(self, key):
        # slots are never reused; deleting only makes the key unresolvable
        del self._slots[key]

    def snapshot(self) -> dict:
        return {k: self.values[i] for k, i in self._slots.items()}


class BindError(LookupError):
    def __init__(self, key: str, node_id, detail: str = ""):
        self.key, self.node_id = key, node_id
        super().__init__(detail or f"blackboard key {key!r} missing (node {node_id})")


class BoundTree:
    """A tree compiled against one agent's blackboards."""

    def __init__(self, tree, global_bb, local_bb, rng, actions, on_exec):
        self.tree = tree
        self.global_bb = global_bb
        self.local_bb = local_bb
        self.rng = rng
        self.actions = actions
        self.on_exec = on_exec
        self.clock = 0.0
        self.root_fn: Callable[[], Status] = None

    def tick(self, dt: float) -> Status:
        self.clock += dt
        return self.root_fn()


def _resolve(key, gbb, lbb, node_id):
    if key in lbb:
        return lbb.values, lbb.slot(key)
    if key in gbb:
        return gbb.values, gbb.slot(key)
    raise BindError(key, node_id)


def bind(tree: BehaviorTree, global_bb: Blackboard, local_bb: Blackboard,
         library: Optional[dict] = None, catalog: Optional[TemplateCatalog] = None,
         actions: Optional[Callable] = None, rng: Optional[random.Random] = None,
         on_exec: Optional[Callable] = None) -> BoundTree:
    """Compile ``tree`` for one agent.

    ``actions(name, params)`` is the game's action handler and must return a
    Status.  ``on_exec(template, params)`` is called for every executed
    action, condition and decorator (used for coverage traces).
    """
    library = library or {}
    if catalog is not None:
        bad = validate(tree, catalog, library)
        if bad:
            raise ValueError(f"cannot bind invalid tree {tree.name}: {bad[0]}")
    bound = BoundTree(tree, global_bb, local_bb, rng or random.Random(0),
                      actions or (lambda name, params: FAILURE), on_exec)
    compiled = {}
    bound.root_fn = _compile_tree(tree, bound, library, catalog, compiled)
    return bound


def _compile_tree(tree, bound, library, catalog, compiled):
    if tree.name in compiled:
        return compiled[tree.name]
    cell = []
    compiled[tree.name] = lambda: cell[0]()  # late-bound so proxies can resolve
    fn = _compile(tree.root, tree.name, bound, library, catalog, compiled)
    cell.append(fn)
    compiled[tree.name] = fn
    return fn


def _compile(node: TreeNode, tname, bound, library, catalog, compiled):
    kind = node.kind
    kids = [_compile(c, tname, bound, library, catalog, compiled) for c in node.children]
    rng = bound.rng
    log = bound.on_exec

    if kind is NodeKind.SELECTOR or kind is NodeKind.SEQUENCE:
        stop_on = SUCCESS if kind is NodeKind.SELECTOR else FAILURE
        default = FAILURE if kind is NodeKind.SELECTOR else SUCCESS
        shuffled = node.order == "shuffle"

        def composite(order=None):
            seq = order if order is not None else (rng.sample(kids, len(kids)) if shuffled else kids)
            for fn in seq:
                s = fn()
                if s is RUNNING or s is stop_on:
                    return s
            return default

        composite.children = kids
        return composite

    if kind is NodeKind.PARALLEL:
        k = node.k
        n = len(kids)

        def parallel(order=None):
            c = 0
            for fn in order if order is not None else kids:
                if fn() is SUCCESS:
                    c += 1
            if c >= k:
                return SUCCESS
            if c < n - k:
                return FAILURE
            return RUNNING

        parallel.children = kids
        return parallel

    if kind is NodeKind.PROXY:
        target = library.get(node.name)
        if target is None:
            raise BindError(node.name, node.id, f"proxy target {node.name!r} not in library")
        return _compile_tree(target, bound, library, catalog, compiled)

    template = catalog.get(node.name) if catalog is not None else None
    if catalog is not None and template is None:
        raise BindError(node.name, node.id, f"unknown template {node.name!r}")
    if template is not None:
        for key in template.keys:
            _resolve(key, bound.global_bb, bound.local_bb, node.id)
    name = node.name
    params = dict(node.params)
    ptuple = tuple(sorted(params.items()))

    if kind is NodeKind.ACTION:
        handler = bound.actions

        def action():
            if log is not None:
                log(name, ptuple)
            return handler(name, params)

        return action

    if kind is NodeKind.CONDITION:
        if template is None or template.predicate is None:
            raise BindError(name, node.id, f"condition {name!r} has no predicate")
        slots = [_resolve(k, bound.global_bb, bound.local_bb, node.id) for k in template.keys]
        pred = template.predicate
        child = kids[0] if kids else None

        def condition():
            if log is not None:
                log(name, ptuple)
            ok = pred([lst[i] for lst, i in slots], params)
            if child is None:
                return SUCCESS if ok else FAILURE
            return child() if ok else FAILURE

        return condition

    if kind is NodeKind.DECORATOR:
        return _decorator(node, tname, kids[0], bound, name, params, ptuple, log)

    raise ValueError(f"cannot compile node kind {kind}")


def _decorator(node, tname, child, bound, name, params, ptuple, log):
    lbb = bound.local_bb
    rng = bound.rng
    state_key = f"{tname}#{node.id}.{name}"

    if name == "invert":
        def invert():
            if log is not None:
                log(name, ptuple)
            s = child()
            return FAILURE if s is SUCCESS else SUCCESS if s is FAILURE else RUNNING
        return invert

    if name == "chance":
        p = params["p"]

        def chance():
            if log is not None:
                log(name, ptuple)
            return child() if rng.random() < p else FAILURE
        return chance

    if name == "cooldown":
        period = params["seconds"]
        vals, slot = lbb.values, lbb.declare(state_key, None)

        def cooldown():
            if log is not None:
                log(name, ptuple)
            last = vals[slot]
            now = bound.clock
            if last is not None and now - last < period:
                return FAILURE
            vals[slot] = now
            return child()
        return cooldown

    if name == "time_limit":
        limit = params["seconds"]
        vals, slot = lbb.values, lbb.declare(state_key, None)

        def time_limit():
            if log is not None:
                log(name, ptuple)
            start = vals[slot]
            now = bound.clock
            if start is not None and now - start > limit:
                vals[slot] = None
                return FAILURE
            s = child()
            if s is RUNNING:
                if start is None:
                    vals[slot] = now
            else:
                vals[slot] = None
            return s
        return time_limit

    if name == "shuffle_children":
        grand = getattr(child, "children", None)

        def shuffle_children():
            if log is not None:
                log(name, ptuple)
            if grand is None:
                return child()
            return child(rng.sample(grand, len(grand)))
        return shuffle_children

    raise BindError(name, node.id, f"unknown decorator {name!r}")


def tick(bound: BoundTree, dt: float) -> Status:
    return bound.tick(dt)
