"""Behavior tree data model, template catalog, validation, metrics and the
text grammar used for tree files."""

from __future__ import annotations

import copy
import enum
import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional


class NodeKind(str, enum.Enum):
    SELECTOR = "selector"
    SEQUENCE = "sequence"
    PARALLEL = "parallel"
    ACTION = "action"
    CONDITION = "condition"
    DECORATOR = "decorator"
    PROXY = "proxy"


COMPOSITES = (NodeKind.SELECTOR, NodeKind.SEQUENCE, NodeKind.PARALLEL)
TEMPLATED = (NodeKind.ACTION, NodeKind.CONDITION, NodeKind.DECORATOR)


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


# --------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class ParamSpec:
    """A template parameter: continuous ``[lo, hi]`` or a discrete value set."""

    name: str
    lo: float = 0.0
    hi: float = 1.0
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.values is not None:
            if not self.values:
                raise ValueError(f"parameter {self.name!r}: empty value set")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            object.__setattr__(self, "lo", min(self.values))
            object.__setattr__(self, "hi", max(self.values))
        elif self.lo > self.hi:
            raise ValueError(f"parameter {self.name!r}: min > max")

    @property
    def discrete(self) -> bool:
        return self.values is not None

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, v: float) -> bool:
        if self.discrete:
            return any(v == x for x in self.values)
        return self.lo <= v <= self.hi

    def sample(self, rng) -> float:
        if self.discrete:
            return rng.choice(self.values)
        return rng.uniform(self.lo, self.hi)


@dataclass(frozen=True)
class Template:
    name: str
    kind: NodeKind
    params: tuple = ()
    keys: tuple = ()
    # conditions only: predicate(values_of_keys, params) -> bool
    predicate: Optional[Callable] = field(default=None, compare=False, repr=False)

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def sample_params(self, rng) -> dict:
        return {p.name: float(p.sample(rng)) for p in self.params}


RESERVED_ATTRS = {"id", "name", "k", "order"}


class TemplateCatalog:
    """The actions, conditions and decorators a game exposes to the trees."""

    def __init__(self, actions=(), conditions=(), decorators=()):
        self.actions = list(actions)
        self.conditions = list(conditions)
        self.decorators = list(decorators)
        self._by_name = {}
        for t in self.templates():
            if t.name in self._by_name:
                raise ValueError(f"duplicate template name {t.name!r}")
            for p in t.params:
                if p.name in RESERVED_ATTRS:
                    raise ValueError(f"{t.name}: parameter name {p.name!r} is reserved")
            self._by_name[t.name] = t

    def templates(self) -> list:
        return self.actions + self.conditions + self.decorators

    def of_kind(self, kind: NodeKind) -> list:
        return {
            NodeKind.ACTION: self.actions,
            NodeKind.CONDITION: self.conditions,
            NodeKind.DECORATOR: self.decorators,
        }[kind]

    def get(self, name: str) -> Optional[Template]:
        return self._by_name.get(name)

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_name)


# --------------------------------------------------------------------------
# trees


@dataclass
class TreeNode:
    id: int
    kind: NodeKind
    name: Optional[str] = None  # template name, or target tree for proxies
    params: dict = field(default_factory=dict)
    children: list = field(default_factory=list)
    k: Optional[int] = None  # parallel success threshold
    order: str = "det"  # "det" | "shuffle" for selector/sequence

    def walk(self) -> Iterator["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def walk_with_parent(self, parent=None):
        yield self, parent
        for c in self.children:
            yield from c.walk_with_parent(self)

    @property
    def child(self) -> Optional["TreeNode"]:
        return self.children[0] if self.children else None


@dataclass
class BehaviorTree:
    name: str
    root: TreeNode
    provenance: dict = field(default_factory=dict)

    def nodes(self) -> list:
        return list(self.root.walk())

    def copy(self, name: Optional[str] = None) -> "BehaviorTree":
        t = copy.deepcopy(self)
        if name is not None:
            t.name = name
        return t

    def max_id(self) -> int:
        return max(n.id for n in self.root.walk())

    def find(self, node_id: int) -> Optional[TreeNode]:
        for n in self.root.walk():
            if n.id == node_id:
                return n
        return None

    def parent_of(self, node_id: int) -> Optional[TreeNode]:
        for n, p in self.root.walk_with_parent():
            if n.id == node_id:
                return p
        return None


def renumber(node: TreeNode, start: int) -> int:
    """Give every node in the subtree fresh ids from ``start``; returns next free id."""
    nid = start
    for n in node.walk():
        n.id = nid
        nid += 1
    return nid


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    node_id: Optional[int]
    code: str
    detail: str = ""

    def __str__(self):
        where = f"node {self.node_id}: " if self.node_id is not None else ""
        return f"{where}{self.code}" + (f" ({self.detail})" if self.detail else "")


def _node_violations(node: TreeNode, parent: Optional[TreeNode], strict: bool) -> list:
    out = []
    n = len(node.children)
    kind = node.kind
    if kind in (NodeKind.SELECTOR, NodeKind.SEQUENCE):
        if n < 1:
            out.append(Violation(node.id, f"{kind.value} arity"))
        if node.order not in ("det", "shuffle"):
            out.append(Violation(node.id, "bad order policy", node.order))
    elif kind is NodeKind.PARALLEL:
        if n < 1:
            out.append(Violation(node.id, "parallel arity"))
        elif node.k is None or not (1 <= node.k <= n):
            out.append(Violation(node.id, "parallel threshold", f"k={node.k}, n={n}"))
    elif kind is NodeKind.DECORATOR:
        if n != 1:
            out.append(Violation(node.id, "decorator arity"))
    elif kind is NodeKind.CONDITION:
        if n > 1:
            out.append(Violation(node.id, "condition arity"))
        elif strict and n == 0:
            out.append(Violation(node.id, "condition arity", "generated conditions gate a child"))
    elif kind is NodeKind.ACTION:
        if n:
            out.append(Violation(node.id, "action arity"))
    elif kind is NodeKind.PROXY:
        if n:
            out.append(Violation(node.id, "proxy arity"))
        if not node.name:
            out.append(Violation(node.id, "proxy target missing"))
    if kind in TEMPLATED and not node.name:
        out.append(Violation(node.id, "template missing"))
    if strict and kind is NodeKind.DECORATOR and parent is not None \
            and parent.kind is NodeKind.DECORATOR:
        out.append(Violation(node.id, "decorator chain"))
    return out


def structural_violations(root: TreeNode, strict: bool = False) -> list:
    """Arity and attribute rules that need no catalog."""
    out = []
    seen = set()
    for node, parent in root.walk_with_parent():
        if node.id in seen:
            out.append(Violation(node.id, "duplicate id"))
        seen.add(node.id)
        out.extend(_node_violations(node, parent, strict))
    return out


def validate(tree: BehaviorTree, catalog: Optional[TemplateCatalog] = None,
             library: Optional[dict] = None, strict: bool = False) -> list:
    """Return the list of rule violations; empty means the tree is valid.

    ``strict`` adds the rules the generators must uphold on top of what the
    engine accepts (no decorator directly under a decorator, gate-form
    conditions).
    """
    out = structural_violations(tree.root, strict=strict)
    if catalog is not None:
        for node in tree.root.walk():
            if node.kind not in TEMPLATED or not node.name:
                continue
            t = catalog.get(node.name)
            if t is None:
                out.append(Violation(node.id, "unknown template", node.name))
                continue
            if t.kind is not node.kind:
                out.append(Violation(node.id, "template kind mismatch", node.name))
            declared = {p.name: p for p in t.params}
            for key, value in node.params.items():
                spec = declared.get(key)
                if spec is None:
                    out.append(Violation(node.id, "unknown parameter", f"{node.name}.{key}"))
                elif not spec.contains(value):
                    out.append(Violation(node.id, "parameter out of range", f"{node.name}.{key}={value}"))
            for key in declared:
                if key not in node.params:
                    out.append(Violation(node.id, "missing parameter", f"{node.name}.{key}"))
    out.extend(_proxy_violations(tree, library or {}))
    return out


def _proxy_targets(root: TreeNode) -> list:
    return [n for n in root.walk() if n.kind is NodeKind.PROXY and n.name]


def _proxy_violations(tree: BehaviorTree, library: dict) -> list:
    out = []
    graph = {}
    todo = [tree]
    while todo:
        t = todo.pop()
        if t.name in graph:
            continue
        graph[t.name] = []
        for p in _proxy_targets(t.root):
            target = tree if p.name == tree.name else library.get(p.name)
            if target is None:
                out.append(Violation(p.id, "unresolved proxy", p.name))
                continue
            graph[t.name].append(p.name)
            todo.append(target)
    # cycle search from the tree under validation
    state = {}

    def visit(name):
        state[name] = 1
        for nxt in graph.get(name, ()):
            if state.get(nxt) == 1:
                return True
            if state.get(nxt) is None and visit(nxt):
                return True
        state[name] = 2
        return False

    if visit(tree.name):
        out.append(Violation(None, "proxy cycle"))
    return out


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class TreeMetrics:
    depth: int
    width: int
    node_count: int


def metrics(tree) -> TreeMetrics:
    root = tree.root if isinstance(tree, BehaviorTree) else tree
    if root is None:
        raise ValueError("tree has no root")
    level = [root]
    depth = width = count = 0
    while level:
        depth += 1
        width = max(width, len(level))
        count += len(level)
        level = [c for n in level for c in n.children]
    return TreeMetrics(depth, width, count)


def distinct_actions(tree: BehaviorTree) -> set:
    return {n.name for n in tree.root.walk() if n.kind is NodeKind.ACTION}


# --------------------------------------------------------------------------
# grammar


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        super().__init__(f"{line}:{col}: {message}" if line else message)


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>;[^\n]*)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<eq>=)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?(?![\w.]))
  | (?P<ident>[A-Za-z_][\w.\-]*)
    """,
    re.VERBOSE,
)

_IDENT = re.compile(r"[A-Za-z_][\w.\-]*\Z")

_ALLOWED = {
    NodeKind.SELECTOR: {"id", "order"},
    NodeKind.SEQUENCE: {"id", "order"},
    NodeKind.PARALLEL: {"id", "k"},
    NodeKind.PROXY: {"id", "name"},
}


def _tokenize(text: str):
    pos, line, line_start = 0, 1, 0
    headers = {}
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "comment":
            hm = re.match(r";\s*(tree|provenance):\s*(.*)", value)
            if hm:
                headers.setdefault(hm.group(1), hm.group(2).strip())
        elif kind != "ws":
            yield kind, value, line, col
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rfind("\n") + 1
        pos = m.end()
    yield "eof", "", line, pos - line_start + 1
    yield "headers", headers, line, 0


class _Parser:
    def __init__(self, text):
        toks = list(_tokenize(text))
        self.headers = toks[-1][1]
        self.toks = toks[:-1]
        self.i = 0
        self.next_id = 0
        self.explicit_ids = False

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        tok = self.toks[self.i]
        if kind and tok[0] != kind:
            what = tok[1] or "end of input"
            raise ParseError(f"expected {kind}, got {what!r}", tok[2], tok[3])
        self.i += 1
        return tok

    def node(self) -> TreeNode:
        _, _, line, col = self.take("lpar")
        _, word, kl, kc = self.take("ident")
        try:
            kind = NodeKind(word)
        except ValueError:
            raise ParseError(f"unknown kind {word!r}", kl, kc) from None
        node = TreeNode(id=-1, kind=kind)
        while self.peek()[0] == "ident":
            _, key, al, ac = self.take("ident")
            self.take("eq")
            vk, raw, vl, vc = self.take()
            if vk not in ("number", "ident", "string"):
                raise ParseError(f"bad value for {key!r}", vl, vc)
            value = json.loads(raw) if vk == "string" else raw
            self._attr(node, key, vk, value, al, ac)
        while self.peek()[0] == "lpar":
            node.children.append(self.node())
        if self.peek()[0] == "ident":
            _, w, l2, c2 = self.peek()
            raise ParseError(f"attribute {w!r} after child nodes", l2, c2)
        self.take("rpar")
        if node.id < 0:
            node.id = None  # assigned after the whole tree is read
        own = _node_violations(node, None, strict=False)
        if own:
            raise ParseError(own[0].code, line, col)
        return node

    def _attr(self, node, key, vk, value, line, col):
        allowed = _ALLOWED.get(node.kind)
        if allowed is not None and key not in allowed:
            raise ParseError(f"unknown attribute {key!r} for {node.kind.value}", line, col)
        if key == "id":
            if vk != "number" or not re.fullmatch(r"\d+", value):
                raise ParseError("id must be a non-negative integer", line, col)
            node.id = int(value)
            self.explicit_ids = True
        elif key == "name":
            node.name = value
        elif key == "k":
            if vk != "number" or not re.fullmatch(r"\d+", value):
                raise ParseError("k must be a positive integer", line, col)
            node.k = int(value)
        elif key == "order":
            if value not in ("det", "shuffle"):
                raise ParseError(f"order must be det or shuffle, got {value!r}", line, col)
            node.order = value
        else:
            if vk != "number":
                raise ParseError(f"parameter {key!r} must be numeric", line, col)
            node.params[key] = float(value)


def parse(text: str, name: Optional[str] = None) -> BehaviorTree:
    p = _Parser(text)
    root = p.node()
    p.take("eof")
    # ids missing from the text are assigned in preorder after the largest explicit id
    used = {n.id for n in root.walk() if n.id is not None}
    nxt = max(used) + 1 if used else 0
    for n in root.walk():
        if n.id is None:
            n.id = nxt
            nxt += 1
    dup = [v for v in structural_violations(root) if v.code == "duplicate id"]
    if dup:
        raise ParseError(f"duplicate id {dup[0].node_id}")
    tree_name = name or p.headers.get("tree") or "tree"
    prov = {}
    if "provenance" in p.headers:
        try:
            prov = json.loads(p.headers["provenance"])
        except json.JSONDecodeError as e:
            raise ParseError(f"bad provenance header: {e}") from None
    return BehaviorTree(tree_name, root, prov)


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    s = str(v)
    return s if _IDENT.match(s) and s not in [k.value for k in NodeKind] else json.dumps(s)


def serialize(tree: BehaviorTree) -> str:
    lines = [f"; tree: {tree.name}"]
    if tree.provenance:
        lines.append("; provenance: " + json.dumps(tree.provenance, sort_keys=True))

    def emit(node: TreeNode, indent: int):
        attrs = [f"id={node.id}"]
        if node.name is not None:
            attrs.append(f"name={_fmt_value(node.name)}")
        if node.kind is NodeKind.PARALLEL:
            attrs.append(f"k={node.k}")
        if node.kind in (NodeKind.SELECTOR, NodeKind.SEQUENCE) and node.order != "det":
            attrs.append(f"order={node.order}")
        for key in sorted(node.params):
            attrs.append(f"{key}={_fmt_value(float(node.params[key]))}")
        head = "  " * indent + f"({node.kind.value} " + " ".join(attrs)
        if not node.children:
            lines.append(head + ")")
            return
        lines.append(head)
        for c in node.children:
            emit(c, indent + 1)
        lines[-1] += ")"

    emit(tree.root, 0)
    return "\n".join(lines) + "\n"


def structure_key(tree: BehaviorTree) -> str:
    """Serialization with ids stripped; equal keys mean equal behavior."""

    def rec(n: TreeNode) -> str:
        parts = [n.kind.value, str(n.name), str(n.k), n.order,
                 ",".join(f"{k}={n.params[k]!r}" for k in sorted(n.params))]
        return "(" + " ".join(parts) + "".join(rec(c) for c in n.children) + ")"

    return rec(tree.root)
