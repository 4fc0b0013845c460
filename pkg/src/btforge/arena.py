"""Headless 2D tank arena driven by behavior trees.

The update order inside one tick is fixed: agents tick in id order, then
projectiles advance, then pickups spawn and are collected, then deaths are
resolved.  A round is a pure function of (trees, config, seed).
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Optional

from .engine import FAILURE, RUNNING, SUCCESS, Blackboard, bind
from .rng import stream
from .tree import BehaviorTree, NodeKind, ParamSpec, Template, TemplateCatalog

DEFAULT_MAP = (
    "S......S.......S",
    "................",
    "..##........##..",
    "..#..........#..",
    ".......##.......",
    "S..............S",
    "....#......#....",
    "....#......#....",
    ".......##.......",
    "S..............S",
    "................",
    "..#..........#..",
    "..##........##..",
    "................",
    "................",
    "S......S.......S",
)

METRICS = (
    "kills", "deaths", "distance_traveled", "low_health_escapes",
    "shield_boxes", "weapon_boxes", "ammo_boxes", "health_boxes",
    "damage_dealt", "survival_ticks",
)

BOX_KINDS = ("shield", "weapon", "ammo", "health")


@dataclass(frozen=True)
class ArenaConfig:
    map: tuple = DEFAULT_MAP
    agent_count: int = 8
    lives: int = 2
    max_health: float = 100.0
    max_ammo: float = 10.0
    damage: float = 20.0
    fire_period: int = 20
    pickup_spawn_period: int = 180
    max_boxes: int = 6
    shield_duration: int = 300
    weapon_duration: int = 300
    weapon_upgrade_factor: float = 2.0
    tick_rate: int = 60
    max_round_ticks: int = 3600
    projectile_speed: float = 0.5
    projectile_range: float = 12.0
    agent_speed: float = 0.08
    view_range: float = 8.0
    engage_range: float = 4.0
    hit_radius: float = 0.45
    escape_window: float = 5.0
    low_health_fraction: float = 0.25
    checkpoint_every: int = 60

    def __post_init__(self):
        object.__setattr__(self, "map", tuple(self.map))
        problems = self.problems()
        if problems:
            raise ValueError("invalid arena config: " + "; ".join(problems))

    def problems(self) -> list:
        out = []
        if self.agent_count < 2:
            out.append("agent_count must be >= 2")
        positive = ("lives", "max_health", "max_ammo", "fire_period", "pickup_spawn_period",
                    "shield_duration", "weapon_duration", "tick_rate", "max_round_ticks",
                    "projectile_speed", "agent_speed", "checkpoint_every", "escape_window")
        for name in positive:
            if getattr(self, name) <= 0:
                out.append(f"{name} must be > 0")
        widths = {len(r) for r in self.map}
        if len(widths) != 1:
            out.append("map rows must have equal width")
        elif len(_grid(self.map).spawns) < self.agent_count:
            out.append("map has fewer spawn cells than agent_count")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ArenaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown arena key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# --------------------------------------------------------------------------
# grid geometry, cached per map


class Grid:
    def __init__(self, rows: tuple):
        self.rows = rows
        self.h = len(rows)
        self.w = len(rows[0]) if rows else 0
        self.walk = [ch != "#" for row in rows for ch in row]
        cells = [i for i, ok in enumerate(self.walk) if ok]
        spawns = [i for i in cells if rows[i // self.w][i % self.w] == "S"]
        self.cells = cells
        self.spawns = spawns or cells
        self.nbrs = {}
        for i in cells:
            x, y = i % self.w, i // self.w
            out = []
            for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
                nx, ny = x + dx, y + dy
                if 0 <= nx < self.w and 0 <= ny < self.h and self.walk[ny * self.w + nx]:
                    out.append(ny * self.w + nx)
            self.nbrs[i] = out
        self.dist = {c: self._bfs(c) for c in cells}
        self.cover = [i for i in cells if self._next_to_block(i)]
        self._los = {}
        self._cover_order = {}

    def _bfs(self, src):
        inf = math.inf
        d = [inf] * (self.w * self.h)
        d[src] = 0
        q = deque([src])
        while q:
            c = q.popleft()
            for n in self.nbrs[c]:
                if d[n] == inf:
                    d[n] = d[c] + 1
                    q.append(n)
        return d

    def _next_to_block(self, i):
        x, y = i % self.w, i // self.w
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < self.w and 0 <= ny < self.h and not self.walk[ny * self.w + nx]:
                return True
        return False

    def cell_of(self, x: float, y: float) -> int:
        cx = min(max(int(x), 0), self.w - 1)
        cy = min(max(int(y), 0), self.h - 1)
        return cy * self.w + cx

    def center(self, c: int):
        return (c % self.w) + 0.5, (c // self.w) + 0.5

    def blocked_at(self, x: float, y: float) -> bool:
        if x < 0 or y < 0 or x >= self.w or y >= self.h:
            return True
        return not self.walk[int(y) * self.w + int(x)]

    def los(self, a: int, b: int) -> bool:
        key = (a, b) if a <= b else (b, a)
        hit = self._los.get(key)
        if hit is None:
            ax, ay = self.center(a)
            bx, by = self.center(b)
            n = max(1, int(math.hypot(bx - ax, by - ay) / 0.2))
            hit = True
            for s in range(1, n):
                t = s / n
                if self.blocked_at(ax + (bx - ax) * t, ay + (by - ay) * t):
                    hit = False
                    break
            self._los[key] = hit
        return hit

    @lru_cache(maxsize=None)
    def nearest_walkable(self, fx: float, fy: float) -> int:
        tx, ty = fx * self.w, fy * self.h
        return min(self.cells, key=lambda c: ((c % self.w) + 0.5 - tx) ** 2
                   + ((c // self.w) + 0.5 - ty) ** 2)

    def cover_by_distance(self, c: int) -> list:
        order = self._cover_order.get(c)
        if order is None:
            d = self.dist[c]
            order = sorted((x for x in self.cover if d[x] < math.inf), key=lambda x: (d[x], x))
            self._cover_order[c] = order
        return order


@lru_cache(maxsize=16)
def _grid(rows: tuple) -> Grid:
    return Grid(rows)


# --------------------------------------------------------------------------
# catalog


def _lt(v, p):
    return v[0] < p["threshold"]


def builtin_catalog() -> TemplateCatalog:
    """Actions, conditions and decorators the arena exposes to trees."""
    unit = ParamSpec
    actions = [
        Template("go_to_position", NodeKind.ACTION, (unit("x", 0.0, 1.0), unit("y", 0.0, 1.0)),
                 keys=("self_pos",)),
        Template("fire_forward", NodeKind.ACTION, keys=("self_ammo",)),
        Template("fire_lead", NodeKind.ACTION, keys=("self_ammo", "enemy_id", "enemy_pos")),
        Template("aim_closest_enemy", NodeKind.ACTION, keys=("closest_enemy_id",)),
        Template("pathfind_closest_enemy", NodeKind.ACTION, keys=("closest_enemy_id", "enemy_dist")),
        Template("move_backward", NodeKind.ACTION, keys=("self_pos",)),
        Template("pathfind_closest_box", NodeKind.ACTION, keys=("box_count",)),
        Template("seek_cover", NodeKind.ACTION, keys=("self_pos", "closest_enemy_id")),
        Template("idle", NodeKind.ACTION),
    ]
    conditions = [
        Template("enemy_in_view", NodeKind.CONDITION, keys=("enemy_in_view",),
                 predicate=lambda v, p: v[0]),
        Template("low_ammo", NodeKind.CONDITION, (unit("threshold", 0.05, 0.5),),
                 keys=("self_ammo_frac",), predicate=_lt),
        Template("low_health", NodeKind.CONDITION, (unit("threshold", 0.05, 0.5),),
                 keys=("self_health_frac",), predicate=_lt),
        Template("enemy_health_below", NodeKind.CONDITION, (unit("threshold", 0.1, 0.9),),
                 keys=("enemy_in_view", "enemy_health_frac"),
                 predicate=lambda v, p: v[0] and v[1] < p["threshold"]),
        Template("enemy_has_shield", NodeKind.CONDITION, keys=("enemy_in_view", "enemy_has_shield"),
                 predicate=lambda v, p: v[0] and v[1]),
        Template("enemy_has_weapon_upgrade", NodeKind.CONDITION,
                 keys=("enemy_in_view", "enemy_has_weapon"), predicate=lambda v, p: v[0] and v[1]),
    ]
    decorators = [
        Template("invert", NodeKind.DECORATOR),
        Template("chance", NodeKind.DECORATOR, (unit("p", 0.0, 1.0),)),
        Template("cooldown", NodeKind.DECORATOR, (unit("seconds", 0.1, 5.0),)),
        Template("shuffle_children", NodeKind.DECORATOR),
        Template("time_limit", NodeKind.DECORATOR, (unit("seconds", 0.5, 10.0),)),
    ]
    return TemplateCatalog(actions, conditions, decorators)


GLOBAL_KEYS = ("tick", "time", "alive_count", "box_count")
LOCAL_KEYS = (
    "self_pos", "self_health", "self_health_frac", "self_ammo", "self_ammo_frac",
    "self_has_shield", "self_has_weapon", "enemy_in_view", "enemy_id", "enemy_pos",
    "enemy_dist", "enemy_health_frac", "enemy_has_shield", "enemy_has_weapon",
    "closest_enemy_id",
)


# --------------------------------------------------------------------------
# state


@dataclass
class AgentState:
    id: int
    x: float
    y: float
    fx: float = 1.0
    fy: float = 0.0
    health: float = 100.0
    ammo: float = 10.0
    lives: int = 1
    shield_until: int = -1
    weapon_upgrade_until: int = -1
    alive: bool = True
    next_fire: int = 0
    vx: float = 0.0
    vy: float = 0.0
    moved: bool = False
    crashed: bool = False
    last_hit_by: int = -1

    def snapshot(self):
        return (self.id, self.x, self.y, self.fx, self.fy, self.health, self.ammo, self.lives,
                self.shield_until, self.weapon_upgrade_until, self.alive, self.next_fire,
                self.crashed)


@dataclass
class Projectile:
    owner: int
    x: float
    y: float
    dx: float
    dy: float
    damage: float
    travelled: float = 0.0


@dataclass
class ArenaState:
    config: ArenaConfig
    grid: Grid
    tick: int = 0
    agents: list = field(default_factory=list)
    projectiles: list = field(default_factory=list)
    boxes: dict = field(default_factory=dict)  # cell -> kind

    def free_cells(self) -> list:
        occupied = {self.grid.cell_of(a.x, a.y) for a in self.agents if a.alive}
        return [c for c in self.grid.cells if c not in self.boxes and c not in occupied]

    def state_hash(self) -> str:
        payload = repr((
            self.tick,
            [a.snapshot() for a in self.agents],
            [(p.owner, p.x, p.y, p.dx, p.dy, p.damage, p.travelled) for p in self.projectiles],
            sorted(self.boxes.items()),
        ))
        return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


class SimTrace:
    """Ordered event log of one round plus state-hash checkpoints."""

    def __init__(self, agent_count: int, seed: int):
        self.agent_count = agent_count
        self.seed = seed
        self.events = []
        self.checkpoints = []

    def log(self, tick, agent, kind, payload=None):
        self.events.append((tick, agent, kind, payload))

    def checkpoint(self, tick, digest):
        self.checkpoints.append((tick, digest))
        self.events.append((tick, -1, "checkpoint", digest))

    def of_kind(self, *kinds):
        return [e for e in self.events if e[2] in kinds]

    def to_tsv(self) -> str:
        lines = []
        for tick, agent, kind, payload in self.events:
            lines.append(f"{tick}\t{agent}\t{kind}\t{_payload_text(payload)}")
        return "\n".join(lines) + "\n"


def _payload_text(payload) -> str:
    if payload is None:
        return ""
    if isinstance(payload, tuple):
        return " ".join(_payload_text(p) for p in payload)
    return str(payload)


@dataclass
class RoundFeedback:
    """Per-agent raw metrics for one round."""

    agents: list  # list of {metric: value}
    crashed: list
    ticks: int

    def table(self) -> str:
        head = "agent\t" + "\t".join(METRICS) + "\tcrashed"
        rows = [head]
        for i, m in enumerate(self.agents):
            vals = "\t".join(_num(m[k]) for k in METRICS)
            rows.append(f"{i}\t{vals}\t{int(self.crashed[i])}")
        return "\n".join(rows) + "\n"


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.6g}"


# --------------------------------------------------------------------------
# simulation


def spawn_pickup(state: ArenaState, rng, trace: Optional[SimTrace] = None) -> ArenaState:
    """Drop one box of a uniformly drawn kind on a uniformly drawn free cell."""
    free = state.free_cells()
    if not free:
        if trace is not None:
            trace.log(state.tick, -1, "nospawn")
        return state
    kind = rng.choice(BOX_KINDS)
    cell = rng.choice(free)
    state.boxes[cell] = kind
    if trace is not None:
        trace.log(state.tick, -1, "box", (kind, cell))
    return state


class TreeCrash(RuntimeError):
    pass


class Arena:
    def __init__(self, config: ArenaConfig = ArenaConfig(), catalog: Optional[TemplateCatalog] = None):
        self.config = config
        self.catalog = catalog or builtin_catalog()
        self.grid = _grid(config.map)

    # one round -------------------------------------------------------
    def run(self, trees: list, seed: int, library: Optional[dict] = None,
            record_exec: bool = True, on_tick=None):
        cfg = self.config
        if not 2 <= len(trees) <= cfg.agent_count:
            raise ValueError(f"need 2..{cfg.agent_count} trees, got {len(trees)}")
        n = len(trees)
        grid = self.grid
        rng = stream(seed, "round")
        self.respawn_rng = stream(seed, "respawn")
        pickup_rng = stream(seed, "pickups")
        state = ArenaState(cfg, grid)
        trace = SimTrace(n, seed)
        self.state, self.trace = state, trace
        starts = rng.sample(grid.spawns, n)
        cxm, cym = grid.w / 2, grid.h / 2
        for i, cell in enumerate(starts):
            x, y = grid.center(cell)
            fx, fy = _unit(cxm - x, cym - y)
            state.agents.append(AgentState(i, x, y, fx, fy, cfg.max_health, cfg.max_ammo, cfg.lives))
            trace.log(0, i, "spawn", cell)

        gbb = Blackboard("global", {k: 0 for k in GLOBAL_KEYS})
        self.gbb = gbb
        self.locals, self.bound = [], []
        for i, tree in enumerate(trees):
            lbb = Blackboard("local", {k: None for k in LOCAL_KEYS})
            self.locals.append(lbb)
            on_exec = (lambda name, params, i=i: trace.log(state.tick, i, "exec", (name, params))) \
                if record_exec else None
            self.bound.append(bind(tree, gbb, lbb, library=library, catalog=self.catalog,
                                   actions=self._handler(i), rng=stream(seed, "agent", i),
                                   on_exec=on_exec))

        dt = 1.0 / cfg.tick_rate
        view = [False] * n
        trace.checkpoint(0, state.state_hash())
        while state.tick < cfg.max_round_ticks:
            state.tick += 1
            t = state.tick
            gbb["tick"] = t
            gbb["time"] = t * dt
            gbb["alive_count"] = sum(1 for a in state.agents if a.alive)
            gbb["box_count"] = len(state.boxes)
            for a in state.agents:
                if not a.alive:
                    continue
                a.moved = False
                a.vx = a.vy = 0.0
                seen = self._sense(a)
                if seen != view[a.id]:
                    view[a.id] = seen
                    trace.log(t, a.id, "view", int(seen))
                if a.crashed:
                    continue
                try:
                    self.bound[a.id].tick(dt)
                except Exception as e:  # any fault inside a tree or its actions
                    a.crashed = True
                    trace.log(t, a.id, "crash", f"{type(e).__name__}: {e}")
            self._advance_projectiles()
            if t % cfg.pickup_spawn_period == 0 and len(state.boxes) < cfg.max_boxes:
                spawn_pickup(state, pickup_rng, trace)
            self._collect_pickups()
            self._resolve_deaths()
            if t % cfg.checkpoint_every == 0:
                trace.checkpoint(t, state.state_hash())
            if on_tick is not None:
                on_tick(state)
            if sum(1 for a in state.agents if a.alive) <= 1:
                break
        if not trace.checkpoints or trace.checkpoints[-1][0] != state.tick:
            trace.checkpoint(state.tick, state.state_hash())
        trace.log(state.tick, -1, "end")
        return collect_metrics(trace, cfg), trace

    # sensing ---------------------------------------------------------
    def _sense(self, a: AgentState) -> bool:
        cfg, grid, lbb = self.config, self.grid, self.locals[a.id]
        t = self.state.tick
        vals = lbb.values
        slot = lbb.slot
        my_cell = grid.cell_of(a.x, a.y)
        closest, cd = None, math.inf
        seen, sd = None, math.inf
        for e in self.state.agents:
            if e is a or not e.alive:
                continue
            d = math.hypot(e.x - a.x, e.y - a.y)
            if d < cd:
                closest, cd = e, d
            if d <= cfg.view_range and d < sd and grid.los(my_cell, grid.cell_of(e.x, e.y)):
                seen, sd = e, d
        vals[slot("self_pos")] = (a.x, a.y)
        vals[slot("self_health")] = a.health
        vals[slot("self_health_frac")] = a.health / cfg.max_health
        vals[slot("self_ammo")] = a.ammo
        vals[slot("self_ammo_frac")] = a.ammo / cfg.max_ammo
        vals[slot("self_has_shield")] = a.shield_until >= t
        vals[slot("self_has_weapon")] = a.weapon_upgrade_until >= t
        vals[slot("closest_enemy_id")] = closest.id if closest else -1
        vals[slot("enemy_in_view")] = seen is not None
        if seen is not None:
            vals[slot("enemy_id")] = seen.id
            vals[slot("enemy_pos")] = (seen.x, seen.y)
            vals[slot("enemy_dist")] = sd
            vals[slot("enemy_health_frac")] = seen.health / cfg.max_health
            vals[slot("enemy_has_shield")] = seen.shield_until >= t
            vals[slot("enemy_has_weapon")] = seen.weapon_upgrade_until >= t
        else:
            vals[slot("enemy_id")] = -1
            vals[slot("enemy_pos")] = None
            vals[slot("enemy_dist")] = cd
            vals[slot("enemy_health_frac")] = 1.0
            vals[slot("enemy_has_shield")] = False
            vals[slot("enemy_has_weapon")] = False
        return seen is not None

    # actions ---------------------------------------------------------
    def _handler(self, agent_id: int):
        table = {
            "idle": self._idle,
            "fire_forward": self._fire_forward,
            "fire_lead": self._fire_lead,
            "aim_closest_enemy": self._aim,
            "pathfind_closest_enemy": self._chase,
            "move_backward": self._back,
            "pathfind_closest_box": self._to_box,
            "go_to_position": self._go_to,
            "seek_cover": self._cover,
        }

        def handler(name, params):
            fn = table.get(name)
            if fn is None:
                raise TreeCrash(f"no handler for action {name!r}")
            return fn(self.state.agents[agent_id], params)

        return handler

    def _idle(self, a, params):
        return SUCCESS

    def _fire(self, a):
        t = self.state.tick
        if a.ammo <= 0:
            return FAILURE
        if t < a.next_fire:
            return RUNNING
        cfg = self.config
        dmg = cfg.damage * (cfg.weapon_upgrade_factor if a.weapon_upgrade_until >= t else 1.0)
        self.state.projectiles.append(
            Projectile(a.id, a.x + a.fx * 0.5, a.y + a.fy * 0.5, a.fx, a.fy, dmg))
        a.ammo -= 1
        a.next_fire = t + cfg.fire_period
        self.trace.log(t, a.id, "fire", dmg)
        return SUCCESS

    def _fire_forward(self, a, params):
        return self._fire(a)

    def _fire_lead(self, a, params):
        lbb = self.locals[a.id]
        eid = lbb["enemy_id"]
        if eid < 0:
            return FAILURE
        e = self.state.agents[eid]
        d = math.hypot(e.x - a.x, e.y - a.y)
        lead = d / self.config.projectile_speed
        a.fx, a.fy = _unit(e.x + e.vx * lead - a.x, e.y + e.vy * lead - a.y, a.fx, a.fy)
        return self._fire(a)

    def _aim(self, a, params):
        lbb = self.locals[a.id]
        eid = lbb["enemy_id"]
        if eid < 0:
            eid = lbb["closest_enemy_id"]
        if eid < 0:
            return FAILURE
        e = self.state.agents[eid]
        a.fx, a.fy = _unit(e.x - a.x, e.y - a.y, a.fx, a.fy)
        return SUCCESS

    def _chase(self, a, params):
        lbb = self.locals[a.id]
        eid = lbb["closest_enemy_id"]
        if eid < 0:
            return FAILURE
        if lbb["enemy_in_view"] and lbb["enemy_dist"] <= self.config.engage_range:
            return SUCCESS
        e = self.state.agents[eid]
        res = self._step_toward(a, self.grid.cell_of(e.x, e.y))
        return FAILURE if res is None else RUNNING

    def _to_box(self, a, params):
        boxes = self.state.boxes
        if not boxes:
            return FAILURE
        d = self.grid.dist
        cur = self.grid.cell_of(a.x, a.y)
        goal = min(boxes, key=lambda c: (d[c][cur], c))
        if d[goal][cur] == math.inf:
            return FAILURE
        res = self._step_toward(a, goal)
        return SUCCESS if res else RUNNING

    def _go_to(self, a, params):
        goal = self.grid.nearest_walkable(params["x"], params["y"])
        res = self._step_toward(a, goal)
        if res is None:
            return FAILURE
        return SUCCESS if res else RUNNING

    def _cover(self, a, params):
        grid = self.grid
        cur = grid.cell_of(a.x, a.y)
        order = grid.cover_by_distance(cur)
        if not order:
            return FAILURE
        eid = self.locals[a.id]["closest_enemy_id"]
        goal = order[0]
        if eid >= 0:
            e = self.state.agents[eid]
            ecell = grid.cell_of(e.x, e.y)
            for c in order:
                if not grid.los(c, ecell):
                    goal = c
                    break
        res = self._step_toward(a, goal)
        if res is None:
            return FAILURE
        return SUCCESS if res else RUNNING

    def _back(self, a, params):
        if a.moved:
            return RUNNING
        s = self.config.agent_speed
        nx, ny = a.x - a.fx * s, a.y - a.fy * s
        grid = self.grid
        if grid.blocked_at(nx, ny) or grid.blocked_at(a.x, ny) or grid.blocked_at(nx, a.y):
            return FAILURE
        self._displace(a, nx, ny)
        return SUCCESS

    # movement --------------------------------------------------------
    def _step_toward(self, a, goal: int):
        """Move one tick toward ``goal``; True when standing on its center,
        False while under way, None when unreachable."""
        grid = self.grid
        cur = grid.cell_of(a.x, a.y)
        gx, gy = grid.center(goal)
        if cur == goal:
            if abs(a.x - gx) < 1e-9 and abs(a.y - gy) < 1e-9:
                return True
            tx, ty = gx, gy
        else:
            dg = grid.dist[goal]
            if dg[cur] == math.inf:
                return None
            nxt = min(grid.nbrs[cur], key=lambda c: dg[c])
            tx, ty = grid.center(nxt)
        if a.moved:
            return False
        dx, dy = tx - a.x, ty - a.y
        d = math.hypot(dx, dy)
        s = self.config.agent_speed
        if d <= s:
            nx, ny = tx, ty
        else:
            nx, ny = a.x + dx / d * s, a.y + dy / d * s
        if d > 0:
            a.fx, a.fy = dx / d, dy / d
        self._displace(a, nx, ny)
        return cur == goal and nx == gx and ny == gy

    def _displace(self, a, nx, ny):
        a.vx, a.vy = nx - a.x, ny - a.y
        dist = math.hypot(a.vx, a.vy)
        a.x, a.y = nx, ny
        a.moved = True
        if dist > 0:
            self.trace.log(self.state.tick, a.id, "move", dist)

    # world updates ---------------------------------------------------
    def _advance_projectiles(self):
        cfg, grid, state = self.config, self.grid, self.state
        t = state.tick
        r2 = cfg.hit_radius ** 2
        keep = []
        for p in state.projectiles:
            remaining = cfg.projectile_speed
            alive = True
            while remaining > 1e-12 and alive:
                step = min(0.25, remaining)
                remaining -= step
                p.x += p.dx * step
                p.y += p.dy * step
                p.travelled += step
                if grid.blocked_at(p.x, p.y) or p.travelled > cfg.projectile_range:
                    alive = False
                    break
                for a in state.agents:
                    if a.id == p.owner or not a.alive or a.health <= 0:
                        continue
                    if (a.x - p.x) ** 2 + (a.y - p.y) ** 2 <= r2:
                        alive = False
                        if a.shield_until >= t:
                            self.trace.log(t, a.id, "shielded", p.owner)
                        else:
                            a.health = max(0.0, a.health - p.damage)
                            a.last_hit_by = p.owner
                            self.trace.log(t, a.id, "damage", (p.owner, p.damage, a.health))
                        break
            if alive:
                keep.append(p)
        state.projectiles = keep

    def _collect_pickups(self):
        state, cfg = self.state, self.config
        t = state.tick
        for a in state.agents:
            if not a.alive or a.health <= 0:
                continue
            cell = self.grid.cell_of(a.x, a.y)
            kind = state.boxes.pop(cell, None)
            if kind is None:
                continue
            if kind == "shield":
                a.shield_until = t + cfg.shield_duration
            elif kind == "weapon":
                a.weapon_upgrade_until = t + cfg.weapon_duration
            elif kind == "ammo":
                a.ammo = cfg.max_ammo
            else:
                a.health = cfg.max_health
            self.trace.log(t, a.id, "pickup", kind)

    def _resolve_deaths(self):
        state, cfg = self.state, self.config
        t = state.tick
        for a in state.agents:
            if not a.alive or a.health > 0:
                continue
            if a.last_hit_by >= 0:
                self.trace.log(t, a.last_hit_by, "kill", a.id)
            self.trace.log(t, a.id, "death", a.last_hit_by)
            a.lives -= 1
            a.last_hit_by = -1
            if a.lives > 0:
                occupied = {self.grid.cell_of(o.x, o.y) for o in state.agents if o.alive and o is not a}
                options = [c for c in self.grid.spawns if c not in occupied] or self.grid.spawns
                cell = self.respawn_rng.choice(options)
                a.x, a.y = self.grid.center(cell)
                a.health, a.ammo = cfg.max_health, cfg.max_ammo
                a.shield_until = a.weapon_upgrade_until = -1
                self.trace.log(t, a.id, "respawn", cell)
            else:
                a.alive = False
                self.trace.log(t, a.id, "eliminate")


def _unit(dx, dy, fx=1.0, fy=0.0):
    d = math.hypot(dx, dy)
    if d == 0:
        return fx, fy
    return dx / d, dy / d


def run_round(trees: list, config: ArenaConfig = ArenaConfig(), seed: int = 0,
              catalog: Optional[TemplateCatalog] = None, library: Optional[dict] = None,
              record_exec: bool = True):
    """Simulate one round; returns ``(RoundFeedback, SimTrace)``."""
    return Arena(config, catalog).run(trees, seed, library=library, record_exec=record_exec)


def collect_metrics(trace: SimTrace, config: ArenaConfig) -> RoundFeedback:
    n = trace.agent_count
    m = [dict.fromkeys(METRICS, 0.0) for _ in range(n)]
    crashed = [False] * n
    end_tick = trace.events[-1][0] if trace.events else 0
    eliminated = [None] * n
    window = config.escape_window * config.tick_rate
    low_mark = config.low_health_fraction * config.max_health
    # engagement tracking for escape counting
    in_view = [False] * n
    engaged = [False] * n
    low = [False] * n
    quiet_since = [0] * n

    def expire(i, t):
        if engaged[i] and not in_view[i] and t - quiet_since[i] >= window:
            if low[i]:
                m[i]["low_health_escapes"] += 1
            engaged[i] = False

    for tick, agent, kind, payload in trace.events:
        if agent >= 0:
            expire(agent, tick)
        if kind == "move":
            m[agent]["distance_traveled"] += payload
        elif kind == "kill":
            m[agent]["kills"] += 1
        elif kind == "death":
            m[agent]["deaths"] += 1
            engaged[agent] = False
        elif kind == "damage":
            attacker, amount, health = payload
            m[attacker]["damage_dealt"] += amount
            if not engaged[agent]:
                engaged[agent], low[agent] = True, False
                quiet_since[agent] = tick
            if health < low_mark:
                low[agent] = True
        elif kind == "view":
            in_view[agent] = bool(payload)
            if not payload:
                quiet_since[agent] = tick
        elif kind == "pickup":
            m[agent][f"{payload}_boxes"] += 1
        elif kind == "eliminate":
            eliminated[agent] = tick
        elif kind == "crash":
            crashed[agent] = True
    for i in range(n):
        expire(i, end_tick)
        m[i]["survival_ticks"] = float(eliminated[i] if eliminated[i] is not None else end_tick)
        if crashed[i]:
            m[i] = dict.fromkeys(METRICS, 0.0)
    return RoundFeedback(m, crashed, end_tick)
