"""Discrete grid world: occupancy, navigability graph, episodes and geodesic oracles.

Cells are ``(x, y)`` tuples; the occupancy array is indexed ``[y, x]`` with
``y`` growing downwards. Headings are 0=N (y-1), 1=E (x+1), 2=S (y+1), 3=W (x-1).
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Cell = tuple[int, int]

MAX_EPISODE_STEPS = 500
DEFAULT_CELL_SIZE = 0.5
UNREACHABLE = math.inf

# heading -> (dx, dy)
HEADING_VECTORS: tuple[Cell, ...] = ((0, -1), (1, 0), (0, 1), (-1, 0))
HEADING_NAMES = ("N", "E", "S", "W")


class Action(enum.IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


MOTION_ACTIONS = (Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


class EnvError(Exception):
    pass


class EpisodeFinishedError(EnvError):
    """Raised when acting on an episode that is already done."""


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: int

    def forward_cell(self) -> Cell:
        dx, dy = HEADING_VECTORS[self.heading]
        return (self.cell[0] + dx, self.cell[1] + dy)


@dataclass(eq=False)
class GridEnvironment:
    """Immutable after construction. ``occupancy`` is True for walls."""

    occupancy: np.ndarray
    source: Cell
    seed: int = 0
    cell_size: float = DEFAULT_CELL_SIZE
    _dist_cache: dict = field(default_factory=dict, init=False, repr=False)
    _scan_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.occupancy.setflags(write=False)
        self.source = (int(self.source[0]), int(self.source[1]))

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell[1], cell[0]]

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(~self.occupancy)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def neighbors(self, cell: Cell) -> list[Cell]:
        """Navigability graph adjacency: 4-neighbour free cells."""
        out = []
        for dx, dy in HEADING_VECTORS:
            n = (cell[0] + dx, cell[1] + dy)
            if self.is_free(n):
                out.append(n)
        return out

    def has_edge(self, a: Cell, b: Cell) -> bool:
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
        return self.is_free(a) and self.is_free(b)

    def with_source(self, source: Cell) -> GridEnvironment:
        if not self.is_free(source):
            raise EnvError(f"source {source} is not a free cell")
        env = GridEnvironment(self.occupancy, source, self.seed, self.cell_size)
        env._dist_cache = self._dist_cache  # geometry is shared
        env._scan_cache = self._scan_cache
        return env

    def distance_field(self, goal: Cell) -> np.ndarray:
        """BFS hop counts from ``goal`` to every cell; -1 where unreachable or wall."""
        cached = self._dist_cache.get(goal)
        if cached is not None:
            return cached
        dist = np.full(self.occupancy.shape, -1, dtype=np.int32)
        if self.is_free(goal):
            dist[goal[1], goal[0]] = 0
            queue = deque([goal])
            while queue:
                c = queue.popleft()
                d = dist[c[1], c[0]] + 1
                for n in self.neighbors(c):
                    if dist[n[1], n[0]] < 0:
                        dist[n[1], n[0]] = d
                        queue.append(n)
        dist.setflags(write=False)
        self._dist_cache[goal] = dist
        return dist

    def validate(self) -> None:
        """Check the structural invariants; raise EnvError on violation."""
        if self.width < 1 or self.height < 1:
            raise EnvError("empty grid")
        free = self.free_cells()
        if not free:
            raise EnvError("no free cells")
        if not self.is_free(self.source):
            raise EnvError(f"source {self.source} is not free")
        reach = self.distance_field(self.source)
        if int((reach >= 0).sum()) != len(free):
            raise EnvError("free space is not connected")

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        occ = "".join("#" if v else "." for v in self.occupancy.ravel())
        return {
            "width": self.width,
            "height": self.height,
            "cell_size": self.cell_size,
            "occupancy": occ,
            "source": list(self.source),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GridEnvironment:
        w, h = int(d["width"]), int(d["height"])
        occ = d["occupancy"]
        if len(occ) != w * h or set(occ) - {"#", "."}:
            raise EnvError("malformed occupancy string")
        grid = np.frombuffer(occ.encode("ascii"), dtype=np.uint8).reshape(h, w) == ord("#")
        return cls(grid.copy(), tuple(d["source"]), int(d["seed"]), float(d.get("cell_size", DEFAULT_CELL_SIZE)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> GridEnvironment:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def ascii(self, marks: dict[Cell, str] | None = None) -> str:
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                ch = "#" if self.occupancy[y, x] else "."
                if marks and (x, y) in marks:
                    ch = marks[(x, y)]
                row.append(ch)
            rows.append("".join(row))
        return "\n".join(rows)


@dataclass
class EpisodeState:
    pose: AgentPose
    goal: Cell
    step_count: int = 0
    done: bool = False
    success: bool = False
    executed_actions: list[Action] = field(default_factory=list)
    visited_cells: list[Cell] = field(default_factory=list)

    @classmethod
    def start(cls, pose: AgentPose, goal: Cell) -> EpisodeState:
        return cls(pose=pose, goal=goal, visited_cells=[pose.cell])


def step(env: GridEnvironment, state: EpisodeState, action: Action) -> tuple[EpisodeState, bool]:
    """Apply one primitive action in place. Returns the state and whether MoveForward was blocked."""
    if state.done:
        raise EpisodeFinishedError("episode already finished")
    action = Action(action)
    pose = state.pose
    collided = False
    if action == Action.TURN_LEFT:
        state.pose = AgentPose(pose.cell, (pose.heading - 1) % 4)
    elif action == Action.TURN_RIGHT:
        state.pose = AgentPose(pose.cell, (pose.heading + 1) % 4)
    elif action == Action.MOVE_FORWARD:
        nxt = pose.forward_cell()
        if env.has_edge(pose.cell, nxt):
            state.pose = AgentPose(nxt, pose.heading)
            state.visited_cells.append(nxt)
        else:
            collided = True
    else:
        state.done = True
        state.success = pose.cell == state.goal
    state.executed_actions.append(action)
    state.step_count += 1
    if state.step_count >= MAX_EPISODE_STEPS:
        state.done = True
    return state, collided


def geodesic_distance(env: GridEnvironment, a: Cell, b: Cell) -> float:
    """Shortest-path length in meters over the navigability graph, or UNREACHABLE."""
    if not env.is_free(a) or not env.is_free(b):
        return UNREACHABLE
    hops = int(env.distance_field(b)[a[1], a[0]])
    if hops < 0:
        return UNREACHABLE
    return hops * env.cell_size


def geodesic_cells(env: GridEnvironment, a: Cell, b: Cell) -> int:
    """Hop count between two cells, -1 when unreachable."""
    if not env.is_free(a) or not env.is_free(b):
        return -1
    return int(env.distance_field(b)[a[1], a[0]])


def first_path_step(env: GridEnvironment, cell: Cell, goal: Cell) -> Cell | None:
    """First cell on a shortest path from ``cell`` to ``goal``.

    Ties are broken by heading order N, E, S, W. ``None`` when already at the
    goal or when the goal is unreachable.
    """
    dist = env.distance_field(goal)
    d = dist[cell[1], cell[0]] if env.in_bounds(cell) else -1
    if d <= 0:
        return None
    for n in env.neighbors(cell):
        if dist[n[1], n[0]] == d - 1:
            return n
    raise AssertionError("inconsistent distance field")


def shortest_action_count(env: GridEnvironment, pose: AgentPose, goal: Cell) -> float:
    """Minimal number of primitive actions (turns included, Stop excluded) to reach ``goal``."""
    if not env.is_free(goal) or not env.is_free(pose.cell):
        return UNREACHABLE
    if pose.cell == goal:
        return 0
    seen = {(pose.cell, pose.heading)}
    queue = deque([(pose.cell, pose.heading, 0)])
    while queue:
        cell, heading, n = queue.popleft()
        dx, dy = HEADING_VECTORS[heading]
        fwd = (cell[0] + dx, cell[1] + dy)
        succ = [((cell), (heading - 1) % 4), ((cell), (heading + 1) % 4)]
        if env.is_free(fwd):
            if fwd == goal:
                return n + 1
            succ.append((fwd, heading))
        for s in succ:
            if s not in seen:
                seen.add(s)
                queue.append((s[0], s[1], n + 1))
    return UNREACHABLE


# generation -----------------------------------------------------------------


def _split_regions(occ: np.ndarray, rng: np.random.Generator, min_room: int, loop_prob: float) -> None:
    """Recursive division of the interior into rooms joined by one-cell doors."""
    h, w = occ.shape
    stack = [(1, 1, w - 2, h - 2)]
    while stack:
        x0, y0, x1, y1 = stack.pop()
        rw, rh = x1 - x0 + 1, y1 - y0 + 1
        can_v = rw >= 2 * min_room + 1
        can_h = rh >= 2 * min_room + 1
        if not (can_v or can_h):
            continue
        if can_v and can_h:
            vertical = rw > rh if rw != rh else bool(rng.integers(2))
        else:
            vertical = can_v
        if vertical:
            wx = int(rng.integers(x0 + min_room, x1 - min_room + 1))
            occ[y0 : y1 + 1, wx] = True
            n_doors = 1 + int(rng.random() < loop_prob)
            for dy in rng.choice(rh, size=min(n_doors, rh), replace=False):
                occ[y0 + int(dy), wx] = False
            stack.append((x0, y0, wx - 1, y1))
            stack.append((wx + 1, y0, x1, y1))
        else:
            wy = int(rng.integers(y0 + min_room, y1 - min_room + 1))
            occ[wy, x0 : x1 + 1] = True
            n_doors = 1 + int(rng.random() < loop_prob)
            for dx in rng.choice(rw, size=min(n_doors, rw), replace=False):
                occ[wy, x0 + int(dx)] = False
            stack.append((x0, y0, x1, wy - 1))
            stack.append((x0, wy + 1, x1, y1))


def _label_components(occ: np.ndarray) -> tuple[np.ndarray, int]:
    from scipy import ndimage

    labels, n = ndimage.label(~occ)  # default structure is 4-connectivity
    return labels, n


def _connect_components(occ: np.ndarray) -> None:
    """Carve the cheapest wall crossings until free space forms one component."""
    h, w = occ.shape
    while True:
        labels, n = _label_components(occ)
        if n <= 1:
            return
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        main = int(np.argmax(sizes))
        # 0-1 BFS from the main component through interior walls
        cost = np.full(occ.shape, np.iinfo(np.int32).max, dtype=np.int64)
        prev = {}
        dq = deque()
        for y, x in zip(*np.nonzero(labels == main)):
            cost[y, x] = 0
            dq.append((int(x), int(y)))
        target = None
        while dq:
            x, y = dq.popleft()
            if labels[y, x] not in (0, main):
                target = (x, y)
                break
            for dx, dy in HEADING_VECTORS:
                nx, ny = x + dx, y + dy
                if not (1 <= nx < w - 1 and 1 <= ny < h - 1):
                    continue
                step_cost = 1 if occ[ny, nx] else 0
                c = cost[y, x] + step_cost
                if c < cost[ny, nx]:
                    cost[ny, nx] = c
                    prev[(nx, ny)] = (x, y)
                    if step_cost:
                        dq.append((nx, ny))
                    else:
                        dq.appendleft((nx, ny))
        if target is None:
            raise EnvError("cannot connect free-space components")
        c = target
        while c in prev:
            occ[c[1], c[0]] = False
            c = prev[c]


def generate_maze(seed: int, width: int = 16, height: int = 16, room_density: float = 0.5,
                  loop_prob: float = 0.5, cell_size: float = DEFAULT_CELL_SIZE) -> GridEnvironment:
    """Rooms-and-corridors layout with border walls, deterministic per seed.

    ``room_density`` 0 yields an open arena; 1 yields rooms as small as 2 cells.
    ``loop_prob`` is the chance that a dividing wall gets a second door.
    """
    if width < 4 or height < 4:
        raise EnvError("width and height must be at least 4")
    if not 0.0 <= room_density <= 1.0:
        raise EnvError("room_density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    occ = np.zeros((height, width), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    if room_density > 0:
        min_room = max(2, int(round(2 + (1.0 - room_density) * 6)))
        _split_regions(occ, rng, min_room, loop_prob)
    _connect_components(occ)
    free = np.argwhere(~occ)
    if len(free) == 0:
        raise EnvError("degenerate maze: no free cells")
    if len(free) < 0.3 * width * height:
        raise EnvError("degenerate maze: fewer than 30% free cells")
    y, x = free[int(rng.integers(len(free)))]
    env = GridEnvironment(occ, (int(x), int(y)), seed, cell_size)
    return env


def sample_episode(env: GridEnvironment, seed: int) -> tuple[AgentPose, Cell]:
    """Random start pose and goal cell, distinct and free; deterministic per seed."""
    free = env.free_cells()
    if len(free) < 2:
        raise EnvError("need at least two free cells")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    i, j = rng.choice(len(free), size=2, replace=False)
    heading = int(rng.integers(4))
    return AgentPose(free[int(i)], heading), free[int(j)]
