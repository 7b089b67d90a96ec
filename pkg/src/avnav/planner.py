"""Shortest paths on the partial map and the waypoint-following loop."""

from __future__ import annotations

import enum
import heapq
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .env import HEADING_VECTORS, MOTION_ACTIONS, Action, AgentPose, Cell
from .mapping import GeometricMap

if TYPE_CHECKING:
    from .policy import Waypoint
    from .session import NavigationSession

DEFAULT_STEP_LIMIT = 10


class PlannerError(Exception):
    pass


class PlanStatus(str, enum.Enum):
    REACHED = "ReachedWaypoint"
    NO_PATH = "NoPath"
    STEP_LIMIT = "StepLimit"
    STOPPED = "StoppedAtGoalClaim"


@dataclass
class PlanGraph:
    """4-connected graph over environment-resolution map cells; unexplored counts as free."""

    blocked: np.ndarray  # (H, W) bool
    cell_size: float = 0.5

    @classmethod
    def from_map(cls, G: GeometricMap, cell_size: float = 0.5, keep_free: Cell | None = None) -> PlanGraph:
        blocked = G.occupied_cells().copy()
        if keep_free is not None:
            blocked[keep_free[1], keep_free[0]] = False
        return cls(blocked, cell_size)

    def contains(self, cell: Cell) -> bool:
        x, y = cell
        h, w = self.blocked.shape
        return 0 <= x < w and 0 <= y < h and not self.blocked[y, x]

    def neighbors(self, cell: Cell):
        x, y = cell
        for dx, dy in HEADING_VECTORS:
            n = (x + dx, y + dy)
            if self.contains(n):
                yield n


def dijkstra(graph: PlanGraph, start: Cell, target: Cell) -> list[Cell] | None:
    """Cheapest cell path from start to target, both included; None when unreachable.

    Equal-cost frontier entries pop in lexicographic cell order and neighbours
    are expanded N, E, S, W, so the result is fully deterministic.
    """
    if not graph.contains(start):
        raise PlannerError(f"start {start} is not in the plan graph")
    if not graph.contains(target):
        return None
    if start == target:
        return [start]
    blocked = graph.blocked
    h, w = blocked.shape
    step = graph.cell_size
    dist = {start: 0.0}
    parent: dict[Cell, Cell] = {}
    heap = [(0.0, start)]
    done: set[Cell] = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == target:
            break
        x, y = cell
        nd = d + step
        for dx, dy in HEADING_VECTORS:
            nx, ny = x + dx, y + dy
            if nx < 0 or ny < 0 or nx >= w or ny >= h or blocked[ny, nx]:
                continue
            n = (nx, ny)
            if nd < dist.get(n, math.inf):
                dist[n] = nd
                parent[n] = cell
                heapq.heappush(heap, (nd, n))
    if target not in done:
        return None
    path = [target]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def path_cost(path: list[Cell], cell_size: float = 0.5) -> float:
    return (len(path) - 1) * cell_size


def next_action(path: list[Cell], pose: AgentPose) -> Action:
    """Primitive action toward ``path[1]``; a cell straight behind turns left."""
    if not path or path[0] != pose.cell:
        raise PlannerError(f"path does not start at the agent cell {pose.cell}")
    if len(path) == 1:
        raise PlannerError("path has no next cell")
    dx, dy = path[1][0] - pose.cell[0], path[1][1] - pose.cell[1]
    if (dx, dy) not in HEADING_VECTORS:
        raise PlannerError(f"path cells {pose.cell} -> {path[1]} are not adjacent")
    diff = (HEADING_VECTORS.index((dx, dy)) - pose.heading) % 4
    if diff == 0:
        return Action.MOVE_FORWARD
    if diff == 1:
        return Action.TURN_RIGHT
    return Action.TURN_LEFT


@dataclass
class PlanOutcome:
    status: PlanStatus
    actions_executed: list[Action] = field(default_factory=list)
    reward_accumulated: float = 0.0
    target: Cell | None = None
    step_rewards: list[float] = field(default_factory=list)

    def _record(self, action: Action, reward: float) -> None:
        self.actions_executed.append(action)
        self.step_rewards.append(reward)
        self.reward_accumulated += reward


def run_planner_loop(session: NavigationSession, waypoint: Waypoint, limit: int = DEFAULT_STEP_LIMIT) -> PlanOutcome:
    """Follow ``waypoint`` with replanning after every primitive action.

    A (0, 0) waypoint issues Stop. The loop ends when the waypoint cell is
    reached, no path exists (one random motion action is then executed), or
    ``limit`` actions have been taken.
    """
    from .policy import waypoint_cell

    if session.done:
        raise PlannerError("episode already finished")
    G = session.G
    if waypoint.is_stop:
        out = PlanOutcome(PlanStatus.STOPPED, target=G.pose.cell)
        out._record(Action.STOP, session.act(Action.STOP))
        return out
    return follow_to_cell(session, waypoint_cell(G.pose, waypoint), limit)


def follow_to_cell(session: NavigationSession, target: Cell, limit: int = DEFAULT_STEP_LIMIT,
                   interrupt: Callable[[NavigationSession], bool] | None = None) -> PlanOutcome:
    """Drive toward a map-frame cell. ``interrupt`` may stop the episode before any action."""
    if session.done:
        raise PlannerError("episode already finished")
    G = session.G
    out = PlanOutcome(PlanStatus.STEP_LIMIT, target=target)
    while True:
        if interrupt is not None and not session.done and interrupt(session):
            out._record(Action.STOP, session.act(Action.STOP))
            out.status = PlanStatus.STOPPED
            break
        if G.pose.cell == target:
            out.status = PlanStatus.REACHED
            break
        if len(out.actions_executed) >= limit or session.done:
            out.status = PlanStatus.STEP_LIMIT
            break
        graph = PlanGraph.from_map(G, session.env.cell_size, keep_free=G.pose.cell)
        path = dijkstra(graph, G.pose.cell, target)
        if path is None:
            out._record(*random_action(session))
            out.status = PlanStatus.NO_PATH
            break
        a = next_action(path, G.pose)
        out._record(a, session.act(a))
    return out


def random_action(session: NavigationSession) -> tuple[Action, float]:
    a = MOTION_ACTIONS[int(session.rng.integers(len(MOTION_ACTIONS)))]
    return a, session.act(a)
