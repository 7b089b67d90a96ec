from collections import deque

import numpy as np
import pytest

from avnav.audio import SourceLibrary
from avnav.env import MOTION_ACTIONS, Action, AgentPose, GridEnvironment
from avnav.planner import (
    PlanGraph,
    PlannerError,
    PlanStatus,
    dijkstra,
    follow_to_cell,
    next_action,
    path_cost,
    run_planner_loop,
)
from avnav.policy import Waypoint
from avnav.rewards import waypoint_reward
from avnav.session import NavigationSession

SOUND = SourceLibrary()["telephone"]


def bfs_length(blocked, a, b):
    h, w = blocked.shape
    if blocked[a[1], a[0]] or blocked[b[1], b[0]]:
        return None
    seen = {a: 0}
    q = deque([a])
    while q:
        c = q.popleft()
        if c == b:
            return seen[c]
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (c[0] + dx, c[1] + dy)
            if 0 <= n[0] < w and 0 <= n[1] < h and not blocked[n[1], n[0]] and n not in seen:
                seen[n] = seen[c] + 1
                q.append(n)
    return None


def open_env(w=12, h=12, walls=()):
    occ = np.zeros((h, w), dtype=bool)
    for x, y in walls:
        occ[y, x] = True
    return GridEnvironment(occ, (0, 0))


def test_start_equals_target_gives_empty_move_list():
    g = PlanGraph(np.zeros((5, 5), dtype=bool))
    assert dijkstra(g, (2, 2), (2, 2)) == [(2, 2)]
    assert path_cost([(2, 2)]) == 0.0


def test_dijkstra_matches_bfs_on_random_partial_maps():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(100):
        blocked = rng.random((12, 12)) < 0.3
        free = np.argwhere(~blocked)
        a, b = free[rng.choice(len(free), 2, replace=False)]
        a, b = (int(a[1]), int(a[0])), (int(b[1]), int(b[0]))
        path = dijkstra(PlanGraph(blocked), a, b)
        ref = bfs_length(blocked, a, b)
        if ref is None:
            assert path is None
            continue
        checked += 1
        assert path[0] == a and path[-1] == b
        assert len(path) - 1 == ref
        assert path_cost(path) == ref * 0.5
        for p, q in zip(path, path[1:]):
            assert abs(p[0] - q[0]) + abs(p[1] - q[1]) == 1
            assert not blocked[q[1], q[0]]
    assert checked > 50


def test_dijkstra_deterministic_tie_breaking():
    g = PlanGraph(np.zeros((6, 6), dtype=bool))
    assert dijkstra(g, (0, 0), (3, 3)) == dijkstra(g, (0, 0), (3, 3))


def test_target_in_occupied_region_has_no_path():
    blocked = np.zeros((8, 8), dtype=bool)
    blocked[3:6, 3:6] = True
    assert dijkstra(PlanGraph(blocked), (0, 0), (4, 4)) is None
    blocked[4, 4] = False  # free but sealed in
    assert dijkstra(PlanGraph(blocked), (0, 0), (4, 4)) is None


def test_start_outside_graph_raises():
    blocked = np.zeros((4, 4), dtype=bool)
    blocked[0, 0] = True
    with pytest.raises(PlannerError):
        dijkstra(PlanGraph(blocked), (0, 0), (3, 3))


@pytest.mark.parametrize("heading", range(4))
def test_next_action_table(heading):
    pose = AgentPose((5, 5), heading)
    expected = {0: Action.MOVE_FORWARD, 1: Action.TURN_RIGHT, 2: Action.TURN_LEFT, 3: Action.TURN_LEFT}
    for d, (dx, dy) in enumerate(((0, -1), (1, 0), (0, 1), (-1, 0))):
        a = next_action([(5, 5), (5 + dx, 5 + dy)], pose)
        assert a == expected[(d - heading) % 4]


def test_next_action_errors():
    with pytest.raises(PlannerError):
        next_action([(1, 1)], AgentPose((1, 1), 0))
    with pytest.raises(PlannerError):
        next_action([(0, 0), (0, 1)], AgentPose((1, 1), 0))
    with pytest.raises(PlannerError):
        next_action([(1, 1), (3, 1)], AgentPose((1, 1), 0))


def session(env, pose, goal, seed=0):
    return NavigationSession(env, pose, goal, SOUND, seed=seed)


def test_adjacent_waypoint_one_forward_then_reached():
    s = session(open_env(), AgentPose((5, 5), 0), (1, 1))
    out = run_planner_loop(s, Waypoint(0, 1))
    assert out.status == PlanStatus.REACHED
    assert out.actions_executed == [Action.MOVE_FORWARD]
    assert s.pose.cell == (5, 4)


def test_stop_waypoint_issues_stop():
    s = session(open_env(), AgentPose((5, 5), 0), (1, 1))
    out = run_planner_loop(s, Waypoint(0, 0))
    assert out.status == PlanStatus.STOPPED and out.actions_executed == [Action.STOP]
    assert s.done and not s.state.success


def test_no_path_executes_one_random_motion_action():
    s = session(open_env(), AgentPose((5, 5), 0), (1, 1))
    target = (s.G.pose.cell[0] + 3, s.G.pose.cell[1])
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            s.G.mark_blocked((target[0] + dx, target[1] + dy))
    out = follow_to_cell(s, target)
    assert out.status == PlanStatus.NO_PATH
    assert len(out.actions_executed) == 1 and out.actions_executed[0] in MOTION_ACTIONS


def test_step_limit_after_ten_actions():
    env = open_env(w=5, h=20)
    s = session(env, AgentPose((2, 15), 0), (0, 0))
    target = (s.G.pose.cell[0], s.G.pose.cell[1] - 12)
    out = follow_to_cell(s, target, limit=10)
    assert out.status == PlanStatus.STEP_LIMIT
    assert len(out.actions_executed) == 10
    assert s.pose.cell == (2, 5)
    assert waypoint_reward(out) == pytest.approx(out.reward_accumulated, abs=1e-12)


def test_unexplored_corridor_is_treated_as_free():
    # the target sits beyond the sensed area; planning through unknown cells must still work
    env = open_env(w=30, h=5)
    s = session(env, AgentPose((1, 2), 1), (28, 2))
    target = (s.G.pose.cell[0] + 0, s.G.pose.cell[1] - 12)  # 12 cells ahead in the map frame
    assert not s.G.explored()[target[1] * 5, target[0] * 5]
    out = follow_to_cell(s, target, limit=20)
    assert out.status == PlanStatus.REACHED
    assert s.pose.cell == (13, 2)


def test_replanning_around_wall_discovered_en_route():
    # the wall is out of scan range at the start; the plan must change once it is seen
    env = open_env(w=9, h=12, walls=[(4, 3), (3, 3), (5, 3)])
    s = session(env, AgentPose((4, 10), 0), (0, 0))
    target = (s.G.pose.cell[0], s.G.pose.cell[1] - 9)
    out = follow_to_cell(s, target, limit=40)
    assert out.status == PlanStatus.REACHED
    assert s.pose.cell == (4, 1)
    occ = s.G.occupied_cells()
    for x in (3, 4, 5):
        mx, my = s.frame.to_map((x, 3))
        assert occ[my, mx]
