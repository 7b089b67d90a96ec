import math

import numpy as np
import pytest

from avnav.audio import SourceLibrary
from avnav.env import (
    Action,
    AgentPose,
    GridEnvironment,
    first_path_step,
    generate_maze,
    sample_episode,
)
from avnav.planner import PlanOutcome, PlanStatus, next_action, random_action
from avnav.rewards import RewardConfig, step_reward, waypoint_reward
from avnav.session import NavigationSession

SOUND = SourceLibrary()["telephone"]


def test_one_cell_closer():
    assert step_reward(3.0, 2.5, False) == pytest.approx(0.24, abs=1e-12)


def test_pure_rotation():
    assert step_reward(3.0, 3.0, False) == pytest.approx(-0.01, abs=1e-12)


def test_stop_at_goal():
    assert step_reward(0.0, 0.0, True) == pytest.approx(9.99, abs=1e-12)


def test_one_cell_farther():
    assert step_reward(2.5, 3.0, False) == pytest.approx(-0.26, abs=1e-12)


def test_proportional_mode_scales_with_cells():
    cfg = RewardConfig(proportional=True)
    assert step_reward(3.0, 2.25, False, config=cfg) == pytest.approx(0.25 * 1.5 - 0.01)
    assert step_reward(3.0, 2.25, False) == pytest.approx(0.25 * 2 - 0.01)  # flat rounds to whole cells


def outcome(rewards):
    out = PlanOutcome(PlanStatus.REACHED)
    for r in rewards:
        out._record(Action.MOVE_FORWARD, r)
    return out


def test_waypoint_reward_sums():
    assert waypoint_reward(outcome([step_reward(d, d - 0.5, False) for d in (3.0, 2.5, 2.0)])) == pytest.approx(0.72)
    assert waypoint_reward(outcome([step_reward(2.0, 2.0, False)] * 10)) == pytest.approx(-0.10)


def test_no_path_random_action_increasing_distance():
    # facing away from the goal in a corridor: only a forward step changes the distance
    env = GridEnvironment(np.zeros((1, 8), dtype=bool), (0, 0))
    for seed in range(40):
        s = NavigationSession(env, AgentPose((4, 0), 1), (0, 0), SOUND, seed=seed)
        action, r = random_action(s)
        if action == Action.MOVE_FORWARD:
            assert r == pytest.approx(-0.26, abs=1e-12)
            return
    pytest.fail("no forward action drawn in 40 seeds")


def scripted_actions(rng):
    """Random motions, optionally followed by the true shortest route and Stop."""
    acts = [Action(int(a)) for a in rng.integers(0, 3, size=int(rng.integers(0, 40)))]
    finish = bool(rng.random() < 0.5)
    return acts, finish


def test_return_accounting_on_scripted_trajectories():
    rng = np.random.default_rng(5)
    for k in range(50):
        env = generate_maze(int(rng.integers(1000)), 10, 10)
        start, goal = sample_episode(env, k)
        s = NavigationSession(env, start, goal, SOUND, seed=k)
        d0 = s.goal_distance()
        acts, finish = scripted_actions(rng)
        n = 0
        for a in acts:
            s.act(a)
            n += 1
        if finish:
            while s.pose.cell != goal:
                nxt = first_path_step(env, s.pose.cell, goal)
                s.act(next_action([s.pose.cell, nxt], s.pose))
                n += 1
        s.act(Action.STOP)
        n += 1
        progress = (d0 - s.goal_distance()) / env.cell_size
        expected = 10 * s.state.success + 0.25 * progress - 0.01 * n
        assert s.state.success == finish
        assert math.isclose(s.episode_return, expected, abs_tol=1e-9)
