import math
from collections import deque
from types import SimpleNamespace

import numpy as np
import pytest

from avnav.audio import SAMPLE_RATE, Sound, SourceLibrary, doa_bin_angle
from avnav.baselines import (
    AudioNet,
    AudioNetConfig,
    ClassifierDoA,
    DirectionFollower,
    FrontierWaypoints,
    GoalPredictorAgent,
    OracleDoA,
    OracleStop,
    RandomAgent,
    StopDecider,
    SupervisedWaypoints,
    audio_regressor,
    best_value,
    calibrate_stop_threshold,
    egocentric_offset,
    fit,
    fov_target,
    fov_waypoint_dataset,
    goal_offset_dataset,
    intensity_at,
    nearest_free_cell,
    offset_along,
    oracle_regressor,
    path_action_count,
    sector_contains,
    sweep,
)
from avnav.env import (
    MAX_EPISODE_STEPS,
    Action,
    AgentPose,
    GridEnvironment,
    generate_maze,
    sample_episode,
)
from avnav.evaluation import evaluate_agent
from avnav.mapping import EXPLORED, OCCUPIED, GeometricMap, frontiers
from avnav.metrics import EpisodeRecord, spl, sr
from avnav.planner import PlanStatus
from avnav.policy import Waypoint, waypoint_cell
from avnav.session import NavigationSession, execute_decision, run_episode

TEL = SourceLibrary()["telephone"]


def open_env(w, h=None, seed=0):
    return GridEnvironment(np.zeros((h or w, w), dtype=bool), (0, 0), seed)


def session(env, start, goal, seed=0, sound=TEL):
    return NavigationSession(env, start, goal, sound, seed=seed)


# random agent ---------------------------------------------------------------


def test_random_agent_action_frequencies():
    agent = RandomAgent()
    agent.reset(SimpleNamespace(seed=11))
    counts = np.zeros(4)
    for _ in range(100_000):
        counts[int(agent.decide(None).action)] += 1
    freq = counts / counts.sum()
    assert freq[int(Action.STOP)] == 0
    assert np.all(np.abs(freq[:3] - 1 / 3) < 0.02)


def test_random_agent_stops_on_goal():
    env = open_env(2, 1)
    sess = session(env, AgentPose((0, 0), 1), (1, 0))
    rec = run_episode(sess, RandomAgent())
    assert rec.success
    assert sess.steps[-1].action == int(Action.STOP)


def test_episode_cap_bounds_any_agent():
    env = generate_maze(3, 12, 12)
    sess = session(env, *sample_episode(env, 0))
    run_episode(sess, RandomAgent(stop=StopDecider()))
    assert len(sess.steps) <= MAX_EPISODE_STEPS


# direction follower ----------------------------------------------------------


def test_direction_follower_straight_ahead_two_metres():
    env = open_env(10)
    sess = session(env, AgentPose((5, 9), 0), (5, 0))
    agent = DirectionFollower(2.0, doa=OracleDoA(noise_deg=0.0))
    agent.reset(sess)
    d = agent.decide(sess)
    assert d.target == waypoint_cell(sess.G.pose, Waypoint(0, 4))
    assert d.limit == 4


def test_direction_follower_blocked_target_takes_one_random_action():
    env = open_env(10)
    sess = session(env, AgentPose((5, 9), 0), (5, 0))
    # pretend the map shows an obstacle exactly where the waypoint lands
    tgt = waypoint_cell(sess.G.pose, Waypoint(0, 4))
    sess.G.mark_blocked(tgt)
    agent = DirectionFollower(2.0, doa=OracleDoA(noise_deg=0.0))
    agent.reset(sess)
    d = agent.decide(sess)
    assert d.target is None and d.action is None and d.waypoint is None
    out, _ = execute_decision(sess, agent, d)
    assert out.status == PlanStatus.NO_PATH and len(out.actions_executed) == 1
    assert out.actions_executed[0] != Action.STOP


def test_distance_sweep_picks_best_spl():
    table = {1: 0.2, 2: 0.5, 3: 0.5, 4: 0.1}

    def evaluate(agent):
        return fake_records(table[agent.distance_m])

    rows = sweep(lambda k: DirectionFollower(k), [1, 2, 3, 4], evaluate)
    assert [r["value"] for r in rows] == [1, 2, 3, 4]
    assert best_value(rows) == 2


def fake_records(ratio):
    return [EpisodeRecord(True, 10.0, 10.0 * ratio, 20, 20)]


def test_direction_follower_solves_open_arenas_with_oracles():
    # one-cell steps; longer rays overshoot into the arena wall and stall on random actions
    envs = [open_env(8, seed=k) for k in range(5)]
    agent = DirectionFollower(0.5, doa=OracleDoA(noise_deg=0.0), stop=OracleStop())
    recs = evaluate_agent(agent, envs, 10, seed=4, sound=TEL)
    assert sr(recs) == 1.0


# frontier waypoints ----------------------------------------------------------


def explored_map(pose_cell=(20, 20), heading=0):
    G = GeometricMap()
    G.grid[EXPLORED] = 1.0
    G.pose = AgentPose(pose_cell, heading)
    return G


def set_cell(G, cell, channel, value):
    r = G.ratio
    G.grid[channel, cell[1] * r : (cell[1] + 1) * r, cell[0] * r : (cell[0] + 1) * r] = value


def test_fully_explored_map_takes_fallback():
    G = explored_map()
    agent = FrontierWaypoints()
    assert frontiers(G.cell_grid()) == set()
    target, rule = agent.select(G, 0)
    assert rule == "fallback" and target == (20, 17)


def test_single_frontier_in_sector_is_selected():
    G = explored_map()
    # one unexplored cell at 1 right, 6 ahead; of its four frontier neighbours only
    # the one straight ahead of the agent falls in the 10-degree bin around 0
    set_cell(G, (21, 14), EXPLORED, 0.0)
    fr = frontiers(G.cell_grid())
    assert fr == {(20, 14), (22, 14), (21, 13), (21, 15)}
    assert [f for f in fr if sector_contains(G.pose, f, 0)] == [(20, 14)]
    target, rule = FrontierWaypoints().select(G, 0)
    assert (target, rule) == ((20, 14), "frontier")


def test_frontier_choice_invariants_on_random_states():
    rng = np.random.default_rng(0)
    agent = FrontierWaypoints()
    n = 0
    while n < 10_000:
        G = GeometricMap()
        c = tuple(int(v) for v in rng.integers(8, 32, size=2))
        G.pose = AgentPose(c, int(rng.integers(4)))
        # explored blob around the agent with scattered walls
        yy, xx = np.mgrid[0:40, 0:40]
        rad = rng.uniform(2, 10)
        blob = (xx - c[0]) ** 2 + (yy - c[1]) ** 2 <= rad**2
        walls = (rng.random((40, 40)) < 0.15) & blob
        walls[c[1], c[0]] = False
        up = np.kron(blob, np.ones((G.ratio, G.ratio)))
        G.grid[EXPLORED] = up
        G.grid[OCCUPIED] = np.kron(walls, np.ones((G.ratio, G.ratio)))
        cells = G.cell_grid()
        fr = frontiers(cells)
        for _ in range(20):
            b = int(rng.integers(36))
            target, rule = agent.select(G, b)
            if rule == "frontier":
                assert target in fr
                assert math.hypot(target[0] - c[0], target[1] - c[1]) >= 3.0
                assert sector_contains(G.pose, target, b)
            else:
                assert target == waypoint_cell(G.pose, offset_along(doa_bin_angle(b), 3))
            n += 1


def test_frontier_limit_is_twice_planned_actions():
    env = open_env(12)
    sess = session(env, AgentPose((6, 11), 0), (6, 0))
    agent = FrontierWaypoints(doa=OracleDoA(noise_deg=0.0))
    agent.reset(sess)
    d = agent.decide(sess)
    assert agent.last_choice == "frontier"
    n = abs(egocentric_offset(sess.G.pose, d.target)[1])
    assert d.limit == 2 * n


def test_path_action_count_counts_turns():
    path = [(0, 0), (0, -1), (1, -1), (1, 0)]  # N, E, S
    assert path_action_count(path, 0) == 1 + 2 + 2
    assert path_action_count(path, 2) == 3 + 2 + 2


# goal predictor -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_true_goal_prediction_reduces_to_point_goal(seed):
    env = open_env(9, seed=seed)
    start, goal = sample_episode(env, seed)
    sess = session(env, start, goal, seed)
    rec = run_episode(sess, GoalPredictorAgent(oracle_regressor, 5, stop=OracleStop()))
    assert rec.success
    assert rec.path_length == pytest.approx(rec.shortest_length)


def test_prediction_outside_map_is_clamped():
    env = open_env(6)
    sess = session(env, AgentPose((2, 2), 0), (5, 5))
    agent = GoalPredictorAgent(lambda s: (1000.0, 1000.0), 3)
    d = agent.decide(sess)
    assert sess.G.in_cell_bounds(d.target)
    assert d.target == nearest_free_cell(sess.G, waypoint_cell(sess.G.pose, Waypoint(1000, 1000)))


def test_reprediction_interval_validation():
    GoalPredictorAgent(oracle_regressor, 1)
    with pytest.raises(ValueError):
        GoalPredictorAgent(oracle_regressor, 0)


# supervised waypoints ---------------------------------------------------------------


def bfs_dist(env, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        c = q.popleft()
        for n in env.neighbors(c):
            if n not in dist:
                dist[n] = dist[c] + 1
                q.append(n)
    return dist


def test_fov_target_goal_inside_square():
    env = open_env(10)
    assert fov_target(env, (2, 2), (5, 6), 8) == (5, 6)


def test_fov_target_on_corridor_ray():
    env = open_env(30, 1)
    assert fov_target(env, (0, 0), (29, 0), 8) == (8, 0)
    assert fov_target(env, (20, 0), (0, 0), 8) == (12, 0)


def test_fov_target_lies_on_shortest_path_and_boundary():
    rng = np.random.default_rng(1)
    for k in range(30):
        env = generate_maze(50 + k, 16, 16)
        free = env.free_cells()
        a, g = (free[int(i)] for i in rng.choice(len(free), 2, replace=False))
        t = fov_target(env, a, g, 4)
        da, dg = bfs_dist(env, a), bfs_dist(env, g)
        assert da[t] + dg[t] == da[g]
        cheb = max(abs(t[0] - a[0]), abs(t[1] - a[1]))
        assert t == g or cheb == 4
        assert cheb <= 4


def test_supervised_loss_decreases_over_ten_epochs():
    envs = [generate_maze(7 + k, 10, 10) for k in range(3)]
    data = fov_waypoint_dataset(envs, [TEL], 48, seed=0, geo_size=12)
    net = AudioNet(AudioNetConfig(geo_size=12, channels=(4, 8, 8), hidden=32), seed=0)
    curve = fit(net, data, "mse", epochs=10, lr=3e-4, batch_size=len(data), seed=0)
    assert all(b < a for a, b in zip(curve, curve[1:])), curve


def test_supervised_agent_runs_under_shared_driver():
    envs = [generate_maze(9, 10, 10)]
    net = AudioNet(AudioNetConfig(geo_size=12, channels=(4, 8, 8), hidden=16), seed=1)
    agent = SupervisedWaypoints(audio_regressor(net), 4, stop=StopDecider(0.09))
    recs = evaluate_agent(agent, envs, 2, seed=0, sound=TEL)
    assert len(recs) == 2 and all(r.action_count <= MAX_EPISODE_STEPS for r in recs)


# stopping --------------------------------------------------------------------------


def test_calibrated_threshold_fires_at_every_source_cell():
    envs = [generate_maze(300 + k, 10, 10) for k in range(3)]
    cal = calibrate_stop_threshold(envs, [TEL], sources_per_env=6, seed=0)
    assert cal.max_off_source < cal.threshold < cal.min_at_source
    for env in envs:
        for src in env.free_cells():
            for h in range(4):
                assert intensity_at(env, src, AgentPose(src, h), TEL) >= cal.threshold
            for nb in env.neighbors(src):
                assert intensity_at(env, src, AgentPose(nb, 0), TEL) < cal.threshold


def test_silent_source_never_fires():
    silent = Sound("silence", np.zeros(SAMPLE_RATE))
    env = open_env(4)
    sess = session(env, AgentPose((0, 0), 1), (3, 3), sound=silent)
    assert sess.intensity == 0.0
    assert not StopDecider(1e-9)(sess)


def test_infinite_threshold_times_out():
    env = open_env(6)
    sess = session(env, AgentPose((0, 0), 1), (5, 5))
    rec = run_episode(sess, DirectionFollower(1.0, doa=OracleDoA(0.0), stop=StopDecider()))
    assert not rec.success and len(sess.steps) == MAX_EPISODE_STEPS


def test_classifier_stop_mode_is_deterministic():
    net = AudioNet(AudioNetConfig(out_dim=2, hidden=8, channels=(2, 2, 2)), seed=3)
    sess = session(open_env(5), AgentPose((0, 0), 1), (4, 4))
    rule = StopDecider(classifier=net, prob_threshold=0.5)
    assert rule(sess) == rule(sess)
    assert isinstance(rule(sess), bool)


# networks --------------------------------------------------------------------------


def test_audio_net_round_trip(tmp_path):
    net = AudioNet(AudioNetConfig(out_dim=36, hidden=8), seed=5)
    net.save(tmp_path / "n.ckpt", extra={"note": 1})
    back, extra = AudioNet.load(tmp_path / "n.ckpt")
    assert extra == {"note": 1} and back.config == net.config
    spec = np.random.default_rng(0).standard_normal((2, 2, 65, 26)).astype(np.float32)
    assert np.array_equal(back.predict(spec), net.predict(spec))
    ClassifierDoA(back)
    with pytest.raises(ValueError):
        ClassifierDoA(AudioNet(AudioNetConfig(out_dim=2, hidden=8)))


def test_audio_net_needs_map_when_configured():
    net = AudioNet(AudioNetConfig(geo_size=12, hidden=8))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 65, 26)))


# interface parity ------------------------------------------------------------------


def test_every_agent_runs_under_the_same_driver():
    envs = [generate_maze(21, 8, 8)]
    agents = [
        RandomAgent(),
        DirectionFollower(1.0),
        FrontierWaypoints(),
        GoalPredictorAgent(oracle_regressor, 4, stop=OracleStop()),
    ]
    for a in agents:
        recs = evaluate_agent(a, envs, 2, seed=1, sound=TEL)
        assert len(recs) == 2
        assert 0.0 <= spl(recs) <= 1.0


def test_goal_regressor_beats_constant_prediction():
    # binaural level differences cannot separate front from back, so the error stays well above one cell
    envs = [open_env(5, seed=s) for s in range(4)]
    data = goal_offset_dataset(envs, [TEL], 600, seed=0)
    held = goal_offset_dataset(envs, [TEL], 200, seed=1)
    net = AudioNet(AudioNetConfig(out_dim=2), seed=0)
    fit(net, data, "mse", epochs=60, lr=1e-3, batch_size=32, seed=0)
    mae = float(np.abs(net.predict(held.spec) - held.target).mean())
    const = float(np.abs(data.target.mean(axis=0) - held.target).mean())
    print(f"goal regressor MAE {mae:.3f} cells, constant predictor {const:.3f}")
    assert mae < const - 0.1
