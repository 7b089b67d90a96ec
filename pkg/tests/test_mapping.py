
import numpy as np
import pytest

from avnav.env import (
    Action,
    AgentPose,
    EpisodeState,
    GridEnvironment,
    generate_maze,
    sample_episode,
    step,
)
from avnav.mapping import (
    EXPLORED,
    LOCAL_SIZE,
    OCCUPIED,
    AcousticMap,
    GeometricMap,
    LocalOccupancy,
    MapFrame,
    PoseDelta,
    egocentric_crop,
    frontiers,
    local_occupancy_from_scan,
    range_scan,
    register_and_update,
    update_acoustic,
)


def arena(w=21, h=21, walls=()):
    occ = np.zeros((h, w), dtype=bool)
    for x, y in walls:
        occ[y, x] = True
    return GridEnvironment(occ, (0, 0))


def test_open_space_scan_has_no_occupied_cells():
    env = arena()
    scan = range_scan(env, AgentPose((10, 10), 0))
    assert np.isinf(scan.ranges).all()
    L = local_occupancy_from_scan(scan)
    assert L.grid[OCCUPIED].sum() == 0
    # the straight-ahead column is explored over the full 3 m
    assert L.grid[EXPLORED][:, LOCAL_SIZE // 2].all()


def test_wall_ahead_matches_raycast_oracle():
    walls = [(x, 8) for x in range(21)]
    env = arena(walls=walls)
    scan = range_scan(env, AgentPose((10, 10), 0))
    # wall face is 0.75 m ahead of the cell centre; exact ray length is 0.75 / cos(angle)
    exact = 0.75 / np.cos(scan.angles)
    assert np.all(scan.ranges >= exact - 1e-9)
    assert np.all(scan.ranges < exact + 0.02 + 1e-9)
    L = local_occupancy_from_scan(scan)
    occ_rows = set(np.nonzero(L.grid[OCCUPIED])[0])
    assert occ_rows == {LOCAL_SIZE - 1 - 8}  # forward index 8 covers [0.75, 0.85)
    explored_rows = set(np.nonzero(L.grid[EXPLORED])[0])
    assert explored_rows == {LOCAL_SIZE - 1 - r for r in range(9)}


def test_occupied_implies_explored():
    env = generate_maze(3, 16, 16, 0.8)
    for s in range(20):
        pose, _ = sample_episode(env, s)
        L = local_occupancy_from_scan(range_scan(env, pose))
        assert np.all(L.grid[EXPLORED][L.grid[OCCUPIED] > 0] > 0)
        assert L.grid.min() >= 0 and L.grid.max() <= 1


def test_update_with_empty_local_is_noop():
    G = GeometricMap()
    G.grid[OCCUPIED, 5, 5] = 1
    G.grid[EXPLORED, 5, 5] = 1
    before = G.grid.copy()
    register_and_update(G, LocalOccupancy(np.zeros((2, LOCAL_SIZE, LOCAL_SIZE), np.float32)), PoseDelta())
    assert np.array_equal(G.grid > 0.5, before > 0.5)


def test_same_observation_twice_is_idempotent():
    env = generate_maze(5, 16, 16, 0.7)
    pose, _ = sample_episode(env, 2)
    L = local_occupancy_from_scan(range_scan(env, pose))
    G = GeometricMap()
    register_and_update(G, L, PoseDelta())
    once = G.grid > 0.5
    register_and_update(G, L, PoseDelta())
    assert np.array_equal(once, G.grid > 0.5)


def _run_and_map(env, start, actions):
    G = GeometricMap.for_env(env)
    frame = MapFrame(start, G.cells // 2)
    st = EpisodeState.start(start, (0, 0))
    G.integrate(local_occupancy_from_scan(range_scan(env, st.pose)))
    for a in actions:
        _, collided = step(env, st, a)
        register_and_update(G, local_occupancy_from_scan(range_scan(env, st.pose)), PoseDelta.from_action(a, collided))
        assert G.pose == frame.pose_to_map(st.pose)
    return G, frame


def _world_cell_of_subcell(G, frame, mx, my):
    return frame.to_world((mx // G.ratio, my // G.ratio))


def test_rotated_reobservation_lands_on_same_cells():
    env = arena(walls=[(11, 9)])
    G1, frame = _run_and_map(env, AgentPose((10, 10), 0), [])
    G2, _ = _run_and_map(env, AgentPose((10, 10), 0), [Action.TURN_RIGHT])
    occ1 = {_world_cell_of_subcell(G1, frame, x, y) for y, x in zip(*np.nonzero(G1.occupied()))}
    fresh = GeometricMap.for_env(env)
    fresh.pose = frame.pose_to_map(AgentPose((10, 10), 1))
    fresh.integrate(local_occupancy_from_scan(range_scan(env, AgentPose((10, 10), 1))))
    occ2 = {_world_cell_of_subcell(fresh, frame, x, y) for y, x in zip(*np.nonzero(fresh.occupied()))}
    assert occ1 == occ2 == {(11, 9)}
    assert (G1.occupied() & fresh.occupied()).any()
    assert np.array_equal(G2.occupied(), G2.occupied() | fresh.occupied())


@pytest.mark.parametrize("seed", range(5))
def test_registration_consistency_with_world(seed):
    env = generate_maze(seed, 16, 16, 0.7)
    start, _ = sample_episode(env, seed)
    rng = np.random.default_rng(seed)
    actions = [Action(int(a)) for a in rng.integers(0, 3, size=80)]
    G, frame = _run_and_map(env, start, actions)
    for y, x in zip(*np.nonzero(G.occupied())):
        wc = _world_cell_of_subcell(G, frame, x, y)
        assert not env.is_free(wc)
    free_explored = G.explored() & ~G.occupied()
    for y, x in zip(*np.nonzero(free_explored)):
        assert env.is_free(_world_cell_of_subcell(G, frame, x, y))


def test_explored_area_never_shrinks():
    env = generate_maze(11, 16, 16, 0.6)
    start, _ = sample_episode(env, 0)
    G = GeometricMap.for_env(env)
    st = EpisodeState.start(start, (0, 0))
    G.integrate(local_occupancy_from_scan(range_scan(env, st.pose)))
    rng = np.random.default_rng(0)
    prev = G.explored().copy()
    for _ in range(100):
        a = Action(int(rng.integers(0, 3)))
        _, col = step(env, st, a)
        register_and_update(G, local_occupancy_from_scan(range_scan(env, st.pose)), PoseDelta.from_action(a, col))
        cur = G.explored()
        assert np.all(cur[prev])
        prev = cur.copy()


def test_noisy_scan_keeps_values_in_range():
    env = generate_maze(1, 16, 16, 0.6)
    start, _ = sample_episode(env, 1)
    G = GeometricMap.for_env(env)
    rng = np.random.default_rng(0)
    for _ in range(10):
        scan = range_scan(env, start, noise_sigma=0.05, rng=rng)
        G.integrate(local_occupancy_from_scan(scan))
    assert G.grid.min() >= 0 and G.grid.max() <= 1


def test_acoustic_cumulative_mean():
    A = AcousticMap()
    update_acoustic(A, (3, 4), 0.7)
    assert A.intensity[4, 3] == 0.7
    A = AcousticMap()
    update_acoustic(A, (3, 4), 0.2)
    update_acoustic(A, (3, 4), 0.4)
    assert A.intensity[4, 3] == pytest.approx(0.3)
    assert A.visit_count[4, 3] == 2
    assert A.intensity[0, 0] == 0 and A.visit_count[0, 0] == 0
    with pytest.raises(ValueError):
        update_acoustic(A, (1, 1), -0.1)


def test_acoustic_matches_update_log():
    rng = np.random.default_rng(4)
    A = AcousticMap(cells=10)
    log = {}
    for _ in range(500):
        c = (int(rng.integers(10)), int(rng.integers(10)))
        v = float(rng.random())
        update_acoustic(A, c, v)
        log.setdefault(c, []).append(v)
    for (x, y), vals in log.items():
        assert A.intensity[y, x] == pytest.approx(np.mean(vals), rel=1e-12)
        assert A.visit_count[y, x] == len(vals)
    assert np.all((A.intensity != 0) <= (A.visit_count > 0))


def test_crop_identity_symmetric():
    m = np.zeros((11, 11))
    m[3:8, 3:8] = 1.0
    crop = egocentric_crop(m, (5, 5), 0, 5)
    assert np.array_equal(crop, m[3:8, 3:8])


def test_crop_four_rotations_odd_size():
    rng = np.random.default_rng(0)
    m = rng.random((2, 15, 15))
    crops = [egocentric_crop(m, (7, 6), h, 9) for h in range(4)]
    for h in range(4):
        # turning right by one quarter rotates the egocentric view anticlockwise
        assert np.array_equal(crops[(h + 1) % 4], np.rot90(crops[h], 1, axes=(1, 2)))


def test_crop_four_rotations_even_size_share_window():
    rng = np.random.default_rng(1)
    m = rng.random((13, 13))
    odd = [egocentric_crop(m, (6, 6), h, 9) for h in range(4)]
    even = [egocentric_crop(m, (6, 6), h, 8) for h in range(4)]
    for h in range(4):
        assert np.array_equal(even[h], odd[h][:8, :8])


def test_crop_facing_direction_is_up():
    m = np.zeros((9, 9))
    m[4, 6] = 1.0  # two cells east of the centre
    crop = egocentric_crop(m, (4, 4), 1, 9)  # agent faces east
    assert crop[2, 4] == 1.0  # two cells ahead


def test_crop_out_of_bounds_zero_padded():
    m = np.ones((5, 5))
    crop = egocentric_crop(m, (0, 0), 0, 6)
    assert crop[:3, :].sum() == 0 and crop[:, :3].sum() == 0
    assert crop[3:, 3:].sum() == 9


def test_crop_idempotent():
    rng = np.random.default_rng(2)
    m = rng.random((2, 30, 30))
    c1 = egocentric_crop(m, (12, 17), 3, 11)
    c2 = egocentric_crop(c1, (5, 5), 0, 11)
    assert np.array_equal(c1, c2)


def test_frontiers_fully_explored_empty():
    g = np.zeros((2, 10, 10))
    g[EXPLORED] = 1
    assert frontiers(g) == set()


def test_frontiers_disk_boundary_ring():
    n, r = 21, 6.0
    yy, xx = np.mgrid[:n, :n]
    disk = (xx - 10) ** 2 + (yy - 10) ** 2 <= r * r
    g = np.zeros((2, n, n))
    g[EXPLORED][disk] = 1
    got = frontiers(g)
    ring = set()
    for y in range(n):
        for x in range(n):
            if not disk[y, x]:
                continue
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if not disk[y + dy, x + dx]:
                    ring.add((x, y))
    assert got == ring and len(ring) > 0


def test_frontiers_exclude_occupied():
    rng = np.random.default_rng(0)
    g = (rng.random((2, 20, 20)) > 0.5).astype(float)
    g[EXPLORED][g[OCCUPIED] > 0.5] = 1
    for x, y in frontiers(g):
        assert g[OCCUPIED, y, x] <= 0.5 and g[EXPLORED, y, x] > 0.5


def test_map_frame_roundtrip():
    for h in range(4):
        f = MapFrame(AgentPose((7, 3), h), 20)
        assert f.to_map((7, 3)) == (20, 20)
        for c in [(0, 0), (9, 1), (3, 12)]:
            assert f.to_world(f.to_map(c)) == c
        fwd = AgentPose((7, 3), h).forward_cell()
        assert f.to_map(fwd) == (20, 19)  # map-north is the start heading
