import numpy as np
import pytest

from avnav.autograd import tensor as T
from avnav.autograd.checkpoint import CheckpointError
from avnav.autograd.nn import ShapeError, categorical_sample, masked_log_softmax
from avnav.autograd.tensor import Tensor
from avnav.env import AgentPose
from avnav.mapping import GeometricMap
from avnav.policy import (
    PolicyConfig,
    PolicyInputs,
    Waypoint,
    WaypointPolicy,
    action_mask,
    index_from_waypoint,
    mask_action_map,
    sample_waypoint,
    waypoint_cell,
    waypoint_from_index,
)

TINY = PolicyConfig.desk(base_channels=2, embed_dim=6, hidden_size=5)
N_INSTANCES = 20


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def random_inputs(cfg, rng, n=1, dtype=np.float32):
    s = cfg.geo_input
    geo = (rng.random((n, 2, s, s)) < 0.3).astype(dtype) * rng.random((n, 2, s, s))
    spec = rng.standard_normal((n, 2, 65, 26))
    ac = rng.random((n, 1, cfg.acoustic_crop, cfg.acoustic_crop))
    h = 0.5 * rng.standard_normal((n, cfg.hidden_size))
    return [x.astype(dtype) for x in (geo, spec, ac, h)]


def test_desk_config_size():
    assert WaypointPolicy(PolicyConfig.desk()).params.num_scalars() == 600_754


def test_default_config_dimensions():
    cfg = PolicyConfig()
    assert cfg.geo_input == 200 and cfg.num_actions == 81
    pol = WaypointPolicy(cfg)
    g, b, a = pol.encode(np.zeros((1, 2, 200, 200)), np.zeros((1, 2, 65, 26)), np.zeros((1, 1, 20, 20)))
    assert g.shape == b.shape == a.shape == (1, 512)
    out = pol.predict(pol.initial_state(), g, b, a)
    assert out.logits.shape == (1, 81) and out.value.shape == (1,) and out.hidden.shape == (1, 512)


def test_encode_zero_inputs_finite():
    pol = WaypointPolicy(PolicyConfig.desk())
    geo, spec, ac, _ = [np.zeros_like(x) for x in random_inputs(pol.config, np.random.default_rng(0), 2)]
    g, b, a = pol.encode(geo, spec, ac)
    out = pol.predict(pol.initial_state(2), g, b, a)
    for t in (g, b, a, out.logits, out.value, out.hidden):
        assert np.isfinite(t.data).all()
    assert g.shape == (2, pol.config.embed_dim)


def test_shape_errors():
    pol = WaypointPolicy(TINY)
    geo, spec, ac, _ = random_inputs(TINY, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        pol.encode(geo[:, :, :-1], spec, ac)
    with pytest.raises(ShapeError):
        pol.encode(geo, spec[:, :, :, :20], ac)
    with pytest.raises(ShapeError):
        pol.encode(geo, spec, None)


def test_ablation_has_no_acoustic_encoder():
    pol = WaypointPolicy(PolicyConfig.desk(use_acoustic_map=False))
    assert not any(k.startswith("f_a.") for k, _ in pol.params.items())
    geo, spec, _, _ = random_inputs(pol.config, np.random.default_rng(0))
    g, b, a = pol.encode(geo, spec)
    assert a is None
    assert pol.predict(pol.initial_state(), g, b, a).logits.shape == (1, 81)


def objective(pol, geo, spec, ac, h, mask, weights):
    """Scalar mixing every head so all parameters receive gradient."""
    g, b, a = pol.encode(geo, spec, ac)
    out = pol.predict(h, g, b, a)
    lp = masked_log_softmax(out.logits, mask)
    allowed = np.flatnonzero(mask[0])
    w_lp, w_v, w_h = weights
    w_lp = w_lp[allowed] - w_lp[allowed].mean()  # zero-sum weights cancel the large log-normalizer
    return (T.tsum(lp[0, allowed] * Tensor(w_lp.astype(lp.dtype)))
            + T.tsum(out.value * float(w_v))
            + T.tsum(out.hidden * Tensor(w_h.astype(lp.dtype))))


def sampled_fd(f, arr, coords, h):
    """Central differences at the given coordinates, plus a flag marking smooth neighbourhoods.

    A ReLU kink inside [x - h, x + h] makes the estimate depend on h, so the
    steps h and h / 2 disagree; such coordinates are reported as non-smooth.
    """
    g = np.zeros(len(coords))
    smooth = np.ones(len(coords), dtype=bool)
    for k, idx in enumerate(coords):
        old = arr[idx]
        est = []
        for step in (h, h / 2):
            arr[idx] = old + step
            fp = f()
            arr[idx] = old - step
            fm = f()
            arr[idx] = old
            est.append((fp - fm) / (2 * step))
        g[k] = est[0]
        smooth[k] = abs(est[0] - est[1]) <= 1e-9 + 1e-6 * abs(est[1])
    return g, smooth


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-6)])
def test_composed_policy_gradients(dtype, tol):
    h = 1e-4  # the oracle always runs in double; smaller steps drown in summation roundoff
    rng = np.random.default_rng(7)
    pol = WaypointPolicy(TINY, seed=3, dtype=dtype)
    ref = WaypointPolicy(TINY, seed=3, dtype=np.float64)
    # zero biases put ReLU inputs exactly on the kink wherever a patch is empty
    for name, t in pol.params.items():
        if name.endswith(".b"):
            t.data = (0.1 * rng.standard_normal(t.shape)).astype(dtype)
    for name, t in ref.params.items():
        t.data = pol.params[name].data.astype(np.float64)
    checked = ["f_g.conv0.w", "f_b.conv1.w", "f_b.fc.b", "f_a.conv2.w", "gru.w_hh", "gru.b_ih", "actor.w",
               "critic.w"]
    total = skipped = 0
    for _ in range(N_INSTANCES):
        inputs = random_inputs(TINY, rng, dtype=dtype)
        mask = np.ones((1, 81), dtype=bool)
        mask[0, rng.choice(81, 20, replace=False)] = False
        mask[0, 40] = True
        weights = (rng.standard_normal(81), float(rng.standard_normal()), rng.standard_normal((1, TINY.hidden_size)))
        # analytic in the tested precision
        ts = [Tensor(x, requires_grad=True) for x in inputs]
        pol.params.zero_grad()
        objective(pol, *ts, mask, weights).backward()
        # numeric reference in double precision
        x64 = [x.astype(np.float64) for x in inputs]

        def f():
            return float(objective(ref, *[Tensor(x) for x in x64], mask, weights).data)

        for t, arr in zip(ts, x64):
            coords = [tuple(rng.integers(0, s) for s in arr.shape) for _ in range(6)]
            num, ok = sampled_fd(f, arr, coords, h)
            ana = np.array([t.grad[c] for c in coords], dtype=np.float64)
            total += len(ok)
            skipped += int((~ok).sum())
            if np.abs(num[ok]).max(initial=0) > 1e-8:
                assert rel_err(ana[ok], num[ok]) < tol
        for name in checked:
            arr = ref.params[name].data
            coords = [tuple(rng.integers(0, s) for s in arr.shape) for _ in range(6)]
            num, ok = sampled_fd(f, arr, coords, h)
            ana = np.array([pol.params[name].grad[c] for c in coords], dtype=np.float64)
            total += len(ok)
            skipped += int((~ok).sum())
            if np.abs(num[ok]).max(initial=0) > 1e-8:
                assert rel_err(ana[ok], num[ok]) < tol, name
    assert skipped <= 0.02 * total


def test_input_gradients_nonzero():
    pol = WaypointPolicy(PolicyConfig.desk(), seed=1)
    ts = [Tensor(x, requires_grad=True) for x in random_inputs(pol.config, np.random.default_rng(1))]
    out = pol.predict(ts[3], *pol.encode(*ts[:3]))
    (T.tsum(out.logits * Tensor(np.random.default_rng(2).standard_normal((1, 81)).astype(np.float32)))
     + T.tsum(out.value)).backward()
    for t in ts:
        assert np.abs(t.grad).sum() > 0


def obs_from(inputs, mask=None):
    geo, spec, ac, _ = inputs
    return PolicyInputs(geo[0], spec[0], ac[0], np.ones(81, dtype=bool) if mask is None else mask)


def test_predict_deterministic_and_reset():
    pol = WaypointPolicy(PolicyConfig.desk(), seed=4)
    o1 = obs_from(random_inputs(pol.config, np.random.default_rng(3)))
    o2 = obs_from(random_inputs(pol.config, np.random.default_rng(4)))
    h0 = pol.initial_state()
    a = pol.act(o1, h0, greedy=True)
    b = pol.act(o1, h0, greedy=True)
    assert a[0] == b[0] and np.array_equal(a[3], b[3]) and np.array_equal(a[4], b[4])
    # the recurrent state matters, and resetting it restores the first answer
    c = pol.act(o2, a[3], greedy=True)
    d = pol.act(o2, pol.initial_state(), greedy=True)
    assert not np.array_equal(c[4], d[4])
    assert np.array_equal(pol.act(o1, pol.initial_state(), greedy=True)[4], a[4])


def test_act_respects_mask():
    pol = WaypointPolicy(PolicyConfig.desk(), seed=5)
    mask = np.ones(81, dtype=bool)
    mask[::3] = False
    mask[40] = True
    obs = obs_from(random_inputs(pol.config, np.random.default_rng(5)), mask)
    rng = np.random.default_rng(0)
    for _ in range(200):
        idx, lp, _, _, probs = pol.act(obs, pol.initial_state(), rng)
        assert mask[idx]
        assert probs[~mask].sum() == 0
        assert lp == pytest.approx(np.log(probs[idx]), abs=1e-5)


# waypoints and masking ----------------------------------------------------------


def test_waypoint_index_mapping():
    assert waypoint_from_index(40) == Waypoint(0, 0) and waypoint_from_index(40).is_stop
    assert waypoint_from_index(0) == Waypoint(-4, 4)
    assert waypoint_from_index(80) == Waypoint(4, -4)
    for i in range(81):
        assert index_from_waypoint(waypoint_from_index(i)) == i
    with pytest.raises(ValueError):
        index_from_waypoint(Waypoint(5, 0))


@pytest.mark.parametrize("heading,expected", [(0, (7, 2)), (1, (8, 7)), (2, (3, 8)), (3, (2, 3))])
def test_waypoint_cell_rotates_with_heading(heading, expected):
    # two cells right, three cells forward
    assert waypoint_cell(AgentPose((5, 5), heading), Waypoint(2, 3)) == expected


def fresh_map():
    return GeometricMap()


def test_uniform_logits_give_uniform_map():
    amap = mask_action_map(np.zeros(81), fresh_map())
    assert np.allclose(amap.probs, 1 / 81, atol=1e-12)


def test_one_occupied_cell_renormalizes():
    G = fresh_map()
    target = waypoint_cell(G.pose, Waypoint(1, 2))
    G.mark_blocked(target)
    amap = mask_action_map(np.zeros(81), G)
    row, col = 4 - 2, 4 + 1
    assert amap.probs[row, col] == 0 and not amap.mask[row, col]
    others = np.delete(amap.probs.ravel(), row * 9 + col)
    assert np.allclose(others, 1 / 80, atol=1e-12)


def test_all_blocked_collapses_to_stop():
    G = fresh_map()
    c = G.pose.cell
    for dx in range(-4, 5):
        for dy in range(-4, 5):
            if (dx, dy) != (0, 0):
                G.mark_blocked((c[0] + dx, c[1] + dy))
    amap = mask_action_map(np.random.default_rng(0).standard_normal(81), G)
    assert amap.probs[4, 4] == pytest.approx(1.0)
    assert sample_waypoint(amap, np.random.default_rng(0)).is_stop


def test_out_of_map_cells_masked():
    G = GeometricMap()
    G.pose = AgentPose((1, 1), 0)
    mask = action_mask(G)
    # forward is -y: rows beyond two cells ahead and columns beyond one to the left fall off the map
    assert not mask[:2].any()
    assert not mask[:, :3].any()
    assert mask[4, 4] and mask[8, 8]


def test_one_hot_logits_pick_that_waypoint():
    logits = np.full(81, -1e4)
    logits[index_from_waypoint(Waypoint(2, -1))] = 0.0
    amap = mask_action_map(logits, fresh_map())
    rng = np.random.default_rng(1)
    assert all(sample_waypoint(amap, rng) == Waypoint(2, -1) for _ in range(100))


def test_sample_frequencies_match_probabilities():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal(81)
    amap = mask_action_map(logits, fresh_map())
    n = 40_000
    counts = np.zeros(81)
    for _ in range(n):
        counts[index_from_waypoint(sample_waypoint(amap, rng))] += 1
    p = amap.probs.ravel()
    assert np.all(np.abs(counts / n - p) < 5 * np.sqrt(p * (1 - p) / n) + 1e-4)


def test_mask_soundness_many_samples():
    rng = np.random.default_rng(3)
    G = fresh_map()
    c = G.pose.cell
    for _ in range(30):
        G.mark_blocked((c[0] + int(rng.integers(-4, 5)), c[1] + int(rng.integers(-4, 5))))
    occ = G.occupied_cells()
    amap = mask_action_map(5 * rng.standard_normal(81), G)
    probs = amap.probs.ravel()
    hits = 0
    for _ in range(100_000):
        wp = waypoint_from_index(categorical_sample(probs, rng))
        x, y = waypoint_cell(G.pose, wp)
        hits += bool(occ[y, x]) and not wp.is_stop
    assert hits == 0


# persistence --------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    pol = WaypointPolicy(PolicyConfig.desk(), seed=9)
    pol.save(tmp_path / "p.ckpt", extra={"note": 1})
    back = WaypointPolicy.load(tmp_path / "p.ckpt", expect=PolicyConfig.desk())
    for name, t in pol.params.items():
        assert np.array_equal(t.data, back.params[name].data)
    with pytest.raises(CheckpointError):
        WaypointPolicy.load(tmp_path / "p.ckpt", expect=PolicyConfig.desk(hidden_size=64))
