"""Comparison agents and the shared stopping rule.

Every agent here implements the same ``Agent`` protocol as the learned
waypoint agent, so they all run under ``run_episode`` and the same metrics.
Targets are map-frame cells; an empty ``Decision`` asks the driver for one
random motion action.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from .audio import (
    NUM_DOA_BINS,
    AudioError,
    Sound,
    direct_intensity,
    doa_bin_angle,
    ground_truth_doa,
    render_audio,
    spectrogram,
    synthesize_rir,
)
from .autograd import checkpoint
from .autograd import tensor as T
from .autograd.nn import ParameterSet, conv2d, conv_output_size, linear, log_softmax
from .autograd.optim import OptimizerState, adam_step, clip_by_global_norm
from .autograd.tensor import Tensor, no_grad
from .env import (
    HEADING_VECTORS,
    MOTION_ACTIONS,
    AgentPose,
    Cell,
    GridEnvironment,
    first_path_step,
)
from .mapping import GeometricMap, egocentric_crop, frontiers
from .metrics import sna, spl, sr
from .planner import PlanGraph, PlanOutcome, dijkstra
from .policy import Waypoint, normalize_spectrogram, pooled_geometric, waypoint_cell
from .session import Decision, NavigationSession

_SEED_MASK = 0xFFFFFFFF
MIN_FRONTIER_DIST_M = 1.5
FALLBACK_STEPS = 3
FOV_SIDE_M = 8.0
REGRESSOR_KIND = "audio-regressor"


def _agent_rng(session: NavigationSession, salt: int) -> np.random.Generator:
    return np.random.default_rng([session.seed & _SEED_MASK, salt])


def egocentric_offset(pose: AgentPose, cell: Cell) -> tuple[int, int]:
    """(right, forward) cell offset of ``cell`` seen from ``pose``; inverse of ``waypoint_cell``."""
    vx, vy = cell[0] - pose.cell[0], cell[1] - pose.cell[1]
    fx, fy = HEADING_VECTORS[pose.heading]
    rx, ry = HEADING_VECTORS[(pose.heading + 1) % 4]
    return vx * rx + vy * ry, vx * fx + vy * fy


def offset_along(angle_deg: float, cells: float) -> Waypoint:
    """Rounded egocentric displacement ``cells`` long at ``angle_deg`` clockwise from ahead."""
    a = math.radians(angle_deg)
    return Waypoint(int(round(cells * math.sin(a))), int(round(cells * math.cos(a))))


def nearest_free_cell(G: GeometricMap, cell: Cell) -> Cell:
    """``cell`` itself if inside the map and not known occupied, else the closest such cell."""
    occ = G.occupied_cells()
    if G.in_cell_bounds(cell) and not occ[cell[1], cell[0]]:
        return cell
    ys, xs = np.nonzero(~occ)
    d2 = (xs - cell[0]) ** 2 + (ys - cell[1]) ** 2
    k = int(np.lexsort((xs, ys, d2))[0])  # deterministic tie-break
    return int(xs[k]), int(ys[k])


def navigable(G: GeometricMap, cell: Cell) -> bool:
    return G.in_cell_bounds(cell) and not G.occupied_cells()[cell[1], cell[0]]


def path_action_count(path: Sequence[Cell], heading: int) -> int:
    """Primitive actions needed to follow ``path`` (turns included) from ``heading``."""
    n = 0
    for a, b in zip(path, path[1:]):
        d = HEADING_VECTORS.index((b[0] - a[0], b[1] - a[1]))
        turn = (d - heading) % 4
        n += min(turn, 4 - turn) + 1
        heading = d
    return n


# stopping ---------------------------------------------------------------------


class StopRule(Protocol):
    def __call__(self, session: NavigationSession) -> bool: ...


class OracleStop:
    """Stops exactly at the goal cell."""

    def __call__(self, session: NavigationSession) -> bool:
        return session.pose.cell == session.goal


@dataclass
class StopDecider:
    """Fires when the direct-sound intensity reaches ``threshold``, or when a classifier does."""

    threshold: float = math.inf
    classifier: AudioNet | None = None
    prob_threshold: float = 0.5

    def __call__(self, session: NavigationSession) -> bool:
        if self.classifier is not None:
            spec = normalize_spectrogram(session.spectrogram())[None]
            p = self.classifier.probabilities(spec)[0, 1]
            return bool(p >= self.prob_threshold)
        return bool(session.intensity >= self.threshold)


def intensity_at(env: GridEnvironment, source: Cell, pose: AgentPose, sound: Sound) -> float:
    """Noise-free direct intensity heard at ``pose`` from ``source``."""
    rir = synthesize_rir(env.with_source(source), source, pose)
    return direct_intensity(render_audio(rir, sound, length=rir.direct_onset + 64))


@dataclass(frozen=True)
class ThresholdCalibration:
    threshold: float
    min_at_source: float
    max_off_source: float


def calibrate_stop_threshold(envs: Sequence[GridEnvironment], sounds: Sequence[Sound],
                             sources_per_env: int = 8, seed: int = 0) -> ThresholdCalibration:
    """Threshold between the weakest at-source intensity and the loudest one cell away.

    Falls just below the at-source minimum if the two ranges overlap.
    """
    rng = np.random.default_rng(seed)
    at_source, near = [], []
    for env in envs:
        free = env.free_cells()
        picks = rng.choice(len(free), size=min(sources_per_env, len(free)), replace=False)
        for i in picks:
            src = free[int(i)]
            for snd in sounds:
                for h in range(4):
                    at_source.append(intensity_at(env, src, AgentPose(src, h), snd))
                for nb in env.neighbors(src):
                    for h in range(4):
                        near.append(intensity_at(env, src, AgentPose(nb, h), snd))
    lo = min(at_source)
    hi = max(near) if near else 0.0
    thr = 0.5 * (lo + hi) if hi < lo else lo * (1 - 1e-6)
    return ThresholdCalibration(thr, lo, hi)


# direction of arrival ------------------------------------------------------------


class DoAEstimator(Protocol):
    def reset(self, session: NavigationSession) -> None: ...

    def __call__(self, session: NavigationSession) -> int: ...


class OracleDoA:
    """First-path direction with Gaussian angular noise, binned."""

    def __init__(self, noise_deg: float = 10.0):
        self.noise_deg = noise_deg
        self.rng = np.random.default_rng(0)

    def reset(self, session: NavigationSession) -> None:
        self.rng = _agent_rng(session, 0xD0A)

    def __call__(self, session: NavigationSession) -> int:
        if session.pose.cell == session.goal:
            return 0
        return ground_truth_doa(session.env, session.goal, session.pose, self.noise_deg, self.rng)


class ClassifierDoA:
    """36-way classifier on the current spectrogram."""

    def __init__(self, net: AudioNet):
        if net.config.out_dim != NUM_DOA_BINS:
            raise ValueError(f"DoA classifier needs {NUM_DOA_BINS} outputs")
        self.net = net

    def reset(self, session: NavigationSession) -> None:
        pass

    def __call__(self, session: NavigationSession) -> int:
        spec = normalize_spectrogram(session.spectrogram())[None]
        return int(np.argmax(self.net.probabilities(spec)[0]))


# agents ----------------------------------------------------------------------------


class _Base:
    name = "baseline"

    def __init__(self, stop: StopRule):
        self.stop = stop

    def reset(self, session: NavigationSession) -> None:
        pass

    def observe_outcome(self, session: NavigationSession, outcome: PlanOutcome | None, reward: float) -> None:
        pass

    def should_stop(self, session: NavigationSession) -> bool:
        return self.stop(session)

    def _go(self, session: NavigationSession, target: Cell, limit: int, **info) -> Decision:
        # a target on the agent's own cell would yield an empty plan; move randomly instead
        if target == session.G.pose.cell or not navigable(session.G, target):
            return Decision(info=info)
        return Decision(target=target, limit=max(1, limit), info=info)

    def params(self) -> dict:
        return {}


class RandomAgent(_Base):
    """Uniform motion actions; stops once it stands on the goal."""

    name = "random"

    def __init__(self, stop: StopRule | None = None):
        super().__init__(stop or OracleStop())
        self.rng = np.random.default_rng(0)

    def reset(self, session: NavigationSession) -> None:
        self.rng = _agent_rng(session, 0x4A4D)

    def decide(self, session: NavigationSession) -> Decision:
        return Decision(action=MOTION_ACTIONS[int(self.rng.integers(len(MOTION_ACTIONS)))])


class DirectionFollower(_Base):
    """Heads ``distance_m`` along the estimated arrival direction, re-estimating on arrival."""

    name = "direction-follower"

    def __init__(self, distance_m: float = 2.0, doa: DoAEstimator | None = None, stop: StopRule | None = None,
                 cell_size: float = 0.5):
        super().__init__(stop or StopDecider())
        if distance_m <= 0:
            raise ValueError("distance must be positive")
        self.distance_m = distance_m
        self.cells = max(1, int(round(distance_m / cell_size)))
        self.doa = doa or OracleDoA()

    def reset(self, session: NavigationSession) -> None:
        self.doa.reset(session)

    def decide(self, session: NavigationSession) -> Decision:
        G = session.G
        b = self.doa(session)
        target = waypoint_cell(G.pose, offset_along(doa_bin_angle(b), self.cells))
        return self._go(session, target, self.cells, doa_bin=b)

    def params(self) -> dict:
        return {"distance_m": self.distance_m}


def sector_contains(pose: AgentPose, cell: Cell, bin_index: int) -> bool:
    right, fwd = egocentric_offset(pose, cell)
    ang = math.degrees(math.atan2(right, fwd)) % 360.0
    diff = abs((ang - doa_bin_angle(bin_index) + 180.0) % 360.0 - 180.0)
    return diff <= 180.0 / NUM_DOA_BINS + 1e-9


class FrontierWaypoints(_Base):
    """Nearest frontier inside the arrival-direction sector, with a short fallback ray."""

    name = "frontier-waypoints"

    def __init__(self, doa: DoAEstimator | None = None, stop: StopRule | None = None,
                 min_distance_m: float = MIN_FRONTIER_DIST_M, fallback_steps: int = FALLBACK_STEPS,
                 cell_size: float = 0.5):
        super().__init__(stop or StopDecider())
        self.doa = doa or OracleDoA()
        self.min_cells = min_distance_m / cell_size
        self.fallback_steps = fallback_steps
        self.cell_size = cell_size
        self.last_choice: str = ""

    def reset(self, session: NavigationSession) -> None:
        self.doa.reset(session)

    def select(self, G: GeometricMap, bin_index: int) -> tuple[Cell, str]:
        """Target cell and which rule produced it ("frontier" or "fallback")."""
        pose = G.pose
        best = None
        for f in frontiers(G.cell_grid()):
            d = math.hypot(f[0] - pose.cell[0], f[1] - pose.cell[1])
            if d + 1e-9 < self.min_cells or not sector_contains(pose, f, bin_index):
                continue
            key = (d, f[1], f[0])
            if best is None or key < best[0]:
                best = (key, f)
        if best is not None:
            return best[1], "frontier"
        return waypoint_cell(pose, offset_along(doa_bin_angle(bin_index), self.fallback_steps)), "fallback"

    def decide(self, session: NavigationSession) -> Decision:
        G = session.G
        b = self.doa(session)
        target, how = self.select(G, b)
        self.last_choice = how
        if target == G.pose.cell or not navigable(G, target):
            return Decision(info={"doa_bin": b, "rule": how})
        path = dijkstra(PlanGraph.from_map(G, session.env.cell_size, keep_free=G.pose.cell), G.pose.cell, target)
        if path is None:
            return Decision(info={"doa_bin": b, "rule": how})
        # give up and re-estimate after twice the planned number of actions
        n = path_action_count(path, G.pose.heading)
        return Decision(target=target, limit=2 * n, info={"doa_bin": b, "rule": how})


class GoalPredictorAgent(_Base):
    """Regresses the goal offset from audio and plans to it, re-predicting every ``every`` actions."""

    name = "goal-predictor"

    def __init__(self, regressor: Callable[[NavigationSession], tuple[float, float]], every: int = 10,
                 stop: StopRule | None = None):
        super().__init__(stop or StopDecider())
        if every < 1:
            raise ValueError("re-prediction interval must be at least one action")
        self.regressor = regressor
        self.every = every

    def decide(self, session: NavigationSession) -> Decision:
        G = session.G
        right, fwd = self.regressor(session)
        target = nearest_free_cell(G, waypoint_cell(G.pose, Waypoint(int(round(right)), int(round(fwd)))))
        return self._go(session, target, self.every, offset=(float(right), float(fwd)))

    def params(self) -> dict:
        return {"every": self.every}


class SupervisedWaypoints(GoalPredictorAgent):
    """Regresses a waypoint inside the square field of view from audio plus the map crop."""

    name = "supervised-waypoints"


# networks ----------------------------------------------------------------------


@dataclass(frozen=True)
class AudioNetConfig:
    out_dim: int = 2
    channels: tuple[int, ...] = (8, 16, 16)
    kernels: tuple[int, ...] = (5, 3, 3)
    strides: tuple[int, ...] = (2, 2, 1)
    hidden: int = 64
    geo_size: int = 0  # side of the egocentric map crop in cells; 0 for audio only
    geo_kernels: tuple[int, ...] = (3, 3, 3)
    geo_strides: tuple[int, ...] = (1, 2, 1)
    spec_shape: tuple[int, int] = (65, 26)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> AudioNetConfig:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class AudioNet:
    """Three conv layers per input stream, then two dense layers."""

    def __init__(self, config: AudioNetConfig = AudioNetConfig(), seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.params = ParameterSet(seed, dtype)
        flat = self._add_stream("spec", 2, config.spec_shape, config.kernels, config.strides)
        if config.geo_size:
            flat += self._add_stream("geo", 2, (config.geo_size, config.geo_size), config.geo_kernels,
                                     config.geo_strides)
        self.params.add("fc1.w", (config.hidden, flat), "uniform", math.sqrt(2))
        self.params.add("fc1.b", (config.hidden,), "zeros")
        self.params.add("fc2.w", (config.out_dim, config.hidden), "uniform")
        self.params.add("fc2.b", (config.out_dim,), "zeros")

    def _add_stream(self, prefix: str, cin: int, shape: tuple[int, int], kernels, strides) -> int:
        h, w = shape
        for i, (c, k, s) in enumerate(zip(self.config.channels, kernels, strides)):
            self.params.add(f"{prefix}.conv{i}.w", (c, cin, k, k), "uniform", math.sqrt(2))
            self.params.add(f"{prefix}.conv{i}.b", (c,), "zeros")
            h, w = conv_output_size(h, k, s, 0), conv_output_size(w, k, s, 0)
            if h <= 0 or w <= 0:
                raise ValueError(f"{prefix} input {shape} too small for the conv stack")
            cin = c
        return cin * h * w

    def _stream(self, prefix: str, x, strides) -> Tensor:
        p = self.params
        for i, s in enumerate(strides):
            x = T.relu(conv2d(x, p[f"{prefix}.conv{i}.w"], p[f"{prefix}.conv{i}.b"], stride=s))
        return x.reshape(x.shape[0], -1)

    def forward(self, spec: np.ndarray, geo: np.ndarray | None = None) -> Tensor:
        dt = self.params.dtype
        feats = self._stream("spec", np.asarray(spec, dtype=dt), self.config.strides)
        if self.config.geo_size:
            if geo is None:
                raise ValueError("this network needs a map crop")
            feats = T.concat([feats, self._stream("geo", np.asarray(geo, dtype=dt), self.config.geo_strides)], axis=1)
        p = self.params
        h = T.relu(linear(feats, p["fc1.w"], p["fc1.b"]))
        return linear(h, p["fc2.w"], p["fc2.b"])

    def predict(self, spec: np.ndarray, geo: np.ndarray | None = None) -> np.ndarray:
        with no_grad():
            return self.forward(spec, geo).data.astype(np.float64)

    def probabilities(self, spec: np.ndarray, geo: np.ndarray | None = None) -> np.ndarray:
        with no_grad():
            return np.exp(log_softmax(self.forward(spec, geo)).data.astype(np.float64))

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": REGRESSOR_KIND, "config": self.config.to_dict(), "seed": self.seed}
        if extra:
            meta["extra"] = extra
        checkpoint.save(path, self.params.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple[AudioNet, dict]:
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != REGRESSOR_KIND:
            raise checkpoint.CheckpointError(f"{path} is not an audio-network checkpoint")
        net = cls(AudioNetConfig.from_dict(meta["config"]), meta.get("seed", 0))
        net.params.load_state_dict(tensors)
        return net, meta.get("extra", {})


@dataclass
class Dataset:
    spec: np.ndarray  # (n, 2, 65, 26)
    target: np.ndarray  # (n, 2) float offsets or (n,) int classes
    geo: np.ndarray | None = None  # (n, 2, S, S)

    def __len__(self) -> int:
        return len(self.spec)

    def subset(self, idx) -> Dataset:
        return Dataset(self.spec[idx], self.target[idx], None if self.geo is None else self.geo[idx])


def _loss(net: AudioNet, batch: Dataset, kind: str) -> Tensor:
    out = net.forward(batch.spec, batch.geo)
    if kind == "mse":
        diff = out - batch.target.astype(out.dtype)
        return T.mean(diff * diff)
    if kind == "ce":
        lp = T.take_along_axis(log_softmax(out), batch.target.astype(np.int64)[:, None], axis=1)
        return -T.mean(lp)
    raise ValueError(f"unknown loss {kind!r}")


def dataset_loss(net: AudioNet, data: Dataset, kind: str = "mse", batch_size: int = 256) -> float:
    total = 0.0
    with no_grad():
        for i in range(0, len(data), batch_size):
            b = data.subset(slice(i, i + batch_size))
            total += float(_loss(net, b, kind).data) * len(b)
    return total / len(data)


def fit(net: AudioNet, data: Dataset, kind: str = "mse", epochs: int = 10, lr: float = 1e-3,
        batch_size: int = 64, seed: int = 0, max_grad_norm: float = 5.0) -> list[float]:
    """Adam on shuffled minibatches; returns the full-dataset loss after each epoch."""
    rng = np.random.default_rng(seed)
    opt = OptimizerState(lr=lr)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for i in range(0, len(data), batch_size):
            net.params.zero_grad()
            _loss(net, data.subset(order[i : i + batch_size]), kind).backward()
            grads, _ = clip_by_global_norm(net.params.grads(), max_grad_norm)
            adam_step(net.params, grads, opt)
        curve.append(dataset_loss(net, data, kind))
    return curve


# supervision from the simulator ------------------------------------------------------


def _random_state(env: GridEnvironment, rng: np.random.Generator) -> tuple[AgentPose, Cell]:
    free = env.free_cells()
    i, j = rng.choice(len(free), size=2, replace=False)
    return AgentPose(free[int(i)], int(rng.integers(4))), free[int(j)]


def _spectrogram_at(env: GridEnvironment, goal: Cell, pose: AgentPose, sound: Sound, mic_noise_sigma: float,
                    rng: np.random.Generator) -> np.ndarray:
    rir = synthesize_rir(env.with_source(goal), goal, pose)
    audio = render_audio(rir, sound, mic_noise_sigma=mic_noise_sigma, rng=rng if mic_noise_sigma > 0 else None)
    return normalize_spectrogram(spectrogram(audio).data)


def goal_offset_dataset(envs: Sequence[GridEnvironment], sounds: Sequence[Sound], n: int, seed: int = 0,
                        mic_noise_sigma: float = 0.0) -> Dataset:
    """Spectrograms paired with the true (right, forward) goal offset in cells."""
    rng = np.random.default_rng(seed)
    specs, targets = [], []
    for _ in range(n):
        env = envs[int(rng.integers(len(envs)))]
        pose, goal = _random_state(env, rng)
        snd = sounds[int(rng.integers(len(sounds)))]
        specs.append(_spectrogram_at(env, goal, pose, snd, mic_noise_sigma, rng))
        targets.append(egocentric_offset(pose, goal))
    return Dataset(np.stack(specs), np.asarray(targets, dtype=np.float64))


def doa_dataset(envs: Sequence[GridEnvironment], sounds: Sequence[Sound], n: int, seed: int = 0,
                mic_noise_sigma: float = 0.0) -> Dataset:
    """Spectrograms labelled with the first-path arrival bin."""
    rng = np.random.default_rng(seed)
    specs, labels = [], []
    while len(specs) < n:
        env = envs[int(rng.integers(len(envs)))]
        pose, goal = _random_state(env, rng)
        try:
            b = ground_truth_doa(env, goal, pose)
        except AudioError:
            continue
        snd = sounds[int(rng.integers(len(sounds)))]
        specs.append(_spectrogram_at(env, goal, pose, snd, mic_noise_sigma, rng))
        labels.append(b)
    return Dataset(np.stack(specs), np.asarray(labels, dtype=np.int64))


def stop_dataset(envs: Sequence[GridEnvironment], sounds: Sequence[Sound], n: int, seed: int = 0,
                 mic_noise_sigma: float = 0.0) -> Dataset:
    """Balanced at-goal (label 1) and elsewhere (label 0) spectrograms."""
    rng = np.random.default_rng(seed)
    specs, labels = [], []
    for k in range(n):
        env = envs[int(rng.integers(len(envs)))]
        pose, goal = _random_state(env, rng)
        if k % 2:
            pose = AgentPose(goal, pose.heading)
        snd = sounds[int(rng.integers(len(sounds)))]
        specs.append(_spectrogram_at(env, goal, pose, snd, mic_noise_sigma, rng))
        labels.append(k % 2)
    return Dataset(np.stack(specs), np.asarray(labels, dtype=np.int64))


def fov_target(env: GridEnvironment, cell: Cell, goal: Cell, half_cells: int) -> Cell:
    """Where the shortest path from ``cell`` to ``goal`` leaves the square of half-side ``half_cells``.

    The goal itself when it lies inside the square.
    """
    cur = cell
    while cur != goal:
        nxt = first_path_step(env, cur, goal)
        if nxt is None:
            raise ValueError(f"goal {goal} unreachable from {cell}")
        if max(abs(nxt[0] - cell[0]), abs(nxt[1] - cell[1])) > half_cells:
            return cur
        cur = nxt
    return goal


def map_crop(G: GeometricMap, size: int) -> np.ndarray:
    """Egocentric (2, size, size) crop of the map at environment resolution."""
    return egocentric_crop(pooled_geometric(G, G.ratio), G.pose.cell, G.pose.heading, size).astype(np.float32)


def fov_waypoint_dataset(envs: Sequence[GridEnvironment], sounds: Sequence[Sound], n: int, seed: int = 0,
                         fov_m: float = FOV_SIDE_M, geo_size: int = 20) -> Dataset:
    """Spectrogram and fresh map crop paired with the field-of-view waypoint offset."""
    rng = np.random.default_rng(seed)
    specs, geos, targets = [], [], []
    for _ in range(n):
        env = envs[int(rng.integers(len(envs)))]
        pose, goal = _random_state(env, rng)
        snd = sounds[int(rng.integers(len(sounds)))]
        sess = NavigationSession(env, pose, goal, snd, seed=int(rng.integers(2**31)))
        half = int(round(fov_m / env.cell_size / 2))
        specs.append(normalize_spectrogram(sess.spectrogram()))
        geos.append(map_crop(sess.G, geo_size))
        targets.append(egocentric_offset(pose, fov_target(env, pose.cell, goal, half)))
    return Dataset(np.stack(specs), np.asarray(targets, dtype=np.float64), np.stack(geos))


def audio_regressor(net: AudioNet) -> Callable[[NavigationSession], tuple[float, float]]:
    """Session -> (right, forward) prediction from the current spectrogram (and map crop)."""
    def predict(session: NavigationSession) -> tuple[float, float]:
        spec = normalize_spectrogram(session.spectrogram())[None]
        geo = map_crop(session.G, net.config.geo_size)[None] if net.config.geo_size else None
        out = net.predict(spec, geo)[0]
        return float(out[0]), float(out[1])
    return predict


def oracle_regressor(session: NavigationSession) -> tuple[float, float]:
    """True goal offset; turns the goal-predictor agent into a point-goal planner."""
    right, fwd = egocentric_offset(session.pose, session.goal)
    return float(right), float(fwd)


# validation sweeps ----------------------------------------------------------------


def sweep(make_agent: Callable[[object], object], values: Sequence, evaluate: Callable[[object], list]) -> list[dict]:
    """Evaluate one agent per parameter value; rows carry sr / spl / sna."""
    rows = []
    for v in values:
        recs = evaluate(make_agent(v))
        rows.append({"value": v, "sr": sr(recs), "spl": spl(recs), "sna": sna(recs), "episodes": len(recs)})
    return rows


def best_value(rows: Sequence[dict], key: str = "spl"):
    """Highest ``key``; ties go to the earlier value."""
    return max(enumerate(rows), key=lambda kv: (kv[1][key], -kv[0]))[1]["value"]
