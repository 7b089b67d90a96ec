"""Waypoint actor-critic: three CNN encoders, a GRU core, and a masked action map."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import checkpoint
from .autograd import tensor as T
from .autograd.nn import (
    ParameterSet,
    ShapeError,
    conv2d,
    conv_output_size,
    gru_step,
    linear,
    masked_log_softmax,
)
from .autograd.tensor import Tensor, no_grad
from .env import HEADING_VECTORS, AgentPose
from .mapping import EXPLORED, OCCUPIED, AcousticMap, GeometricMap, egocentric_crop

log = logging.getLogger(__name__)

SPEC_SHAPE = (65, 26)
SPEC_OFFSET = 10.0  # log-magnitudes sit roughly in [-18, 2]
SPEC_SCALE = 5.0
ACOUSTIC_GAIN = 10.0  # direct intensity at the source is about 0.1
MANIFEST_KIND = "waypoint-policy"


@dataclass(frozen=True)
class PolicyConfig:
    geo_crop: int = 200  # map cells (0.1 m) around the agent
    geo_pool: int = 1  # block pooling applied to the geometric map before cropping
    acoustic_crop: int = 20  # environment cells around the agent
    action_size: int = 9
    base_channels: int = 32
    embed_dim: int = 512
    hidden_size: int = 512
    geo_kernels: tuple[int, ...] = (8, 4, 3)
    geo_strides: tuple[int, ...] = (4, 2, 1)
    spec_kernels: tuple[int, ...] = (8, 4, 3)
    spec_strides: tuple[int, ...] = (4, 2, 1)
    spec_padding: int = 1
    acoustic_kernels: tuple[int, ...] = (5, 3, 3)
    acoustic_strides: tuple[int, ...] = (2, 1, 1)
    use_acoustic_map: bool = True

    def __post_init__(self):
        if self.action_size % 2 == 0:
            raise ValueError("action_size must be odd so the agent sits at the centre")
        if self.geo_crop % self.geo_pool:
            raise ValueError("geo_crop must be a multiple of geo_pool")

    @property
    def geo_input(self) -> int:
        return self.geo_crop // self.geo_pool

    @property
    def num_actions(self) -> int:
        return self.action_size * self.action_size

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> PolicyConfig:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def desk(cls, **overrides) -> PolicyConfig:
        """Reduced widths and an environment-resolution geometric input for single-core training."""
        base = dict(geo_pool=5, base_channels=16, embed_dim=128, hidden_size=128)
        base.update(overrides)
        return cls(**base)


def _conv_stack_shape(shape: tuple[int, int], kernels, strides, padding: int) -> tuple[int, int]:
    h, w = shape
    for k, s in zip(kernels, strides):
        h, w = conv_output_size(h, k, s, padding), conv_output_size(w, k, s, padding)
        if h <= 0 or w <= 0:
            raise ShapeError(f"encoder input {shape} too small for kernels {kernels}")
    return h, w


# inputs ---------------------------------------------------------------------


@dataclass
class PolicyInputs:
    geo: np.ndarray  # (2, S, S)
    spec: np.ndarray  # (2, 65, 26)
    acoustic: np.ndarray  # (1, s_a, s_a)
    mask: np.ndarray  # (s_w * s_w,) True where a waypoint is allowed


def pooled_geometric(G: GeometricMap, pool: int) -> np.ndarray:
    if pool == 1:
        return G.grid
    n = G.size // pool
    blocks = G.grid[:, : n * pool, : n * pool].reshape(2, n, pool, n, pool)
    return np.stack([blocks[OCCUPIED].max(axis=(1, 3)), blocks[EXPLORED].mean(axis=(1, 3))])


def geometric_crop(G: GeometricMap, cfg: PolicyConfig) -> np.ndarray:
    grid = pooled_geometric(G, cfg.geo_pool)
    sx, sy = G.agent_subcell()
    return egocentric_crop(grid, (sx // cfg.geo_pool, sy // cfg.geo_pool), G.pose.heading, cfg.geo_input)


def acoustic_crop(A: AcousticMap, pose: AgentPose, size: int) -> np.ndarray:
    crop = egocentric_crop(A.intensity, pose.cell, pose.heading, size)
    return (ACOUSTIC_GAIN * crop)[None].astype(np.float32)


def normalize_spectrogram(spec_hwc: np.ndarray) -> np.ndarray:
    """(65, 26, 2) log-magnitudes to a channels-first, roughly unit-scale array."""
    return ((np.transpose(spec_hwc, (2, 0, 1)) + SPEC_OFFSET) / SPEC_SCALE).astype(np.float32)


# action map -----------------------------------------------------------------


@dataclass(frozen=True)
class Waypoint:
    """Agent-centric displacement in cells: dx to the right, dy forward."""

    dx: int
    dy: int

    @property
    def is_stop(self) -> bool:
        return self.dx == 0 and self.dy == 0

    def as_tuple(self) -> tuple[int, int]:
        return self.dx, self.dy


def waypoint_from_index(index: int, size: int = 9) -> Waypoint:
    row, col = divmod(int(index), size)
    half = size // 2
    return Waypoint(col - half, half - row)


def index_from_waypoint(wp: Waypoint, size: int = 9) -> int:
    half = size // 2
    if abs(wp.dx) > half or abs(wp.dy) > half:
        raise ValueError(f"waypoint {wp} outside the {size}x{size} action map")
    return (half - wp.dy) * size + (wp.dx + half)


def waypoint_cell(pose: AgentPose, wp: Waypoint) -> tuple[int, int]:
    fx, fy = HEADING_VECTORS[pose.heading]
    rx, ry = HEADING_VECTORS[(pose.heading + 1) % 4]
    return pose.cell[0] + wp.dy * fx + wp.dx * rx, pose.cell[1] + wp.dy * fy + wp.dx * ry


def action_mask(G: GeometricMap, size: int = 9, pose: AgentPose | None = None) -> np.ndarray:
    """(size, size) boolean, True where the candidate cell is not known to be occupied."""
    pose = G.pose if pose is None else pose
    occ = G.occupied_cells()
    half = size // 2
    mask = np.ones((size, size), dtype=bool)
    for row in range(size):
        for col in range(size):
            x, y = waypoint_cell(pose, Waypoint(col - half, half - row))
            if not G.in_cell_bounds((x, y)) or occ[y, x]:
                mask[row, col] = False
    mask[half, half] = True
    return mask


@dataclass
class ActionMap:
    probs: np.ndarray  # (size, size)
    mask: np.ndarray  # (size, size) True = allowed

    @property
    def size(self) -> int:
        return self.probs.shape[0]


def mask_action_map(logits, G: GeometricMap, pose: AgentPose | None = None) -> ActionMap:
    logits = np.asarray(logits, dtype=np.float64)
    size = int(round(np.sqrt(logits.size)))
    if size * size != logits.size:
        raise ShapeError(f"logits of size {logits.size} are not a square action map")
    mask = action_mask(G, size, pose)
    if mask.sum() == 1:
        log.info("every candidate waypoint is occupied; collapsing to Stop")
    lp = masked_log_softmax(Tensor(logits.reshape(1, -1)), mask.reshape(1, -1)).data
    probs = np.where(mask.reshape(1, -1), np.exp(lp), 0.0).reshape(size, size)
    return ActionMap(probs, mask)


def sample_waypoint(amap: ActionMap, rng: np.random.Generator) -> Waypoint:
    from .autograd.nn import categorical_sample

    idx = categorical_sample(amap.probs.ravel() / amap.probs.sum(), rng)
    return waypoint_from_index(idx, amap.size)


# network --------------------------------------------------------------------


@dataclass
class PolicyOutput:
    logits: Tensor  # (N, s_w * s_w)
    value: Tensor  # (N,)
    hidden: Tensor  # (N, H)


class WaypointPolicy:
    def __init__(self, config: PolicyConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or PolicyConfig()
        self.seed = seed
        self.params = ParameterSet(seed, dtype)
        self._build()

    def _encoder(self, prefix: str, in_ch: int, in_shape, kernels, strides, padding: int) -> None:
        cfg = self.config
        ch = in_ch
        for i, k in enumerate(kernels):
            out = cfg.base_channels * 2**i
            self.params.add(f"{prefix}.conv{i}.w", (out, ch, k, k), gain=np.sqrt(2))
            self.params.add(f"{prefix}.conv{i}.b", (out,), "zeros")
            ch = out
        h, w = _conv_stack_shape(in_shape, kernels, strides, padding)
        self.params.add(f"{prefix}.fc.w", (cfg.embed_dim, ch * h * w), gain=np.sqrt(2))
        self.params.add(f"{prefix}.fc.b", (cfg.embed_dim,), "zeros")

    def _build(self) -> None:
        cfg = self.config
        s = cfg.geo_input
        self._encoder("f_g", 2, (s, s), cfg.geo_kernels, cfg.geo_strides, 0)
        self._encoder("f_b", 2, SPEC_SHAPE, cfg.spec_kernels, cfg.spec_strides, cfg.spec_padding)
        n_in = 2
        if cfg.use_acoustic_map:
            a = cfg.acoustic_crop
            self._encoder("f_a", 1, (a, a), cfg.acoustic_kernels, cfg.acoustic_strides, 0)
            n_in = 3
        H, D = cfg.hidden_size, n_in * cfg.embed_dim
        self.params.add("gru.w_ih", (3 * H, D))
        self.params.add("gru.w_hh", (3 * H, H), "orthogonal_blocks")
        self.params.add("gru.b_ih", (3 * H,), "zeros")
        self.params.add("gru.b_hh", (3 * H,), "zeros")
        self.params.add("actor.w", (cfg.num_actions, H), gain=0.01)
        self.params.add("actor.b", (cfg.num_actions,), "zeros")
        self.params.add("critic.w", (1, H))
        self.params.add("critic.b", (1,), "zeros")

    # forward ----------------------------------------------------------------
    def _run_encoder(self, prefix: str, x: Tensor, strides, padding: int) -> Tensor:
        p = self.params
        for i, s in enumerate(strides):
            x = T.relu(conv2d(x, p[f"{prefix}.conv{i}.w"], p[f"{prefix}.conv{i}.b"], s, padding))
        x = x.reshape(x.shape[0], -1)
        return T.relu(linear(x, p[f"{prefix}.fc.w"], p[f"{prefix}.fc.b"]))

    def encode(self, geo, spec, acoustic=None) -> tuple[Tensor, Tensor, Tensor | None]:
        cfg = self.config
        geo, spec = T.as_tensor(geo), T.as_tensor(spec)
        s = cfg.geo_input
        if geo.ndim != 4 or geo.shape[1:] != (2, s, s):
            raise ShapeError(f"geometric input {geo.shape}, expected (N, 2, {s}, {s})")
        if spec.ndim != 4 or spec.shape[1:] != (2, *SPEC_SHAPE):
            raise ShapeError(f"spectrogram input {spec.shape}, expected (N, 2, 65, 26)")
        g = self._run_encoder("f_g", geo, cfg.geo_strides, 0)
        b = self._run_encoder("f_b", spec, cfg.spec_strides, cfg.spec_padding)
        a = None
        if cfg.use_acoustic_map:
            if acoustic is None:
                raise ShapeError("acoustic crop required")
            acoustic = T.as_tensor(acoustic)
            n = cfg.acoustic_crop
            if acoustic.ndim != 4 or acoustic.shape[1:] != (1, n, n):
                raise ShapeError(f"acoustic input {acoustic.shape}, expected (N, 1, {n}, {n})")
            a = self._run_encoder("f_a", acoustic, cfg.acoustic_strides, 0)
        return g, b, a

    def predict(self, h_prev, g: Tensor, b: Tensor, a: Tensor | None) -> PolicyOutput:
        p = self.params
        parts = [g, b] + ([a] if self.config.use_acoustic_map else [])
        x = T.concat(parts, axis=1)
        gru = {k: p[f"gru.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh")}
        h = gru_step(x, T.as_tensor(h_prev), gru)
        logits = linear(h, p["actor.w"], p["actor.b"])
        value = linear(h, p["critic.w"], p["critic.b"]).reshape(-1)
        return PolicyOutput(logits, value, h)

    def initial_state(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.config.hidden_size), dtype=self.params.dtype)

    @staticmethod
    def stack_inputs(batch: list[PolicyInputs]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.stack([o.geo for o in batch]).astype(np.float32),
            np.stack([o.spec for o in batch]).astype(np.float32),
            np.stack([o.acoustic for o in batch]).astype(np.float32),
            np.stack([o.mask for o in batch]),
        )

    def act(self, obs: PolicyInputs, h: np.ndarray, rng: np.random.Generator | None = None,
            greedy: bool = False) -> tuple[int, float, float, np.ndarray, np.ndarray]:
        """Pick one waypoint index. Returns (index, log_prob, value, new_hidden, probs)."""
        from .autograd.nn import categorical_sample

        geo, spec, ac, mask = self.stack_inputs([obs])
        with no_grad():
            g, b, a = self.encode(geo, spec, ac if self.config.use_acoustic_map else None)
            out = self.predict(h, g, b, a)
            lp = masked_log_softmax(out.logits, mask).data[0].astype(np.float64)
        probs = np.where(mask[0], np.exp(lp), 0.0)
        probs /= probs.sum()
        if greedy:
            idx = int(np.argmax(probs))
        else:
            if rng is None:
                raise ValueError("sampling needs an rng")
            idx = categorical_sample(probs, rng)
        return idx, float(lp[idx]), float(out.value.data[0]), out.hidden.data.copy(), probs

    # persistence ------------------------------------------------------------
    def manifest(self) -> dict:
        cfg = self.config
        return {
            "kind": MANIFEST_KIND,
            "config": cfg.to_dict(),
            "seed": self.seed,
            "inputs": {
                "geo": [2, cfg.geo_input, cfg.geo_input],
                "spec": [2, *SPEC_SHAPE],
                "acoustic": [1, cfg.acoustic_crop, cfg.acoustic_crop] if cfg.use_acoustic_map else None,
                "action_map": [cfg.action_size, cfg.action_size],
            },
        }

    def save(self, path, extra: dict | None = None) -> None:
        meta = self.manifest()
        if extra:
            meta["extra"] = extra
        checkpoint.save(path, self.params.state_dict(), meta)

    @classmethod
    def load(cls, path, expect: PolicyConfig | None = None) -> WaypointPolicy:
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != MANIFEST_KIND:
            raise checkpoint.CheckpointError(f"{path} is not a waypoint-policy checkpoint")
        cfg = PolicyConfig.from_dict(meta["config"])
        if expect is not None and expect != cfg:
            raise checkpoint.CheckpointError(f"checkpoint config {cfg} does not match expected {expect}")
        pol = cls(cfg, meta.get("seed", 0))
        # training checkpoints also carry optimizer moments under a reserved prefix
        pol.params.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("__")})
        return pol
