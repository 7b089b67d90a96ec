"""Geometric and acoustic maps built from egocentric observations.

Maps live in the episode's odometry frame: the agent starts at the map centre
facing map-north, and every later pose is dead-reckoned from primitive
actions. Map cells are 0.1 m; one environment cell spans ``ratio`` map cells
per side (5 at the default 0.5 m cell size).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .env import HEADING_VECTORS, Action, AgentPose, Cell, GridEnvironment

log = logging.getLogger(__name__)

MAP_RESOLUTION = 0.1
GEO_MAP_SIZE = 200
ACOUSTIC_CROP = 20
LOCAL_SIZE = 30  # 3 m at 0.1 m
SCAN_FOV_DEG = 90.0
SCAN_RANGE = 3.0
SCAN_RAYS = 91
SCAN_STEP = 0.02
OCCUPIED, EXPLORED = 0, 1


@dataclass
class RangeScan:
    angles: np.ndarray  # radians, clockwise from straight ahead
    ranges: np.ndarray  # metres to the first wall sample, inf when nothing within range
    max_range: float = SCAN_RANGE


def _rotate_cw(vec: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate a y-down screen vector clockwise by ``angles``; returns (n, 2)."""
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([vec[0] * c - vec[1] * s, vec[0] * s + vec[1] * c], axis=-1)


def _trace_rays(env: GridEnvironment, pose: AgentPose, angles: np.ndarray, max_range: float) -> np.ndarray:
    dirs = _rotate_cw(np.asarray(HEADING_VECTORS[pose.heading], dtype=float), angles)
    steps = np.arange(1, int(round(max_range / SCAN_STEP)) + 1) * SCAN_STEP
    origin = (np.asarray(pose.cell, dtype=float) + 0.5) * env.cell_size
    pts = origin + dirs[:, None, :] * steps[None, :, None]
    cells = np.floor(pts / env.cell_size).astype(int)
    cx, cy = cells[..., 0], cells[..., 1]
    inside = (cx >= 0) & (cx < env.width) & (cy >= 0) & (cy < env.height)
    wall = np.ones(cx.shape, dtype=bool)
    wall[inside] = env.occupancy[cy[inside], cx[inside]]
    hit_any = wall.any(axis=1)
    first = np.argmax(wall, axis=1)
    return np.where(hit_any, steps[first], np.inf)


def range_scan(env: GridEnvironment, pose: AgentPose, n_rays: int = SCAN_RAYS,
               fov_deg: float = SCAN_FOV_DEG, max_range: float = SCAN_RANGE,
               noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> RangeScan:
    """Planar range scan from the cell centre across the forward field of view.

    ``noise_sigma`` is a relative error: each range gets N(0, sigma * range) added.
    Noise-free ranges are cached per environment and pose.
    """
    half = math.radians(fov_deg) / 2
    angles = np.linspace(-half, half, n_rays)
    key = (pose.cell, pose.heading, n_rays, fov_deg, max_range)
    clean = env._scan_cache.get(key)
    if clean is None:
        clean = _trace_rays(env, pose, angles, max_range)
        clean.setflags(write=False)
        env._scan_cache[key] = clean
    ranges = clean.copy()
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("scan noise needs an rng")
        finite = np.isfinite(ranges)
        ranges[finite] += rng.normal(0.0, noise_sigma, finite.sum()) * ranges[finite]
        ranges[finite] = np.clip(ranges[finite], SCAN_STEP, None)
    return RangeScan(angles, ranges, max_range)


@dataclass
class LocalOccupancy:
    """Egocentric (2, 30, 30) grid: agent at the bottom-centre cell, facing up."""

    grid: np.ndarray

    @property
    def agent_index(self) -> tuple[int, int]:
        return LOCAL_SIZE - 1, LOCAL_SIZE // 2


def _local_index(forward: np.ndarray, lateral: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = np.floor(forward / MAP_RESOLUTION + 0.5).astype(int)
    c = LOCAL_SIZE // 2 + np.floor(lateral / MAP_RESOLUTION + 0.5).astype(int)
    ok = (r >= 0) & (r < LOCAL_SIZE) & (c >= 0) & (c < LOCAL_SIZE)
    return LOCAL_SIZE - 1 - r, c, ok


def local_occupancy_from_scan(scan: RangeScan, pose: AgentPose | None = None) -> LocalOccupancy:
    """Back-project a range scan into the 3 x 3 m local grid in front of the agent.

    Samples strictly before a return are explored free space; the return itself is
    explored and occupied. Rays with no return mark their full length explored.
    """
    grid = np.zeros((2, LOCAL_SIZE, LOCAL_SIZE), dtype=np.float32)
    steps = np.arange(1, int(round(scan.max_range / SCAN_STEP)) + 1) * SCAN_STEP
    steps = np.concatenate([[0.0], steps])
    ranges = np.minimum(scan.ranges, scan.max_range + SCAN_STEP)
    free_mask = steps[None, :] < ranges[:, None] - 1e-9
    f = np.cos(scan.angles)[:, None] * steps[None, :]
    lat = np.sin(scan.angles)[:, None] * steps[None, :]
    rows, cols, ok = _local_index(f[free_mask], lat[free_mask])
    grid[EXPLORED, rows[ok], cols[ok]] = 1.0
    hit = np.isfinite(scan.ranges) & (scan.ranges <= scan.max_range)
    hr = scan.ranges[hit]
    rows, cols, ok = _local_index(np.cos(scan.angles[hit]) * hr, np.sin(scan.angles[hit]) * hr)
    grid[EXPLORED, rows[ok], cols[ok]] = 1.0
    grid[OCCUPIED, rows[ok], cols[ok]] = 1.0
    return LocalOccupancy(grid)


@dataclass(frozen=True)
class PoseDelta:
    forward: int = 0  # cells moved along the heading (0 or 1)
    turn: int = 0  # +1 clockwise quarter turn, -1 anticlockwise

    @classmethod
    def from_action(cls, action: Action, collided: bool = False) -> PoseDelta:
        if action == Action.MOVE_FORWARD:
            return cls(0 if collided else 1, 0)
        if action == Action.TURN_LEFT:
            return cls(0, -1)
        if action == Action.TURN_RIGHT:
            return cls(0, 1)
        return cls()


@dataclass
class GeometricMap:
    """Allocentric (occupied, explored) running-mean map with odometry pose."""

    size: int = GEO_MAP_SIZE
    ratio: int = 5  # map cells per environment cell
    grid: np.ndarray = None
    count: np.ndarray = None
    pose: AgentPose = None
    _warned: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.size % self.ratio:
            raise ValueError("map size must be a multiple of the cell ratio")
        if self.grid is None:
            self.grid = np.zeros((2, self.size, self.size), dtype=np.float32)
        if self.count is None:
            self.count = np.zeros((self.size, self.size), dtype=np.int32)
        if self.pose is None:
            c = self.cells // 2
            self.pose = AgentPose((c, c), 0)

    @classmethod
    def for_env(cls, env: GridEnvironment, size: int = GEO_MAP_SIZE) -> GeometricMap:
        ratio = int(round(env.cell_size / MAP_RESOLUTION))
        return cls(size=size, ratio=ratio)

    @property
    def cells(self) -> int:
        """Side length in environment cells."""
        return self.size // self.ratio

    def agent_subcell(self, pose: AgentPose | None = None) -> tuple[int, int]:
        p = self.pose if pose is None else pose
        return p.cell[0] * self.ratio + self.ratio // 2, p.cell[1] * self.ratio + self.ratio // 2

    def occupied(self) -> np.ndarray:
        return self.grid[OCCUPIED] > 0.5

    def explored(self) -> np.ndarray:
        return self.grid[EXPLORED] > 0.5

    def cell_grid(self) -> np.ndarray:
        """(2, cells, cells) at environment resolution: occupied = block max, explored = block mean."""
        n, r = self.cells, self.ratio
        blocks = self.grid.reshape(2, n, r, n, r)
        return np.stack([blocks[OCCUPIED].max(axis=(1, 3)), blocks[EXPLORED].mean(axis=(1, 3))])

    def occupied_cells(self) -> np.ndarray:
        n, r = self.cells, self.ratio
        return self.occupied().reshape(n, r, n, r).any(axis=(1, 3))

    def in_cell_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.cells and 0 <= cell[1] < self.cells

    def apply_delta(self, delta: PoseDelta) -> None:
        h = (self.pose.heading + delta.turn) % 4
        dx, dy = HEADING_VECTORS[self.pose.heading]
        cell = (self.pose.cell[0] + dx * delta.forward, self.pose.cell[1] + dy * delta.forward)
        self.pose = AgentPose(cell, h)

    def integrate(self, local: LocalOccupancy) -> None:
        """Average the local grid into the map at the current pose."""
        rows, cols = np.nonzero(local.grid[EXPLORED] > 0)
        if len(rows) == 0:
            return
        fwd = LOCAL_SIZE - 1 - rows
        lat = cols - LOCAL_SIZE // 2
        fx, fy = HEADING_VECTORS[self.pose.heading]
        rx, ry = HEADING_VECTORS[(self.pose.heading + 1) % 4]
        ax, ay = self.agent_subcell()
        mx = ax + fwd * fx + lat * rx
        my = ay + fwd * fy + lat * ry
        ok = (mx >= 0) & (mx < self.size) & (my >= 0) & (my < self.size)
        if not ok.all():
            if not self._warned:
                log.warning("local observation extends past the map border; clamping")
                self._warned = True
            rows, cols, mx, my = rows[ok], cols[ok], mx[ok], my[ok]
        n = self.count[my, mx] + 1
        self.count[my, mx] = n
        for ch in (OCCUPIED, EXPLORED):
            old = self.grid[ch, my, mx]
            self.grid[ch, my, mx] = old + (local.grid[ch, rows, cols] - old) / n

    def mark_blocked(self, cell: Cell) -> None:
        """Record a wall learned from bumping into it (whole cell occupied)."""
        if not self.in_cell_bounds(cell):
            return
        r = self.ratio
        sl = (slice(cell[1] * r, cell[1] * r + r), slice(cell[0] * r, cell[0] * r + r))
        self.grid[OCCUPIED][sl] = 1.0
        self.grid[EXPLORED][sl] = 1.0
        self.count[sl] = np.maximum(self.count[sl], 1)


def register_and_update(G: GeometricMap, L: LocalOccupancy, pose_delta: PoseDelta) -> GeometricMap:
    G.apply_delta(pose_delta)
    G.integrate(L)
    return G


@dataclass
class AcousticMap:
    """Per-cell cumulative mean of direct-sound intensity at visited cells."""

    cells: int = 40
    intensity: np.ndarray = None
    visit_count: np.ndarray = None

    def __post_init__(self):
        if self.intensity is None:
            self.intensity = np.zeros((self.cells, self.cells), dtype=np.float64)
        if self.visit_count is None:
            self.visit_count = np.zeros((self.cells, self.cells), dtype=np.int32)


def update_acoustic(A: AcousticMap, position: Cell, intensity: float) -> AcousticMap:
    if intensity < 0:
        raise ValueError("intensity must be non-negative")
    x, y = position
    if not (0 <= x < A.cells and 0 <= y < A.cells):
        log.warning("acoustic update outside map at %s; dropped", position)
        return A
    n = A.visit_count[y, x]
    A.intensity[y, x] = (A.intensity[y, x] * n + intensity) / (n + 1)
    A.visit_count[y, x] = n + 1
    return A


def egocentric_crop(grid: np.ndarray, center: tuple[int, int], heading: int, size: int) -> np.ndarray:
    """Rotate/translate a (C, H, W) map so ``center`` (x, y) faces up, then crop.

    The agent lands at index (size // 2, size // 2). Out-of-map areas are zero.
    """
    squeeze = grid.ndim == 2
    if squeeze:
        grid = grid[None]
    c, h, w = grid.shape
    half = size // 2
    win = 2 * half + 1
    out = np.zeros((c, win, win), dtype=grid.dtype)
    x, y = center
    x0, y0 = x - half, y - half
    sx0, sy0 = max(0, x0), max(0, y0)
    sx1, sy1 = min(w, x0 + win), min(h, y0 + win)
    if sx0 < sx1 and sy0 < sy1:
        out[:, sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = grid[:, sy0:sy1, sx0:sx1]
    out = np.rot90(out, k=heading % 4, axes=(1, 2))
    out = np.ascontiguousarray(out[:, :size, :size])
    return out[0] if squeeze else out


def frontiers(grid: np.ndarray) -> set[Cell]:
    """Explored free cells with at least one unexplored 4-neighbour, as (x, y)."""
    occupied = grid[OCCUPIED] > 0.5
    explored = grid[EXPLORED] > 0.5
    free = explored & ~occupied
    unexplored = np.pad(~explored, 1, constant_values=False)
    near = unexplored[:-2, 1:-1] | unexplored[2:, 1:-1] | unexplored[1:-1, :-2] | unexplored[1:-1, 2:]
    ys, xs = np.nonzero(free & near)
    return {(int(x), int(y)) for x, y in zip(xs, ys)}


def _ccw(v: Cell, k: int) -> Cell:
    x, y = v
    for _ in range(k % 4):
        x, y = y, -x
    return x, y


@dataclass(frozen=True)
class MapFrame:
    """Rigid transform between world cells and the episode's odometry frame."""

    start: AgentPose
    center: int

    def to_map(self, cell: Cell) -> Cell:
        dx, dy = _ccw((cell[0] - self.start.cell[0], cell[1] - self.start.cell[1]), self.start.heading)
        return self.center + dx, self.center + dy

    def to_world(self, cell: Cell) -> Cell:
        dx, dy = _ccw((cell[0] - self.center, cell[1] - self.center), -self.start.heading)
        return self.start.cell[0] + dx, self.start.cell[1] + dy

    def pose_to_map(self, pose: AgentPose) -> AgentPose:
        return AgentPose(self.to_map(pose.cell), (pose.heading - self.start.heading) % 4)
