"""Episode trajectory logs: JSON-lines persistence, pose-exact replay, SVG renders."""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .env import (
    Action,
    AgentPose,
    EpisodeState,
    GridEnvironment,
    geodesic_distance,
    step,
)
from .metrics import EpisodeRecord
from .rewards import RewardConfig, step_reward
from .session import NavigationSession, StepLog, WaypointLog


class ReplayError(RuntimeError):
    """Re-simulating a log did not reproduce what it recorded."""


@dataclass
class TrajectoryLog:
    env: dict
    start: tuple[int, int, int]  # x, y, heading
    goal: tuple[int, int]
    seed: int
    sound: str
    steps: list[StepLog]
    decisions: list[WaypointLog]
    record: EpisodeRecord
    perception: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    agent: str = ""
    env_id: str = ""

    @classmethod
    def from_session(cls, sess: NavigationSession, record: EpisodeRecord, agent: str = "") -> TrajectoryLog:
        s = sess.start_pose
        return cls(
            env=sess.env.to_dict(),
            start=(s.cell[0], s.cell[1], s.heading),
            goal=tuple(sess.goal),
            seed=sess.seed,
            sound=sess.sound.name,
            steps=list(sess.steps),
            decisions=list(sess.decisions),
            record=record,
            perception=asdict(sess.perception),
            reward=asdict(sess.reward_config),
            agent=agent,
            env_id=record.env_id,
        )

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("steps", "decisions", "record")}
        d["steps"] = [[*s.pose, s.action, s.reward, s.collided] for s in self.steps]
        d["decisions"] = [asdict(w) for w in self.decisions]
        d["record"] = self.record.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrajectoryLog:
        d = dict(d)
        d["start"] = tuple(d["start"])
        d["goal"] = tuple(d["goal"])
        d["steps"] = [StepLog((x, y, h), a, r, c) for x, y, h, a, r, c in d["steps"]]
        d["decisions"] = [
            WaypointLog(w["step_index"], None if w["delta"] is None else tuple(w["delta"]),
                        None if w["target"] is None else tuple(w["target"]), w.get("value"),
                        w.get("masked_cells"), w.get("status", ""))
            for w in d["decisions"]
        ]
        d["record"] = EpisodeRecord.from_dict(d["record"])
        return cls(**d)

    def environment(self) -> GridEnvironment:
        return GridEnvironment.from_dict(self.env)

    def path(self) -> list[tuple[int, int]]:
        cells = [self.start[:2]]
        for s in self.steps:
            if s.pose[:2] != cells[-1]:
                cells.append(s.pose[:2])
        return cells


def write_logs(path, logs: Iterable[TrajectoryLog]) -> None:
    with open(path, "w") as f:
        f.writelines(json.dumps(log.to_dict()) + "\n" for log in logs)


def read_logs(path) -> list[TrajectoryLog]:
    lines = Path(path).read_text().splitlines()
    return [TrajectoryLog.from_dict(json.loads(line)) for line in lines if line.strip()]


def replay(log: TrajectoryLog) -> list[AgentPose]:
    """Re-run the logged actions; every pose, collision flag and reward must match."""
    env = log.environment()
    rcfg = RewardConfig(**log.reward) if log.reward else RewardConfig()
    state = EpisodeState.start(AgentPose(log.start[:2], log.start[2]), log.goal)
    poses = [state.pose]
    for i, s in enumerate(log.steps):
        if state.done:
            raise ReplayError(f"step {i}: logged action after the episode ended")
        prev = geodesic_distance(env, state.pose.cell, log.goal)
        _, collided = step(env, state, Action(s.action))
        new = geodesic_distance(env, state.pose.cell, log.goal)
        r = step_reward(prev, new, state.success, env.cell_size, rcfg)
        got = (state.pose.cell[0], state.pose.cell[1], state.pose.heading)
        if got != tuple(s.pose) or collided != s.collided:
            raise ReplayError(f"step {i}: replay reached {got} (collided={collided}), log has {s.pose} "
                              f"(collided={s.collided})")
        if r != s.reward:
            raise ReplayError(f"step {i}: replay reward {r} differs from logged {s.reward}")
        poses.append(state.pose)
    if state.success != log.record.success:
        raise ReplayError(f"replay success {state.success} differs from logged {log.record.success}")
    return poses


# rendering ---------------------------------------------------------------------------

_CELL_PX = 24


def render_svg(env: GridEnvironment, logs: Sequence[TrajectoryLog], title: str = "") -> str:
    """Top-down map with one polyline per episode, fading from start to end."""
    w, h = env.width * _CELL_PX, env.height * _CELL_PX
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    if title:
        out.append(f"<title>{title}</title>")
    out.append(f'<rect width="{w}" height="{h}" fill="#f7f7f2"/>')
    ys, xs = env.occupancy.nonzero()
    for x, y in zip(xs, ys):
        out.append(f'<rect x="{x * _CELL_PX}" y="{y * _CELL_PX}" width="{_CELL_PX}" height="{_CELL_PX}" '
                   'fill="#3a3a3a"/>')
    half = _CELL_PX / 2
    for k, log in enumerate(logs):
        grad = f"fade{k}"
        pts = [(x * _CELL_PX + half, y * _CELL_PX + half) for x, y in log.path()]
        (x0, y0), (x1, y1) = pts[0], pts[-1]
        if (x0, y0) == (x1, y1):
            x1 += 1e-3  # a degenerate gradient vector would hide the stroke
        colour = "#1f77b4" if log.record.success else "#d62728"
        out.append(f'<defs><linearGradient id="{grad}" gradientUnits="userSpaceOnUse" x1="{x0}" y1="{y0}" '
                   f'x2="{x1}" y2="{y1}"><stop offset="0" stop-color="{colour}" stop-opacity="0.2"/>'
                   f'<stop offset="1" stop-color="{colour}" stop-opacity="1"/></linearGradient></defs>')
        coords = " ".join(f"{x:g},{y:g}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="url(#{grad})" stroke-width="3" '
                   'stroke-linejoin="round"/>')
        sx, sy = log.start[:2]
        gx, gy = log.goal
        out.append(f'<circle cx="{sx * _CELL_PX + half}" cy="{sy * _CELL_PX + half}" r="5" fill="#2ca02c"/>')
        out.append(f'<rect x="{gx * _CELL_PX + 6}" y="{gy * _CELL_PX + 6}" width="{_CELL_PX - 12}" '
                   f'height="{_CELL_PX - 12}" fill="#ff7f0e"/>')
    out.append("</svg>")
    return "\n".join(out)
