"""Episode records, SR / SPL / SNA, aggregate reports and the waypoint-distance profile."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats


class MetricsError(ValueError):
    pass


@dataclass
class WaypointLogEntry:
    cell: tuple[int, int]  # agent cell (world) when the waypoint was chosen
    delta: tuple[int, int]  # (right, forward) displacement in cells
    goal_distance: float  # geodesic metres to the goal at decision time


@dataclass
class EpisodeRecord:
    success: bool
    path_length: float  # metres travelled
    shortest_length: float  # geodesic start-to-goal metres
    action_count: int  # motion actions executed (Stop excluded)
    shortest_action_count: int  # minimal motion actions (Stop excluded)
    waypoints: list[WaypointLogEntry] = field(default_factory=list)
    episode_return: float = 0.0
    env_id: str = ""
    seed: int = 0
    cell_size: float = 0.5

    def __post_init__(self):
        if self.path_length < 0 or self.shortest_length < 0:
            raise MetricsError("lengths must be nonnegative")
        if self.action_count < 0 or self.shortest_action_count < 0:
            raise MetricsError("action counts must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["waypoints"] = [[list(w.cell), list(w.delta), w.goal_distance] for w in self.waypoints]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeRecord:
        d = dict(d)
        d["waypoints"] = [WaypointLogEntry(tuple(c), tuple(dl), g) for c, dl, g in d.get("waypoints", [])]
        return cls(**d)


def _check(records: Sequence[EpisodeRecord]) -> None:
    if len(records) == 0:
        raise MetricsError("no episode records")


def sr(records: Sequence[EpisodeRecord]) -> float:
    _check(records)
    return sum(r.success for r in records) / len(records)


def _weighted(s: bool, shortest: float, taken: float) -> float:
    if not s:
        return 0.0
    denom = max(taken, shortest)
    return 1.0 if denom == 0 else shortest / denom


def spl(records: Sequence[EpisodeRecord]) -> float:
    _check(records)
    return math.fsum(_weighted(r.success, r.shortest_length, r.path_length) for r in records) / len(records)


def sna(records: Sequence[EpisodeRecord]) -> float:
    _check(records)
    return math.fsum(
        _weighted(r.success, r.shortest_action_count, r.action_count) for r in records
    ) / len(records)


# waypoint-distance analysis ---------------------------------------------------


@dataclass
class DistanceProfile:
    bins: list[dict]  # per goal-distance bin: lo, hi, n, mean, q25, median, q75
    spearman_rho: float
    spearman_p: float
    n_decisions: int


def waypoint_distance_profile(records: Iterable[EpisodeRecord], bin_width: float = 1.0) -> DistanceProfile:
    goal_d, wp_d = [], []
    for r in records:
        for w in r.waypoints:
            goal_d.append(w.goal_distance)
            wp_d.append(math.hypot(*w.delta) * r.cell_size)
    if not goal_d:
        raise MetricsError("no waypoint logs in the records")
    goal_d, wp_d = np.asarray(goal_d), np.asarray(wp_d)
    bins = []
    top = int(np.floor(goal_d.max() / bin_width)) + 1
    for k in range(top):
        lo, hi = k * bin_width, (k + 1) * bin_width
        sel = wp_d[(goal_d >= lo) & (goal_d < hi)]
        if len(sel) == 0:
            continue
        q25, med, q75 = np.percentile(sel, [25, 50, 75])
        bins.append({"lo": lo, "hi": hi, "n": len(sel), "mean": float(sel.mean()),
                     "q25": float(q25), "median": float(med), "q75": float(q75)})
    if np.ptp(goal_d) == 0 or np.ptp(wp_d) == 0:
        rho, p = 0.0, 1.0
    else:
        res = stats.spearmanr(goal_d, wp_d)
        rho, p = float(res.statistic), float(res.pvalue)
    return DistanceProfile(bins, rho, p, len(goal_d))


# reports ----------------------------------------------------------------------


@dataclass
class Report:
    label: str
    sr: float
    spl: float
    sna: float
    sr_std: float = 0.0
    spl_std: float = 0.0
    sna_std: float = 0.0
    episodes: int = 0
    seeds: int = 1
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        d.update(self.extra)
        return d


def report(label: str, runs: Sequence[Sequence[EpisodeRecord]], runtime_s: float = 0.0, **extra) -> Report:
    """Mean and standard deviation across evaluation runs (one record list per seed)."""
    if not runs:
        raise MetricsError("no evaluation runs")
    vals = np.array([[sr(rs), spl(rs), sna(rs)] for rs in runs])
    mean, std = vals.mean(axis=0), vals.std(axis=0)
    return Report(label, *map(float, mean), *map(float, std), episodes=sum(len(r) for r in runs),
                  seeds=len(runs), runtime_s=runtime_s, extra=dict(extra))


def write_reports_csv(path, reports: Sequence[Report]) -> None:
    rows = [r.row() for r in reports]
    keys: list[str] = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def format_table(reports: Sequence[Report]) -> str:
    lines = [f"{'agent':<24} {'SR':>13} {'SPL':>13} {'SNA':>13} {'episodes':>9}"]
    for r in reports:
        lines.append(
            f"{r.label:<24} {r.sr:6.3f}±{r.sr_std:5.3f} {r.spl:6.3f}±{r.spl_std:5.3f} "
            f"{r.sna:6.3f}±{r.sna_std:5.3f} {r.episodes:>9d}"
        )
    return "\n".join(lines)


def write_records_jsonl(path, records: Iterable[EpisodeRecord]) -> None:
    with open(path, "w") as f:
        f.writelines(json.dumps(r.to_dict()) + "\n" for r in records)


def read_records_jsonl(path) -> list[EpisodeRecord]:
    return [EpisodeRecord.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line]
