"""Fixed, disjoint maze splits addressed by name."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .env import GridEnvironment, generate_maze


@dataclass(frozen=True)
class SplitSpec:
    count: int
    width: int = 16
    height: int = 16
    base_seed: int = 0
    room_density: float = 0.5


# seed ranges never overlap, so train / val / test mazes are disjoint by construction
SPLITS = {
    "train": SplitSpec(200, base_seed=0),
    "val": SplitSpec(20, base_seed=100_000),
    "test": SplitSpec(20, base_seed=200_000),
}


def make_split(spec: SplitSpec) -> list[GridEnvironment]:
    return [generate_maze(spec.base_seed + k, spec.width, spec.height, spec.room_density)
            for k in range(spec.count)]


def load_split(name: str, root: str | Path | None = None) -> list[GridEnvironment]:
    """Environments of a named split, read from ``root/<name>/`` when given, else generated."""
    if root is not None:
        d = Path(root) / name
        files = sorted(d.glob("env_*.json"))
        if not files:
            raise FileNotFoundError(f"no environment files under {d}")
        return [GridEnvironment.load(f) for f in files]
    if name not in SPLITS:
        raise KeyError(f"unknown split {name!r}; expected one of {sorted(SPLITS)}")
    return make_split(SPLITS[name])


def write_split(name: str, envs: list[GridEnvironment], root: str | Path, spec: SplitSpec | None = None) -> Path:
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    for k, env in enumerate(envs):
        env.save(d / f"env_{k:04d}.json")
    manifest = {"split": name, "count": len(envs)}
    if spec is not None:
        manifest["spec"] = asdict(spec)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d
