"""One JSON file pins an experiment: environments, audio, agent, training and evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .audio import SourceLibrary
from .datasets import SplitSpec
from .train import TrainConfig

AGENT_KINDS = (
    "av-wan",
    "random",
    "direction-follower",
    "frontier-waypoints",
    "goal-predictor",
    "supervised-waypoints",
)
TRAIN_TARGETS = ("av-wan", "goal-predictor", "supervised-waypoints", "doa-classifier", "stop-classifier")
SPLIT_NAMES = ("train", "val", "test")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    count: int
    base_seed: int

    @property
    def seeds(self) -> range:
        return range(self.base_seed, self.base_seed + self.count)


@dataclass
class EnvConfig:
    root: str | None = "envs"  # relative to the config file; None generates in memory
    width: int = 16
    height: int = 16
    room_density: float = 0.5
    train: SplitConfig = SplitConfig(200, 0)
    val: SplitConfig = SplitConfig(20, 100_000)
    test: SplitConfig = SplitConfig(20, 200_000)

    def split(self, name: str) -> SplitConfig:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def spec(self, name: str) -> SplitSpec:
        s = self.split(name)
        return SplitSpec(s.count, self.width, self.height, s.base_seed, self.room_density)


@dataclass
class AudioConfig:
    mode: str = "heard"  # heard: one named sound everywhere; unheard: disjoint train / val / test sounds
    heard_sound: str = "telephone"
    mic_noise_sigma: float = 0.0
    noise_sweep: list[float] = field(default_factory=list)
    distractor: bool = False


@dataclass
class AgentConfig:
    kind: str = "av-wan"
    checkpoint: str | None = None
    greedy: bool = False
    params: dict = field(default_factory=dict)


@dataclass
class EvalConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    episodes_per_seed: int | None = None  # None: every test environment once per seed
    render: bool = False
    render_limit: int = 20


@dataclass
class RunConfig:
    name: str = "default"
    output_root: str = "runs"
    envs: EnvConfig = field(default_factory=EnvConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: str = field(default=".", compare=False, repr=False)

    # serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "output_root": self.output_root,
            "envs": asdict(self.envs),
            "audio": asdict(self.audio),
            "agent": asdict(self.agent),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> RunConfig:
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            env = dict(d.get("envs", {}))
            for s in SPLIT_NAMES:
                if s in env:
                    env[s] = SplitConfig(**env[s])
            cfg = cls(
                name=d.get("name", "default"),
                output_root=d.get("output_root", "runs"),
                envs=EnvConfig(**env),
                audio=AudioConfig(**d.get("audio", {})),
                agent=AgentConfig(**d.get("agent", {})),
                train=TrainConfig.from_dict(d["train"]) if "train" in d else TrainConfig(),
                eval=EvalConfig(**d.get("eval", {})),
                base_dir=base_dir,
            )
        except TypeError as e:
            raise ConfigError(str(e)) from e
        # the audio section is authoritative for the training sound protocol
        cfg.train = replace(cfg.train, sound_mode=cfg.audio.mode, heard_sound=cfg.audio.heard_sound)
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> RunConfig:
        p = Path(path)
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: {e}") from e
        return cls.from_dict(d, base_dir=str(p.parent))

    # paths ----------------------------------------------------------------------
    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def env_root(self) -> Path | None:
        return None if self.envs.root is None else self.resolve(self.envs.root)

    @property
    def run_dir(self) -> Path:
        return self.resolve(self.output_root) / self.name

    # checks ------------------------------------------------------------------------
    def validate(self) -> None:
        e = self.envs
        if e.width < 3 or e.height < 3:
            raise ConfigError("environments must be at least 3x3")
        ranges = []
        for s in SPLIT_NAMES:
            sc = e.split(s)
            if sc.count <= 0:
                raise ConfigError(f"split {s} needs a positive count")
            ranges.append((sc.base_seed, sc.base_seed + sc.count, s))
        ranges.sort()
        for (a0, a1, sa), (b0, _, sb) in zip(ranges, ranges[1:]):
            if b0 < a1:
                raise ConfigError(f"splits {sa} and {sb} share environment seeds")
        a = self.audio
        if a.mode not in ("heard", "unheard"):
            raise ConfigError("audio.mode must be 'heard' or 'unheard'")
        lib = SourceLibrary()
        if a.heard_sound not in lib.names():
            raise ConfigError(f"unknown sound {a.heard_sound!r}")
        split_sets = [set(lib.names(s)) for s in SPLIT_NAMES]
        if any(x & y for i, x in enumerate(split_sets) for y in split_sets[i + 1 :]):
            raise ConfigError("sound splits overlap")
        if a.mic_noise_sigma < 0 or any(s < 0 for s in a.noise_sweep):
            raise ConfigError("noise sigma must be nonnegative")
        if self.agent.kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent {self.agent.kind!r}; expected one of {AGENT_KINDS}")
        if not self.eval.seeds:
            raise ConfigError("eval.seeds must not be empty")

    def with_overrides(self, pairs: list[str]) -> RunConfig:
        """Apply ``section.key=value`` overrides (values parsed as JSON when possible)."""
        d = self.to_dict()
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"override path {key!r} does not exist")
                node = node[p]
            node[parts[-1]] = value
        return RunConfig.from_dict(d, base_dir=self.base_dir)

