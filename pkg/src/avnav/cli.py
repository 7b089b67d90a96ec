"""Command-line surface: gen-envs, train, eval, replay, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path

from .agents import WaypointAgent
from .audio import Sound, SourceLibrary
from .autograd.checkpoint import CheckpointError
from .baselines import (
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
    doa_dataset,
    fit,
    fov_waypoint_dataset,
    goal_offset_dataset,
    stop_dataset,
    sweep,
)
from .config import SPLIT_NAMES, TRAIN_TARGETS, ConfigError, RunConfig
from .datasets import load_split, make_split, write_split
from .env import GridEnvironment
from .evaluation import evaluate_agent
from .metrics import format_table, report, write_reports_csv
from .policy import WaypointPolicy
from .session import PerceptionConfig
from .train import TrainingError, train
from .trajectory import (
    ReplayError,
    TrajectoryLog,
    read_logs,
    render_svg,
    replay,
    write_logs,
)

log = logging.getLogger("avnav")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INVARIANT = 0, 1, 2, 3

SWEEP_DEFAULTS = {
    "direction-follower": ("distance_m", [1.0, 2.0, 3.0, 4.0]),
    "goal-predictor": ("every", [1, 5, 10, 20]),
    "supervised-waypoints": ("every", [2, 5, 10]),
}


# shared helpers -------------------------------------------------------------------


def load_envs(cfg: RunConfig, split: str) -> list[GridEnvironment]:
    root = cfg.env_root
    if root is None:
        return make_split(cfg.envs.spec(split))
    if not (root / split).is_dir():
        raise FileNotFoundError(f"no environments at {root / split}; run gen-envs first")
    envs = load_split(split, root)
    if len(envs) != cfg.envs.split(split).count:
        raise ConfigError(f"{root / split} holds {len(envs)} environments, config expects "
                          f"{cfg.envs.split(split).count}")
    return envs


def sounds_for(cfg: RunConfig, split: str) -> Sound | list[Sound]:
    """The heard sound everywhere, or the split's own sounds in unheard mode."""
    lib = SourceLibrary()
    if cfg.audio.mode == "heard":
        return lib[cfg.audio.heard_sound]
    return [lib[n] for n in lib.names(split)]


def _as_list(s: Sound | list[Sound]) -> list[Sound]:
    return [s] if isinstance(s, Sound) else list(s)


def _checkpoint(cfg: RunConfig, name: str) -> Path:
    if cfg.agent.checkpoint:
        return cfg.resolve(cfg.agent.checkpoint)
    return cfg.run_dir / "checkpoints" / name


def _load_net(path: Path, kind: str) -> AudioNet:
    net, extra = AudioNet.load(path)
    if extra.get("target") != kind:
        raise CheckpointError(f"{path} was trained for {extra.get('target')!r}, not {kind!r}")
    return net


def build_stop(cfg: RunConfig):
    p = cfg.agent.params
    mode = p.get("stop", "intensity")
    if mode == "oracle":
        return OracleStop()
    if mode == "classifier":
        return StopDecider(classifier=_load_net(cfg.resolve(p["stop_checkpoint"]), "stop-classifier"))
    if mode != "intensity":
        raise ConfigError(f"unknown stop mode {mode!r}")
    if p.get("stop_threshold") is not None:
        return StopDecider(float(p["stop_threshold"]))
    cal = calibrate_stop_threshold(load_envs(cfg, "val"), _as_list(sounds_for(cfg, "val")))
    log.info("stop threshold %.5f (at-source min %.5f, neighbour max %.5f)", cal.threshold,
             cal.min_at_source, cal.max_off_source)
    return StopDecider(cal.threshold)


def build_doa(cfg: RunConfig):
    p = cfg.agent.params
    if p.get("doa", "oracle") == "classifier":
        return ClassifierDoA(_load_net(cfg.resolve(p["doa_checkpoint"]), "doa-classifier"))
    return OracleDoA(float(p.get("doa_noise_deg", 10.0)))


def build_agent_factory(cfg: RunConfig, **override) -> Callable[[], object]:
    """Factory of fresh agents for ``cfg.agent`` (``override`` replaces entries of ``params``)."""
    kind = cfg.agent.kind
    p = {**cfg.agent.params, **override}
    if kind == "av-wan":
        policy = WaypointPolicy.load(_checkpoint(cfg, "final.ckpt"), expect=cfg.train.policy)
        return lambda: WaypointAgent(policy, greedy=cfg.agent.greedy, limit=cfg.train.planner_limit)
    if kind == "random":
        return lambda: RandomAgent()
    stop = build_stop(cfg)
    if kind == "direction-follower":
        return lambda: DirectionFollower(float(p.get("distance_m", 2.0)), build_doa(cfg), stop)
    if kind == "frontier-waypoints":
        return lambda: FrontierWaypoints(build_doa(cfg), stop)
    if kind in ("goal-predictor", "supervised-waypoints"):
        net = _load_net(_checkpoint(cfg, f"{kind}.ckpt"), kind)
        cls = GoalPredictorAgent if kind == "goal-predictor" else SupervisedWaypoints
        every = int(p.get("every", 10))
        return lambda: cls(audio_regressor(net), every, stop)
    raise ConfigError(f"unknown agent {kind!r}")


def _prepare_run_dir(cfg: RunConfig) -> Path:
    d = cfg.run_dir
    for sub in ("checkpoints", "logs", "renders"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.dumps())
    return d


# commands ---------------------------------------------------------------------------


def cmd_gen_envs(cfg: RunConfig) -> Path:
    root = cfg.env_root
    if root is None:
        raise ConfigError("envs.root is unset; nothing to write")
    manifest = {"width": cfg.envs.width, "height": cfg.envs.height, "room_density": cfg.envs.room_density,
                "splits": {}}
    for split in SPLIT_NAMES:
        spec = cfg.envs.spec(split)
        envs = make_split(spec)
        for env in envs:
            env.validate()
        write_split(split, envs, root, spec)
        manifest["splits"][split] = {"seeds": list(cfg.envs.split(split).seeds),
                                     "files": [f"{split}/env_{k:04d}.json" for k in range(len(envs))]}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    log.info("wrote %s", path)
    return path


def _train_supervised(cfg: RunConfig, target: str) -> Path:
    p = cfg.agent.params
    envs = load_envs(cfg, "train")
    sounds = _as_list(sounds_for(cfg, "train"))
    n, seed = int(p.get("samples", 4000)), cfg.train.seed
    sigma = cfg.audio.mic_noise_sigma
    if target == "goal-predictor":
        data, net_cfg, loss = goal_offset_dataset(envs, sounds, n, seed, sigma), AudioNetConfig(), "mse"
    elif target == "supervised-waypoints":
        geo = int(p.get("geo_size", 20))
        data = fov_waypoint_dataset(envs, sounds, n, seed, geo_size=geo)
        net_cfg, loss = AudioNetConfig(geo_size=geo), "mse"
    elif target == "doa-classifier":
        data, net_cfg, loss = doa_dataset(envs, sounds, n, seed, sigma), AudioNetConfig(out_dim=36), "ce"
    else:
        data, net_cfg, loss = stop_dataset(envs, sounds, n, seed, sigma), AudioNetConfig(out_dim=2), "ce"
    net = AudioNet(net_cfg, seed)
    curve = fit(net, data, loss, epochs=int(p.get("epochs", 20)), lr=float(p.get("lr", 1e-3)),
                batch_size=int(p.get("batch_size", 64)), seed=seed)
    run = _prepare_run_dir(cfg)
    out = run / "checkpoints" / f"{target}.ckpt"
    net.save(out, extra={"target": target, "samples": n, "final_loss": curve[-1]})
    with open(run / f"curves_{target}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        w.writerows([k + 1, v] for k, v in enumerate(curve))
    log.info("%s: final loss %.4f -> %s", target, curve[-1], out)
    return out


def cmd_train(cfg: RunConfig, resume: str | None = None, target: str | None = None) -> Path:
    target = target or cfg.agent.kind
    if target not in TRAIN_TARGETS:
        raise ConfigError(f"nothing to train for {target!r}; trainable: {TRAIN_TARGETS}")
    if target != "av-wan":
        return _train_supervised(cfg, target)
    train_envs, val_envs = load_envs(cfg, "train"), load_envs(cfg, "val")
    run = _prepare_run_dir(cfg)
    t0 = time.time()

    def progress(row):
        log.info("update %d steps %d return %.3f sr %.3f entropy %.3f (%.0fs)", row["update"],
                 row["waypoint_steps"], row["mean_return"], row["train_sr"], row["entropy"], time.time() - t0)

    train(train_envs, val_envs, cfg.train, out_dir=run, resume=cfg.resolve(resume) if resume else None,
          progress=progress)
    return run / "checkpoints" / "final.ckpt"


def cmd_eval(cfg: RunConfig, label: str | None = None) -> list:
    envs = load_envs(cfg, "test")
    factory = build_agent_factory(cfg)
    sound = sounds_for(cfg, "test")
    lib = SourceLibrary()
    distractors = [lib[n] for n in lib.names("test")]  # never heard during training
    sigmas = cfg.audio.noise_sweep or [cfg.audio.mic_noise_sigma]
    label = label or cfg.agent.kind
    run = _prepare_run_dir(cfg)
    reports = []
    for sigma in sigmas:
        perception = PerceptionConfig(mic_noise_sigma=float(sigma), distractor=cfg.audio.distractor)
        logs: list[TrajectoryLog] = []
        runs = []
        t0 = time.time()
        for seed in cfg.eval.seeds:
            agent = factory()

            def keep(sess, rec, agent=agent):
                logs.append(TrajectoryLog.from_session(sess, rec, agent.name))

            n = cfg.eval.episodes_per_seed or len(envs)
            runs.append(evaluate_agent(agent, envs, n, seed, sound, perception, cfg.train.reward,
                                       distractor_sounds=distractors, on_episode=keep))
        tag = f"{label}_sigma{sigma:g}" + ("_distractor" if cfg.audio.distractor else "")
        reports.append(report(label, runs, time.time() - t0, mic_noise_sigma=float(sigma),
                              distractor=cfg.audio.distractor, sound_mode=cfg.audio.mode))
        write_logs(run / "logs" / f"{tag}.jsonl", logs)
        if cfg.eval.render:
            for k, lg in enumerate(logs[: cfg.eval.render_limit]):
                (run / "renders" / f"{tag}_{k:03d}.svg").write_text(
                    render_svg(lg.environment(), [lg], title=f"{label} episode {k}"))
    write_reports_csv(run / "report.csv", reports)
    print(format_table(reports))
    return reports


def cmd_replay(path: str, render_dir: str | None = None, csv_path: str | None = None) -> int:
    logs = read_logs(path)
    for k, lg in enumerate(logs):
        try:
            replay(lg)
        except ReplayError as e:
            raise ReplayError(f"{path} episode {k}: {e}") from e
    if render_dir:
        d = Path(render_dir)
        d.mkdir(parents=True, exist_ok=True)
        for k, lg in enumerate(logs):
            (d / f"episode_{k:03d}.svg").write_text(render_svg(lg.environment(), [lg]))
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["episode", "step", "x", "y", "heading", "action", "reward", "collided"])
            for k, lg in enumerate(logs):
                for i, s in enumerate(lg.steps):
                    w.writerow([k, i, *s.pose, s.action, s.reward, int(s.collided)])
    print(f"{len(logs)} episodes replayed pose-exact")
    return len(logs)


def cmd_sweep(cfg: RunConfig, values: Sequence | None = None) -> list[dict]:
    kind = cfg.agent.kind
    if kind not in SWEEP_DEFAULTS:
        raise ConfigError(f"no sweep parameter for {kind!r}")
    key, default = SWEEP_DEFAULTS[kind]
    values = list(values) if values else default
    envs = load_envs(cfg, "val")
    sound = sounds_for(cfg, "val")
    perception = PerceptionConfig(mic_noise_sigma=cfg.audio.mic_noise_sigma)
    seed = cfg.eval.seeds[0]

    def evaluate(agent):
        return evaluate_agent(agent, envs, len(envs), seed, sound, perception, cfg.train.reward)

    rows = sweep(lambda v: build_agent_factory(cfg, **{key: v})(), values, evaluate)
    for r in rows:
        r["parameter"] = key
    run = _prepare_run_dir(cfg)
    with open(run / f"sweep_{kind}.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["parameter", "value", "sr", "spl", "sna", "episodes"])
        w.writeheader()
        w.writerows(rows)
    best = best_value(rows)
    print(f"{kind}: best {key} = {best}")
    return rows


# entry point -----------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avnav", description="Audio-visual waypoint navigation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. audio.mic_noise_sigma=0.1")
        p.add_argument("--name", help="run name (output directory under output_root)")
        p.add_argument("--agent", help="agent kind")
        p.add_argument("--checkpoint", help="checkpoint path for the agent")

    p = sub.add_parser("default-config", help="write the full default config")
    p.add_argument("path")
    p = sub.add_parser("gen-envs", help="generate environment splits")
    with_config(p)
    p = sub.add_parser("train", help="train the waypoint agent or a supervised baseline network")
    with_config(p)
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--target", choices=TRAIN_TARGETS, help="what to train (default: the configured agent)")
    p.add_argument("--steps", type=int, help="total waypoint steps")
    p = sub.add_parser("eval", help="evaluate an agent on the test split")
    with_config(p)
    p.add_argument("--noise-sigma", type=float, nargs="+", help="microphone noise levels, one report row each")
    p.add_argument("--distractor", action="store_true", help="add a second, unheard source")
    p.add_argument("--render", action="store_true", help="write SVG renders")
    p.add_argument("--label")
    p = sub.add_parser("replay", help="verify and render trajectory logs")
    p.add_argument("log")
    p.add_argument("--render-dir")
    p.add_argument("--csv")
    p = sub.add_parser("sweep", help="validation sweep of a baseline hyperparameter")
    with_config(p)
    p.add_argument("--values", type=float, nargs="+")
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over = list(args.set)
    if args.name:
        over.append(f"name={json.dumps(args.name)}")
    if args.agent:
        over.append(f"agent.kind={json.dumps(args.agent)}")
    if args.checkpoint:
        over.append(f"agent.checkpoint={json.dumps(args.checkpoint)}")
    if getattr(args, "steps", None) is not None:
        over.append(f"train.total_waypoint_steps={args.steps}")
    if getattr(args, "noise_sigma", None):
        over.append(f"audio.noise_sweep={json.dumps(args.noise_sigma)}")
    if getattr(args, "distractor", False):
        over.append("audio.distractor=true")
    if getattr(args, "render", False):
        over.append("eval.render=true")
    return cfg.with_overrides(over) if over else cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.verb == "default-config":
            RunConfig().save(args.path)
            return EXIT_OK
        if args.verb == "replay":
            cmd_replay(args.log, args.render_dir, args.csv)
            return EXIT_OK
        cfg = _config(args)
    except ReplayError as e:
        print(f"replay divergence: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError, KeyError) as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        if args.verb == "gen-envs":
            cmd_gen_envs(cfg)
        elif args.verb == "train":
            cmd_train(cfg, args.resume, args.target)
        elif args.verb == "eval":
            cmd_eval(cfg, args.label)
        elif args.verb == "sweep":
            cmd_sweep(cfg, args.values)
    except ReplayError as e:
        print(f"replay divergence: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except ConfigError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, TrainingError, CheckpointError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
