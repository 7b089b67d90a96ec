"""Rollouts at waypoint granularity, advantage estimation and PPO updates."""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .agents import WaypointAgent, policy_inputs
from .audio import Sound, SourceLibrary
from .autograd import checkpoint
from .autograd import tensor as T
from .autograd.nn import gru_step, linear, masked_log_softmax
from .autograd.optim import OptimizerState, adam_step, clip_by_global_norm
from .autograd.tensor import Tensor, no_grad
from .env import GridEnvironment, sample_episode
from .evaluation import evaluate_agent
from .metrics import EpisodeRecord, spl, sr
from .policy import PolicyConfig, PolicyInputs, WaypointPolicy
from .rewards import RewardConfig
from .session import NavigationSession, PerceptionConfig, execute_decision

log = logging.getLogger(__name__)

_SEED_MASK = 0xFFFFFFFF


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    num_minibatches: int = 2
    entropy_coef: float = 0.02
    value_coef: float = 0.5
    lr: float = 2.5e-4
    max_grad_norm: float = 0.5
    rollout_steps: int = 150
    chunk_length: int = 10

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.epochs < 1 or self.num_minibatches < 1 or self.chunk_length < 1 or self.rollout_steps < 1:
            raise ValueError("epochs, minibatches, chunk length and rollout size must be positive")


# rollout storage ------------------------------------------------------------


class RolloutBuffer:
    """Waypoint-level transitions for one update window."""

    def __init__(self, capacity: int = 150):
        self.capacity = capacity
        self.clear()

    def clear(self) -> None:
        self.obs: list[PolicyInputs] = []
        self.hidden: list[np.ndarray] = []
        self.actions: list[int] = []
        self.log_probs: list[float] = []
        self.values: list[float] = []
        self.rewards: list[float] = []
        self.dones: list[bool] = []
        self.starts: list[bool] = []

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, obs: PolicyInputs, h_in: np.ndarray, action: int, log_prob: float, value: float,
            reward: float, done: bool, episode_start: bool) -> None:
        if self.full:
            raise TrainingError("rollout buffer is full")
        self.obs.append(obs)
        self.hidden.append(np.asarray(h_in, dtype=np.float32).reshape(-1))
        self.actions.append(int(action))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))
        self.starts.append(bool(episode_start))


def compute_gae(rewards, values, dones, last_value: float, discount: float, gae_lambda: float):
    """Raw (unnormalized) advantages and returns; ``dones[t]`` cuts bootstrapping after step t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    next_value, next_adv = float(last_value), 0.0
    for t in range(n - 1, -1, -1):
        keep = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * keep * next_value - values[t]
        next_adv = delta + discount * gae_lambda * keep * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def gae_advantages(buffer: RolloutBuffer, last_value: float, config: PPOConfig, normalize: bool = True):
    if len(buffer) == 0:
        raise TrainingError("cannot estimate advantages on an empty buffer")
    adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones, last_value,
                           config.discount, config.gae_lambda)
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, ret


# losses ---------------------------------------------------------------------


def clipped_surrogate(log_probs: Tensor, old_log_probs, advantages, clip_epsilon: float,
                      weights=None) -> tuple[Tensor, Tensor]:
    """Negative clipped surrogate (to minimise) and the probability ratio."""
    ratio = T.exp(log_probs - Tensor(np.asarray(old_log_probs, dtype=log_probs.dtype)))
    adv = Tensor(np.asarray(advantages, dtype=log_probs.dtype))
    s1 = ratio * adv
    s2 = T.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * adv
    obj = T.minimum(s1, s2)
    if weights is None:
        return -T.mean(obj), ratio
    w = Tensor(np.asarray(weights, dtype=log_probs.dtype))
    return -T.tsum(obj * w) / float(np.sum(weights)), ratio


@dataclass
class SequenceBatch:
    """Steps of a minibatch laid out time-major: row t * B + b is step t of chunk b."""

    index: np.ndarray  # (L, B) buffer indices, padded entries repeat a valid index
    valid: np.ndarray  # (L, B)
    h0: np.ndarray  # (B, H)


def make_sequence_batch(buffer: RolloutBuffer, chunks: Sequence[tuple[int, int]]) -> SequenceBatch:
    L = max(e - s for s, e in chunks)
    B = len(chunks)
    index = np.zeros((L, B), dtype=np.int64)
    valid = np.zeros((L, B), dtype=bool)
    for b, (s, e) in enumerate(chunks):
        n = e - s
        index[:n, b] = np.arange(s, e)
        index[n:, b] = e - 1
        valid[:n, b] = True
    h0 = np.stack([buffer.hidden[s] for s, _ in chunks])
    return SequenceBatch(index, valid, h0)


def evaluate_sequences(policy: WaypointPolicy, buffer: RolloutBuffer, batch: SequenceBatch):
    """Recompute (masked log-probs, values) for every step of ``batch`` with gradients."""
    L, B = batch.index.shape
    flat = batch.index.reshape(-1)
    geo = np.stack([buffer.obs[i].geo for i in flat])
    spec = np.stack([buffer.obs[i].spec for i in flat])
    ac = np.stack([buffer.obs[i].acoustic for i in flat]) if policy.config.use_acoustic_map else None
    mask = np.stack([buffer.obs[i].mask for i in flat])
    starts = np.array([buffer.starts[i] for i in flat]).reshape(L, B)
    g, b, a = policy.encode(geo, spec, ac)
    parts = [g, b] + ([a] if a is not None else [])
    x = T.concat(parts, axis=1)
    p = policy.params
    gru = {k: p[f"gru.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh")}
    h = Tensor(batch.h0)
    hs = []
    for t in range(L):
        if t > 0 and starts[t].any():
            h = h * Tensor((~starts[t]).astype(np.float32)[:, None])
        h = gru_step(x[t * B : (t + 1) * B], h, gru)
        hs.append(h)
    H = T.concat(hs, axis=0)
    logits = linear(H, p["actor.w"], p["actor.b"])
    values = linear(H, p["critic.w"], p["critic.b"]).reshape(-1)
    log_probs_all = masked_log_softmax(logits, mask)
    return log_probs_all, values, flat


def ppo_loss(policy: WaypointPolicy, buffer: RolloutBuffer, batch: SequenceBatch, advantages, returns,
             config: PPOConfig):
    lp_all, values, flat = evaluate_sequences(policy, buffer, batch)
    actions = np.asarray(buffer.actions)[flat]
    lp = T.take_along_axis(lp_all, actions[:, None], axis=1).reshape(-1)
    w = batch.valid.reshape(-1).astype(np.float32)
    wsum = float(w.sum())
    old = np.asarray(buffer.log_probs)[flat]
    pol_loss, ratio = clipped_surrogate(lp, old, advantages[flat], config.clip_epsilon, w)
    err = values - Tensor(returns[flat].astype(np.float32))
    v_loss = T.tsum(err * err * Tensor(w)) * (0.5 / wsum)
    probs = T.exp(lp_all)
    ent = -T.tsum(T.tsum(probs * lp_all, axis=1) * Tensor(w)) / wsum
    loss = pol_loss + config.value_coef * v_loss - config.entropy_coef * ent
    r = ratio.data[w > 0]
    stats = {
        "policy_loss": float(pol_loss.data),
        "value_loss": float(v_loss.data),
        "entropy": float(ent.data),
        "approx_kl": float(np.mean((r - 1) - np.log(r))),
        "clip_frac": float(np.mean(np.abs(r - 1) > config.clip_epsilon)),
    }
    return loss, stats


def _chunks(n: int, length: int) -> list[tuple[int, int]]:
    return [(s, min(s + length, n)) for s in range(0, n, length)]


def ppo_update(policy: WaypointPolicy, opt_state: OptimizerState, buffer: RolloutBuffer, last_value: float,
               config: PPOConfig, rng: np.random.Generator) -> dict:
    adv, ret = gae_advantages(buffer, last_value, config)
    chunks = _chunks(len(buffer), config.chunk_length)
    snapshot = policy.params.state_dict()
    opt_snapshot = (opt_state.step, {k: v.copy() for k, v in opt_state.m.items()},
                    {k: v.copy() for k, v in opt_state.v.items()})
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(chunks))
        for group in np.array_split(order, min(config.num_minibatches, len(chunks))):
            batch = make_sequence_batch(buffer, [chunks[i] for i in group])
            policy.params.zero_grad()
            loss, stats = ppo_loss(policy, buffer, batch, adv, ret, config)
            if not np.isfinite(loss.data):
                policy.params.load_state_dict(snapshot)
                opt_state.step, opt_state.m, opt_state.v = opt_snapshot
                log.error("non-finite PPO loss; update aborted")
                return {"aborted": True}
            loss.backward()
            grads, norm = clip_by_global_norm(policy.params.grads(), config.max_grad_norm)
            adam_step(policy.params, grads, opt_state)
            stats["grad_norm"] = norm
            history.append(stats)
    out = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    out["aborted"] = False
    return out


# training loop --------------------------------------------------------------


@dataclass
class TrainConfig:
    total_waypoint_steps: int = 300_000
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig.desk)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    planner_limit: int = 10
    sound_mode: str = "heard"  # heard: one named sound; unheard: sample from the train split
    heard_sound: str = "telephone"
    eval_every: int = 20  # updates
    eval_episodes: int = 20
    checkpoint_every: int = 50  # updates

    def __post_init__(self):
        if self.sound_mode not in ("heard", "unheard"):
            raise ValueError("sound_mode must be 'heard' or 'unheard'")
        if self.total_waypoint_steps < 0:
            raise ValueError("total_waypoint_steps must be nonnegative")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "policy":
                d[f.name] = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                d[f.name] = asdict(v)
            else:
                d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if "policy" in d:
            d["policy"] = PolicyConfig.from_dict(d["policy"])
        for name, typ in (("ppo", PPOConfig), ("reward", RewardConfig), ("perception", PerceptionConfig)):
            if name in d:
                d[name] = typ(**d[name])
        return cls(**d)


CURVE_FIELDS = ["update", "waypoint_steps", "episodes", "mean_return", "train_sr", "policy_loss",
                "value_loss", "entropy", "approx_kl", "clip_frac", "val_sr", "val_spl"]


class EpisodeStream:
    """Deterministic sequence of training episodes over a set of environments."""

    def __init__(self, envs: Sequence[GridEnvironment], cfg: TrainConfig, library: SourceLibrary,
                 rng: np.random.Generator):
        if not envs:
            raise TrainingError("no training environments")
        self.envs = envs
        self.cfg = cfg
        self.library = library
        self.rng = rng

    def next_session(self) -> NavigationSession:
        env = self.envs[int(self.rng.integers(len(self.envs)))]
        seed = int(self.rng.integers(2**31))
        start, goal = sample_episode(env, seed)
        if self.cfg.sound_mode == "heard":
            sound = self.library[self.cfg.heard_sound]
        else:
            names = self.library.names("train")
            sound = self.library[names[int(self.rng.integers(len(names)))]]
        distractor = None
        if self.cfg.perception.distractor:
            names = self.library.names("train")
            distractor = self.library[names[int(self.rng.integers(len(names)))]]
        return NavigationSession(env, start, goal, sound, seed=seed, perception=self.cfg.perception,
                                 reward=self.cfg.reward, distractor_sound=distractor)


def bootstrap_value(policy: WaypointPolicy, session: NavigationSession, h: np.ndarray) -> float:
    obs = policy_inputs(session, policy.config)
    geo, spec, ac, _ = policy.stack_inputs([obs])
    with no_grad():
        g, b, a = policy.encode(geo, spec, ac if policy.config.use_acoustic_map else None)
        return float(policy.predict(h, g, b, a).value.data[0])


@dataclass
class TrainResult:
    policy: WaypointPolicy
    curves: list[dict]
    optimizer: OptimizerState
    waypoint_steps: int
    updates: int


def save_training_checkpoint(path, policy: WaypointPolicy, opt: OptimizerState, update: int,
                             waypoint_steps: int, rng_state: dict, cfg: TrainConfig) -> None:
    tensors = dict(policy.params.state_dict())
    for k, v in opt.to_arrays().items():
        tensors[f"__opt__/{k}"] = v
    meta = policy.manifest()
    meta["training"] = {"update": update, "waypoint_steps": waypoint_steps, "rng": rng_state,
                        "config": cfg.to_dict()}
    checkpoint.save(path, tensors, meta)


def load_training_checkpoint(path) -> tuple[WaypointPolicy, OptimizerState | None, dict]:
    tensors, meta = checkpoint.load(path)
    cfg = PolicyConfig.from_dict(meta["config"])
    pol = WaypointPolicy(cfg, meta.get("seed", 0))
    params = {k: v for k, v in tensors.items() if not k.startswith("__opt__/")}
    pol.params.load_state_dict(params)
    opt_arrays = {k[len("__opt__/"):]: v for k, v in tensors.items() if k.startswith("__opt__/")}
    opt = OptimizerState.from_arrays(opt_arrays) if opt_arrays else None
    return pol, opt, meta.get("training", {})


def evaluate_policy(policy: WaypointPolicy, envs: Sequence[GridEnvironment], episodes: int, seed: int,
                    sound: Sound | Sequence[Sound], perception: PerceptionConfig = PerceptionConfig(), limit: int = 10,
                    greedy: bool = False, reward: RewardConfig = RewardConfig()) -> list[EpisodeRecord]:
    agent = WaypointAgent(policy, greedy=greedy, limit=limit)
    return evaluate_agent(agent, envs, episodes, seed, sound, perception, reward)


def train(train_envs: Sequence[GridEnvironment], val_envs: Sequence[GridEnvironment], cfg: TrainConfig,
          out_dir: str | Path | None = None, resume: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    library = SourceLibrary()
    lib_sound = library[cfg.heard_sound] if cfg.sound_mode == "heard" else None
    start_update, steps_done = 0, 0
    rng = np.random.default_rng([cfg.seed & _SEED_MASK, 0x7EA1])
    if resume is not None:
        policy, opt, info = load_training_checkpoint(resume)
        if policy.config != cfg.policy:
            raise TrainingError("checkpoint policy config does not match the run config")
        opt = opt or OptimizerState(lr=cfg.ppo.lr)
        opt.lr = cfg.ppo.lr
        start_update, steps_done = int(info["update"]), int(info["waypoint_steps"])
        rng.bit_generator.state = info["rng"]
    else:
        policy = WaypointPolicy(cfg.policy, cfg.seed)
        opt = OptimizerState(lr=cfg.ppo.lr)
    update_rng = np.random.default_rng([cfg.seed & _SEED_MASK, 0x0DD5, start_update])
    stream = EpisodeStream(train_envs, cfg, library, rng)
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    if out is not None:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        if start_update == 0:
            save_training_checkpoint(ckpt_dir / "update_000000.ckpt", policy, opt, 0, 0,
                                     rng.bit_generator.state, cfg)
    curves: list[dict] = []
    curve_path = out / "curves.csv" if out is not None else None
    if curve_path is not None:
        kept = []
        if start_update > 0 and curve_path.exists():
            # rows past the resume point belong to an abandoned continuation
            with open(curve_path, newline="") as f:
                kept = [r for r in csv.DictReader(f) if int(r["update"]) <= start_update]
        with open(curve_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
            w.writeheader()
            w.writerows(kept)

    agent = WaypointAgent(policy, limit=cfg.planner_limit)
    buffer = RolloutBuffer(cfg.ppo.rollout_steps)
    session: NavigationSession | None = None
    update = start_update
    val_sound = lib_sound or [library[n] for n in library.names("val")]
    while steps_done < cfg.total_waypoint_steps:
        buffer.clear()
        ep_returns, ep_success = [], []
        n_target = min(cfg.ppo.rollout_steps, cfg.total_waypoint_steps - steps_done)
        while len(buffer) < n_target:
            starting = session is None
            if starting:
                session = stream.next_session()
                agent.reset(session)
            decision = agent.decide(session)
            info = agent.last
            _, reward = execute_decision(session, agent, decision)
            buffer.add(info["obs"], info["h_in"], info["index"], info["log_prob"], info["value"],
                       reward, session.done, starting)
            if session.done:
                ep_returns.append(session.episode_return)
                ep_success.append(session.state.success)
                session = None
        steps_done += len(buffer)
        last_value = 0.0 if session is None else bootstrap_value(policy, session, agent.h)
        stats = ppo_update(policy, opt, buffer, last_value, cfg.ppo, update_rng)
        if stats.get("aborted"):
            raise TrainingError(f"PPO update {update} aborted on a non-finite loss")
        update += 1
        row = {
            "update": update,
            "waypoint_steps": steps_done,
            "episodes": len(ep_returns),
            "mean_return": float(np.mean(ep_returns)) if ep_returns else "",
            "train_sr": float(np.mean(ep_success)) if ep_success else "",
            **{k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac")},
            "val_sr": "",
            "val_spl": "",
        }
        last = steps_done >= cfg.total_waypoint_steps
        if val_envs and cfg.eval_every > 0 and (update % cfg.eval_every == 0 or last):
            recs = evaluate_policy(policy, val_envs, cfg.eval_episodes, cfg.seed + update, val_sound,
                                   cfg.perception, cfg.planner_limit)
            row["val_sr"], row["val_spl"] = sr(recs), spl(recs)
        curves.append(row)
        if progress is not None:
            progress(row)
        if curve_path is not None:
            with open(curve_path, "a", newline="") as f:
                csv.DictWriter(f, fieldnames=CURVE_FIELDS).writerow(row)
        if ckpt_dir is not None and (update % cfg.checkpoint_every == 0 or last):
            save_training_checkpoint(ckpt_dir / f"update_{update:06d}.ckpt", policy, opt, update, steps_done,
                                     rng.bit_generator.state, cfg)
    if ckpt_dir is not None:
        save_training_checkpoint(ckpt_dir / "final.ckpt", policy, opt, update, steps_done,
                                 rng.bit_generator.state, cfg)
    return TrainResult(policy, curves, opt, steps_done, update)
