"""Shared evaluation loop: every agent sees the same episodes for a given seed."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .audio import Sound
from .env import AgentPose, Cell, GridEnvironment, sample_episode
from .metrics import EpisodeRecord
from .rewards import RewardConfig
from .session import Agent, NavigationSession, PerceptionConfig, run_episode

_SEED_MASK = 0xFFFFFFFF


def episode_plan(envs: Sequence[GridEnvironment], episodes: int, seed: int) -> list[tuple[int, int]]:
    """(environment index, episode seed) pairs; environments are visited round-robin."""
    if not envs:
        raise ValueError("no evaluation environments")
    rng = np.random.default_rng([seed & _SEED_MASK, 0xE7A1])
    return [(k % len(envs), int(rng.integers(2**31))) for k in range(episodes)]


def make_session(env: GridEnvironment, ep_seed: int, sound: Sound, perception: PerceptionConfig = PerceptionConfig(),
                 reward: RewardConfig = RewardConfig(), distractor_sound: Sound | None = None,
                 start: AgentPose | None = None, goal: Cell | None = None) -> NavigationSession:
    if start is None or goal is None:
        start, goal = sample_episode(env, ep_seed)
    return NavigationSession(env, start, goal, sound, seed=ep_seed, perception=perception, reward=reward,
                             distractor_sound=distractor_sound)


def pick_sound(sound: Sound | Sequence[Sound], ep_seed: int) -> Sound:
    """A fixed sound, or one drawn from a list by episode seed."""
    if isinstance(sound, Sound):
        return sound
    if not sound:
        raise ValueError("empty sound list")
    return sound[ep_seed % len(sound)]


def evaluate_agent(agent: Agent, envs: Sequence[GridEnvironment], episodes: int, seed: int,
                   sound: Sound | Sequence[Sound],
                   perception: PerceptionConfig = PerceptionConfig(), reward: RewardConfig = RewardConfig(),
                   distractor_sounds: Sequence[Sound] = (),
                   on_episode: Callable[[NavigationSession, EpisodeRecord], None] | None = None
                   ) -> list[EpisodeRecord]:
    records = []
    for env_idx, ep_seed in episode_plan(envs, episodes, seed):
        target = pick_sound(sound, ep_seed)
        distractor = None
        if perception.distractor:
            pool = [d for d in distractor_sounds if d.name != target.name]
            if not pool:
                raise ValueError("distractor evaluation needs a sound other than the target")
            distractor = pool[(ep_seed // 7) % len(pool)]
        sess = make_session(envs[env_idx], ep_seed, target, perception, reward, distractor)
        rec = run_episode(sess, agent, env_id=str(env_idx))
        if on_episode is not None:
            on_episode(sess, rec)
        records.append(rec)
    return records


def evaluate_seeds(agent_factory: Callable[[], Agent], envs: Sequence[GridEnvironment], seeds: Sequence[int],
                   sound: Sound | Sequence[Sound], episodes_per_seed: int | None = None, **kw) -> list[list[EpisodeRecord]]:
    """One record list per evaluation seed; by default each environment once per seed."""
    n = len(envs) if episodes_per_seed is None else episodes_per_seed
    return [evaluate_agent(agent_factory(), envs, n, s, sound, **kw) for s in seeds]
