"""The learned waypoint agent as an episode-driver participant."""

from __future__ import annotations

import numpy as np

from .planner import DEFAULT_STEP_LIMIT, PlanOutcome
from .policy import (
    PolicyConfig,
    PolicyInputs,
    WaypointPolicy,
    acoustic_crop,
    action_mask,
    geometric_crop,
    normalize_spectrogram,
    waypoint_from_index,
)
from .session import Decision, NavigationSession

_SEED_MASK = 0xFFFFFFFF


def policy_inputs(session: NavigationSession, cfg: PolicyConfig) -> PolicyInputs:
    G = session.G
    return PolicyInputs(
        geo=geometric_crop(G, cfg).astype(np.float32),
        spec=normalize_spectrogram(session.spectrogram()),
        acoustic=acoustic_crop(session.A, G.pose, cfg.acoustic_crop),
        mask=action_mask(G, cfg.action_size).ravel(),
    )


class WaypointAgent:
    """Runs a ``WaypointPolicy`` with its own recurrent state and sampling stream."""

    def __init__(self, policy: WaypointPolicy, greedy: bool = False, limit: int = DEFAULT_STEP_LIMIT,
                 name: str = "av-wan"):
        self.policy = policy
        self.greedy = greedy
        self.limit = limit
        self.name = name
        self.h = policy.initial_state()
        self.rng = np.random.default_rng(0)
        self.last: dict = {}

    def reset(self, session: NavigationSession) -> None:
        self.h = self.policy.initial_state()
        self.rng = np.random.default_rng([session.seed & _SEED_MASK, 0x3A7])

    def decide(self, session: NavigationSession) -> Decision:
        cfg = self.policy.config
        obs = policy_inputs(session, cfg)
        idx, logp, value, h, probs = self.policy.act(obs, self.h, self.rng, self.greedy)
        self.last = {"obs": obs, "h_in": self.h, "index": idx, "log_prob": logp, "value": value}
        self.h = h
        masked = int(cfg.num_actions - obs.mask.sum())
        return Decision(waypoint=waypoint_from_index(idx, cfg.action_size), limit=self.limit,
                        value=value, masked_cells=masked)

    def observe_outcome(self, session: NavigationSession, outcome: PlanOutcome | None, reward: float) -> None:
        pass

    def should_stop(self, session: NavigationSession) -> bool:
        return False
