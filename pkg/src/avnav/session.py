"""One navigation episode: world state, perception, maps, rewards and the decision driver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .audio import (
    BinauralAudio,
    Sound,
    direct_intensity,
    direct_onset_sample,
    direct_window_length,
    render_audio,
    spectrogram,
    synthesize_rir,
)
from .env import (
    HEADING_VECTORS,
    Action,
    AgentPose,
    Cell,
    EpisodeState,
    GridEnvironment,
    geodesic_distance,
    shortest_action_count,
    step,
)
from .mapping import (
    AcousticMap,
    GeometricMap,
    MapFrame,
    PoseDelta,
    local_occupancy_from_scan,
    range_scan,
    register_and_update,
    update_acoustic,
)
from .metrics import EpisodeRecord, WaypointLogEntry
from .planner import (
    DEFAULT_STEP_LIMIT,
    PlanOutcome,
    PlanStatus,
    follow_to_cell,
    random_action,
    run_planner_loop,
)
from .rewards import RewardConfig, step_reward

_SEED_MASK = 0xFFFFFFFF


@dataclass(frozen=True)
class PerceptionConfig:
    mic_noise_sigma: float = 0.0
    scan_noise_sigma: float = 0.0
    distractor: bool = False


@dataclass
class StepLog:
    pose: tuple[int, int, int]  # cell x, cell y, heading after the action
    action: int
    reward: float
    collided: bool


@dataclass
class WaypointLog:
    step_index: int  # number of primitive steps executed before this decision
    delta: tuple[int, int] | None
    target: Cell | None  # map-frame target cell, when the agent chose one
    value: float | None = None
    masked_cells: int | None = None
    status: str = ""


class NavigationSession:
    """Owns the episode state and everything the agent perceives and remembers."""

    def __init__(self, env: GridEnvironment, start: AgentPose, goal: Cell, sound: Sound, *,
                 seed: int = 0, perception: PerceptionConfig = PerceptionConfig(),
                 reward: RewardConfig = RewardConfig(), distractor_sound: Sound | None = None):
        self.env = env.with_source(goal)
        self.goal = goal
        self.sound = sound
        self.perception = perception
        self.reward_config = reward
        self.seed = seed
        self.state = EpisodeState.start(start, goal)
        self.G = GeometricMap.for_env(env)
        self.A = AcousticMap(self.G.cells)
        self.frame = MapFrame(start, self.G.cells // 2)
        self.G.pose = self.frame.pose_to_map(start)
        # separate streams keep planner randomness independent of sensor noise
        ss = np.random.SeedSequence([seed & _SEED_MASK, 0xA5])
        act_ss, audio_ss, scan_ss, place_ss = ss.spawn(4)
        self.rng = np.random.default_rng(act_ss)
        self._audio_rng = np.random.default_rng(audio_ss)
        self._scan_rng = np.random.default_rng(scan_ss)
        self.distractor: tuple[Cell, Sound] | None = None
        if perception.distractor:
            if distractor_sound is None:
                raise ValueError("distractor enabled but no distractor sound given")
            free = [c for c in env.free_cells() if c != goal]
            cell = free[int(np.random.default_rng(place_ss).integers(len(free)))]
            self.distractor = (cell, distractor_sound)
            self._distractor_env = env.with_source(cell)
        self.start_pose = start
        self.shortest_length = geodesic_distance(self.env, start.cell, goal)
        self.shortest_actions = int(shortest_action_count(self.env, start, goal))
        self.episode_return = 0.0
        self.path_length = 0.0
        self.steps: list[StepLog] = []
        self.decisions: list[WaypointLog] = []
        self.waypoint_entries: list[WaypointLogEntry] = []
        self._audio: BinauralAudio | None = None
        self._spec = None
        self._observe(PoseDelta(), collided=False)

    # perception -------------------------------------------------------------
    @property
    def pose(self) -> AgentPose:
        return self.state.pose

    @property
    def done(self) -> bool:
        return self.state.done

    def _responses(self):
        pose = self.state.pose
        rir = synthesize_rir(self.env, self.goal, pose)
        distractors = []
        if self.distractor is not None:
            cell, snd = self.distractor
            distractors.append((synthesize_rir(self._distractor_env, cell, pose), snd))
        return rir, distractors

    def hear(self, length: int | None = None) -> BinauralAudio:
        """Binaural signal at the current pose; repeated calls within one step agree."""
        rir, distractors = self._rirs
        sigma = self.perception.mic_noise_sigma
        rng = np.random.default_rng(self._noise_seed) if sigma > 0 else None
        return render_audio(rir, self.sound, distractors, sigma, rng, length)

    def _current_intensity(self) -> float:
        rir, distractors = self._rirs
        w = direct_window_length(rir.sample_rate)
        onset = min([rir.direct_onset] + [r.direct_onset for r, _ in distractors])
        # the direct window only needs a short prefix; fall back to the full render otherwise
        prefix = self.hear(onset + w + 1)
        n0 = direct_onset_sample(prefix)
        if n0 is not None and n0 + w <= len(prefix.left):
            return direct_intensity(prefix)
        return direct_intensity(self.audio)

    def _observe(self, delta: PoseDelta, collided: bool) -> None:
        sigma = self.perception.scan_noise_sigma
        scan = range_scan(self.env, self.state.pose, noise_sigma=sigma, rng=self._scan_rng if sigma > 0 else None)
        register_and_update(self.G, local_occupancy_from_scan(scan), delta)
        if collided:
            fx, fy = HEADING_VECTORS[self.G.pose.heading]
            self.G.mark_blocked((self.G.pose.cell[0] + fx, self.G.pose.cell[1] + fy))
        self._rirs = self._responses()
        self._noise_seed = int(self._audio_rng.integers(2**63))
        self._audio = None
        self._spec = None
        self.intensity = self._current_intensity()
        update_acoustic(self.A, self.G.pose.cell, self.intensity)

    @property
    def audio(self) -> BinauralAudio:
        if self._audio is None:
            self._audio = self.hear()
        return self._audio

    def spectrogram(self) -> np.ndarray:
        if self._spec is None:
            self._spec = spectrogram(self.audio).data
        return self._spec

    # acting -----------------------------------------------------------------
    def act(self, action: Action) -> float:
        action = Action(action)
        prev = geodesic_distance(self.env, self.state.pose.cell, self.goal)
        _, collided = step(self.env, self.state, action)
        new = geodesic_distance(self.env, self.state.pose.cell, self.goal)
        r = step_reward(prev, new, self.state.success, self.env.cell_size, self.reward_config)
        self.episode_return += r
        if action == Action.MOVE_FORWARD and not collided:
            self.path_length += self.env.cell_size
        p = self.state.pose
        self.steps.append(StepLog((p.cell[0], p.cell[1], p.heading), int(action), r, collided))
        if not self.state.done:
            self._observe(PoseDelta.from_action(action, collided), collided)
        return r

    def goal_distance(self) -> float:
        return geodesic_distance(self.env, self.state.pose.cell, self.goal)

    def log_decision(self, delta: tuple[int, int] | None, target: Cell | None, value=None,
                     masked_cells=None) -> WaypointLog:
        entry = WaypointLog(len(self.steps), delta, target, value, masked_cells)
        self.decisions.append(entry)
        if delta is not None:
            self.waypoint_entries.append(WaypointLogEntry(self.state.pose.cell, delta, self.goal_distance()))
        return entry

    def record(self, env_id: str = "") -> EpisodeRecord:
        moves = sum(1 for s in self.steps if s.action != int(Action.STOP))
        return EpisodeRecord(
            success=self.state.success,
            path_length=self.path_length,
            shortest_length=self.shortest_length,
            action_count=moves,
            shortest_action_count=self.shortest_actions,
            waypoints=list(self.waypoint_entries),
            episode_return=self.episode_return,
            env_id=env_id,
            seed=self.seed,
            cell_size=self.env.cell_size,
        )


# decisions ------------------------------------------------------------------


@dataclass
class Decision:
    """What an agent wants next: a policy waypoint, an explicit map cell, or one primitive action."""

    waypoint: object | None = None  # policy.Waypoint
    target: Cell | None = None
    action: Action | None = None
    limit: int = DEFAULT_STEP_LIMIT
    value: float | None = None
    masked_cells: int | None = None
    info: dict = field(default_factory=dict)


class Agent(Protocol):
    name: str

    def reset(self, session: NavigationSession) -> None: ...

    def decide(self, session: NavigationSession) -> Decision: ...

    def observe_outcome(self, session: NavigationSession, outcome: PlanOutcome | None, reward: float) -> None: ...

    def should_stop(self, session: NavigationSession) -> bool: ...


def execute_decision(session: NavigationSession, agent: Agent, decision: Decision) -> tuple[PlanOutcome, float]:
    if decision.action is not None:
        entry = session.log_decision(None, None, decision.value, decision.masked_cells)
        a = Action(decision.action)
        out = PlanOutcome(PlanStatus.STOPPED if a == Action.STOP else PlanStatus.REACHED)
        out._record(a, session.act(a))
    elif decision.waypoint is not None:
        wp = decision.waypoint
        entry = session.log_decision(wp.as_tuple(), None, decision.value, decision.masked_cells)
        out = run_planner_loop(session, wp, decision.limit)
    elif decision.target is not None:
        entry = session.log_decision(None, decision.target, decision.value, decision.masked_cells)
        out = follow_to_cell(session, decision.target, decision.limit, interrupt=agent.should_stop)
    else:
        entry = session.log_decision(None, None)
        out = PlanOutcome(PlanStatus.NO_PATH)
        out._record(*random_action(session))
    entry.status = out.status.value
    return out, out.reward_accumulated


def run_episode(session: NavigationSession, agent: Agent, env_id: str = "") -> EpisodeRecord:
    agent.reset(session)
    while not session.done:
        if agent.should_stop(session):
            session.log_decision(None, None)
            session.act(Action.STOP)
            break
        decision = agent.decide(session)
        outcome, reward = execute_decision(session, agent, decision)
        agent.observe_outcome(session, outcome, reward)
    return session.record(env_id)
