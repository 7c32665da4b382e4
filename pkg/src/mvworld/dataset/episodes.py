"""Episode generation: scripted plans, controlled per-step perturbation,
success/failure labeling, and exact replay consistency.

An episode holds I frames per camera view, I action rows (the action at the
final frame is recorded but its effect falls beyond the episode), and the I
ground-truth world states. States are stored for evaluation oracles only;
models never see them.

Failure episodes come from running a goal-directed plan while independently
replacing each agent's action with a uniformly random legal action with a
fixed per-step probability, so failures stay near-plausible rather than pure
noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..seeding import derive, np_rng
from ..worldsim import (
    AgentAction,
    Direction,
    WorldConfig,
    WorldState,
    init_world,
    render,
    step,
)
from .actions import (
    ActionTensor,
    AgentType,
    random_world_action,
    typed_from_world_action,
    unify_actions,
)


def default_agent_types(num_agents: int) -> tuple[AgentType, ...]:
    """Alternate controller types so heterogeneity is always exercised."""
    return tuple(AgentType.A if k % 2 == 0 else AgentType.B for k in range(num_agents))


class Plan(Protocol):
    """Scripted action policy with a success predicate."""

    def actions(
        self, config: WorldConfig, state: WorldState, tick: int, rng: np.random.Generator
    ) -> list[AgentAction]: ...

    def goal_reached(self, config: WorldConfig, state: WorldState) -> bool: ...


def _chebyshev(a, b) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def rendezvous_goal(config: WorldConfig, state: WorldState) -> bool:
    """Every agent sits adjacent (Chebyshev <= 1) to its assigned landmark."""
    if not state.landmark_positions:
        return False
    for k, pos in enumerate(state.agent_positions):
        target = state.landmark_positions[k % len(state.landmark_positions)]
        if _chebyshev(pos, target) > 1:
            return False
    return True


@dataclass
class GoalReachPlan:
    """Greedy navigation: each agent closes its axis gaps to its landmark.

    When both axes have a gap, the preferred axis alternates with tick parity
    so agents wiggle around blockers instead of deadlocking. Moves use
    intensity 1.0 while the gap exceeds 2 cells and 0.5 otherwise, so both
    intensity levels appear in clean data.
    """

    def actions(self, config, state, tick, rng):
        out = []
        n_land = len(state.landmark_positions)
        for k, pos in enumerate(state.agent_positions):
            if n_land == 0:
                out.append(AgentAction(Direction.STAY, 0.0))
                continue
            target = state.landmark_positions[k % n_land]
            dx = target[0] - pos[0]
            dy = target[1] - pos[1]
            if _chebyshev(pos, target) <= 1:
                out.append(AgentAction(Direction.STAY, 0.0))
                continue
            use_x = dx != 0 and (dy == 0 or (tick + k) % 2 == 0)
            if use_x:
                direction = Direction.RIGHT if dx > 0 else Direction.LEFT
                gap = abs(dx)
            else:
                direction = Direction.DOWN if dy > 0 else Direction.UP
                gap = abs(dy)
            out.append(AgentAction(direction, 1.0 if gap > 2 else 0.5))
        return out

    def goal_reached(self, config, state):
        return rendezvous_goal(config, state)


@dataclass
class RandomPlan:
    """Uniformly random legal action per agent per step."""

    def actions(self, config, state, tick, rng):
        return [random_world_action(rng) for _ in range(config.num_agents)]

    def goal_reached(self, config, state):
        return rendezvous_goal(config, state)


@dataclass
class Episode:
    """One generated trajectory: per-view frames, actions, ground-truth states."""

    world_config: WorldConfig
    frames: tuple[np.ndarray, ...]  # per view: (I, H_c, W_c, 3) uint8
    actions: ActionTensor
    states: tuple[WorldState, ...] | None
    seed: int
    success_flag: bool

    def __post_init__(self):
        self.frames = tuple(np.ascontiguousarray(f, dtype=np.uint8) for f in self.frames)
        if len(self.frames) != self.world_config.num_views:
            raise ValueError("frame view count must match the camera list")
        lengths = {f.shape[0] for f in self.frames}
        if len(lengths) != 1:
            raise ValueError("all views must share the same frame count")
        if self.actions.num_frames != self.num_frames:
            raise ValueError("action rows must match the frame count")
        if self.states is not None and len(self.states) != self.num_frames:
            raise ValueError("state records must match the frame count")

    @property
    def num_frames(self) -> int:
        return self.frames[0].shape[0]

    @property
    def num_views(self) -> int:
        return len(self.frames)


def generate_episode(
    config: WorldConfig,
    plan: Plan,
    perturb_prob: float,
    length: int,
    seed: int,
    agent_types: Sequence[AgentType] | None = None,
) -> Episode:
    """Roll a plan through the world with independent per-agent perturbation.

    At every step, each agent's planned action is replaced by a uniformly
    random legal action with probability `perturb_prob` (constant across
    steps). Deterministic given (config, plan, perturb_prob, length, seed).
    """
    if not 0.0 <= perturb_prob <= 1.0:
        raise ValueError("perturb_prob must lie in [0, 1]")
    if length < 1:
        raise ValueError("episode length must be >= 1")
    types = tuple(agent_types) if agent_types is not None else default_agent_types(config.num_agents)
    if len(types) != config.num_agents:
        raise ValueError("agent_types length must match num_agents")

    rng = np_rng(seed, "episode")
    state = init_world(config, derive(seed, "world-init"))
    states: list[WorldState] = [state]
    typed_rows = []
    for tick in range(length):
        planned = plan.actions(config, states[-1], tick, rng)
        if len(planned) != config.num_agents:
            raise ValueError("plan returned the wrong number of actions")
        executed: list[AgentAction] = []
        for action in planned:
            if perturb_prob > 0.0 and rng.random() < perturb_prob:
                action = random_world_action(rng)
            executed.append(action)
        typed_rows.append([typed_from_world_action(a, t) for a, t in zip(executed, types)])
        if tick < length - 1:
            states.append(step(config, states[-1], executed))

    actions = unify_actions(typed_rows, types)
    frames = tuple(
        np.stack([render(config, s, cam) for s in states]) for cam in config.cameras
    )
    return Episode(
        world_config=config,
        frames=frames,
        actions=actions,
        states=tuple(states),
        seed=seed,
        success_flag=plan.goal_reached(config, states[-1]),
    )


def replay_states(episode: Episode) -> tuple[WorldState, ...]:
    """Re-run the stored actions from states[0]; must reproduce states exactly."""
    if episode.states is None:
        raise ValueError("episode carries no ground-truth states")
    config = episode.world_config
    out = [episode.states[0]]
    for i in range(episode.num_frames - 1):
        out.append(step(config, out[-1], episode.actions.world_actions(i)))
    return tuple(out)
