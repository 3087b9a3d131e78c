"""The three social-dilemma Markov games behind a single episodic interface.

Escape Room ER(N, M): positions {Start, Lever, Door}; an action names the
target position, so re-selecting the current position is a free no-op.  Any
actual movement costs -1.  The door is open exactly while at least M agents
stand at the lever; an agent standing at the door while it is open exits with
+10 and terminates the episode for everyone.

Iterated Prisoner's Dilemma: memory-1, each agent sees the previous joint
action (or an initial marker).  Pair rewards follow the classic table
(C,C)->(-1,-1), (C,D)->(-3,0), (D,C)->(0,-3), (D,D)->(-2,-2); for more than
two agents each agent receives the mean of its pairwise payoffs.

Stag Hunt: memory-1 like IPD.  A stag pays +5.0 per agent but only when all
agents hunt it together; a hare always pays +1.0; a failed stag pays 0.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractViolation


class GameKind(str, Enum):
    ESCAPE_ROOM = "er"
    IPD = "ipd"
    STAG_HUNT = "stag_hunt"


# Escape Room positions double as the action indices ("go to position k").
ER_START, ER_LEVER, ER_DOOR = 0, 1, 2
ER_POSITION_NAMES = ("start", "lever", "door")

# Matrix-game action indices.
COOPERATE, DEFECT = 0, 1
STAG, HARE = 0, 1

# Pairwise IPD payoff to the row agent: rows/cols indexed by (own, other) action.
_IPD_PAYOFF = np.array([[-1.0, -3.0], [0.0, -2.0]])

STAG_PAYOFF = 5.0
HARE_PAYOFF = 1.0
FAILED_STAG_PAYOFF = 0.0
ER_EXIT_REWARD = 10.0
ER_MOVE_COST = -1.0


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of one game instance.

    er_threshold (M) is only meaningful for the escape room and must satisfy
    1 <= M < N.  Matrix games support 2..4 agents (the observation encoding
    is a one-hot over all joint actions).
    """

    kind: GameKind
    n_agents: int
    er_threshold: int = 0
    horizon: int = 5
    discount: float = 0.95

    def __post_init__(self) -> None:
        if self.n_agents < 2:
            raise ConfigurationError(f"n_agents must be >= 2, got {self.n_agents}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if not (0.0 <= self.discount < 1.0):
            raise ConfigurationError(f"discount must be in [0, 1), got {self.discount}")
        if self.kind is GameKind.ESCAPE_ROOM:
            if not (1 <= self.er_threshold < self.n_agents):
                raise ConfigurationError(
                    f"escape room needs 1 <= er_threshold < n_agents, got "
                    f"M={self.er_threshold}, N={self.n_agents}"
                )
        else:
            if self.n_agents > 4:
                raise ConfigurationError(
                    f"{self.kind.value} supports at most 4 agents, got {self.n_agents}"
                )

    @property
    def n_actions(self) -> int:
        return 3 if self.kind is GameKind.ESCAPE_ROOM else 2

    @property
    def obs_dim(self) -> int:
        if self.kind is GameKind.ESCAPE_ROOM:
            # own position (3) + door flag (1) + lever-count bucket (N+1)
            return 3 + 1 + self.n_agents + 1
        # previous joint action one-hot incl. the initial marker
        return 2**self.n_agents + 1


@dataclass(frozen=True)
class JointState:
    """One joint state; fields are populated per game kind.

    Escape room uses positions/door_open; matrix games use prev_actions with
    None marking the initial state.  step_index counts completed steps.
    """

    step_index: int
    positions: tuple[int, ...] | None = None
    door_open: bool = False
    prev_actions: tuple[int, ...] | None = None


@dataclass(frozen=True)
class StepOutcome:
    next_state: JointState
    env_rewards: np.ndarray
    terminal: bool


def reset(spec: GameSpec, seed: int = 0) -> JointState:
    """Initial joint state.  All three games start deterministically; the
    seed is accepted for interface uniformity and ignored."""
    del seed
    if spec.kind is GameKind.ESCAPE_ROOM:
        return JointState(
            step_index=0,
            positions=(ER_START,) * spec.n_agents,
            door_open=False,
        )
    return JointState(step_index=0, prev_actions=None)


def is_terminal(spec: GameSpec, state: JointState) -> bool:
    if state.step_index >= spec.horizon:
        return True
    if spec.kind is GameKind.ESCAPE_ROOM:
        assert state.positions is not None
        return state.door_open and ER_DOOR in state.positions
    return False


def step(spec: GameSpec, state: JointState, actions: tuple[int, ...]) -> StepOutcome:
    """Advance the joint state by one simultaneous move."""
    if is_terminal(spec, state):
        raise ContractViolation("step() called on a terminal state")
    if len(actions) != spec.n_agents:
        raise ContractViolation(
            f"expected {spec.n_agents} actions, got {len(actions)}"
        )
    for a in actions:
        if not (0 <= a < spec.n_actions):
            raise ContractViolation(f"action {a} out of range [0, {spec.n_actions})")

    if spec.kind is GameKind.ESCAPE_ROOM:
        return _step_escape_room(spec, state, actions)
    return _step_matrix_game(spec, state, actions)


def _step_escape_room(
    spec: GameSpec, state: JointState, actions: tuple[int, ...]
) -> StepOutcome:
    assert state.positions is not None
    old_pos = np.asarray(state.positions)
    new_pos = np.asarray(actions)
    rewards = np.where(new_pos != old_pos, ER_MOVE_COST, 0.0)
    door_open = int(np.count_nonzero(new_pos == ER_LEVER)) >= spec.er_threshold
    exited = door_open & (new_pos == ER_DOOR)
    rewards = rewards + np.where(exited, ER_EXIT_REWARD, 0.0)
    next_state = JointState(
        step_index=state.step_index + 1,
        positions=tuple(int(p) for p in new_pos),
        door_open=door_open,
    )
    terminal = bool(exited.any()) or next_state.step_index >= spec.horizon
    return StepOutcome(next_state, rewards, terminal)


def _step_matrix_game(
    spec: GameSpec, state: JointState, actions: tuple[int, ...]
) -> StepOutcome:
    acts = np.asarray(actions)
    if spec.kind is GameKind.IPD:
        # Mean of pairwise table payoffs; reduces to the plain table at N=2.
        rewards = np.array(
            [
                float(np.mean([_IPD_PAYOFF[acts[i], acts[j]]
                               for j in range(spec.n_agents) if j != i]))
                for i in range(spec.n_agents)
            ]
        )
    else:
        all_stag = bool(np.all(acts == STAG))
        rewards = np.where(
            acts == HARE,
            HARE_PAYOFF,
            STAG_PAYOFF if all_stag else FAILED_STAG_PAYOFF,
        ).astype(float)
    next_state = JointState(step_index=state.step_index + 1, prev_actions=actions)
    return StepOutcome(next_state, rewards, next_state.step_index >= spec.horizon)


def joint_action_index(spec: GameSpec, prev_actions: tuple[int, ...] | None) -> int:
    """Index of a previous joint action in the observation one-hot; 0 is the
    initial marker, binary encoding (agent 0 most significant) shifted by 1."""
    if prev_actions is None:
        return 0
    idx = 0
    for a in prev_actions:
        idx = idx * 2 + a
    return idx + 1


def observe(spec: GameSpec, state: JointState, agent_id: int) -> np.ndarray:
    """Fixed-length observation encoding for one agent."""
    if not (0 <= agent_id < spec.n_agents):
        raise ContractViolation(f"agent_id {agent_id} out of range")
    obs = np.zeros(spec.obs_dim)
    if spec.kind is GameKind.ESCAPE_ROOM:
        assert state.positions is not None
        obs[state.positions[agent_id]] = 1.0
        obs[3] = 1.0 if state.door_open else 0.0
        lever_count = sum(1 for p in state.positions if p == ER_LEVER)
        obs[4 + lever_count] = 1.0
    else:
        obs[joint_action_index(spec, state.prev_actions)] = 1.0
    return obs


def success_rate(spec: GameSpec, actions: np.ndarray, env_rewards: np.ndarray) -> float:
    """Normalized task achievement for one finished episode.

    actions: (T, N) int array of the joint actions taken.
    env_rewards: (T, N) float array of environment rewards.

    Escape room: 1.0 iff some agent exited through the open door (the only
    source of a reward >= +9).  IPD: fraction of steps with full mutual
    cooperation.  Stag hunt: mean per-step team reward normalized by the
    stag payoff, clamped to [0, 1].
    """
    actions = np.asarray(actions)
    env_rewards = np.asarray(env_rewards)
    if len(actions) == 0:
        return 0.0
    if spec.kind is GameKind.ESCAPE_ROOM:
        return 1.0 if bool((env_rewards >= ER_EXIT_REWARD + ER_MOVE_COST).any()) else 0.0
    if spec.kind is GameKind.IPD:
        return float(np.mean(np.all(actions == COOPERATE, axis=1)))
    per_step_mean = env_rewards.mean(axis=1)
    return float(np.clip(np.mean(per_step_mean) / STAG_PAYOFF, 0.0, 1.0))
