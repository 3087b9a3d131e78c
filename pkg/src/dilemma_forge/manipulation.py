"""Strategy-based manipulations, applied as interceptors on the training loop.

An agent's mode decides three things independently: which reward series its
policy learns from, how its actions are chosen, and the sign of its policy
update.  Honest agents learn from the combined env + incentive signal and
ascend it; the manipulation modes each twist exactly one of those knobs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .envs import ER_EXIT_REWARD, STAG_PAYOFF, GameKind, GameSpec, JointState
from .errors import ConfigurationError, ContractViolation
from .trajectories import RewardBreakdown, Trajectory, total_reward

HONEST = "honest"
PARTIAL_COMM = "partial_comm"
FAKE_INCENTIVE = "fake_incentive"
BYPASS = "bypass"
REVERSE = "reverse"
ADMO = "admo"

MODE_TAGS = (HONEST, PARTIAL_COMM, FAKE_INCENTIVE, BYPASS, REVERSE, ADMO)


def max_env_reward(kind: GameKind) -> float:
    return {
        GameKind.ESCAPE_ROOM: ER_EXIT_REWARD,
        GameKind.IPD: 0.0,
        GameKind.STAG_HUNT: STAG_PAYOFF,
    }[kind]


@dataclass(frozen=True)
class ManipulationMode:
    """Tagged per-agent mode.  fake_incentive carries the injected constant;
    bypass in matrix games is an opt-in extension (matrix_noop)."""

    tag: str = HONEST
    fake_incentive: float = 0.0
    matrix_noop: bool = False

    def __post_init__(self) -> None:
        if self.tag not in MODE_TAGS:
            raise ConfigurationError(f"unknown manipulation mode {self.tag!r}")

    def validate_for(self, spec: GameSpec, r_max: float) -> None:
        if self.tag == FAKE_INCENTIVE:
            bound = max(r_max, max_env_reward(spec.kind))
            if not self.fake_incentive > bound:
                raise ConfigurationError(
                    f"fake incentive constant must exceed both r_max and the max "
                    f"env reward ({bound}), got {self.fake_incentive}"
                )
        if self.tag == BYPASS and spec.kind is not GameKind.ESCAPE_ROOM and not self.matrix_noop:
            raise ConfigurationError(
                "bypass in matrix games maps no-op to defect/hare and must be "
                "enabled explicitly via matrix_noop"
            )


def select_reward(
    modes: list[ManipulationMode], breakdown: RewardBreakdown, agent: int
) -> float:
    """The scalar reward agent j's policy learns from this step."""
    if modes[agent].tag == PARTIAL_COMM:
        return float(breakdown.env[agent])
    reward = total_reward(breakdown, agent)
    for i, mode in enumerate(modes):
        if i != agent and mode.tag == FAKE_INCENTIVE:
            reward += mode.fake_incentive
    return reward


def learning_rewards(
    modes: list[ManipulationMode], trajectory: Trajectory, agent: int
) -> np.ndarray:
    """(T,) vectorized select_reward over an episode."""
    if modes[agent].tag == PARTIAL_COMM:
        return trajectory.env_matrix[:, agent].copy()
    rewards = trajectory.total_rewards_for(agent)
    injected = sum(
        mode.fake_incentive
        for i, mode in enumerate(modes)
        if i != agent and mode.tag == FAKE_INCENTIVE
    )
    return rewards + injected


def noop_action(spec: GameSpec, state: JointState, agent: int) -> int:
    """The action that contributes nothing: stay put in the escape room,
    defect/hare in the matrix games."""
    if spec.kind is GameKind.ESCAPE_ROOM:
        assert state.positions is not None
        return state.positions[agent]
    return 1


def select_action(
    mode: ManipulationMode,
    spec: GameSpec,
    config: nets.NetConfig,
    theta: nets.ParamVector,
    state: JointState,
    obs: np.ndarray,
    agent: int,
    rng: np.random.Generator,
) -> int:
    """Bypass agents idle; every other mode samples from its policy."""
    if mode.tag == BYPASS:
        return noop_action(spec, state, agent)
    probs = nets.policy_forward(config, theta, obs)
    return int(rng.choice(len(probs), p=probs))


def update_direction(mode: ManipulationMode) -> int:
    """+1 ascends the selected return, -1 (reverse mode) descends it."""
    return -1 if mode.tag == REVERSE else +1


def takes_policy_step(mode: ManipulationMode) -> bool:
    """Bypass agents never act from their policy, so it is left untouched."""
    return mode.tag != BYPASS


def commits_via_baseline(mode: ManipulationMode) -> bool:
    """Adaptive adversaries update their parameters through their own
    controller rather than the baseline recipient/giver steps."""
    return mode.tag != ADMO


def coalition_feasible(spec: GameSpec, idle_set: set[int]) -> bool:
    """Can the non-idle agents still open the door and exit?  Requires the
    threshold M at the lever plus one agent free to cross."""
    if spec.kind is not GameKind.ESCAPE_ROOM:
        raise ContractViolation("coalition feasibility is an escape-room notion")
    return spec.n_agents - len(idle_set) >= spec.er_threshold + 1
