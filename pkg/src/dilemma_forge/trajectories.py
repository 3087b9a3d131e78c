"""Episode records: per-step reward breakdowns and cached score vectors.

A RewardBreakdown splits one step's rewards into environment rewards and the
giver x receiver incentive matrix (diagonal zero: nobody pays themselves).
A Trajectory stacks the steps of one episode together with everything the
gradient estimators need: observations, incentive-head inputs, per-step
emission flags (a giver's row can be suppressed by a budget cap), and the
score vectors of the policies that generated the actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs, nets
from .envs import GameSpec, JointState
from .errors import ContractViolation


@dataclass(frozen=True)
class RewardBreakdown:
    """env: (N,) environment rewards; incentives: (N, N), entry (i, j) is the
    incentive giver i paid receiver j this step."""

    env: np.ndarray
    incentives: np.ndarray

    def __post_init__(self) -> None:
        n = self.env.shape[0]
        if self.incentives.shape != (n, n):
            raise ContractViolation("incentive matrix must be (N, N)")
        if np.any(np.diag(self.incentives) != 0.0):
            raise ContractViolation("self-incentives must be exactly zero")


def total_reward(breakdown: RewardBreakdown, agent: int) -> float:
    """Environment reward plus all incentives received (the combined signal
    an honest recipient learns from)."""
    incoming = breakdown.incentives[:, agent].sum() - breakdown.incentives[agent, agent]
    return float(breakdown.env[agent] + incoming)


@dataclass(frozen=True)
class TrajectoryStep:
    state: JointState
    observations: np.ndarray  # (N, obs_dim), observed before acting
    actions: tuple[int, ...]
    breakdown: RewardBreakdown
    emitted: np.ndarray  # (N,) bool, False where a giver's row was suppressed


@dataclass
class Trajectory:
    """One finished episode with stacked views and lazy caches."""

    spec: GameSpec
    steps: list[TrajectoryStep] = field(default_factory=list)
    _score_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _inc_input_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    episode_return_env: np.ndarray | None = None
    episode_return_total: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def finalize(self) -> None:
        """Stack arrays and freeze the discounted return vectors."""
        if not self.steps:
            raise ContractViolation("cannot finalize an empty trajectory")
        self.actions = np.array([s.actions for s in self.steps], dtype=np.int64)
        self.env_matrix = np.stack([s.breakdown.env for s in self.steps])
        self.incentives = np.stack([s.breakdown.incentives for s in self.steps])
        self.emitted = np.stack([s.emitted for s in self.steps])
        self.observations = np.stack([s.observations for s in self.steps])
        disc = self.spec.discount ** np.arange(len(self.steps))
        totals = self.env_matrix + self.incentives.sum(axis=1)
        self.episode_return_env = disc @ self.env_matrix
        self.episode_return_total = disc @ totals

    def obs_for(self, agent: int) -> np.ndarray:
        return self.observations[:, agent, :]

    def total_rewards_for(self, agent: int) -> np.ndarray:
        """(T,) combined env + received-incentive reward series."""
        return self.env_matrix[:, agent] + self.incentives[:, :, agent].sum(axis=1)

    def incentive_inputs_for(self, giver: int) -> np.ndarray:
        """(T, d) incentive-head inputs: giver obs + one-hot of others' actions."""
        if giver not in self._inc_input_cache:
            rows = [
                nets.incentive_input(
                    step.observations[giver],
                    tuple(a for k, a in enumerate(step.actions) if k != giver),
                    self.spec.n_actions,
                )
                for step in self.steps
            ]
            self._inc_input_cache[giver] = np.stack(rows)
        return self._inc_input_cache[giver]

    def attach_scores(self, agent: int, scores: np.ndarray) -> None:
        self._score_cache[agent] = scores

    def scores_for(self, agent: int) -> np.ndarray:
        """(T, n_params) cached grad log pi of the policy that acted."""
        return self._score_cache[agent]

    def success(self) -> float:
        return envs.success_rate(self.spec, self.actions, self.env_matrix)


def recipients(n_agents: int, giver: int) -> tuple[int, ...]:
    """Receiver ordering of a giver's incentive-head outputs."""
    return tuple(j for j in range(n_agents) if j != giver)


def incentive_cost(trajectory: Trajectory, giver: int, gamma: float) -> float:
    """Discounted total incentive spend of one giver over the episode."""
    per_step = trajectory.incentives[:, giver, :].sum(axis=1)
    disc = gamma ** np.arange(len(trajectory))
    return float(disc @ per_step)
