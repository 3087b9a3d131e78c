"""One training session: the bi-level update loop with mode interceptors.

Each iteration rolls out a batch under the current joint parameters, forms
every recipient's hypothetical policy update, rolls out a lookahead batch
under those hypothetical policies, ascends each giver's incentive parameters
through the lookahead, commits the hypothetical policies, and finally lets
any adaptive adversary take its own controller step on the original batch.
Adversarial modes intercept exactly the pieces they manipulate; everything
else runs the honest path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adversary, manipulation, training
from .adversary import AdversarySettings, AdversaryState
from .envs import GameSpec
from .errors import ConfigurationError
from .manipulation import ManipulationMode
from .nets import ParamVector
from .trajectories import Trajectory
from .training import AgentBundle


@dataclass
class IterationMetrics:
    """Per-episode arrays from the main batch plus per-agent diagnostics."""

    success: np.ndarray
    steps: np.ndarray
    env_returns: np.ndarray
    total_returns: np.ndarray
    grad_norms: np.ndarray
    audit: list[dict] = field(default_factory=list)


class TrainingSession:
    """Owns the agents of one trial and advances them iteration by iteration."""

    def __init__(
        self,
        spec: GameSpec,
        bundles: list[AgentBundle],
        batch_size: int,
        rng: np.random.Generator,
        incentive_cost_weight: float = 1e-2,
        adversary_settings: dict[int, AdversarySettings] | None = None,
    ) -> None:
        if len(bundles) != spec.n_agents:
            raise ConfigurationError(
                f"need {spec.n_agents} agent bundles, got {len(bundles)}"
            )
        if batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        self.spec = spec
        self.bundles = bundles
        self.batch_size = batch_size
        self.rng = rng
        self.incentive_cost_weight = incentive_cost_weight
        self.adversary_settings = dict(adversary_settings or {})
        for i, bundle in enumerate(bundles):
            bundle.mode.validate_for(spec, bundle.incentive_config.r_max)
            if bundle.mode.tag == manipulation.ADMO and i not in self.adversary_settings:
                self.adversary_settings[i] = AdversarySettings()
        self.adversary_states: dict[int, AdversaryState] = {
            i: adversary.init_state(i, bundles[i], settings)
            for i, settings in self.adversary_settings.items()
        }
        self.budgets = {i: s.budget for i, s in self.adversary_settings.items()}

    @property
    def modes(self) -> list[ManipulationMode]:
        return [b.mode for b in self.bundles]

    def train_iteration(self) -> tuple[list[Trajectory], IterationMetrics]:
        spec, bundles, modes = self.spec, self.bundles, self.modes
        n = spec.n_agents

        batch = training.rollout_batch(
            spec, bundles, modes, self.batch_size, self.rng, budgets=self.budgets
        )

        grad_norms = np.zeros(n)
        theta_hats: list[ParamVector] = []
        for j in range(n):
            if manipulation.takes_policy_step(modes[j]):
                grad = training.recipient_gradient(bundles, modes, j, batch)
                grad_norms[j] = float(np.linalg.norm(grad))
                theta_hats.append(
                    training.recipient_update(bundles, modes, j, batch, gradient=grad)
                )
            else:
                theta_hats.append(bundles[j].theta.copy())

        lookahead = training.rollout_batch(
            spec, bundles, modes, self.batch_size, self.rng,
            thetas=theta_hats, budgets=self.budgets,
        )

        for i in range(n):
            if manipulation.commits_via_baseline(modes[i]):
                g_eta = training.giver_gradient(
                    bundles, modes, i, batch, lookahead, self.incentive_cost_weight
                )
                bundles[i].eta.values += bundles[i].lr_incentive * g_eta

        for j in range(n):
            if manipulation.commits_via_baseline(modes[j]) and manipulation.takes_policy_step(modes[j]):
                bundles[j].theta = theta_hats[j]

        audit = [
            adversary.admo_step(self.adversary_states[i], bundles, batch,
                                self.adversary_settings[i])
            for i in sorted(self.adversary_states)
        ]

        return batch, IterationMetrics(
            success=np.array([tr.success() for tr in batch]),
            steps=np.array([len(tr) for tr in batch]),
            env_returns=np.stack([tr.env_matrix.sum(axis=0) for tr in batch]),
            total_returns=np.stack(
                [tr.env_matrix.sum(axis=0) + tr.incentives.sum(axis=(0, 1)) for tr in batch]
            ),
            grad_norms=grad_norms,
            audit=audit,
        )
