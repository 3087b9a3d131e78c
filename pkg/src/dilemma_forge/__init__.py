"""dilemma-forge: incentive-mediated multi-agent RL in social dilemmas,
with strategy-based manipulations and an adaptive multi-objective adversary."""

__version__ = "0.1.0"

from .adversary import (
    AdversarySettings,
    AdversaryState,
    combine,
    incentive_margin_loss,
    solve_pareto_weights,
    welfare_steering_loss,
)
from .envs import GameKind, GameSpec, JointState, StepOutcome, observe, reset, step, success_rate
from .errors import ConfigurationError, ContractViolation
from .harness import (
    AgentSpec,
    ExperimentConfig,
    RunRecord,
    Summary,
    aggregate,
    convergence_episode,
    run_trial,
)
from .manipulation import ManipulationMode, coalition_feasible, select_reward, update_direction
from .nets import NetConfig, ParamVector, incentive_forward, init_params, policy_forward, score
from .session import TrainingSession
from .trajectories import RewardBreakdown, Trajectory, incentive_cost, total_reward
from .training import AgentBundle, RewardSelector, giver_gradient, policy_gradient, recipient_update
