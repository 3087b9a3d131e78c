"""Adaptive multi-objective adversary controller.

The adversary optimizes two differentiable surrogate losses over its joint
parameter vector omega = [policy params, incentive params]:

* a margin loss: negated discounted gap between its own combined reward and
  the mean of everyone else's, plus a spend penalty on incentives given, and
* a welfare loss: team welfare scaled by a sign (+1 boosts, -1 wrecks) plus a
  squared parameter-drift penalty against a reference policy snapshot.

Each controller step combines the two loss gradients with min-norm weights
on the floor-constrained simplex (a 3x3 KKT solve), clips, and applies one
AdamW descent step.  Reference refreshes, EMA trackers, floor adaptation and
the per-episode incentive budget cap round out the loop; every iteration
appends one audit record.

The policy segments of both gradients are score-function estimates over the
training batch; the incentive segments are exact pathways through the
incentive head (the adversary's emissions enter other agents' rewards
directly), so the combined direction mixes the two estimator kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import manipulation, nets, training
from .errors import ConfigurationError
from .nets import ParamVector
from .trajectories import Trajectory, incentive_cost, recipients


@dataclass(frozen=True)
class AdversarySettings:
    """Controller knobs; defaults target desk-scale runs."""

    welfare_sign: int = -1
    spend_penalty: float = 1e-2
    drift_weight: float = 0.01
    drift_weight_override: float = 0.05
    drift_trigger: float = 0.5
    floors_init: tuple[float, float] = (0.1, 0.1)
    floor_gain: float = 1.0
    floor_cap: float = 0.5
    floor_sum_cap: float = 0.9
    refresh_period: int = 50
    budget: float = 20.0
    clip_norm: float = 1.0
    ema_decay: float = 0.9
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self) -> None:
        if self.welfare_sign not in (+1, -1):
            raise ConfigurationError("welfare_sign must be +1 or -1")
        if self.spend_penalty < 0 or self.drift_weight < 0:
            raise ConfigurationError("loss weights must be >= 0")
        c1, c2 = self.floors_init
        if not (0 <= c1 <= self.floor_cap and 0 <= c2 <= self.floor_cap):
            raise ConfigurationError(f"floors must lie in [0, {self.floor_cap}]")
        if c1 + c2 > self.floor_sum_cap:
            raise ConfigurationError("floor sum exceeds the feasibility cap")
        if self.refresh_period < 1:
            raise ConfigurationError("refresh_period must be >= 1")
        if self.budget < 0:
            raise ConfigurationError("budget must be >= 0")
        if not (0 < self.ema_decay < 1):
            raise ConfigurationError("ema_decay must be in (0, 1)")


@dataclass
class AdversaryState:
    """Mutable controller state for one adversary."""

    agent: int
    theta_ref: np.ndarray
    floors: tuple[float, float]
    lambda_d: float
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int = 0
    iteration: int = 0
    ema_success: float | None = None
    ema_incentive_variance: float | None = None
    audit: list[dict] = field(default_factory=list)


def init_state(agent: int, bundle: training.AgentBundle, settings: AdversarySettings) -> AdversaryState:
    n_omega = bundle.theta.n_params + bundle.eta.n_params
    return AdversaryState(
        agent=agent,
        theta_ref=bundle.theta.values.copy(),
        floors=settings.floors_init,
        lambda_d=settings.drift_weight,
        adam_m=np.zeros(n_omega),
        adam_v=np.zeros(n_omega),
    )


def drift_penalty(theta: ParamVector, theta_ref: np.ndarray) -> float:
    """Half squared distance to the reference policy parameters."""
    diff = theta.values - theta_ref
    return 0.5 * float(diff @ diff)


def _eta_pathway_gradient(
    batch: list[Trajectory],
    weights: np.ndarray,
    bundle: training.AgentBundle,
    agent: int,
    coefficient: float,
) -> np.ndarray:
    """Sum over steps of coefficient * gamma^t * d(sum_j incentives to j)/d_eta,
    restricted to emissions that were actually live (not budget-suppressed)."""
    spec = batch[0].spec
    recs = recipients(spec.n_agents, agent)
    grad = np.zeros(bundle.eta.n_params)
    for wi, tr in zip(weights, batch):
        disc = spec.discount ** np.arange(len(tr))
        cot = coefficient * np.tile(disc[:, None], (1, len(recs)))
        cot *= tr.emitted[:, agent, :][:, recs]
        grad += wi * nets.bounded_vjp_sum(
            bundle.incentive_config, bundle.eta, tr.incentive_inputs_for(agent), cot
        )
    return grad


def incentive_margin_loss(
    batch: list[Trajectory],
    bundles: list[training.AgentBundle],
    agent: int,
    spend_penalty: float,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Negated discounted margin of the adversary over the mean of the others,
    plus the spend penalty.  Returns (scalar, gradient over omega)."""
    spec = batch[0].spec
    n = spec.n_agents
    if n < 2:
        raise ConfigurationError("margin loss needs at least two agents")
    gamma = spec.discount
    w = training._normalized_weights(batch, weights)

    def margin_series(tr: Trajectory) -> np.ndarray:
        totals = np.stack([tr.total_rewards_for(j) for j in range(n)], axis=1)
        others = (totals.sum(axis=1) - totals[:, agent]) / (n - 1)
        return totals[:, agent] - others

    margin = 0.0
    cost = 0.0
    for wi, tr in zip(w, batch):
        disc = gamma ** np.arange(len(tr))
        margin += wi * float(disc @ margin_series(tr))
        cost += wi * incentive_cost(tr, agent, gamma)
    scalar = -margin + spend_penalty * cost

    g_theta = -training.batch_policy_gradient(batch, agent, margin_series, gamma, weights=w)
    g_eta = _eta_pathway_gradient(
        batch, w, bundles[agent], agent, 1.0 / (n - 1) + spend_penalty
    )
    return scalar, np.concatenate([g_theta, g_eta])


def welfare_steering_loss(
    batch: list[Trajectory],
    bundles: list[training.AgentBundle],
    agent: int,
    theta_ref: np.ndarray,
    sign: int,
    drift_weight: float,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """-sign * discounted team welfare + drift penalty against the reference.
    Returns (scalar, gradient over omega)."""
    spec = batch[0].spec
    n = spec.n_agents
    gamma = spec.discount
    w = training._normalized_weights(batch, weights)

    def welfare_series(tr: Trajectory) -> np.ndarray:
        return np.stack([tr.total_rewards_for(j) for j in range(n)], axis=1).sum(axis=1)

    welfare = sum(
        wi * float((gamma ** np.arange(len(tr))) @ welfare_series(tr))
        for wi, tr in zip(w, batch)
    )
    proxy = drift_penalty(bundles[agent].theta, theta_ref)
    scalar = -sign * welfare + drift_weight * proxy

    g_theta = -sign * training.batch_policy_gradient(
        batch, agent, welfare_series, gamma, weights=w
    )
    g_theta = g_theta + drift_weight * (bundles[agent].theta.values - theta_ref)
    g_eta = _eta_pathway_gradient(batch, w, bundles[agent], agent, float(-sign))
    return scalar, np.concatenate([g_theta, g_eta])


class PairWeights(NamedTuple):
    alpha1: float
    alpha2: float
    degenerate: bool


def _project_to_segment(alpha1: float, floors: tuple[float, float]) -> tuple[float, float]:
    a1 = min(max(alpha1, floors[0]), 1.0 - floors[1])
    return a1, 1.0 - a1


def solve_pareto_weights(
    g_inc: np.ndarray, g_pol: np.ndarray, floors: tuple[float, float]
) -> PairWeights:
    """Min-norm combination weights on {a1 + a2 = 1, a_i >= c_i}.

    Solves the 3x3 KKT system for the floor-shifted weights in least-squares
    form, maps back, then projects onto the feasible segment (the objective
    is a 1-D convex quadratic there, so clamping preserves optimality).
    Degenerate inputs (both gradients zero, or identical gradients making the
    objective constant) return the floor-projected midpoint with a flag.
    """
    if floors[0] + floors[1] > 1.0:
        raise ConfigurationError("floors are infeasible: c1 + c2 > 1")
    g11 = float(g_inc @ g_inc)
    g12 = float(g_inc @ g_pol)
    g22 = float(g_pol @ g_pol)
    scale = max(g11, g22)
    if scale == 0.0 or (g11 - 2.0 * g12 + g22) <= 1e-12 * scale:
        a1, a2 = _project_to_segment(0.5, floors)
        return PairWeights(a1, a2, True)

    # Scaling the Gram matrix rescales only the multiplier, not the weights,
    # and keeps the bordered system well conditioned for extreme gradients.
    gram = np.array([[g11, g12], [g12, g22]]) / scale
    if gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2 <= 1e-12:
        gram = gram + 1e-10 * np.eye(2)
    c = np.asarray(floors, dtype=np.float64)
    m = np.zeros((3, 3))
    m[:2, :2] = gram
    m[:2, 2] = 1.0
    m[2, :2] = 1.0
    rhs = np.concatenate([-gram @ c, [1.0 - c.sum()]])
    shifted = np.linalg.solve(m @ m.T, m @ rhs)[:2]
    a1, a2 = _project_to_segment(float(c[0] + shifted[0]), floors)
    return PairWeights(a1, a2, False)


def combine(alpha: tuple[float, float], g_inc: np.ndarray, g_pol: np.ndarray) -> np.ndarray:
    """The update direction: the alpha-weighted combination of the gradients."""
    return alpha[0] * g_inc + alpha[1] * g_pol


def update_floors(
    settings: AdversarySettings, success_decline: float, incentive_variance_norm: float
) -> tuple[float, float]:
    """Raise the welfare-objective floor on stalled/declining success and the
    margin-objective floor on volatile incentive emission."""
    c1_init, c2_init = settings.floors_init
    c1 = min(max(c1_init + settings.floor_gain * incentive_variance_norm, c1_init),
             settings.floor_cap)
    c2 = min(max(c2_init + settings.floor_gain * max(0.0, success_decline), c2_init),
             settings.floor_cap)
    total = c1 + c2
    if total > settings.floor_sum_cap:
        c1 *= settings.floor_sum_cap / total
        c2 *= settings.floor_sum_cap / total
    return c1, c2


def clip_to_norm(vec: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm > max_norm:
        return vec * (max_norm / norm)
    return vec


def _ema(previous: float | None, value: float, decay: float) -> float:
    if previous is None:
        return value
    return decay * previous + (1.0 - decay) * value


def admo_step(
    state: AdversaryState,
    bundles: list[training.AgentBundle],
    batch: list[Trajectory],
    settings: AdversarySettings,
    weights: np.ndarray | None = None,
) -> dict:
    """One controller iteration over a freshly rolled-out batch.

    Mutates the adversary's parameters in place (bundles[state.agent]) and
    appends the audit record it returns.
    """
    agent = state.agent
    bundle = bundles[agent]
    spec = batch[0].spec
    w = training._normalized_weights(batch, weights)
    recs = list(recipients(spec.n_agents, agent))

    success = float(sum(wi * tr.success() for wi, tr in zip(w, batch)))
    emissions = np.concatenate([tr.incentives[:, agent, recs].ravel() for tr in batch])
    r_max = bundle.incentive_config.r_max
    variance_norm = float(np.clip(np.var(emissions) / (r_max**2 / 4.0), 0.0, 1.0))
    spend = float(sum(wi * tr.incentives[:, agent, :].sum() for wi, tr in zip(w, batch)))

    prev_success_ema = state.ema_success
    state.ema_success = _ema(prev_success_ema, success, settings.ema_decay)
    state.ema_incentive_variance = _ema(
        state.ema_incentive_variance, variance_norm, settings.ema_decay
    )
    decline = (
        max(0.0, prev_success_ema - state.ema_success)
        if prev_success_ema is not None
        else 0.0
    )

    loss_inc, g_inc = incentive_margin_loss(
        batch, bundles, agent, settings.spend_penalty, weights=w
    )
    loss_pol, g_pol = welfare_steering_loss(
        batch, bundles, agent, state.theta_ref, settings.welfare_sign,
        state.lambda_d, weights=w,
    )

    state.floors = update_floors(settings, decline, state.ema_incentive_variance)
    alpha = solve_pareto_weights(g_inc, g_pol, state.floors)
    g_star = combine((alpha.alpha1, alpha.alpha2), g_inc, g_pol)
    g_norm = float(np.linalg.norm(g_star))

    step_norm = 0.0
    if g_norm > 0.0:
        g_star = clip_to_norm(g_star, settings.clip_norm)
        omega = np.concatenate([bundle.theta.values, bundle.eta.values])
        state.adam_t += 1
        state.adam_m = settings.adam_beta1 * state.adam_m + (1 - settings.adam_beta1) * g_star
        state.adam_v = settings.adam_beta2 * state.adam_v + (1 - settings.adam_beta2) * g_star**2
        m_hat = state.adam_m / (1 - settings.adam_beta1**state.adam_t)
        v_hat = state.adam_v / (1 - settings.adam_beta2**state.adam_t)
        direction = clip_to_norm(m_hat / (np.sqrt(v_hat) + settings.adam_eps),
                                 settings.clip_norm)
        step_norm = float(np.linalg.norm(direction))
        omega = omega - settings.lr * direction - settings.lr * settings.weight_decay * omega
        n_theta = bundle.theta.n_params
        bundle.theta.values[:] = omega[:n_theta]
        bundle.eta.values[:] = omega[n_theta:]

    state.iteration += 1
    refreshed = False
    drift_pre = drift_penalty(bundle.theta, state.theta_ref)
    if state.iteration % settings.refresh_period == 0:
        refreshed = True
        state.theta_ref = bundle.theta.values.copy()
        state.lambda_d = (
            settings.drift_weight_override
            if drift_pre > settings.drift_trigger
            else settings.drift_weight
        )

    record = {
        "iteration": state.iteration,
        "alpha": [alpha.alpha1, alpha.alpha2],
        "floors": list(state.floors),
        "loss_margin": loss_inc,
        "loss_welfare": loss_pol,
        "grad_norm": g_norm,
        "step_norm": step_norm,
        "skipped": g_norm == 0.0,
        "degenerate": alpha.degenerate,
        "budget_spent": spend,
        "lambda_d": state.lambda_d,
        "drift": drift_pre,
        "refreshed": refreshed,
        "ema_success": state.ema_success,
        "ema_incentive_variance": state.ema_incentive_variance,
    }
    state.audit.append(record)
    return record
