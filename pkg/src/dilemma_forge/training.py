"""Policy-gradient estimators and the batched rollout engine.

Recipients ascend REINFORCE estimates of their selected return.  Givers
ascend their own environment return through a one-step lookahead of every
recipient's hypothetical update, minus a budget-cost term: the incentive
parameters influence the giver's return only by shifting the recipients'
next policies, so the estimator chains per-step score inner products from
the lookahead batch back through vector-Jacobian products of the incentive
head on the original batch.

Batch estimators subtract a per-timestep mean-return baseline (computed over
the episodes still alive at each step); single-trajectory estimates are raw.
All batch operations accept optional per-trajectory weights so that an
exhaustively enumerated outcome distribution can stand in for a sampled
batch, which is how the estimators are validated against exact expectations.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import envs, manipulation, nets
from .envs import GameSpec
from .errors import ConfigurationError, ContractViolation
from .manipulation import ManipulationMode
from .nets import NetConfig, ParamVector
from .trajectories import RewardBreakdown, Trajectory, TrajectoryStep, recipients


class RewardSelector(Enum):
    TOTAL = "total"
    ENV_ONLY = "env_only"
    NEGATED_TOTAL = "negated_total"


@dataclass
class AgentBundle:
    """Everything one agent owns: policy and incentive parameters, learning
    rates, and its manipulation mode."""

    policy_config: NetConfig
    incentive_config: NetConfig
    theta: ParamVector
    eta: ParamVector
    lr_policy: float
    lr_incentive: float
    mode: ManipulationMode

    def __post_init__(self) -> None:
        # Zero is allowed so ablations can freeze a level of the bi-level
        # scheme; experiment configs require strictly positive rates.
        if self.lr_policy < 0 or self.lr_incentive < 0:
            raise ConfigurationError("learning rates must be non-negative")


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum_{u >= t} gamma^(u-t) r_u."""
    out = np.empty_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _selector_series(trajectory: Trajectory, agent: int, selector: RewardSelector) -> np.ndarray:
    if selector is RewardSelector.ENV_ONLY:
        return trajectory.env_matrix[:, agent].copy()
    totals = trajectory.total_rewards_for(agent)
    return -totals if selector is RewardSelector.NEGATED_TOTAL else totals


def policy_gradient(
    config: NetConfig,
    theta: ParamVector,
    trajectory: Trajectory,
    agent: int,
    selector: RewardSelector = RewardSelector.TOTAL,
) -> ParamVector:
    """Raw single-trajectory REINFORCE estimate sum_t G_t grad log pi(a_t|o_t)."""
    if len(trajectory) == 0:
        raise ContractViolation("policy gradient of an empty trajectory")
    rewards = _selector_series(trajectory, agent, selector)
    g = returns_to_go(rewards, trajectory.spec.discount)
    scores = nets.score_batch(
        config, theta, trajectory.obs_for(agent), trajectory.actions[:, agent]
    )
    return ParamVector(g @ scores, theta.layout)


def _normalized_weights(trajectories, weights) -> np.ndarray:
    if weights is None:
        return np.full(len(trajectories), 1.0 / len(trajectories))
    weights = np.asarray(weights, dtype=np.float64)
    return weights / weights.sum()


def timestep_baselines(
    returns: list[np.ndarray], weights: np.ndarray
) -> np.ndarray:
    """Per-timestep weighted mean of G_t over the episodes alive at t."""
    t_max = max(len(g) for g in returns)
    num = np.zeros(t_max)
    den = np.zeros(t_max)
    for w, g in zip(weights, returns):
        num[: len(g)] += w * g
        den[: len(g)] += w
    return num / np.maximum(den, 1e-300)


def batch_policy_gradient(
    trajectories: list[Trajectory],
    agent: int,
    reward_fn,
    gamma: float,
    weights: np.ndarray | None = None,
    use_baseline: bool = True,
    discount_time_weights: bool = False,
) -> np.ndarray:
    """Weighted-average REINFORCE gradient with the per-timestep baseline.

    reward_fn(trajectory) -> (T,) reward series.  Uses the score vectors
    cached on the trajectories (the policy that generated the actions).

    With discount_time_weights, each timestep's term also carries gamma^t,
    making this the exact gradient of the discounted return; without it this
    is the customary estimator that weighs all timesteps equally.  Training
    updates use the latter, while the giver lookahead needs the former to be
    a derivative in the calculus sense.
    """
    w = _normalized_weights(trajectories, weights)
    returns = [returns_to_go(reward_fn(tr), gamma) for tr in trajectories]
    baselines = timestep_baselines(returns, w) if use_baseline else None
    grad = None
    for wi, g, tr in zip(w, returns, trajectories):
        adv = g - baselines[: len(g)] if baselines is not None else g
        if discount_time_weights:
            adv = adv * gamma ** np.arange(len(g))
        contrib = wi * (adv @ tr.scores_for(agent))
        grad = contrib if grad is None else grad + contrib
    return grad


def recipient_gradient(
    bundles: list[AgentBundle],
    modes: list[ManipulationMode],
    agent: int,
    trajectories: list[Trajectory],
    weights: np.ndarray | None = None,
    use_baseline: bool = True,
) -> np.ndarray:
    """Batch gradient of the agent's mode-selected learning return."""
    return batch_policy_gradient(
        trajectories,
        agent,
        lambda tr: manipulation.learning_rewards(modes, tr, agent),
        trajectories[0].spec.discount,
        weights=weights,
        use_baseline=use_baseline,
    )


def recipient_update(
    bundles: list[AgentBundle],
    modes: list[ManipulationMode],
    agent: int,
    trajectories: list[Trajectory],
    weights: np.ndarray | None = None,
    gradient: np.ndarray | None = None,
) -> ParamVector:
    """Hypothetical one-step policy update; never mutates the bundle.

    Bypass agents never consult their policy, so their hypothetical update
    is the identity.
    """
    bundle = bundles[agent]
    if not manipulation.takes_policy_step(modes[agent]):
        return bundle.theta.copy()
    if gradient is None:
        gradient = recipient_gradient(bundles, modes, agent, trajectories, weights)
    sign = manipulation.update_direction(modes[agent])
    return ParamVector(
        bundle.theta.values + sign * bundle.lr_policy * gradient, bundle.theta.layout
    )


def giver_gradient(
    bundles: list[AgentBundle],
    modes: list[ManipulationMode],
    giver: int,
    old_batch: list[Trajectory],
    new_batch: list[Trajectory],
    alpha: float,
    old_weights: np.ndarray | None = None,
    new_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Ascent gradient of the giver's lookahead objective w.r.t. its
    incentive parameters: d/d_eta [ env return under the recipients'
    hypothetical updated policies ] - alpha * d/d_eta [ incentive cost ].

    old_batch was sampled under the current policies, new_batch under the
    hypothetical updates those policies imply.  The first term chains, for
    each recipient j and old timestep t, the inner product of the
    recipient's score with the lookahead estimate of d(env return of the
    giver)/d(theta_j), times the eta-Jacobian of the incentives that entered
    G_t; all per-step Jacobian contractions collapse into one VJP per step.

    The giver models every recipient as an honest combined-reward ascender.
    Manipulating agents break that model covertly, which is precisely the
    asymmetry the manipulation strategies exploit; only the lookahead data
    itself (new_batch) reflects their true behavior.
    """
    del modes  # givers run the vanilla update regardless of others' modes
    spec = old_batch[0].spec
    gamma = spec.discount
    n = spec.n_agents
    bundle = bundles[giver]
    recs = recipients(n, giver)

    # Lookahead sensitivity of the giver's env return to each recipient's policy.
    lookahead = {}
    for j in recs:
        v = batch_policy_gradient(
            new_batch,
            j,
            lambda tr: tr.env_matrix[:, giver].copy(),
            gamma,
            weights=new_weights,
            discount_time_weights=True,
        )
        lookahead[j] = bundles[j].lr_policy * v

    w = _normalized_weights(old_batch, old_weights)
    grad = np.zeros(bundle.eta.n_params)
    for wi, tr in zip(w, old_batch):
        t_len = len(tr)
        disc = gamma ** np.arange(t_len)
        cotangents = np.tile((-alpha * disc)[:, None], (1, n - 1))
        for idx, j in enumerate(recs):
            inner = tr.scores_for(j) @ lookahead[j]  # (T,) = beta_j * <v_j, s_jt>
            acc = 0.0
            for t in range(t_len):
                acc = inner[t] + gamma * acc
                cotangents[t, idx] += acc
        cotangents *= tr.emitted[:, giver, :][:, recs]
        grad += wi * nets.bounded_vjp_sum(
            bundle.incentive_config, bundle.eta, tr.incentive_inputs_for(giver), cotangents
        )
    return grad


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of a probability matrix."""
    u = rng.random(probs.shape[0])
    idx = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def rollout_batch(
    spec: GameSpec,
    bundles: list[AgentBundle],
    modes: list[ManipulationMode],
    n_episodes: int,
    rng: np.random.Generator,
    thetas: list[ParamVector] | None = None,
    budgets: dict[int, float] | None = None,
    attach_scores: bool = True,
) -> list[Trajectory]:
    """Roll out a batch of episodes in lockstep.

    thetas overrides the acting policies (used for lookahead batches).
    budgets caps per-episode incentive spend per giver: emission to each
    recipient (in index order) stays live only while the episode's spend is
    still below the cap, and suppressed entries are flagged so gradient
    pathways through them vanish.
    """
    n = spec.n_agents
    acting = thetas if thetas is not None else [b.theta for b in bundles]
    budgets = budgets or {}

    states = [envs.reset(spec) for _ in range(n_episodes)]
    trajs = [Trajectory(spec) for _ in range(n_episodes)]
    spent = {a: np.zeros(n_episodes) for a in budgets}
    alive = list(range(n_episodes))

    while alive:
        k = len(alive)
        obs = np.empty((k, n, spec.obs_dim))
        for row, e in enumerate(alive):
            for i in range(n):
                obs[row, i] = envs.observe(spec, states[e], i)

        actions = np.empty((k, n), dtype=np.int64)
        for i in range(n):
            if modes[i].tag == manipulation.BYPASS:
                actions[:, i] = [
                    manipulation.noop_action(spec, states[e], i) for e in alive
                ]
            else:
                probs = nets.policy_forward_batch(
                    bundles[i].policy_config, acting[i], obs[:, i, :]
                )
                actions[:, i] = _sample_rows(rng, probs)

        incentive_matrix = np.zeros((k, n, n))
        emitted = np.ones((k, n, n), dtype=bool)
        for i in range(n):
            recs = recipients(n, i)
            onehots = np.zeros((k, (n - 1) * spec.n_actions))
            for slot, j in enumerate(recs):
                onehots[np.arange(k), slot * spec.n_actions + actions[:, j]] = 1.0
            inputs = np.concatenate([obs[:, i, :], onehots], axis=1)
            values = nets.bounded_forward_batch(
                bundles[i].incentive_config, bundles[i].eta, inputs
            )
            if i in budgets:
                cap = budgets[i]
                for row, e in enumerate(alive):
                    for slot, j in enumerate(recs):
                        if spent[i][e] < cap:
                            spent[i][e] += values[row, slot]
                        else:
                            values[row, slot] = 0.0
                            emitted[row, i, j] = False
            incentive_matrix[np.arange(k)[:, None], i, np.array(recs)[None, :]] = values

        finished = []
        for row, e in enumerate(alive):
            outcome = envs.step(spec, states[e], tuple(int(a) for a in actions[row]))
            trajs[e].steps.append(
                TrajectoryStep(
                    state=states[e],
                    observations=obs[row].copy(),
                    actions=tuple(int(a) for a in actions[row]),
                    breakdown=RewardBreakdown(outcome.env_rewards, incentive_matrix[row]),
                    emitted=emitted[row],
                )
            )
            states[e] = outcome.next_state
            if outcome.terminal:
                finished.append(e)
        alive = [e for e in alive if e not in finished]

    for tr in trajs:
        tr.finalize()
    if attach_scores:
        _attach_score_caches(spec, bundles, modes, acting, trajs)
    return trajs


def _attach_score_caches(spec, bundles, modes, acting, trajs) -> None:
    """Batched per-sample score computation for every agent.

    Scores are cached for bypass agents too: their actions are forced, but
    honest givers still evaluate those actions against the idle agent's
    policy when forming their (vanilla) lookahead estimates.
    """
    del modes
    lengths = [len(tr) for tr in trajs]
    splits = np.cumsum(lengths)[:-1]
    for i in range(spec.n_agents):
        all_obs = np.concatenate([tr.obs_for(i) for tr in trajs])
        all_actions = np.concatenate([tr.actions[:, i] for tr in trajs])
        scores = nets.score_batch(bundles[i].policy_config, acting[i], all_obs, all_actions)
        for tr, chunk in zip(trajs, np.split(scores, splits)):
            tr.attach_scores(i, chunk)
