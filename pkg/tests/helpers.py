"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from dilemma_forge import nets
from dilemma_forge.envs import GameKind, GameSpec
from dilemma_forge.manipulation import ManipulationMode
from dilemma_forge.nets import HEAD_BOUNDED, NetConfig
from dilemma_forge.trajectories import RewardBreakdown, Trajectory, TrajectoryStep
from dilemma_forge.training import AgentBundle


def make_bundles(
    spec: GameSpec,
    hidden=(4,),
    inc_hidden=(),
    seed=0,
    lr_policy=0.05,
    lr_incentive=0.05,
    r_max=2.0,
    modes=None,
) -> list[AgentBundle]:
    n = spec.n_agents
    policy_cfg = NetConfig(spec.obs_dim, tuple(hidden), spec.n_actions)
    inc_cfg = NetConfig(
        spec.obs_dim + (n - 1) * spec.n_actions,
        tuple(inc_hidden),
        n - 1,
        head=HEAD_BOUNDED,
        r_max=r_max,
    )
    modes = modes or [ManipulationMode() for _ in range(n)]
    return [
        AgentBundle(
            policy_config=policy_cfg,
            incentive_config=inc_cfg,
            theta=nets.init_params(policy_cfg, 1000 * seed + i),
            eta=nets.init_params(inc_cfg, 1000 * seed + 500 + i),
            lr_policy=lr_policy,
            lr_incentive=lr_incentive,
            mode=modes[i],
        )
        for i in range(n)
    ]


def synthetic_trajectory(
    spec: GameSpec,
    env_rows: list[list[float]],
    incentive_mats: list[np.ndarray] | None = None,
    actions_rows: list[tuple[int, ...]] | None = None,
    emitted_value: bool = True,
) -> Trajectory:
    """Hand-built trajectory with prescribed rewards (observations are the
    game's initial observation at every step; fine for reward arithmetic)."""
    from dilemma_forge import envs

    n = spec.n_agents
    state = envs.reset(spec)
    obs = np.stack([envs.observe(spec, state, i) for i in range(n)])
    steps = []
    for t, env_row in enumerate(env_rows):
        inc = (
            incentive_mats[t]
            if incentive_mats is not None
            else np.zeros((n, n))
        )
        actions = actions_rows[t] if actions_rows is not None else (0,) * n
        steps.append(
            TrajectoryStep(
                state=state,
                observations=obs.copy(),
                actions=actions,
                breakdown=RewardBreakdown(np.asarray(env_row, dtype=float), inc),
                emitted=np.full((n, n), emitted_value, dtype=bool),
            )
        )
    trajectory = Trajectory(spec, steps)
    trajectory.finalize()
    return trajectory


def ipd2(horizon=2, discount=0.9) -> GameSpec:
    return GameSpec(GameKind.IPD, 2, horizon=horizon, discount=discount)
