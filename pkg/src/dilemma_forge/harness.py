"""Multi-seed experiment orchestration and metric aggregation.

A trial is fully determined by (config, seed): one master seed sequence
spawns independent streams for parameter initialization and action sampling,
so identical inputs reproduce bit-identical records.  Records persist as CSV
(one row per episode) plus a JSON-lines audit trail for adaptive
adversaries, and summaries aggregate across seeds the way the 10-run
protocol expects: per-episode mean/std, median convergence episode with
never-converged runs ranked last, and final-window statistics over the last
tenth of training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .adversary import AdversarySettings
from .envs import GameKind, GameSpec
from .errors import ConfigurationError
from .manipulation import ADMO, ManipulationMode
from .nets import NetConfig
from .session import TrainingSession
from .training import AgentBundle


@dataclass(frozen=True)
class AgentSpec:
    """Per-agent settings: the manipulation mode plus optional overrides."""

    mode: ManipulationMode = ManipulationMode()
    lr_policy: float | None = None
    lr_incentive: float | None = None
    adversary: AdversarySettings | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameSpec
    agents: tuple[AgentSpec, ...]
    episodes: int
    batch_size: int = 16
    seeds: tuple[int, ...] = tuple(range(10))
    smoothing_window: int = 50
    convergence_window: int = 100
    convergence_threshold: float = 0.9
    checkpoint_every: int = 0
    hidden: tuple[int, ...] = (64, 32)
    r_max: float = 2.0
    lr_policy: float = 0.1
    lr_incentive: float = 0.3
    incentive_cost_weight: float = 1e-2

    def __post_init__(self) -> None:
        if len(self.agents) != self.game.n_agents:
            raise ConfigurationError(
                f"agents lists {len(self.agents)} entries but the game has "
                f"{self.game.n_agents} agents"
            )
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if self.episodes < self.batch_size:
            raise ConfigurationError("episodes must be >= batch_size")
        if self.episodes % self.batch_size != 0:
            raise ConfigurationError("episodes must be a multiple of batch_size")
        if not (0.0 < self.convergence_threshold <= 1.0):
            raise ConfigurationError("convergence_threshold must be in (0, 1]")
        if self.convergence_window < 1 or self.smoothing_window < 1:
            raise ConfigurationError("windows must be >= 1")
        if self.r_max <= 0:
            raise ConfigurationError("r_max must be positive")
        for agent in self.agents:
            agent.mode.validate_for(self.game, self.r_max)

    def policy_net(self) -> NetConfig:
        return NetConfig(self.game.obs_dim, self.hidden, self.game.n_actions)

    def incentive_net(self) -> NetConfig:
        d = self.game.obs_dim + (self.game.n_agents - 1) * self.game.n_actions
        return NetConfig(
            d, self.hidden, self.game.n_agents - 1, head=nets.HEAD_BOUNDED,
            r_max=self.r_max,
        )


@dataclass
class RunRecord:
    """Everything one trial produced."""

    seed: int
    success: np.ndarray
    steps: np.ndarray
    env_returns: np.ndarray
    total_returns: np.ndarray
    grad_norms: np.ndarray
    iteration_episode: np.ndarray
    audit: dict[int, list[dict]] = field(default_factory=dict)
    final_params: dict[int, dict[str, nets.ParamVector]] = field(default_factory=dict)


def build_session(config: ExperimentConfig, seed: int) -> TrainingSession:
    master = np.random.SeedSequence(seed)
    n = config.game.n_agents
    children = master.spawn(2 * n + 1)
    policy_cfg = config.policy_net()
    incentive_cfg = config.incentive_net()
    bundles = []
    for i, agent in enumerate(config.agents):
        bundles.append(
            AgentBundle(
                policy_config=policy_cfg,
                incentive_config=incentive_cfg,
                theta=nets.init_params(policy_cfg, children[2 * i]),
                eta=nets.init_params(incentive_cfg, children[2 * i + 1]),
                lr_policy=agent.lr_policy if agent.lr_policy is not None else config.lr_policy,
                lr_incentive=(
                    agent.lr_incentive if agent.lr_incentive is not None
                    else config.lr_incentive
                ),
                mode=agent.mode,
            )
        )
    adv_settings = {
        i: a.adversary if a.adversary is not None else AdversarySettings()
        for i, a in enumerate(config.agents)
        if a.mode.tag == ADMO
    }
    return TrainingSession(
        config.game,
        bundles,
        config.batch_size,
        np.random.default_rng(children[2 * n]),
        incentive_cost_weight=config.incentive_cost_weight,
        adversary_settings=adv_settings,
    )


def run_trial(
    config: ExperimentConfig, seed: int, out_dir: str | Path | None = None
) -> RunRecord:
    """One deterministic trial; optionally writes parameter checkpoints."""
    session = build_session(config, seed)
    n_iter = config.episodes // config.batch_size
    success, steps, env_rows, total_rows = [], [], [], []
    grad_norms, iter_episode = [], []
    next_checkpoint = config.checkpoint_every if config.checkpoint_every > 0 else None

    for it in range(n_iter):
        _, metrics = session.train_iteration()
        success.append(metrics.success)
        steps.append(metrics.steps)
        env_rows.append(metrics.env_returns)
        total_rows.append(metrics.total_returns)
        grad_norms.append(metrics.grad_norms)
        episodes_done = (it + 1) * config.batch_size
        iter_episode.append(episodes_done)
        if (
            next_checkpoint is not None
            and out_dir is not None
            and episodes_done >= next_checkpoint
        ):
            _save_checkpoint(session, Path(out_dir), seed, episodes_done)
            next_checkpoint += config.checkpoint_every

    record = RunRecord(
        seed=seed,
        success=np.concatenate(success),
        steps=np.concatenate(steps),
        env_returns=np.concatenate(env_rows),
        total_returns=np.concatenate(total_rows),
        grad_norms=np.stack(grad_norms),
        iteration_episode=np.array(iter_episode),
        audit={i: st.audit for i, st in session.adversary_states.items()},
        final_params={
            i: {"policy": b.theta, "incentive": b.eta}
            for i, b in enumerate(session.bundles)
        },
    )
    if out_dir is not None:
        write_record(Path(out_dir), record)
    return record


def _save_checkpoint(session: TrainingSession, out_dir: Path, seed: int, episode: int) -> None:
    ckpt = out_dir / "checkpoints"
    for i, bundle in enumerate(session.bundles):
        nets.save_params(bundle.theta, ckpt / f"seed{seed}_ep{episode}_agent{i}_policy")
        nets.save_params(bundle.eta, ckpt / f"seed{seed}_ep{episode}_agent{i}_incentive")


def convergence_episode(
    series: np.ndarray, window: int, threshold: float
) -> int | None:
    """First episode count e with mean(series[e-window:e]) >= threshold."""
    if window < 1:
        raise ConfigurationError("window must be >= 1")
    series = np.asarray(series, dtype=np.float64)
    if len(series) < window:
        return None
    csum = np.concatenate([[0.0], np.cumsum(series)])
    means = (csum[window:] - csum[:-window]) / window
    hits = np.nonzero(means >= threshold)[0]
    return int(hits[0]) + window if len(hits) else None


def median_convergence(values: list[int | None]) -> int | None:
    """Lower median with never-converged runs ranked last."""
    ranked = sorted(values, key=lambda v: (v is None, v if v is not None else 0))
    return ranked[(len(ranked) - 1) // 2]


@dataclass
class Summary:
    n_seeds: int
    episodes: int
    n_agents: int
    final_window: int
    success_mean: np.ndarray
    success_std: np.ndarray
    convergence_by_seed: list[int | None]
    median_convergence: int | None
    final_success_by_seed: np.ndarray
    final_success_mean: float
    final_env_returns: np.ndarray
    final_total_returns: np.ndarray


def aggregate(
    records: list[RunRecord], convergence_window: int, convergence_threshold: float
) -> Summary:
    """Across-seed aggregation: per-episode mean/std, median convergence, and
    final-window (last 10% of episodes) statistics."""
    if not records:
        raise ConfigurationError("aggregate needs at least one record")
    stack = np.stack([r.success for r in records])
    episodes = stack.shape[1]
    window = max(1, round(0.1 * episodes))
    conv = [
        convergence_episode(r.success, convergence_window, convergence_threshold)
        for r in records
    ]
    final_success = stack[:, -window:].mean(axis=1)
    final_env = np.stack([r.env_returns[-window:].mean(axis=0) for r in records])
    final_total = np.stack([r.total_returns[-window:].mean(axis=0) for r in records])
    return Summary(
        n_seeds=len(records),
        episodes=episodes,
        n_agents=records[0].env_returns.shape[1],
        final_window=window,
        success_mean=stack.mean(axis=0),
        success_std=stack.std(axis=0),
        convergence_by_seed=conv,
        median_convergence=median_convergence(conv),
        final_success_by_seed=final_success,
        final_success_mean=float(final_success.mean()),
        final_env_returns=final_env,
        final_total_returns=final_total,
    )


def write_record(out_dir: Path, record: RunRecord) -> None:
    """Append one trial to episodes.csv/grad_norms.csv and write its audit
    trail and final parameters."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n = record.env_returns.shape[1]
    episodes_path = out_dir / "episodes.csv"
    new_file = not episodes_path.exists()
    with episodes_path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(
                ["seed", "episode", "success", "steps"]
                + [f"env_return_{i}" for i in range(n)]
                + [f"total_return_{i}" for i in range(n)]
            )
        for e in range(len(record.success)):
            writer.writerow(
                [record.seed, e, repr(float(record.success[e])), int(record.steps[e])]
                + [repr(float(v)) for v in record.env_returns[e]]
                + [repr(float(v)) for v in record.total_returns[e]]
            )
    norms_path = out_dir / "grad_norms.csv"
    new_file = not norms_path.exists()
    with norms_path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(
                ["seed", "iteration", "episode"] + [f"grad_norm_{i}" for i in range(n)]
            )
        for it in range(len(record.grad_norms)):
            writer.writerow(
                [record.seed, it, int(record.iteration_episode[it])]
                + [repr(float(v)) for v in record.grad_norms[it]]
            )
    for agent, rows in record.audit.items():
        with (out_dir / f"audit_seed{record.seed}_agent{agent}.jsonl").open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    for agent, params in record.final_params.items():
        nets.save_params(
            params["policy"], out_dir / "params" / f"seed{record.seed}_agent{agent}_policy"
        )
        nets.save_params(
            params["incentive"],
            out_dir / "params" / f"seed{record.seed}_agent{agent}_incentive",
        )


def write_summary(out_dir: Path, summary: Summary) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "n_seeds": summary.n_seeds,
        "episodes": summary.episodes,
        "n_agents": summary.n_agents,
        "final_window": summary.final_window,
        "convergence_by_seed": [
            v if v is not None else "none" for v in summary.convergence_by_seed
        ],
        "median_convergence": (
            summary.median_convergence if summary.median_convergence is not None else "none"
        ),
        "final_success_by_seed": [float(v) for v in summary.final_success_by_seed],
        "final_success_mean": summary.final_success_mean,
        "final_env_returns": [[float(v) for v in row] for row in summary.final_env_returns],
        "final_total_returns": [
            [float(v) for v in row] for row in summary.final_total_returns
        ],
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2))
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "success_mean", "success_std"])
        for e in range(summary.episodes):
            writer.writerow(
                [e, repr(float(summary.success_mean[e])), repr(float(summary.success_std[e]))]
            )


def load_episode_series(run_dir: Path) -> dict[int, dict[str, np.ndarray]]:
    """Rehydrate per-seed series from episodes.csv (no recomputation)."""
    path = Path(run_dir) / "episodes.csv"
    if not path.exists():
        raise ConfigurationError(f"no episodes.csv in {run_dir}")
    by_seed: dict[int, dict[str, list]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        n = sum(1 for k in reader.fieldnames or [] if k.startswith("env_return_"))
        for row in reader:
            seed = int(row["seed"])
            entry = by_seed.setdefault(
                seed, {"success": [], "steps": [], "env": [], "total": []}
            )
            entry["success"].append(float(row["success"]))
            entry["steps"].append(float(row["steps"]))
            entry["env"].append([float(row[f"env_return_{i}"]) for i in range(n)])
            entry["total"].append([float(row[f"total_return_{i}"]) for i in range(n)])
    return {
        seed: {
            "success": np.array(v["success"]),
            "steps": np.array(v["steps"]),
            "env_returns": np.array(v["env"]),
            "total_returns": np.array(v["total"]),
        }
        for seed, v in by_seed.items()
    }
