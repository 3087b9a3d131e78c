"""JSON experiment configs: strict parsing, overrides, and hashing.

Unknown keys are rejected and every error names the offending field, so a
bad config fails before any compute is spent.  The config hash covers the
normalized semantic content (sorted keys, canonical defaults filled in) and
therefore changes iff a meaningful field changes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from .adversary import AdversarySettings
from .envs import GameKind, GameSpec
from .errors import ConfigurationError
from .harness import AgentSpec, ExperimentConfig
from .manipulation import MODE_TAGS, ManipulationMode

_GAME_KEYS = {"kind", "n_agents", "er_threshold", "horizon", "discount"}
_AGENT_KEYS = {"mode", "c", "matrix_noop", "lr_policy", "lr_incentive", "admo"}
_ADMO_KEYS = {
    "welfare_sign", "spend_penalty", "drift_weight", "drift_weight_override",
    "drift_trigger", "floors_init", "floor_gain", "refresh_period", "budget",
    "clip_norm", "ema_decay", "lr", "weight_decay",
}
_TOP_KEYS = {
    "game", "agents", "episodes", "batch_size", "seeds", "smoothing_window",
    "convergence_window", "convergence_threshold", "checkpoint_every",
    "hidden", "r_max", "lr_policy", "lr_incentive", "incentive_cost_weight",
}
_KIND_ALIASES = {
    "er": GameKind.ESCAPE_ROOM,
    "escape_room": GameKind.ESCAPE_ROOM,
    "ipd": GameKind.IPD,
    "stag_hunt": GameKind.STAG_HUNT,
}


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigurationError(
            f"{where}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}"
        )


def _require(mapping: dict, key: str, where: str) -> Any:
    if key not in mapping:
        raise ConfigurationError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
    return value


def _parse_game(raw: Any) -> GameSpec:
    if not isinstance(raw, dict):
        raise ConfigurationError("game: expected an object")
    _reject_unknown(raw, _GAME_KEYS, "game")
    kind_raw = str(_require(raw, "kind", "game")).lower()
    if kind_raw not in _KIND_ALIASES:
        raise ConfigurationError(
            f"game.kind: unknown kind {kind_raw!r}; expected one of {sorted(_KIND_ALIASES)}"
        )
    return GameSpec(
        kind=_KIND_ALIASES[kind_raw],
        n_agents=_integer(_require(raw, "n_agents", "game"), "game.n_agents"),
        er_threshold=_integer(raw.get("er_threshold", 0), "game.er_threshold"),
        horizon=_integer(raw.get("horizon", 5), "game.horizon"),
        discount=_number(raw.get("discount", 0.95), "game.discount"),
    )


def _parse_admo(raw: Any, where: str) -> AdversarySettings:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected an object")
    _reject_unknown(raw, _ADMO_KEYS, where)
    kwargs: dict[str, Any] = {}
    if "welfare_sign" in raw:
        kwargs["welfare_sign"] = _integer(raw["welfare_sign"], f"{where}.welfare_sign")
    if "floors_init" in raw:
        floors = raw["floors_init"]
        if not (isinstance(floors, list) and len(floors) == 2):
            raise ConfigurationError(f"{where}.floors_init: expected [c1, c2]")
        kwargs["floors_init"] = (
            _number(floors[0], f"{where}.floors_init[0]"),
            _number(floors[1], f"{where}.floors_init[1]"),
        )
    for key in ("spend_penalty", "drift_weight", "drift_weight_override",
                "drift_trigger", "floor_gain", "budget", "clip_norm", "ema_decay",
                "lr", "weight_decay"):
        if key in raw:
            kwargs[key] = _number(raw[key], f"{where}.{key}")
    if "refresh_period" in raw:
        kwargs["refresh_period"] = _integer(raw["refresh_period"], f"{where}.refresh_period")
    return AdversarySettings(**kwargs)


def _parse_agent(raw: Any, index: int) -> AgentSpec:
    where = f"agents[{index}]"
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected an object")
    _reject_unknown(raw, _AGENT_KEYS, where)
    tag = str(raw.get("mode", "honest"))
    if tag not in MODE_TAGS:
        raise ConfigurationError(
            f"{where}.mode: unknown mode {tag!r}; expected one of {sorted(MODE_TAGS)}"
        )
    mode = ManipulationMode(
        tag=tag,
        fake_incentive=_number(raw.get("c", 0.0), f"{where}.c"),
        matrix_noop=bool(raw.get("matrix_noop", False)),
    )
    if "c" in raw and tag != "fake_incentive":
        raise ConfigurationError(f"{where}.c: only valid for fake_incentive mode")
    if "admo" in raw and tag != "admo":
        raise ConfigurationError(f"{where}.admo: only valid for admo mode")
    return AgentSpec(
        mode=mode,
        lr_policy=(
            _number(raw["lr_policy"], f"{where}.lr_policy") if "lr_policy" in raw else None
        ),
        lr_incentive=(
            _number(raw["lr_incentive"], f"{where}.lr_incentive")
            if "lr_incentive" in raw else None
        ),
        adversary=_parse_admo(raw["admo"], f"{where}.admo") if "admo" in raw else None,
    )


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config root: expected an object")
    _reject_unknown(raw, _TOP_KEYS, "config root")
    game = _parse_game(_require(raw, "game", "config root"))
    agents_raw = _require(raw, "agents", "config root")
    if not isinstance(agents_raw, list):
        raise ConfigurationError("agents: expected an array")
    agents = tuple(_parse_agent(a, i) for i, a in enumerate(agents_raw))
    seeds_raw = raw.get("seeds", list(range(10)))
    if not isinstance(seeds_raw, list):
        raise ConfigurationError("seeds: expected an array of integers")
    seeds = tuple(_integer(s, f"seeds[{i}]") for i, s in enumerate(seeds_raw))
    hidden_raw = raw.get("hidden", [64, 32])
    if not isinstance(hidden_raw, list):
        raise ConfigurationError("hidden: expected an array of integers")
    hidden = tuple(_integer(h, f"hidden[{i}]") for i, h in enumerate(hidden_raw))
    kwargs = dict(
        game=game,
        agents=agents,
        episodes=_integer(_require(raw, "episodes", "config root"), "episodes"),
        seeds=seeds,
        hidden=hidden,
    )
    for key in ("batch_size", "smoothing_window", "convergence_window",
                "checkpoint_every"):
        if key in raw:
            kwargs[key] = _integer(raw[key], key)
    for key in ("convergence_threshold", "r_max", "lr_policy", "lr_incentive",
                "incentive_cost_weight"):
        if key in raw:
            kwargs[key] = _number(raw[key], key)
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    for override in overrides or []:
        raw = apply_override(raw, override)
    return parse_config(raw)


def apply_override(raw: dict, override: str) -> dict:
    """Apply one 'dotted.path=json_value' override to the raw config dict."""
    if "=" not in override:
        raise ConfigurationError(f"override {override!r} must look like key=value")
    key, _, value_text = override.partition("=")
    try:
        value = json.loads(value_text)
    except json.JSONDecodeError:
        value = value_text
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return raw


def config_to_dict(config: ExperimentConfig) -> dict:
    """Normalized, JSON-ready view of a validated config."""
    agents = []
    for a in config.agents:
        entry: dict[str, Any] = {"mode": a.mode.tag}
        if a.mode.tag == "fake_incentive":
            entry["c"] = a.mode.fake_incentive
        if a.mode.matrix_noop:
            entry["matrix_noop"] = True
        if a.lr_policy is not None:
            entry["lr_policy"] = a.lr_policy
        if a.lr_incentive is not None:
            entry["lr_incentive"] = a.lr_incentive
        if a.adversary is not None:
            s = a.adversary
            entry["admo"] = {
                "welfare_sign": s.welfare_sign,
                "spend_penalty": s.spend_penalty,
                "drift_weight": s.drift_weight,
                "drift_weight_override": s.drift_weight_override,
                "drift_trigger": s.drift_trigger,
                "floors_init": list(s.floors_init),
                "floor_gain": s.floor_gain,
                "refresh_period": s.refresh_period,
                "budget": s.budget,
                "clip_norm": s.clip_norm,
                "ema_decay": s.ema_decay,
                "lr": s.lr,
                "weight_decay": s.weight_decay,
            }
        agents.append(entry)
    return {
        "game": {
            "kind": config.game.kind.value,
            "n_agents": config.game.n_agents,
            "er_threshold": config.game.er_threshold,
            "horizon": config.game.horizon,
            "discount": config.game.discount,
        },
        "agents": agents,
        "episodes": config.episodes,
        "batch_size": config.batch_size,
        "seeds": list(config.seeds),
        "smoothing_window": config.smoothing_window,
        "convergence_window": config.convergence_window,
        "convergence_threshold": config.convergence_threshold,
        "checkpoint_every": config.checkpoint_every,
        "hidden": list(config.hidden),
        "r_max": config.r_max,
        "lr_policy": config.lr_policy,
        "lr_incentive": config.lr_incentive,
        "incentive_cost_weight": config.incentive_cost_weight,
    }


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()
