"""Experiment configuration: a YAML key-value tree with dotted-path access."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .agent import AgentConfig
from .core import PanelSpec
from .exceptions import ConfigError
from .sim import SimulatorConfig

TASKS = ("reorg", "select_reorg")
FEEDBACK_MODES = ("sample", "expected")


@dataclass
class PanelConfig:
    rows: int = 2
    cols: int = 3
    allow_null: bool = False
    null_penalty: float = 0.1

    def spec(self) -> PanelSpec:
        return PanelSpec(self.rows, self.cols, self.allow_null, self.null_penalty)


@dataclass
class ExperimentConfig:
    task: str = "reorg"
    seed: int = 0
    train_episodes: int = 10_000
    eval_episodes: int = 1_000
    eval_every: int = 500
    eval_requests: int = 200
    feedback: str = "expected"
    curve_bucket: int = 100
    output_dir: str = "runs"
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    panel: PanelConfig = field(default_factory=PanelConfig)

    @property
    def spec(self) -> PanelSpec:
        return self.panel.spec()

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"must be one of {TASKS}, got {self.task!r}", field="task")
        if self.feedback not in FEEDBACK_MODES:
            raise ConfigError(f"must be one of {FEEDBACK_MODES}", field="feedback")
        for name in ("train_episodes", "eval_episodes", "eval_requests"):
            if getattr(self, name) < 0:
                raise ConfigError("must be nonnegative", field=name)
        for name in ("eval_every", "curve_bucket"):
            if getattr(self, name) < 1:
                raise ConfigError("must be positive", field=name)
        if self.sim.rows != self.panel.rows or self.sim.cols != self.panel.cols:
            raise ConfigError("simulator grid must match the panel shape", field="sim.rows")
        mn = self.panel.rows * self.panel.cols
        if self.task == "reorg":
            if self.panel.allow_null:
                raise ConfigError("Re-Org removes the NULL action", field="panel.allow_null")
            if self.sim.K != mn:
                raise ConfigError(f"Re-Org needs K == M*N == {mn}", field="sim.K")
        else:
            if not self.panel.allow_null:
                raise ConfigError("Select&Re-Org needs the NULL action", field="panel.allow_null")
            if self.sim.K <= mn:
                raise ConfigError(f"Select&Re-Org needs K > M*N == {mn}", field="sim.K")
        if self.panel.null_penalty < 0:
            raise ConfigError("must be nonnegative", field="panel.null_penalty")
        try:
            self.sim.validate()
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], field=f"sim.{exc.field}") from None
        try:
            self.agent.validate()
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], field=f"agent.{exc.field}") from None
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agent"] = self.agent.to_dict()
        return d


def default_config(task: str = "reorg", seed: int = 0) -> ExperimentConfig:
    """Task defaults: Re-Org places 6 items on 2x3; Select&Re-Org picks 6 of 16."""
    if task == "reorg":
        sim = SimulatorConfig(K=6, seed=seed)
        panel = PanelConfig(allow_null=False)
    elif task == "select_reorg":
        sim = SimulatorConfig(K=16, seed=seed)
        panel = PanelConfig(allow_null=True, null_penalty=0.1)
    else:
        raise ConfigError(f"must be one of {TASKS}, got {task!r}", field="task")
    return ExperimentConfig(task=task, seed=seed, sim=sim, agent=AgentConfig(seed=seed), panel=panel)


_SECTIONS = {"sim": SimulatorConfig, "agent": AgentConfig, "panel": PanelConfig}


def _coerce(value, current, path):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"expected a boolean, got {value!r}", field=path)
    if isinstance(current, int):
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected an integer, got {value!r}", field=path) from None
    if isinstance(current, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", field=path) from None
    if isinstance(current, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a list of integers, got {value!r}", field=path) from None
    if current is None:
        # optional integer fields
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected an integer or null, got {value!r}", field=path) from None
    return value if not isinstance(value, (dict, list)) else _bad(path, value)


def _bad(path, value):
    raise ConfigError(f"unexpected structured value {value!r}", field=path)


def set_path(cfg: ExperimentConfig, path: str, value: Any) -> None:
    """Assign ``value`` at a dotted path such as ``agent.learning_rate``."""
    parts = path.split(".")
    target = cfg
    for i, part in enumerate(parts[:-1]):
        if part not in _SECTIONS or not hasattr(target, part) or i > 0:
            raise ConfigError("unknown key", field=path)
        target = getattr(target, part)
    leaf = parts[-1]
    names = {f.name for f in fields(target)}
    if leaf not in names or (target is cfg and leaf in _SECTIONS):
        raise ConfigError("unknown key", field=path)
    setattr(target, leaf, _coerce(value, getattr(target, leaf), path))


def get_path(cfg: ExperimentConfig, path: str):
    target = cfg
    for part in path.split("."):
        if not hasattr(target, part):
            raise ConfigError("unknown key", field=path)
        target = getattr(target, part)
    return target


def _flatten(tree: dict, prefix: str = ""):
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            if prefix or key not in _SECTIONS:
                raise ConfigError("unknown section", field=path)
            yield from _flatten(value, path + ".")
        else:
            yield path, value


def config_from_dict(tree: Optional[dict], seed: Optional[int] = None) -> ExperimentConfig:
    """Build a config from task defaults plus the given overrides.

    ``seed`` (e.g. from the command line) wins over the file and is
    propagated to the simulator and agent unless they set their own.
    """
    tree = copy.deepcopy(tree or {})
    if not isinstance(tree, dict):
        raise ConfigError("config document must be a mapping")
    task = tree.get("task", "reorg")
    if seed is None:
        seed = tree.get("seed", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {seed!r}", field="seed") from None
    if seed < 0 or seed >= 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", field="seed")
    cfg = default_config(task, seed)
    for path, value in _flatten(tree):
        if path in ("task", "seed"):
            continue
        set_path(cfg, path, value)
    cfg.seed = seed
    return cfg.validate()


def load_config(path, seed: Optional[int] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        tree = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for k, v in (overrides or {}).items():
        _nest(tree, k, v)
    return config_from_dict(tree, seed)


def _nest(tree, dotted, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot nest under a scalar", field=dotted)
    node[parts[-1]] = value


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return path
