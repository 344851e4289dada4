"""Experiment configuration: YAML loading, validation, defaults.

All defaults follow the published parameters: 4 communication rounds of 30
tasks, 15 training stimuli, 10,000 Mantel permutations, greedy decoding.
Credentials never live in the file; the backend section names an
environment variable instead.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .backend import BackendDescriptor
from .engine import RunConfig


class ConfigError(Exception):
    """Invalid configuration; message carries the offending line or key."""


@dataclass
class ChainSettings:
    chains: int = 6
    generations: int = 8
    donor_permutations: int = 1000
    seed_from: str | None = None
    # sparse per-generation RunConfig overrides, e.g. {3: {rounds: 2}}
    generation_overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    mode: str = "simulate"  # simulate | chain | metrics | replay
    count: int = 1
    agents: list[str] = field(default_factory=lambda: ["oracle:lookup", "oracle:lookup"])
    output_dir: str = "runs"
    run: RunConfig = field(default_factory=RunConfig)
    chain: ChainSettings = field(default_factory=ChainSettings)
    backend: BackendDescriptor = field(default_factory=BackendDescriptor)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["run"].pop("master_seed", None)  # derived per run, not configured
        return data


_MODES = ("simulate", "chain", "metrics", "replay")


def _build_section(cls, data: dict, path: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{path}'")
    try:
        return cls(**data)
    except TypeError as err:
        raise ConfigError(f"invalid section '{path}': {err}") from err


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    run_data = data.pop("run", {}) or {}
    chain_data = data.pop("chain", {}) or {}
    backend_data = data.pop("backend", {}) or {}
    run_data.setdefault("master_seed", data.get("master_seed", 0))
    config = _build_section(ExperimentConfig, data, "<root>")
    config.run = _build_section(RunConfig, run_data, "run")
    config.chain = _build_section(ChainSettings, chain_data, "chain")
    config.backend = _build_section(BackendDescriptor, backend_data, "backend")
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    if config.mode not in _MODES:
        raise ConfigError(f"mode must be one of {_MODES}, got {config.mode!r}")
    if config.count < 1:
        raise ConfigError("count must be >= 1")
    if len(config.agents) != 2:
        raise ConfigError("exactly two agents are required")
    for spec in config.agents:
        if spec != "llm" and not spec.startswith("oracle:"):
            raise ConfigError(f"unknown agent spec {spec!r}")
    if config.chain.chains < 1 or config.chain.generations < 1:
        raise ConfigError("chain.chains and chain.generations must be >= 1")
    config.run.validate()


def check_backend_credentials(config: ExperimentConfig) -> None:
    """Pre-flight for live runs: an llm agent needs an endpoint and its
    credential environment variable set."""
    if not any(spec == "llm" for spec in config.agents):
        return
    if not config.backend.endpoint:
        raise ConfigError("llm agents need backend.endpoint")
    env = config.backend.api_key_env
    if env and env not in os.environ:
        raise ConfigError(
            f"credential environment variable {env} is not set "
            f"(export it or change backend.api_key_env)"
        )


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        location = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"{path}: YAML error at {location}: {err}") from err
    try:
        return config_from_dict(data)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from err
