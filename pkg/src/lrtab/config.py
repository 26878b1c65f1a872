"""Run configuration: a JSON file with per-section overrides plus env vars.

Every setting has a code-level default, so the file (and any section in it)
is optional. LRTAB_API_BASE overrides the backend URL; the API key is always
read from the environment at request time, never stored in the file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

from .agent import AgentConfig, AgentMode
from .errors import MalformedRecord
from .gateway import BackendRef
from .learning import ExampleOrigin
from .pipeline import InferenceParams
from .sandbox import SandboxLimits

API_BASE_ENV = "LRTAB_API_BASE"

SECTIONS = ("backend", "inference", "agent", "sandbox", "learning")

LEARNING_DEFAULTS = {"checkpoint_every": 25, "concurrency": 1}


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"config file {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise MalformedRecord("config must be a JSON object")
    unknown = set(config) - set(SECTIONS)
    if unknown:
        raise MalformedRecord(f"unknown config sections: {', '.join(sorted(unknown))}")
    for name in SECTIONS:
        if name in config and not isinstance(config[name], dict):
            raise MalformedRecord(f"config section {name!r} must be an object")
    return config


def _section(config: dict, name: str, cls) -> dict:
    section = dict(config.get(name, {}))
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise MalformedRecord(
            f"unknown keys in config section {name!r}: {', '.join(sorted(unknown))}"
        )
    return section


def backend_from_config(config: dict) -> BackendRef:
    section = _section(config, "backend", BackendRef)
    env_base = os.environ.get(API_BASE_ENV)
    if env_base:
        section["base_url"] = env_base
    return BackendRef(**section)


def inference_params_from_config(config: dict) -> InferenceParams:
    section = _section(config, "inference", InferenceParams)
    if "mode" in section:
        section["mode"] = AgentMode(section["mode"])
    if "example_origins" in section:
        section["example_origins"] = tuple(
            ExampleOrigin(origin) for origin in section["example_origins"]
        )
    return InferenceParams(**section)


def agent_config_from_config(config: dict, mode: AgentMode | None = None) -> AgentConfig:
    section = _section(config, "agent", AgentConfig)
    if "mode" in section:
        section["mode"] = AgentMode(section["mode"])
    if mode is not None:
        section["mode"] = mode
    return AgentConfig(**section)


def sandbox_limits_from_config(config: dict) -> SandboxLimits:
    section = _section(config, "sandbox", SandboxLimits)
    return SandboxLimits(**section)


def learning_from_config(config: dict) -> dict:
    section = dict(config.get("learning", {}))
    unknown = set(section) - set(LEARNING_DEFAULTS)
    if unknown:
        raise MalformedRecord(
            f"unknown keys in config section 'learning': {', '.join(sorted(unknown))}"
        )
    return {**LEARNING_DEFAULTS, **section}
