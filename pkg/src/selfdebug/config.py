"""Run configuration resolved from flags, environment, a YAML file and defaults.

Precedence is flag > environment > file > default. Every field can be set in
all four places; the environment variable for ``some_field`` is
``CAPSULE_SOME_FIELD`` and the YAML key is ``some_field``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

ENV_PREFIX = "CAPSULE_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    format: str = "custom"
    split: str = "instruct"
    backend: str = "mock"
    mock_script: str | None = None
    transcript: str | None = None
    model: str = "gpt-3.5-turbo-1106"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    max_attempts: int = 5
    timeout: float = 10.0
    workers: int = 1
    error_budget: int = 2000
    exec_backend: str = "subprocess"
    image: str = "python:3.11-slim"
    output: str = "runlog.jsonl"
    keep_artifacts: bool = False
    record_transcript: str | None = None
    inject_hint: str = "auto"
    prompt_dir: str | None = None
    guidance_file: str | None = None
    work_dir: str | None = None
    max_concurrency: int = 4

    def validate(self) -> None:
        if self.max_attempts < 0:
            raise ConfigError("max_attempts must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.error_budget < 256:
            raise ConfigError("error_budget must be >= 256")
        if self.backend not in ("mock", "http", "replay"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.exec_backend not in ("subprocess", "container"):
            raise ConfigError(f"unknown exec backend {self.exec_backend!r}")
        if self.inject_hint not in ("auto", "always", "never"):
            raise ConfigError(f"unknown inject_hint mode {self.inject_hint!r}")


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def _coerce(name: str, kind: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if kind.startswith("bool"):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(value)
        if kind.startswith("int"):
            if isinstance(value, bool):
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {value!r}") from None


def load_file(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(
    flags: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
    file_values: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Merge the four layers; ``None`` in ``flags`` means "not given"."""
    flags = flags or {}
    env = os.environ if env is None else env
    file_values = file_values or {}
    known = {f.name: f for f in fields(RunConfig)}
    unknown = set(file_values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    values: dict[str, Any] = {}
    for name, f in known.items():
        kind = str(f.type)
        if flags.get(name) is not None:
            values[name] = _coerce(name, kind, flags[name])
        elif f"{ENV_PREFIX}{name.upper()}" in env:
            values[name] = _coerce(name, kind, env[f"{ENV_PREFIX}{name.upper()}"])
        elif name in file_values:
            values[name] = _coerce(name, kind, file_values[name])
    config = RunConfig(**values)
    config.validate()
    return config
