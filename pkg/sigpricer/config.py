"""
sigpricer/config.py – process settings from the environment and TOML experiment configs.
"""
from __future__ import annotations

import difflib
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, get_args

import tomli_w
from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from sigpricer.errors import ConfigError
from sigpricer.models import ExperimentConfig


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="SIGPRICER_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ── App ───────────────────────────────────────────────────────────────────
    app_name: str = "sigpricer – signature-based option pricing"
    app_version: str = "1.0.0"
    log_level: str = "INFO"

    # ── Execution ─────────────────────────────────────────────────────────────
    workers: int = 1
    path_batch_size: int = 1000
    gram_memory_mb: int = 256

    # ── Storage ───────────────────────────────────────────────────────────────
    output_dir: str = "results"
    cache_dir: str = ".sigpricer_cache"

    # ── Monte Carlo guards ────────────────────────────────────────────────────
    max_rejection_rate: float = 0.01
    max_resample_rounds: int = 3


settings = Settings()


# ── Experiment configuration files ────────────────────────────────────────────


def _suggest(field: str, names: list[str]) -> str:
    close = difflib.get_close_matches(field, names, n=1)
    return f" (did you mean '{close[0]}'?)" if close else ""


def _field_names(loc: tuple[Any, ...]) -> list[str]:
    """Field names of the section an error location points into (unions merged)."""
    models: list[type[BaseModel]] = [ExperimentConfig]
    for part in loc[:-1]:
        if not isinstance(part, str):
            continue
        nested: list[type[BaseModel]] = []
        for model in models:
            field = model.model_fields.get(part)
            if field is None:
                continue
            candidates = get_args(field.annotation) or (field.annotation,)
            nested += [c for c in candidates if isinstance(c, type) and issubclass(c, BaseModel)]
        if nested:
            models = nested
    return sorted({name for model in models for name in model.model_fields})


_TOML_POSITION = re.compile(r"line (\d+), column (\d+)")


def _toml_position(exc: tomllib.TOMLDecodeError) -> tuple[int | None, int | None]:
    lineno = getattr(exc, "lineno", None)
    if lineno is not None:
        return lineno, getattr(exc, "colno", None)
    match = _TOML_POSITION.search(str(exc))
    return (int(match.group(1)), int(match.group(2))) if match else (None, None)


def _locate(text: str, loc: tuple[Any, ...]) -> tuple[int | None, int | None]:
    """Best-effort line/column of the offending key inside the TOML text."""
    keys = [part for part in loc if isinstance(part, str)]
    if not keys:
        return None, None
    section = keys[0] if len(keys) > 1 else None
    key = keys[-1]
    in_section = section is None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("["):
            in_section = section is None or line.strip("[] ") == section
            if section is None and line.strip("[] ") == key:
                return number, raw.index("[") + 1
            continue
        if in_section and line.split("=", 1)[0].strip() == key:
            return number, raw.index(key) + 1
    return None, None


def config_parse(text: str) -> ExperimentConfig:
    """Parse TOML text into a validated ExperimentConfig."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, column = _toml_position(exc)
        raise ConfigError(f"invalid TOML: {exc}", line=line, column=column, cause=exc) from exc

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(first["loc"])
        where = ".".join(str(part) for part in loc) or "<root>"
        hint = ""
        if first["type"] == "extra_forbidden" and loc:
            hint = _suggest(str(loc[-1]), _field_names(loc))
        line, column = _locate(text, loc)
        raise ConfigError(
            f"{where}: {first['msg']}{hint}", line=line, column=column, cause=exc
        ) from exc


def config_load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", cause=exc) from exc
    return config_parse(text)


def config_dump(config: ExperimentConfig) -> str:
    """TOML text that loads back to an equal configuration."""
    data = config.model_dump(mode="json", exclude_none=True)
    return tomli_w.dumps(data)
