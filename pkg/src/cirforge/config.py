"""Run configuration: TOML file, overridable per key from the command line.

Precedence: ``--set section.key=value`` flags beat the file, which beats
the defaults below.  Unknown sections or keys are rejected, not ignored, so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ApiSection:
    base_url: str = "https://api.openai.com/v1"
    key_env: str = "OPENAI_API_KEY"
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 5
    concurrency: int = 4


@dataclass
class MineSection:
    hash_min: int = 25
    hash_max: int = 35
    exclude_same_class: bool = True
    neighbors_per_image: int = 1
    dedupe_symmetric: bool = False


@dataclass
class PipelineSection:
    template_set: str = "general"
    max_objects: int = 10
    parse_retries: int = 2
    min_captions: int = 8


@dataclass
class PermuteSection:
    token_limit: int = 77
    max_compounds: int = 60
    allow_sizes: tuple[int, ...] = (2, 3)
    seed: int = 0
    count_special_tokens: bool = True


@dataclass
class DistractSection:
    k: int = 5
    seed: int = 0


@dataclass
class EvalSection:
    ks: tuple[int, ...] = (1, 5, 10, 50)


@dataclass
class RunConfig:
    api: ApiSection = field(default_factory=ApiSection)
    mine: MineSection = field(default_factory=MineSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    permute: PermuteSection = field(default_factory=PermuteSection)
    distract: DistractSection = field(default_factory=DistractSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        out = {}
        for section_field in fields(self):
            section = getattr(self, section_field.name)
            out[section_field.name] = {
                f.name: list(v) if isinstance(v := getattr(section, f.name), tuple) else v
                for f in fields(section)
            }
        return out


def _coerce(raw, template, where: str):
    """Convert a TOML or --set value to the type of the default it replaces."""
    if isinstance(template, bool):
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "false", "1", "0", "yes", "no"):
            return raw.lower() in ("true", "1", "yes")
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if isinstance(template, int) and not isinstance(template, bool):
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if isinstance(template, float):
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    if isinstance(template, tuple):
        if isinstance(raw, str):
            raw = [p for p in raw.split(",") if p.strip()]
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {raw!r}")
        return tuple(int(x) for x in raw)
    if isinstance(template, str):
        if not isinstance(raw, str):
            raise ConfigError(f"{where}: expected a string, got {raw!r}")
        return raw
    raise ConfigError(f"{where}: unsupported value {raw!r}")


def _apply(cfg: RunConfig, section_name: str, key: str, value) -> None:
    section = getattr(cfg, section_name, None)
    if section is None or section_name not in {f.name for f in fields(cfg)}:
        raise ConfigError(f"unknown config section {section_name!r}")
    if key not in {f.name for f in fields(section)}:
        raise ConfigError(f"unknown key {key!r} in section {section_name!r}")
    where = f"{section_name}.{key}"
    setattr(section, key, _coerce(value, getattr(section, key), where))


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: tuple[str, ...] = ()
) -> RunConfig:
    """Defaults, then the TOML file (if any), then --set overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section_name, body in doc.items():
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: top-level key {section_name!r} is not a section")
            for key, value in body.items():
                _apply(cfg, section_name, key, value)
    for item in overrides:
        target, sep, value = item.partition("=")
        if not sep or "." not in target:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section_name, _, key = target.partition(".")
        _apply(cfg, section_name.strip(), key.strip(), value.strip())
    return cfg
