"""Scenario files: TOML, one table per section (see ``minerva.config``)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import tomli
import tomli_w

from ..config import ConfigError, ScenarioConfig

BUNDLED = "minerva.scenarios"


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(BUNDLED).iterdir() if p.name.endswith(".toml"))


def resolve(path_or_name: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    path = Path(path_or_name)
    if path.exists():
        return path
    candidate = resources.files(BUNDLED) / f"{path_or_name}.toml"
    if candidate.is_file():
        return Path(str(candidate))
    raise FileNotFoundError(f"no scenario file or bundled scenario named {path_or_name!r}")


def loads(text: str) -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return ScenarioConfig.from_dict(data)


def load_scenario(path_or_name: str) -> ScenarioConfig:
    return loads(resolve(path_or_name).read_text())


def dumps(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
