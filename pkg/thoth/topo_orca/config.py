#!/usr/bin/env python3
# thoth-topo-orca
# Copyright(C) 2023 the thoth-topo-orca authors
#
# This program is free software: you can redistribute it and / or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.

"""Flat ``key = value`` configuration files and the YAML run manifest."""

import logging
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

import attr
import yaml

from .episode_log import PLAIN_ORCA
from .episode_log import TOPO_GUIDED
from .exceptions import ConfigError
from .simulation import BOTH
from .simulation import ScenarioConfig

_LOGGER = logging.getLogger(__name__)

POLICY_ALIASES = {"orca": PLAIN_ORCA, "topo": TOPO_GUIDED, BOTH: BOTH, PLAIN_ORCA: PLAIN_ORCA, TOPO_GUIDED: TOPO_GUIDED}

_FIELDS = {field.name: field for field in attr.fields(ScenarioConfig)}


def _convert(key: str, raw: str, line: Optional[int]) -> Any:
    """Convert a raw value to the type of the configuration field."""
    field = _FIELDS[key]
    if key == "policy":
        if raw not in POLICY_ALIASES:
            raise ConfigError(f"unknown policy {raw!r}, expected one of orca, topo, both", key=key, line=line)
        return POLICY_ALIASES[raw]

    if field.default is None and raw.lower() == "none":
        return None

    kind = int if field.type is int else float
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind.__name__}", key=key, line=line) from None


def parse_config_text(text: str, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """Parse configuration text, values given in ``overrides`` take precedence over the text."""
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got {content!r}", line=number)

        key, value = (part.strip() for part in content.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError("unknown configuration key", key=key, line=number)
        if key in lines:
            raise ConfigError(f"already set on line {lines[key]}", key=key, line=number)
        values[key] = _convert(key, value, number)
        lines[key] = number

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError("unknown configuration key", key=key)
        values[key] = _convert(key, value, None) if isinstance(value, str) else value
        lines.pop(key, None)

    try:
        return ScenarioConfig(**values)
    except ValueError as exc:
        message = str(exc)
        offending = next((key for key in sorted(values, key=len, reverse=True) if message.startswith(key)), None)
        raise ConfigError(
            message,
            key=offending,
            line=lines.get(offending) if offending else None,
        ) from None


def parse_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """Load configuration from a file (defaults when no file is given), flags given as ``overrides`` win."""
    text = Path(path).read_text() if path is not None else ""
    try:
        return parse_config_text(text, overrides)
    except ConfigError as exc:
        if path is not None:
            raise ConfigError(f"{path}: {exc}", key=exc.key, line=exc.line) from None
        raise


def format_config(cfg: ScenarioConfig) -> str:
    """Render a configuration in the ``key = value`` form it is parsed from."""
    lines = []
    for key, value in cfg.to_dict().items():
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


@attr.s(slots=True)
class RunManifest:
    """Everything needed to reproduce a benchmark run."""

    config = attr.ib(type=ScenarioConfig)
    version = attr.ib(type=str)
    agent_counts = attr.ib(type=Tuple[int, ...], converter=tuple)
    layout = attr.ib(type=Dict[str, str], factory=dict)
    duration = attr.ib(type=Optional[float], default=None)

    @property
    def seed(self) -> int:
        """Master seed of the run."""
        return self.config.rng_seed

    def to_dict(self) -> Dict[str, Any]:
        """Get a YAML friendly representation."""
        return {
            "version": self.version,
            "seed": self.seed,
            "agent_counts": list(self.agent_counts),
            "config": self.config.to_dict(),
            "layout": dict(self.layout),
            "duration": self.duration,
        }

    def dump(self, path: Union[str, Path]) -> None:
        """Write the manifest as YAML."""
        with open(path, "w") as output:
            yaml.safe_dump(self.to_dict(), output, sort_keys=True)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        """Read a manifest written by ``dump``."""
        with open(path) as input_file:
            content = yaml.safe_load(input_file)

        if not isinstance(content, dict) or "config" not in content:
            raise ConfigError(f"{path}: not a run manifest")

        config = dict(content["config"])
        unknown: List[str] = sorted(set(config) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"{path}: unknown configuration keys in manifest", key=unknown[0])
        try:
            cfg = ScenarioConfig(**config)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

        return cls(
            config=cfg,
            version=str(content.get("version", "")),
            agent_counts=content.get("agent_counts") or (cfg.n_agents,),
            layout=content.get("layout") or {},
            duration=content.get("duration"),
        )
