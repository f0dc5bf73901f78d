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

"""Test configuration files and run manifests."""

from pathlib import Path

import pytest
import yaml

from thoth.topo_orca.config import RunManifest
from thoth.topo_orca.config import format_config
from thoth.topo_orca.config import parse_config
from thoth.topo_orca.config import parse_config_text
from thoth.topo_orca.episode_log import PLAIN_ORCA
from thoth.topo_orca.episode_log import TOPO_GUIDED
from thoth.topo_orca.exceptions import ConfigError
from thoth.topo_orca.simulation import ScenarioConfig

from .base_test import TopoOrcaTestCase


class TestParseConfig(TopoOrcaTestCase):
    """Test parsing of ``key = value`` configuration."""

    def test_empty(self) -> None:
        """Test an empty configuration gives defaults."""
        assert parse_config_text("") == ScenarioConfig()
        assert parse_config() == ScenarioConfig()

    def test_values(self) -> None:
        """Test values, comments and blank lines."""
        cfg = parse_config_text(
            "# ten agents in a larger world\n"
            "n_agents = 10\n"
            "\n"
            "world_w=30   # meters\n"
            "goal_reach_radius = none\n"
            "waypoint_reach_radius = 0.5\n"
        )

        assert cfg.n_agents == 10
        assert isinstance(cfg.n_agents, int)
        assert cfg.world_w == 30.0
        assert cfg.goal_reach_radius is None
        assert cfg.waypoint_reach == 0.5

    @pytest.mark.parametrize(
        "alias,policy",
        [("orca", PLAIN_ORCA), ("topo", TOPO_GUIDED), ("both", "both"), (TOPO_GUIDED, TOPO_GUIDED)],
    )
    def test_policy_aliases(self, alias: str, policy: str) -> None:
        """Test short policy names."""
        assert parse_config_text(f"policy = {alias}").policy == policy

    def test_out_of_range(self) -> None:
        """Test a value out of its domain is reported with its key and line."""
        with pytest.raises(ConfigError) as exc:
            parse_config_text("n_agents = 4\nmin_traversable = 1.5\n")

        assert exc.value.key == "min_traversable"
        assert exc.value.line == 2
        assert str(exc.value).startswith("line 2: 'min_traversable': ")

    @pytest.mark.parametrize(
        "text,key,line",
        [
            ("n_agents = 4\nagents = 10\n", "agents", 2),
            ("n_agents = 4\nn_agents = 10\n", "n_agents", 2),
            ("n_agents 4\n", None, 1),
            ("cell_size = fine\n", "cell_size", 1),
            ("n_agents = 4.5\n", "n_agents", 1),
            ("policy = social_forces\n", "policy", 1),
            ("\n\nobstacle_min_size = 3\nobstacle_max_size = 2\n", "obstacle_max_size", 4),
        ],
    )
    def test_rejected(self, text: str, key: str, line: int) -> None:
        """Test malformed lines are rejected."""
        with pytest.raises(ConfigError) as exc:
            parse_config_text(text)

        assert exc.value.key == key
        assert exc.value.line == line

    def test_overrides(self) -> None:
        """Test flags take precedence over the file."""
        cfg = parse_config_text("n_agents = 4\nrng_seed = 3\n", {"n_agents": 10, "policy": "topo", "rng_seed": None})

        assert cfg.n_agents == 10
        assert cfg.policy == TOPO_GUIDED
        assert cfg.rng_seed == 3

    def test_override_reported_without_line(self) -> None:
        """Test an invalid override points at its key only."""
        with pytest.raises(ConfigError) as exc:
            parse_config_text("n_agents = 4\n", {"n_agents": 0})

        assert exc.value.key == "n_agents"
        assert exc.value.line is None

    def test_file(self, tmp_path: Path) -> None:
        """Test reading a file, errors name the file."""
        path = tmp_path / "benchmark.conf"
        path.write_text("n_episodes = 20\nfrozen_theta = 2\n")

        with pytest.raises(ConfigError) as exc:
            parse_config(path)

        assert str(exc.value).startswith(str(path))
        assert exc.value.line == 2

    def test_format_round_trip(self) -> None:
        """Test a formatted configuration parses back to the same configuration."""
        cfg = ScenarioConfig(n_agents=10, policy=TOPO_GUIDED, goal_reach_radius=0.7, rng_seed=2**63)

        assert parse_config_text(format_config(cfg)) == cfg


class TestRunManifest(TopoOrcaTestCase):
    """Test run manifests."""

    def test_dump_load(self, tmp_path: Path) -> None:
        """Test a dumped manifest loads back."""
        manifest = RunManifest(
            config=self.small_config(),
            version="0.1.0",
            agent_counts=[4, 10],
            layout={"logs": "logs", "report": "report.txt"},
            duration=1.5,
        )
        path = tmp_path / "manifest.yaml"

        manifest.dump(path)
        loaded = RunManifest.load(path)

        assert loaded == manifest
        assert loaded.seed == 7
        assert yaml.safe_load(path.read_text())["seed"] == 7

    def test_not_a_manifest(self, tmp_path: Path) -> None:
        """Test YAML without a configuration is rejected."""
        path = tmp_path / "manifest.yaml"
        path.write_text("- 1\n- 2\n")

        with pytest.raises(ConfigError):
            RunManifest.load(path)

    def test_unknown_key(self, tmp_path: Path) -> None:
        """Test a manifest with an unknown configuration key is rejected."""
        path = tmp_path / "manifest.yaml"
        path.write_text(yaml.safe_dump({"config": {"n_agents": 4, "n_robots": 2}}))

        with pytest.raises(ConfigError) as exc:
            RunManifest.load(path)

        assert exc.value.key == "n_robots"

    def test_invalid_value(self, tmp_path: Path) -> None:
        """Test a manifest with an invalid configuration value is rejected."""
        path = tmp_path / "manifest.yaml"
        path.write_text(yaml.safe_dump({"config": {"n_agents": 0}}))

        with pytest.raises(ConfigError, match="n_agents"):
            RunManifest.load(path)

    def test_defaults(self, tmp_path: Path) -> None:
        """Test missing optional entries fall back to the configuration."""
        path = tmp_path / "manifest.yaml"
        path.write_text(yaml.safe_dump({"config": {"n_agents": 6}}))

        manifest = RunManifest.load(path)

        assert manifest.agent_counts == (6,)
        assert manifest.duration is None
