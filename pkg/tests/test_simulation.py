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

"""Test scenario generation, episodes and the paired benchmark."""

import os
from typing import Optional
from typing import Tuple

import attr
import numpy as np
import pytest

from thoth.topo_orca.episode_log import PLAIN_ORCA
from thoth.topo_orca.episode_log import TOPO_GUIDED
from thoth.topo_orca.episode_log import EpisodeLog
from thoth.topo_orca.exceptions import BenchmarkAborted
from thoth.topo_orca.exceptions import ScenarioInfeasible
from thoth.topo_orca.geometry import RectObstacle
from thoth.topo_orca.geometry import Vec2
from thoth.topo_orca.geometry import free_components
from thoth.topo_orca.geometry import rasterize
from thoth.topo_orca.geometry import traversable_fraction
from thoth.topo_orca.guidance import follow
from thoth.topo_orca.guidance import plan_for
from thoth.topo_orca.guidance import toward
from thoth.topo_orca.orca import Agent
from thoth.topo_orca.orca import obstacle_edges
from thoth.topo_orca.orca import orca_step_ex
from thoth.topo_orca.simulation import SCENARIO_STREAM
from thoth.topo_orca.simulation import STARTS_STREAM
from thoth.topo_orca.simulation import ScenarioConfig
from thoth.topo_orca.simulation import assign_goal
from thoth.topo_orca.simulation import derive_seed
from thoth.topo_orca.simulation import generate_scenario
from thoth.topo_orca.simulation import initial_plans
from thoth.topo_orca.simulation import place_starts
from thoth.topo_orca.simulation import run_benchmark
from thoth.topo_orca.simulation import run_episode
from thoth.topo_orca.simulation import run_episode_set
from thoth.topo_orca.topology import prune_spurs
from thoth.topo_orca.topology import skeleton_to_graph
from thoth.topo_orca.topology import thin

from .base_test import TopoOrcaTestCase


class TestScenarioConfig(TopoOrcaTestCase):
    """Test configuration defaults and validation."""

    def test_defaults(self) -> None:
        """Test derived radii and lengths."""
        cfg = ScenarioConfig()

        assert cfg.goal_reach == pytest.approx(0.6)
        assert cfg.waypoint_reach == pytest.approx(0.6)
        assert cfg.prune_min_length == pytest.approx(0.9)
        assert cfg.policies == (PLAIN_ORCA, TOPO_GUIDED)
        assert cfg.frames_per_episode == 196
        assert cfg.n_episodes == 200

    def test_overrides(self) -> None:
        """Test explicitly configured radii win over the derived ones."""
        cfg = ScenarioConfig(goal_reach_radius=1.0, waypoint_reach_radius="0.4", policy=TOPO_GUIDED)

        assert cfg.goal_reach == 1.0
        assert cfg.waypoint_reach == 0.4
        assert cfg.policies == (TOPO_GUIDED,)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"world_w": 0.0},
            {"n_agents": 0},
            {"n_obstacles": -1},
            {"obstacle_min_size": 3.0, "obstacle_max_size": 2.0},
            {"cell_size": 25.0},
            {"min_traversable": 1.5},
            {"min_traversable": 0.0},
            {"rng_seed": -1},
            {"rng_seed": 2**64},
            {"policy": "social_forces"},
            {"goal_reach_radius": -0.5},
            {"frozen_theta": 1.0},
            {"goal_min_distance": 1.0},
        ],
    )
    def test_invalid(self, overrides: dict) -> None:
        """Test values out of their domain are rejected."""
        with pytest.raises(ValueError):
            ScenarioConfig(**overrides)


class TestSeeds(TopoOrcaTestCase):
    """Test derivation of per-episode random streams."""

    def test_deterministic(self) -> None:
        """Test the same inputs give the same seed."""
        assert derive_seed(42, 3, SCENARIO_STREAM) == derive_seed(42, 3, SCENARIO_STREAM)

    def test_independent(self) -> None:
        """Test seeds differ across master seeds, episodes and streams."""
        seeds = {
            derive_seed(master, episode, stream)
            for master in (0, 1)
            for episode in range(20)
            for stream in (SCENARIO_STREAM, STARTS_STREAM)
        }

        assert len(seeds) == 80
        assert all(0 <= seed < 2**64 for seed in seeds)


class TestScenario(TopoOrcaTestCase):
    """Test scenario sampling."""

    def test_accepted(self) -> None:
        """Test an accepted scenario satisfies all acceptance conditions."""
        cfg = self.small_config()
        scenario = generate_scenario(cfg, derive_seed(cfg.rng_seed, 0, SCENARIO_STREAM))

        assert len(scenario.obstacles) == 3
        assert all(obstacle.inside_world(cfg.world_w, cfg.world_h) for obstacle in scenario.obstacles)
        for obstacle in scenario.obstacles:
            assert cfg.obstacle_min_size - 1e-9 <= obstacle.width <= cfg.obstacle_max_size + 1e-9
        assert traversable_fraction(scenario.grid) >= cfg.min_traversable
        assert free_components(scenario.grid) == 1
        assert scenario.grid == rasterize(cfg.world_w, cfg.world_h, cfg.cell_size, scenario.obstacles, cfg.radius)
        assert len(scenario.edges) == 4 * 3 + 4

    def test_deterministic(self) -> None:
        """Test the same seed samples the same scenario."""
        cfg = self.small_config()

        first = generate_scenario(cfg, 11)
        second = generate_scenario(cfg, 11)

        assert first.obstacles == second.obstacles
        assert first.grid == second.grid
        assert first.topo == second.topo
        assert generate_scenario(cfg, 12).obstacles != first.obstacles

    def test_infeasible(self) -> None:
        """Test rejection sampling gives up once its budget is exhausted."""
        cfg = self.small_config(min_traversable=1.0, scenario_attempts=3)

        with pytest.raises(ScenarioInfeasible):
            generate_scenario(cfg, 1)

    def test_obstacles_do_not_fit(self) -> None:
        """Test obstacles larger than the world are reported."""
        cfg = self.small_config(world_w=1.0, world_h=1.0, obstacle_min_size=0.5, obstacle_max_size=0.5)

        with pytest.raises(ScenarioInfeasible):
            generate_scenario(cfg, 1)

    def test_place_starts(self) -> None:
        """Test agents are placed on free cell centers without overlaps."""
        cfg = self.small_config()
        scenario = generate_scenario(cfg, 5)

        starts = place_starts(cfg, scenario.grid, np.random.default_rng(3), 6)

        assert len(starts) == 6
        assert all(scenario.grid.is_free(start) for start in starts)
        for i, first in enumerate(starts):
            assert scenario.grid.cell_center(*scenario.grid.world_to_cell(first)) == first
            for second in starts[i + 1 :]:
                assert first.distance(second) >= 2 * cfg.radius

    def test_place_too_many(self) -> None:
        """Test a crowd that does not fit is infeasible."""
        cfg = self.small_config(world_w=2.0, world_h=2.0, n_obstacles=0, goal_attempts=5)
        grid = rasterize(2.0, 2.0, 0.1, [], cfg.radius)

        with pytest.raises(ScenarioInfeasible):
            place_starts(cfg, grid, np.random.default_rng(0), 20)

    def test_assign_goal(self) -> None:
        """Test goals are far from the agent and spaced from other goals."""
        grid = rasterize(10.0, 10.0, 0.1, [], 0.3)
        agent = Agent(id=0, position=Vec2(5.0, 5.0), goal=Vec2(5.0, 5.0))
        rng = np.random.default_rng(8)
        other = [Vec2(2.0, 2.0), Vec2(8.0, 8.0)]

        for _ in range(50):
            goal = assign_goal(agent, grid, rng, other_goals=other, min_distance=3.0)
            assert grid.is_free(goal)
            assert goal.distance(agent.position) >= 3.0
            assert all(goal.distance(point) >= 2 * agent.radius for point in other)

    def test_assign_goal_relaxed(self, caplog: pytest.LogCaptureFixture) -> None:
        """Test an unsatisfiable distance requirement is dropped with a warning."""
        grid = rasterize(10.0, 10.0, 0.1, [], 0.3)
        agent = Agent(id=0, position=Vec2(5.0, 5.0), goal=Vec2(5.0, 5.0))

        goal = assign_goal(agent, grid, np.random.default_rng(8), min_distance=100.0, attempts=10)

        assert grid.is_free(goal)
        assert "relaxing the constraint" in caplog.text


class TestEpisode(TopoOrcaTestCase):
    """Test running episodes."""

    def _scenario_logs(self, **overrides: object):  # type: ignore
        cfg = self.small_config(**overrides)
        scenario = generate_scenario(cfg, derive_seed(cfg.rng_seed, 0, SCENARIO_STREAM))
        return cfg, scenario, {policy: run_episode(cfg, scenario, policy) for policy in cfg.policies}

    def test_log_shape(self) -> None:
        """Test a log holds every frame of every agent."""
        cfg, scenario, logs = self._scenario_logs()

        for policy, log in logs.items():
            assert log.policy == policy
            assert log.n_frames == cfg.frames_per_episode
            assert log.n_agents == cfg.n_agents
            assert log.seed == scenario.seed
            assert log.goal_reach_radius == pytest.approx(0.6)
            assert len(log.goals) >= cfg.n_agents

    def test_reproducible(self) -> None:
        """Test the same seed produces identical logs."""
        cfg, scenario, logs = self._scenario_logs()

        for policy, log in logs.items():
            assert run_episode(cfg, scenario, policy) == log
            assert run_episode(cfg, scenario, policy).to_text() == log.to_text()

    def test_paired(self) -> None:
        """Test both policies see the same obstacles, starts and first goals."""
        cfg, _, logs = self._scenario_logs()
        plain, guided = logs[PLAIN_ORCA], logs[TOPO_GUIDED]

        assert plain.obstacles == guided.obstacles
        assert plain.starts == guided.starts
        assert plain.goals[: cfg.n_agents] == guided.goals[: cfg.n_agents]

    @pytest.mark.parametrize("seed", [7] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(100, 120)])
    def test_policies_coincide_without_obstacles(self, seed: int) -> None:
        """Test guidance reduces to heading straight to the goal in an empty world."""
        _, _, logs = self._scenario_logs(n_obstacles=0, frames_per_episode=120, rng_seed=seed)
        plain, guided = logs[PLAIN_ORCA], logs[TOPO_GUIDED]

        assert np.array_equal(plain.positions, guided.positions)
        assert plain.reach_events == guided.reach_events

    def test_reach_events(self) -> None:
        """Test every reach is logged in the frame the agent got close to its goal and opens a new path."""
        cfg, _, logs = self._scenario_logs(frames_per_episode=150)

        for log in logs.values():
            assert log.reach_events
            goals = log.goal_positions()
            for event in log.reach_events:
                distance = np.linalg.norm(log.positions[event.frame, event.agent] - goals[event.frame, event.agent])
                assert distance < cfg.goal_reach + 1e-5
                assert log.path_indices[event.frame, event.agent] == event.path_index
                if event.frame + 1 < log.n_frames:
                    assert log.path_indices[event.frame + 1, event.agent] == event.path_index + 1

    @staticmethod
    def _assert_separated(log: EpisodeLog) -> None:
        """Check agents keep at least two radii apart in every frame the solver satisfied all constraints."""
        fallback_frames = {event.frame for event in log.fallback_events}
        for frame in range(log.n_frames):
            if frame in fallback_frames:
                continue
            positions = log.positions[frame]
            gaps = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
            np.fill_diagonal(gaps, np.inf)
            assert gaps.min() >= 2 * log.radius - 1e-6, f"agents overlap in frame {frame}"

    def test_no_overlaps(self) -> None:
        """Test agents keep apart from each other in every frame."""
        _, _, logs = self._scenario_logs(n_agents=6, frames_per_episode=100)

        for log in logs.values():
            self._assert_separated(log)

    @pytest.mark.slow
    def test_no_overlaps_crowded(self) -> None:
        """Test ten agents never overlap over seeded default episodes."""
        cfg = ScenarioConfig(n_agents=10)

        for episode in range(50):
            logs = run_episode_set(cfg, episode, (10,))

            assert logs is not None
            for log in logs:
                self._assert_separated(log)

    def test_unknown_policy(self) -> None:
        """Test only known policies run."""
        cfg = self.small_config()
        scenario = generate_scenario(cfg, 3)

        with pytest.raises(ValueError):
            run_episode(cfg, scenario, "social_forces")

    def test_initial_plans(self) -> None:
        """Test every agent gets a plan from its start to its first goal."""
        cfg = self.small_config()
        scenario = generate_scenario(cfg, derive_seed(cfg.rng_seed, 1, SCENARIO_STREAM), 1)

        agents, plans = initial_plans(cfg, scenario)

        assert sorted(plans) == [agent.id for agent in agents]
        for agent in agents:
            assert plans[agent.id].waypoints[0] == agent.position
            assert plans[agent.id].goal == agent.goal

    def test_agent_counts_share_scenario(self) -> None:
        """Test different crowd sizes of one episode share the obstacles and a prefix of starts."""
        cfg = self.small_config(frames_per_episode=5)

        logs = run_episode_set(cfg, 0, (2, 4))

        assert logs is not None
        assert [(log.n_agents, log.policy) for log in logs] == [
            (2, PLAIN_ORCA),
            (2, TOPO_GUIDED),
            (4, PLAIN_ORCA),
            (4, TOPO_GUIDED),
        ]
        assert logs[0].obstacles == logs[3].obstacles
        assert logs[3].starts[:2] == logs[0].starts

    @staticmethod
    def _wall_race(wall: RectObstacle, start: Vec2, goal: Vec2, n_frames: int) -> Tuple[Optional[int], Agent]:
        """Race a plainly steered and a guided agent to the goal, get the guided arrival frame and the plain agent."""
        grid = rasterize(12.0, 12.0, 0.1, [wall], 0.3)
        topo = prune_spurs(skeleton_to_graph(thin(grid), grid), 0.9)
        edges = obstacle_edges([wall], 12.0, 12.0)

        plain = Agent(id=0, position=start, goal=goal)
        guided = Agent(id=0, position=start, goal=goal)
        plan = plan_for(guided, topo, grid)
        reached = None
        for frame in range(n_frames):
            plain = attr.evolve(plain, pref_velocity=toward(plain, goal))
            (plain,), _ = orca_step_ex([plain], edges, world_w=12.0, world_h=12.0)

            if reached is None:
                velocity, plan = follow(guided, plan, 0.6)
                guided = attr.evolve(guided, pref_velocity=velocity)
                (guided,), _ = orca_step_ex([guided], edges, world_w=12.0, world_h=12.0)
                if guided.position.distance(goal) < 0.6:
                    reached = frame
        return reached, plain

    def test_guidance_escapes_wall(self) -> None:
        """Test a guided agent walks around a wall a plainly steered agent stalls behind."""
        goal = Vec2(6.0, 9.0)

        reached, plain = self._wall_race(self.rect(2.0, 6.0, 10.0, 6.5), Vec2(6.0, 3.0), goal, 196)

        assert reached is not None
        assert plain.position.distance(goal) > 2.0
        assert plain.position.y < 6.0

    @pytest.mark.slow
    def test_guidance_escapes_seeded_walls(self) -> None:
        """Test the guided agent gets around walls of seeded placements within an episode."""
        rng = np.random.default_rng(196)
        for _ in range(20):
            center_x, wall_y = rng.uniform(5.5, 6.5), rng.uniform(5.0, 7.0)
            wall = self.rect(center_x - 4.0, wall_y, center_x + 4.0, wall_y + 0.5)
            column = center_x + rng.uniform(-1.0, 1.0)
            start, goal = Vec2(column, wall_y - 3.0), Vec2(column, wall_y + 3.5)

            reached, plain = self._wall_race(wall, start, goal, ScenarioConfig().frames_per_episode)

            assert reached is not None
            assert plain.position.y < wall_y
            assert plain.position.distance(goal) >= 0.6


class TestBenchmark(TopoOrcaTestCase):
    """Test the paired benchmark."""

    def test_reports(self) -> None:
        """Test the benchmark reports every policy and crowd size."""
        cfg = self.small_config()

        result = run_benchmark(cfg, agent_counts=(2, 4), jobs=1)

        assert result.skipped == []
        assert len(result.logs) == cfg.n_episodes * 2 * 2
        assert set(result.reports) == {(PLAIN_ORCA, 2), (TOPO_GUIDED, 2), (PLAIN_ORCA, 4), (TOPO_GUIDED, 4)}
        assert all(report.n_episodes == cfg.n_episodes for report in result.reports.values())

    def test_aborted(self) -> None:
        """Test too many infeasible episodes abort the benchmark."""
        cfg = self.small_config(min_traversable=1.0, scenario_attempts=2)

        with pytest.raises(BenchmarkAborted, match="2 of 2 episodes"):
            run_benchmark(cfg, jobs=1)

    @pytest.mark.slow
    def test_jobs_do_not_change_results(self) -> None:
        """Test worker processes produce the same logs as a sequential run."""
        cfg = self.small_config(n_episodes=4)

        sequential = run_benchmark(cfg, jobs=1)
        parallel = run_benchmark(cfg, jobs=2)

        assert parallel.logs == sequential.logs
        assert parallel.reports == sequential.reports

    @pytest.mark.slow
    def test_guidance_improves_all_metrics(self) -> None:
        """Test guidance wins on every metric and crowding hurts both policies on the default benchmark."""
        cfg = ScenarioConfig()

        reports = run_benchmark(cfg, agent_counts=(4, 10), jobs=os.cpu_count() or 1).reports

        for n_agents in (4, 10):
            plain, guided = reports[(PLAIN_ORCA, n_agents)], reports[(TOPO_GUIDED, n_agents)]
            assert guided.avg_velocity_per_path > plain.avg_velocity_per_path
            assert guided.pct_mutual_frozen_frames < plain.pct_mutual_frozen_frames
            assert guided.pct_frozen_frames_per_path < plain.pct_frozen_frames_per_path
            assert guided.avg_occupied_paths < plain.avg_occupied_paths
            assert guided.avg_total_paths > plain.avg_total_paths
            assert guided.pct_stuck_agents < plain.pct_stuck_agents

        assert reports[(PLAIN_ORCA, 4)].pct_stuck_agents >= 3 * reports[(TOPO_GUIDED, 4)].pct_stuck_agents

        for policy in (PLAIN_ORCA, TOPO_GUIDED):
            few, many = reports[(policy, 4)], reports[(policy, 10)]
            assert many.avg_velocity_per_path < few.avg_velocity_per_path
            assert many.pct_mutual_frozen_frames > few.pct_mutual_frozen_frames
            assert many.pct_frozen_frames_per_path > few.pct_frozen_frames_per_path
            assert many.avg_occupied_paths > few.avg_occupied_paths
            assert many.pct_stuck_agents > few.pct_stuck_agents
