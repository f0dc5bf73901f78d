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

"""Scenario generation, goal cycling and episode execution under plain and topology-guided ORCA."""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import attr
import numpy as np

from .episode_log import EpisodeLog
from .episode_log import FallbackEvent
from .episode_log import GoalRecord
from .episode_log import PLAIN_ORCA
from .episode_log import POLICIES
from .episode_log import ReachEvent
from .episode_log import TOPO_GUIDED
from .episode_log import quantize
from .exceptions import BenchmarkAborted
from .exceptions import NoPath
from .exceptions import ScenarioInfeasible
from .geometry import OccupancyGrid
from .geometry import RectObstacle
from .geometry import Vec2
from .geometry import free_components
from .geometry import rasterize
from .geometry import traversable_fraction
from .guidance import WaypointPlan
from .guidance import follow
from .guidance import plan_for
from .guidance import toward
from .metrics import FROZEN_THETA
from .metrics import MetricsReport
from .metrics import compute_report
from .orca import Agent
from .orca import ObstacleEdge
from .orca import obstacle_edges
from .orca import orca_step_ex
from .topology import TopoGraph
from .topology import prune_spurs
from .topology import skeleton_to_graph
from .topology import thin

_LOGGER = logging.getLogger(__name__)

_SCENARIO_ATTEMPTS = int(os.getenv("THOTH_TOPO_ORCA_SCENARIO_ATTEMPTS", 1000))
_GOAL_ATTEMPTS = int(os.getenv("THOTH_TOPO_ORCA_GOAL_ATTEMPTS", 1000))
# Largest share of infeasible episodes a benchmark tolerates.
_MAX_INFEASIBLE_SHARE = 0.01

# Random stream ids, independent of the policy and of the number of agents.
SCENARIO_STREAM = 0
STARTS_STREAM = 1
GOAL_STREAM = 100

BOTH = "both"


def _positive(_: Any, attribute: "attr.Attribute[Any]", value: float) -> None:
    if not value > 0:
        raise ValueError(f"{attribute.name} has to be positive, got {value}")


def _at_least(minimum: int) -> Callable[[Any, "attr.Attribute[Any]", int], None]:
    def check(_: Any, attribute: "attr.Attribute[Any]", value: int) -> None:
        if value < minimum:
            raise ValueError(f"{attribute.name} has to be at least {minimum}, got {value}")

    return check


def _optional_positive(instance: Any, attribute: "attr.Attribute[Any]", value: Optional[float]) -> None:
    if value is not None:
        _positive(instance, attribute, value)


@attr.s(slots=True, frozen=True)
class ScenarioConfig:
    """Configuration of the benchmark; defaults reproduce the 4-agent setup with 3 obstacles."""

    world_w = attr.ib(type=float, default=20.0, converter=float, validator=_positive)
    world_h = attr.ib(type=float, default=20.0, converter=float, validator=_positive)
    n_agents = attr.ib(type=int, default=4, converter=int, validator=_at_least(1))
    n_obstacles = attr.ib(type=int, default=3, converter=int, validator=_at_least(0))
    obstacle_min_size = attr.ib(type=float, default=1.5, converter=float, validator=_positive)
    obstacle_max_size = attr.ib(type=float, default=5.0, converter=float, validator=_positive)
    radius = attr.ib(type=float, default=0.3, converter=float, validator=_positive)
    max_speed = attr.ib(type=float, default=0.2, converter=float, validator=_positive)
    neighbor_dist = attr.ib(type=float, default=3.0, converter=float, validator=_positive)
    max_neighbors = attr.ib(type=int, default=10, converter=int, validator=_at_least(1))
    time_horizon = attr.ib(type=float, default=10.0, converter=float, validator=_positive)
    time_horizon_obst = attr.ib(type=float, default=10.0, converter=float, validator=_positive)
    cell_size = attr.ib(type=float, default=0.1, converter=float, validator=_positive)
    frames_per_episode = attr.ib(type=int, default=196, converter=int, validator=_at_least(1))
    n_episodes = attr.ib(type=int, default=200, converter=int, validator=_at_least(1))
    min_traversable = attr.ib(type=float, default=0.8, converter=float)
    rng_seed = attr.ib(type=int, default=0, converter=int)
    policy = attr.ib(type=str, default=BOTH, validator=attr.validators.in_(POLICIES + (BOTH,)))
    goal_reach_radius = attr.ib(
        type=Optional[float],
        default=None,
        converter=attr.converters.optional(float),
        validator=_optional_positive,
    )
    waypoint_reach_radius = attr.ib(
        type=Optional[float],
        default=None,
        converter=attr.converters.optional(float),
        validator=_optional_positive,
    )
    prune_length = attr.ib(type=Optional[float], default=None, converter=attr.converters.optional(float))
    goal_min_distance = attr.ib(type=float, default=0.25, converter=float)
    frozen_theta = attr.ib(type=float, default=FROZEN_THETA, converter=float)
    scenario_attempts = attr.ib(type=int, default=_SCENARIO_ATTEMPTS, converter=int, validator=_at_least(1))
    goal_attempts = attr.ib(type=int, default=_GOAL_ATTEMPTS, converter=int, validator=_at_least(1))

    @obstacle_max_size.validator
    def _check_sizes(self, _: Any, value: float) -> None:
        if value < self.obstacle_min_size:
            raise ValueError(f"obstacle_max_size {value} is smaller than obstacle_min_size {self.obstacle_min_size}")

    @cell_size.validator
    def _check_cell_size(self, _: Any, value: float) -> None:
        if value > min(self.world_w, self.world_h):
            raise ValueError(f"cell_size {value} is larger than the world")

    @min_traversable.validator
    def _check_min_traversable(self, _: Any, value: float) -> None:
        if not 0.0 < value <= 1.0:
            raise ValueError(f"min_traversable has to be in (0, 1], got {value}")

    @rng_seed.validator
    def _check_seed(self, _: Any, value: int) -> None:
        if not 0 <= value < 2**64:
            raise ValueError(f"rng_seed has to be an unsigned 64-bit integer, got {value}")

    @goal_min_distance.validator
    def _check_goal_min_distance(self, _: Any, value: float) -> None:
        if not 0.0 <= value < 1.0:
            raise ValueError(f"goal_min_distance has to be a fraction of the world diagonal in [0, 1), got {value}")

    @frozen_theta.validator
    def _check_theta(self, _: Any, value: float) -> None:
        if not 0.0 < value < 1.0:
            raise ValueError(f"frozen_theta has to be in (0, 1), got {value}")

    @property
    def goal_reach(self) -> float:
        """Distance at which a goal counts as reached, twice the agent radius unless configured."""
        return self.goal_reach_radius if self.goal_reach_radius is not None else 2.0 * self.radius

    @property
    def waypoint_reach(self) -> float:
        """Distance at which a waypoint counts as passed."""
        return self.waypoint_reach_radius if self.waypoint_reach_radius is not None else 2.0 * self.radius

    @property
    def prune_min_length(self) -> float:
        """Skeleton spurs shorter than this are pruned."""
        return self.prune_length if self.prune_length is not None else 3.0 * self.radius

    @property
    def policies(self) -> Tuple[str, ...]:
        """Policies to be run."""
        return POLICIES if self.policy == BOTH else (self.policy,)

    def to_dict(self) -> Dict[str, Any]:
        """Get the configuration as a plain dictionary."""
        return attr.asdict(self)


@attr.s(slots=True, frozen=True)
class Scenario:
    """Static part of an episode: obstacles, the inflated grid and its topological graph."""

    episode = attr.ib(type=int)
    seed = attr.ib(type=int)
    obstacles = attr.ib(type=Tuple[RectObstacle, ...], converter=tuple)
    grid = attr.ib(type=OccupancyGrid)
    topo = attr.ib(type=TopoGraph)
    edges = attr.ib(type=Tuple[ObstacleEdge, ...], converter=tuple)


@attr.s(slots=True)
class BenchmarkResult:
    """Logs of all feasible episodes, metrics per (policy, number of agents) and the skipped episodes."""

    logs = attr.ib(type=List[EpisodeLog], factory=list)
    skipped = attr.ib(type=List[int], factory=list)
    reports = attr.ib(type=Dict[Tuple[str, int], MetricsReport], factory=dict)


def derive_seed(master: int, episode: int, stream: int) -> int:
    """Mix a master seed, an episode index and a stream id into an independent 64-bit seed."""
    sequence = np.random.SeedSequence(entropy=master, spawn_key=(episode, stream))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _rng(cfg: ScenarioConfig, episode: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.rng_seed, episode, stream))


def _clearance(cfg: ScenarioConfig) -> float:
    """Free space kept between inflated obstacles and the inflated world boundary."""
    return 2.0 * cfg.radius + 2.0 * cfg.cell_size


def _sample_obstacles(cfg: ScenarioConfig, rng: np.random.Generator) -> Optional[List[RectObstacle]]:
    """Sample obstacles clear of the boundary band, None when two of them are too close."""
    margin = _clearance(cfg)
    obstacles: List[RectObstacle] = []
    for _ in range(cfg.n_obstacles):
        w, h = rng.uniform(cfg.obstacle_min_size, cfg.obstacle_max_size, size=2).tolist()
        w = min(w, cfg.world_w - 2.0 * margin - cfg.cell_size)
        h = min(h, cfg.world_h - 2.0 * margin - cfg.cell_size)
        if w <= 0.0 or h <= 0.0:
            raise ScenarioInfeasible(f"Obstacles do not fit into a {cfg.world_w}x{cfg.world_h} world")
        cx = rng.uniform(margin + w / 2.0, cfg.world_w - margin - w / 2.0)
        cy = rng.uniform(margin + h / 2.0, cfg.world_h - margin - h / 2.0)
        obstacles.append(
            RectObstacle(min_corner=Vec2(cx - w / 2.0, cy - h / 2.0), max_corner=Vec2(cx + w / 2.0, cy + h / 2.0))
        )

    for i, first in enumerate(obstacles):
        for second in obstacles[i + 1 :]:
            if first.gap(second) < margin:
                return None
    return obstacles


def generate_scenario(cfg: ScenarioConfig, seed: int, episode: int = 0) -> Scenario:
    """Sample obstacles by rejection until free space is traversable enough and connected, then build its graph."""
    rng = np.random.default_rng(seed)
    for attempt in range(1, cfg.scenario_attempts + 1):
        obstacles = _sample_obstacles(cfg, rng)
        if obstacles is None:
            continue

        grid = rasterize(cfg.world_w, cfg.world_h, cfg.cell_size, obstacles, cfg.radius)
        fraction = traversable_fraction(grid)
        if fraction < cfg.min_traversable:
            _LOGGER.debug("Rejected scenario with traversable fraction %.4f", fraction)
            continue
        if free_components(grid) != 1:
            _LOGGER.debug("Rejected scenario with disconnected free space")
            continue

        topo = prune_spurs(skeleton_to_graph(thin(grid), grid), cfg.prune_min_length)
        _LOGGER.debug(
            "Episode %d scenario accepted after %d attempts: traversable %.4f, %d nodes, %d edges",
            episode,
            attempt,
            fraction,
            len(topo.nodes),
            len(topo.edges),
        )
        return Scenario(
            episode=episode,
            seed=seed,
            obstacles=obstacles,
            grid=grid,
            topo=topo,
            edges=obstacle_edges(obstacles, cfg.world_w, cfg.world_h),
        )

    raise ScenarioInfeasible(f"No acceptable scenario sampled within {cfg.scenario_attempts} attempts")


def _free_centers(grid: OccupancyGrid) -> np.ndarray:
    """Centers of free cells in raster order, shaped (n, 2)."""
    rows, columns = np.nonzero(~grid.cells)
    return np.stack(
        (grid.origin.x + (columns + 0.5) * grid.cell_size, grid.origin.y + (rows + 0.5) * grid.cell_size),
        axis=1,
    )


def place_starts(cfg: ScenarioConfig, grid: OccupancyGrid, rng: np.random.Generator, n_agents: int) -> List[Vec2]:
    """Place agents on free cell centers, pairwise far enough apart not to overlap."""
    centers = _free_centers(grid)
    if not len(centers):
        raise ScenarioInfeasible("No free cell to place agents on")

    separation = 2.0 * cfg.radius + cfg.cell_size
    starts: List[Vec2] = []
    for _ in range(cfg.goal_attempts * n_agents):
        if len(starts) == n_agents:
            break
        candidate = Vec2(*centers[int(rng.integers(len(centers)))].tolist())
        if all(candidate.distance(other) >= separation for other in starts):
            starts.append(candidate)

    if len(starts) != n_agents:
        raise ScenarioInfeasible(f"Could not place {n_agents} non-overlapping agents")
    return starts


def assign_goal(
    agent: Agent,
    grid: OccupancyGrid,
    rng: np.random.Generator,
    *,
    other_goals: Sequence[Vec2] = (),
    min_distance: float = 0.0,
    attempts: int = _GOAL_ATTEMPTS,
) -> Vec2:
    """Sample a goal on a free cell center, away from other goals and from the current position of the agent.

    When the sampling budget is exhausted the distance to the agent is no longer required and sampling is
    retried once.
    """
    centers = _free_centers(grid)
    if not len(centers):
        raise ScenarioInfeasible("No free cell to place a goal on")

    spacing = 2.0 * agent.radius
    for required in (min_distance, 0.0):
        for _ in range(attempts):
            candidate = Vec2(*centers[int(rng.integers(len(centers)))].tolist())
            if candidate.distance(agent.position) < required:
                continue
            if any(candidate.distance(other) < spacing for other in other_goals):
                continue
            return candidate
        _LOGGER.warning(
            "No goal for agent %d at least %.3fm away within %d attempts, relaxing the constraint",
            agent.id,
            required,
            attempts,
        )

    raise ScenarioInfeasible(f"No goal could be assigned to agent {agent.id}")


@attr.s(slots=True)
class _Episode:
    """Mutable state of a running episode."""

    cfg = attr.ib(type=ScenarioConfig)
    scenario = attr.ib(type=Scenario)
    policy = attr.ib(type=str)
    agents = attr.ib(type=List[Agent])
    goal_rngs = attr.ib(type=List[np.random.Generator])
    goals = attr.ib(type=List[GoalRecord], factory=list)
    goal_ids = attr.ib(type=List[int], factory=list)
    path_indices = attr.ib(type=List[int], factory=list)
    plans = attr.ib(type=Dict[int, WaypointPlan], factory=dict)

    @classmethod
    def spawn(cls, cfg: ScenarioConfig, scenario: Scenario, policy: str, n_agents: int) -> "_Episode":
        """Place agents on their starts and hand out their first goals."""
        episode = scenario.episode
        starts = place_starts(cfg, scenario.grid, _rng(cfg, episode, STARTS_STREAM), n_agents)
        agents = [
            Agent(
                id=i,
                position=start,
                goal=start,
                radius=cfg.radius,
                max_speed=cfg.max_speed,
                neighbor_dist=cfg.neighbor_dist,
                max_neighbors=cfg.max_neighbors,
                time_horizon=cfg.time_horizon,
                time_horizon_obst=cfg.time_horizon_obst,
            )
            for i, start in enumerate(starts)
        ]
        state = cls(
            cfg=cfg,
            scenario=scenario,
            policy=policy,
            agents=agents,
            goal_rngs=[_rng(cfg, episode, GOAL_STREAM + i) for i in range(n_agents)],
        )
        for i in range(n_agents):
            state.agents[i] = state.new_goal(state.agents[i])
        state.path_indices = [0] * n_agents
        return state

    def new_goal(self, agent: Agent) -> Agent:
        """Assign a fresh goal to an agent (and a plan to reach it under guidance)."""
        grid = self.scenario.grid
        min_distance = self.cfg.goal_min_distance * math.hypot(self.cfg.world_w, self.cfg.world_h)
        other_goals = [other.goal for other in self.agents if other.id != agent.id and other.id < len(self.goal_ids)]

        for _ in range(self.cfg.goal_attempts):
            goal = assign_goal(
                agent,
                grid,
                self.goal_rngs[agent.id],
                other_goals=other_goals,
                min_distance=min_distance,
                attempts=self.cfg.goal_attempts,
            )
            updated = attr.evolve(agent, goal=goal)
            if self.policy == TOPO_GUIDED:
                try:
                    self.plans[agent.id] = plan_for(updated, self.scenario.topo, grid)
                except NoPath as exc:
                    _LOGGER.debug("Resampling goal of agent %d: %s", agent.id, str(exc))
                    continue

            goal_id = len(self.goals)
            self.goals.append(GoalRecord(goal_id=goal_id, agent=agent.id, position=_quantized(goal)))
            if agent.id < len(self.goal_ids):
                self.goal_ids[agent.id] = goal_id
            else:
                self.goal_ids.append(goal_id)
            return updated

        raise ScenarioInfeasible(f"No reachable goal for agent {agent.id}")

    def preferred_velocity(self, agent: Agent) -> Vec2:
        """Get the velocity an agent wants to move with in the next step."""
        if self.policy == PLAIN_ORCA:
            return toward(agent, agent.goal)

        velocity, self.plans[agent.id] = follow(agent, self.plans[agent.id], self.cfg.waypoint_reach)
        return velocity


def _quantized(v: Vec2) -> Vec2:
    return Vec2(quantize(v.x), quantize(v.y))


def run_episode(cfg: ScenarioConfig, scenario: Scenario, policy: str, n_agents: Optional[int] = None) -> EpisodeLog:
    """Run a single episode of a policy on the given scenario."""
    if policy not in POLICIES:
        raise ValueError(f"Unknown policy {policy!r}, expected one of {', '.join(POLICIES)}")

    n_agents = n_agents or cfg.n_agents
    episode = scenario.episode
    state = _Episode.spawn(cfg, scenario, policy, n_agents)
    starts = [agent.position for agent in state.agents]

    n_frames = cfg.frames_per_episode
    positions = np.zeros((n_frames, n_agents, 2))
    velocities = np.zeros((n_frames, n_agents, 2))
    goal_ids = np.zeros((n_frames, n_agents), dtype=np.int64)
    path_indices = np.zeros((n_frames, n_agents), dtype=np.int64)
    reach_events: List[ReachEvent] = []
    fallback_events: List[FallbackEvent] = []

    for frame in range(n_frames):
        state.agents = [attr.evolve(agent, pref_velocity=state.preferred_velocity(agent)) for agent in state.agents]
        state.agents, fallback_ids = orca_step_ex(
            state.agents,
            scenario.edges,
            world_w=cfg.world_w,
            world_h=cfg.world_h,
        )
        fallback_events.extend(FallbackEvent(frame=frame, agent=agent_id) for agent_id in fallback_ids)

        for agent in state.agents:
            positions[frame, agent.id] = (quantize(agent.position.x), quantize(agent.position.y))
            velocities[frame, agent.id] = (quantize(agent.velocity.x), quantize(agent.velocity.y))
            goal_ids[frame, agent.id] = state.goal_ids[agent.id]
            path_indices[frame, agent.id] = state.path_indices[agent.id]

        for i, agent in enumerate(state.agents):
            if agent.position.distance(agent.goal) < cfg.goal_reach:
                reach_events.append(ReachEvent(agent=agent.id, frame=frame, path_index=state.path_indices[agent.id]))
                state.path_indices[agent.id] += 1
                state.agents[i] = state.new_goal(agent)

    _LOGGER.debug(
        "Episode %d with %d agents under %s: %d goals reached, %d fallback solves",
        episode,
        n_agents,
        policy,
        len(reach_events),
        len(fallback_events),
    )
    return EpisodeLog(
        episode=episode,
        policy=policy,
        seed=scenario.seed,
        world_w=quantize(cfg.world_w),
        world_h=quantize(cfg.world_h),
        radius=quantize(cfg.radius),
        max_speed=quantize(cfg.max_speed),
        goal_reach_radius=quantize(cfg.goal_reach),
        obstacles=[
            RectObstacle(min_corner=_quantized(o.min_corner), max_corner=_quantized(o.max_corner))
            for o in scenario.obstacles
        ],
        starts=[_quantized(start) for start in starts],
        goals=state.goals,
        positions=positions,
        velocities=velocities,
        goal_ids=goal_ids,
        path_indices=path_indices,
        reach_events=reach_events,
        fallback_events=fallback_events,
    )


def run_episode_set(
    cfg: ScenarioConfig,
    episode: int,
    agent_counts: Sequence[int],
) -> Optional[List[EpisodeLog]]:
    """Run every agent count and policy on one scenario, None when the episode is infeasible."""
    seed = derive_seed(cfg.rng_seed, episode, SCENARIO_STREAM)
    try:
        scenario = generate_scenario(cfg, seed, episode)
        return [
            run_episode(cfg, scenario, policy, n_agents)
            for n_agents in agent_counts
            for policy in cfg.policies
        ]
    except ScenarioInfeasible as exc:
        _LOGGER.warning("Skipping infeasible episode %d: %s", episode, str(exc))
        return None


def _run_job(arguments: Tuple[ScenarioConfig, int, Tuple[int, ...]]) -> Optional[List[EpisodeLog]]:
    cfg, episode, agent_counts = arguments
    return run_episode_set(cfg, episode, agent_counts)


def run_benchmark(
    cfg: ScenarioConfig,
    *,
    agent_counts: Optional[Sequence[int]] = None,
    jobs: int = 1,
) -> BenchmarkResult:
    """Run the paired benchmark, all policies and agent counts see the same scenario and random streams.

    Episodes run in a pool of worker processes; results are collected in episode order so that the outcome does
    not depend on the number of workers.
    """
    counts = tuple(agent_counts or (cfg.n_agents,))
    work = [(cfg, episode, counts) for episode in range(cfg.n_episodes)]
    result = BenchmarkResult()

    def collect(episode: int, logs: Optional[List[EpisodeLog]]) -> None:
        if logs is None:
            result.skipped.append(episode)
        else:
            result.logs.extend(logs)
        if (episode + 1) % 10 == 0 or episode + 1 == cfg.n_episodes:
            _LOGGER.info("Finished %d/%d episodes", episode + 1, cfg.n_episodes)

    if jobs <= 1:
        for item in work:
            collect(item[1], _run_job(item))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            for item, logs in zip(work, executor.map(_run_job, work)):
                collect(item[1], logs)

    if result.skipped and len(result.skipped) >= _MAX_INFEASIBLE_SHARE * cfg.n_episodes:
        raise BenchmarkAborted(
            f"{len(result.skipped)} of {cfg.n_episodes} episodes were infeasible: "
            + ", ".join(map(str, result.skipped))
        )

    result.reports = compute_report(result.logs, cfg.frozen_theta)
    return result


def initial_plans(
    cfg: ScenarioConfig,
    scenario: Scenario,
    n_agents: Optional[int] = None,
) -> Tuple[List[Agent], Dict[int, WaypointPlan]]:
    """Get agents of an episode at their starts with their first goals, and the plans guiding them there."""
    state = _Episode.spawn(cfg, scenario, TOPO_GUIDED, n_agents or cfg.n_agents)
    return state.agents, state.plans
