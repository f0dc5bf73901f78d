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

"""Per-frame trajectory logs of an episode and their line-delimited text form."""

import logging
import math
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

import attr
import numpy as np

from .exceptions import LogFormatError
from .geometry import RectObstacle
from .geometry import Vec2

_LOGGER = logging.getLogger(__name__)

PLAIN_ORCA = "plain_orca"
TOPO_GUIDED = "topo_guided"
POLICIES = (PLAIN_ORCA, TOPO_GUIDED)


def quantize(value: float) -> float:
    """Round a value the way it is written to a log, so that logs read back compare equal."""
    return float(f"{value:.6f}")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


@attr.s(slots=True, frozen=True)
class GoalRecord:
    """A goal handed to an agent during the episode."""

    goal_id = attr.ib(type=int)
    agent = attr.ib(type=int)
    position = attr.ib(type=Vec2)


@attr.s(slots=True, frozen=True)
class ReachEvent:
    """An agent reached the goal of the given path in the given frame."""

    agent = attr.ib(type=int)
    frame = attr.ib(type=int)
    path_index = attr.ib(type=int)


@attr.s(slots=True, frozen=True)
class FallbackEvent:
    """Agent constraints were infeasible in the given frame and the fallback program was used."""

    frame = attr.ib(type=int)
    agent = attr.ib(type=int)


@attr.s(slots=True, frozen=True, eq=False)
class EpisodeLog:
    """Everything recorded about one episode under one policy.

    Frame ``f`` holds the state right after step ``f``; start positions are the state before frame 0. Arrays are
    indexed ``[frame, agent]``. A frame record keeps the goal id and path index the agent had during the step, so
    the frame in which a goal is reached still belongs to the path it completes.
    """

    episode = attr.ib(type=int)
    policy = attr.ib(type=str, validator=attr.validators.in_(POLICIES))
    seed = attr.ib(type=int)
    world_w = attr.ib(type=float)
    world_h = attr.ib(type=float)
    radius = attr.ib(type=float)
    max_speed = attr.ib(type=float)
    goal_reach_radius = attr.ib(type=float)
    obstacles = attr.ib(type=Tuple[RectObstacle, ...], converter=tuple)
    starts = attr.ib(type=Tuple[Vec2, ...], converter=tuple)
    goals = attr.ib(type=Tuple[GoalRecord, ...], converter=tuple)
    positions = attr.ib(type=np.ndarray)
    velocities = attr.ib(type=np.ndarray)
    goal_ids = attr.ib(type=np.ndarray)
    path_indices = attr.ib(type=np.ndarray)
    reach_events = attr.ib(type=Tuple[ReachEvent, ...], converter=tuple, default=())
    fallback_events = attr.ib(type=Tuple[FallbackEvent, ...], converter=tuple, default=())

    @positions.validator
    def _check_shapes(self, _: Any, value: np.ndarray) -> None:
        n_frames = value.shape[0]
        n_agents = len(self.starts)
        if value.shape != (n_frames, n_agents, 2):
            raise ValueError(f"Expected positions of shape (frames, {n_agents}, 2), got {value.shape}")

    @path_indices.validator
    def _check_path_indices(self, _: Any, value: np.ndarray) -> None:
        if value.size and bool((np.diff(value, axis=0) < 0).any()):
            raise ValueError("Path indices have to be non-decreasing per agent")

    def __eq__(self, other: object) -> bool:
        """Compare logs field by field, arrays element-wise."""
        if not isinstance(other, EpisodeLog):
            return NotImplemented
        for field in attr.fields(EpisodeLog):
            mine, theirs = getattr(self, field.name), getattr(other, field.name)
            if isinstance(mine, np.ndarray):
                if not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    __hash__ = object.__hash__

    @property
    def n_frames(self) -> int:
        """Number of logged frames."""
        return int(self.positions.shape[0])

    @property
    def n_agents(self) -> int:
        """Number of simulated agents."""
        return len(self.starts)

    def goal_positions(self) -> np.ndarray:
        """Get coordinates of the goal each agent pursued in each frame, shaped (frames, agents, 2)."""
        table = np.zeros((len(self.goals), 2))
        for goal in self.goals:
            table[goal.goal_id] = goal.position.as_tuple()
        if not len(self.goals):
            return np.zeros(self.positions.shape)
        return table[self.goal_ids]

    def trajectory(self, agent: int) -> List[Vec2]:
        """Get all positions of an agent, starting with its start position."""
        points = [self.starts[agent]]
        points.extend(Vec2(x, y) for x, y in self.positions[:, agent].tolist())
        return points

    def to_text(self) -> str:
        """Serialize into header lines prefixed ``#`` followed by one record per frame and agent."""
        lines = [
            f"# episode {self.episode}",
            f"# policy {self.policy}",
            f"# seed {self.seed}",
            f"# world {_fmt(self.world_w)} {_fmt(self.world_h)}",
            f"# agents {self.n_agents} radius {_fmt(self.radius)} max_speed {_fmt(self.max_speed)}",
            f"# goal_reach_radius {_fmt(self.goal_reach_radius)}",
            f"# frames {self.n_frames}",
        ]
        for obstacle in self.obstacles:
            lines.append(
                "# obstacle "
                + " ".join(
                    _fmt(v)
                    for v in (
                        obstacle.min_corner.x,
                        obstacle.min_corner.y,
                        obstacle.max_corner.x,
                        obstacle.max_corner.y,
                    )
                )
            )
        for agent, start in enumerate(self.starts):
            lines.append(f"# start {agent} {_fmt(start.x)} {_fmt(start.y)}")
        for goal in self.goals:
            lines.append(f"# goal {goal.goal_id} {goal.agent} {_fmt(goal.position.x)} {_fmt(goal.position.y)}")
        for reach in self.reach_events:
            lines.append(f"# reach {reach.agent} {reach.frame} {reach.path_index}")
        for fallback in self.fallback_events:
            lines.append(f"# fallback {fallback.frame} {fallback.agent}")

        positions = self.positions.tolist()
        velocities = self.velocities.tolist()
        goal_ids = self.goal_ids.tolist()
        path_indices = self.path_indices.tolist()
        for frame in range(self.n_frames):
            for agent in range(self.n_agents):
                x, y = positions[frame][agent]
                vx, vy = velocities[frame][agent]
                lines.append(
                    f"{self.episode} {frame} {agent} {_fmt(x)} {_fmt(y)} {_fmt(vx)} {_fmt(vy)} "
                    f"{goal_ids[frame][agent]} {path_indices[frame][agent]}"
                )

        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path: Optional[str] = None) -> "EpisodeLog":
        """Parse a log, malformed input is reported with its line number."""
        return _Parser(path).parse(text)

    def write(self, path: Union[str, Path]) -> None:
        """Write the log into a file."""
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path: Union[str, Path]) -> "EpisodeLog":
        """Read a log from a file."""
        try:
            text = Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise LogFormatError(f"Not a UTF-8 text file: {exc.reason} at byte {exc.start}", path=str(path)) from None
        return cls.from_text(text, path=str(path))


class _Parser:
    """Line-by-line parser of the episode log text form."""

    _SCALARS = {
        "episode": 1,
        "policy": 1,
        "seed": 1,
        "world": 2,
        "agents": 5,
        "goal_reach_radius": 1,
        "frames": 1,
    }

    def __init__(self, path: Optional[str]) -> None:
        """Remember the file name for diagnostics."""
        self.path = path
        self.line = 0

    def error(self, message: str) -> LogFormatError:
        """Create an error pointing at the current line."""
        return LogFormatError(message, path=self.path, line=self.line)

    def number(self, value: str, kind: Any = float) -> Any:
        """Convert a token, reporting a diagnostic on failure."""
        try:
            result = kind(value)
        except ValueError:
            raise self.error(f"Expected {kind.__name__} value, got {value!r}") from None
        if kind is float and not math.isfinite(result):
            raise self.error(f"Expected finite value, got {value!r}")
        return result

    def point(self, x: str, y: str) -> Vec2:
        """Convert a pair of tokens to a position."""
        try:
            return Vec2(self.number(x), self.number(y))
        except ValueError as exc:
            raise self.error(str(exc)) from None

    def parse(self, text: str) -> EpisodeLog:
        """Parse the whole log text."""
        header: Dict[str, List[str]] = {}
        obstacles: List[RectObstacle] = []
        starts: Dict[int, Vec2] = {}
        goals: List[GoalRecord] = []
        reaches: List[ReachEvent] = []
        fallbacks: List[FallbackEvent] = []
        records: List[Tuple[int, Tuple[int, int, int, float, float, float, float, int, int]]] = []

        for number, raw in enumerate(text.splitlines(), start=1):
            self.line = number
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                self._header_line(line[1:].split(), header, obstacles, starts, goals, reaches, fallbacks)
                continue

            fields = line.split()
            if len(fields) != 9:
                raise self.error(f"Expected 9 fields in a frame record, got {len(fields)}")
            records.append(
                (
                    number,
                    (
                        self.number(fields[0], int),
                        self.number(fields[1], int),
                        self.number(fields[2], int),
                        self.number(fields[3]),
                        self.number(fields[4]),
                        self.number(fields[5]),
                        self.number(fields[6]),
                        self.number(fields[7], int),
                        self.number(fields[8], int),
                    ),
                )
            )

        return self._assemble(header, obstacles, starts, goals, reaches, fallbacks, records)

    def _header_line(
        self,
        fields: List[str],
        header: Dict[str, List[str]],
        obstacles: List[RectObstacle],
        starts: Dict[int, Vec2],
        goals: List[GoalRecord],
        reaches: List[ReachEvent],
        fallbacks: List[FallbackEvent],
    ) -> None:
        if not fields:
            raise self.error("Empty header line")

        key, values = fields[0], fields[1:]
        if key in self._SCALARS:
            if len(values) != self._SCALARS[key]:
                raise self.error(f"Header {key!r} expects {self._SCALARS[key]} values, got {len(values)}")
            header[key] = values
        elif key == "obstacle" and len(values) == 4:
            x0, y0, x1, y1 = (self.number(v) for v in values)
            try:
                obstacles.append(RectObstacle(min_corner=Vec2(x0, y0), max_corner=Vec2(x1, y1)))
            except ValueError as exc:
                raise self.error(str(exc)) from None
        elif key == "start" and len(values) == 3:
            starts[self.number(values[0], int)] = self.point(values[1], values[2])
        elif key == "goal" and len(values) == 4:
            goals.append(
                GoalRecord(
                    goal_id=self.number(values[0], int),
                    agent=self.number(values[1], int),
                    position=self.point(values[2], values[3]),
                )
            )
        elif key == "reach" and len(values) == 3:
            agent, frame, path_index = (self.number(v, int) for v in values)
            reaches.append(ReachEvent(agent=agent, frame=frame, path_index=path_index))
        elif key == "fallback" and len(values) == 2:
            frame, agent = (self.number(v, int) for v in values)
            fallbacks.append(FallbackEvent(frame=frame, agent=agent))
        else:
            raise self.error(f"Unknown or malformed header line {key!r}")

    def _assemble(
        self,
        header: Dict[str, List[str]],
        obstacles: List[RectObstacle],
        starts: Dict[int, Vec2],
        goals: List[GoalRecord],
        reaches: List[ReachEvent],
        fallbacks: List[FallbackEvent],
        records: Iterable[Tuple[int, Tuple[int, int, int, float, float, float, float, int, int]]],
    ) -> EpisodeLog:
        missing = sorted(set(self._SCALARS) - set(header))
        if missing:
            raise self.error(f"Missing header lines: {', '.join(missing)}")

        agents = header["agents"]
        if agents[1] != "radius" or agents[3] != "max_speed":
            raise self.error("Malformed 'agents' header")
        n_agents = self.number(agents[0], int)
        n_frames = self.number(header["frames"][0], int)
        episode = self.number(header["episode"][0], int)
        if sorted(starts) != list(range(n_agents)):
            raise self.error(f"Expected start positions of agents 0..{n_agents - 1}")
        if sorted(goal.goal_id for goal in goals) != list(range(len(goals))):
            raise self.error("Goal ids have to be consecutive from 0")

        positions = np.zeros((n_frames, n_agents, 2))
        velocities = np.zeros((n_frames, n_agents, 2))
        goal_ids = np.zeros((n_frames, n_agents), dtype=np.int64)
        path_indices = np.zeros((n_frames, n_agents), dtype=np.int64)

        count = 0
        for count, (line, record) in enumerate(records, start=1):
            self.line = line
            rec_episode, frame, agent, x, y, vx, vy, goal_id, path_index = record
            expected = divmod(count - 1, n_agents) if n_agents else (count - 1, 0)
            if rec_episode != episode or (frame, agent) != expected or frame >= n_frames:
                raise self.error(f"Unexpected record for episode {rec_episode}, frame {frame}, agent {agent}")
            if not 0 <= goal_id < len(goals):
                raise self.error(f"Unknown goal id {goal_id}")
            positions[frame, agent] = (x, y)
            velocities[frame, agent] = (vx, vy)
            goal_ids[frame, agent] = goal_id
            path_indices[frame, agent] = path_index
        if count != n_frames * n_agents:
            raise self.error(f"Expected {n_frames * n_agents} frame records, got {count}")

        try:
            return EpisodeLog(
                episode=episode,
                policy=header["policy"][0],
                seed=self.number(header["seed"][0], int),
                world_w=self.number(header["world"][0]),
                world_h=self.number(header["world"][1]),
                radius=self.number(agents[2]),
                max_speed=self.number(agents[4]),
                goal_reach_radius=self.number(header["goal_reach_radius"][0]),
                obstacles=obstacles,
                starts=[starts[agent] for agent in range(n_agents)],
                goals=sorted(goals, key=lambda goal: goal.goal_id),
                positions=positions,
                velocities=velocities,
                goal_ids=goal_ids,
                path_indices=path_indices,
                reach_events=reaches,
                fallback_events=fallbacks,
            )
        except ValueError as exc:
            raise self.error(str(exc)) from None
