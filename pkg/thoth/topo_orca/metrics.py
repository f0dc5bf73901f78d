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

"""Frozen-frame filter and the five crowd navigation metrics, computed from episode logs alone."""

import logging
import os
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import attr
import numpy as np

from .episode_log import EpisodeLog
from .episode_log import POLICIES

_LOGGER = logging.getLogger(__name__)

FROZEN_THETA = float(os.getenv("THOTH_TOPO_ORCA_FROZEN_THETA", 0.3))
OCCUPIED_RUN = int(os.getenv("THOTH_TOPO_ORCA_OCCUPIED_RUN", 30))
# An agent slower than this share of the average path velocity without reaching any goal is stuck.
STUCK_VELOCITY_SHARE = 1.0 / 3.0

METRIC_NAMES = (
    "avg_velocity_per_path",
    "pct_mutual_frozen_frames",
    "pct_frozen_frames_per_path",
    "avg_occupied_paths",
    "avg_total_paths",
    "pct_stuck_agents",
)


@attr.s(slots=True, frozen=True, eq=False)
class FrameStatus:
    """Frozen flags of every agent in every frame, ``frozen[frame, agent]``; other frames are moving."""

    frozen = attr.ib(type=np.ndarray)

    def __eq__(self, other: object) -> bool:
        """Compare flags element-wise."""
        if not isinstance(other, FrameStatus):
            return NotImplemented
        return bool(np.array_equal(self.frozen, other.frozen))

    __hash__ = object.__hash__


@attr.s(slots=True, frozen=True)
class PathRecord:
    """One attempt of an agent to get from its start to its goal.

    The window covers frames ``start_frame`` up to, excluding, ``end_frame``.
    """

    agent = attr.ib(type=int)
    path_index = attr.ib(type=int)
    start_frame = attr.ib(type=int)
    end_frame = attr.ib(type=int)
    completed = attr.ib(type=bool)
    distance = attr.ib(type=float)
    frozen_frames = attr.ib(type=int)
    longest_frozen_run = attr.ib(type=int)

    @end_frame.validator
    def _check_window(self, _: "attr.Attribute[int]", value: int) -> None:
        if value < self.start_frame:
            raise ValueError(f"Path window ends in frame {value} before it starts in frame {self.start_frame}")

    @property
    def n_frames(self) -> int:
        """Number of frames spent on the path."""
        return self.end_frame - self.start_frame

    @property
    def velocity(self) -> float:
        """Distance traveled per frame."""
        return self.distance / self.n_frames


@attr.s(slots=True, frozen=True)
class MetricsReport:
    """Aggregated metrics of one policy with one number of agents."""

    policy = attr.ib(type=str)
    n_agents = attr.ib(type=int)
    n_episodes = attr.ib(type=int)
    avg_velocity_per_path = attr.ib(type=float)
    pct_mutual_frozen_frames = attr.ib(type=float)
    pct_frozen_frames_per_path = attr.ib(type=float)
    avg_occupied_paths = attr.ib(type=float)
    avg_total_paths = attr.ib(type=float)
    pct_stuck_agents = attr.ib(type=float)

    def values(self) -> Dict[str, float]:
        """Get metric values by their names."""
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def _longest_run(flags: np.ndarray) -> int:
    """Length of the longest run of ``True`` values."""
    if not flags.any():
        return 0
    padded = np.concatenate(([0], flags.astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return int((edges[1::2] - edges[::2]).max())


def classify_frames(log: EpisodeLog, theta: float = FROZEN_THETA) -> FrameStatus:
    """Mark frames in which an agent is much slower than its maximum speed in the middle of its way."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"Frozen threshold has to be in (0, 1), got {theta}")

    speed = np.linalg.norm(log.velocities, axis=2)
    to_goal = np.linalg.norm(log.positions - log.goal_positions(), axis=2)
    return FrameStatus(frozen=(speed < theta * log.max_speed) & (to_goal > log.goal_reach_radius))


def _step_lengths(log: EpisodeLog) -> np.ndarray:
    """Distance moved by every agent in every frame, shaped (frames, agents)."""
    if not log.n_frames:
        return np.zeros((0, log.n_agents))
    starts = np.array([start.as_tuple() for start in log.starts]).reshape(1, log.n_agents, 2)
    previous = np.concatenate((starts, log.positions[:-1]), axis=0)
    return np.linalg.norm(log.positions - previous, axis=2)


def path_records(log: EpisodeLog, status: Optional[FrameStatus] = None) -> List[PathRecord]:
    """Split trajectories of all agents into paths; paths open at the end of the episode are not completed."""
    if status is None:
        status = classify_frames(log)
    steps = _step_lengths(log)
    completed = {(event.agent, event.path_index) for event in log.reach_events}

    records = []
    for agent in range(log.n_agents):
        indices = log.path_indices[:, agent]
        boundaries = np.flatnonzero(np.diff(indices)) + 1
        starts = np.concatenate(([0], boundaries)).tolist() if log.n_frames else []
        ends = np.concatenate((boundaries, [log.n_frames])).tolist() if log.n_frames else []
        for start, end in zip(starts, ends):
            path_index = int(indices[start])
            frozen = status.frozen[start:end, agent]
            records.append(
                PathRecord(
                    agent=agent,
                    path_index=path_index,
                    start_frame=int(start),
                    end_frame=int(end),
                    completed=(agent, path_index) in completed,
                    distance=float(steps[start:end, agent].sum()),
                    frozen_frames=int(frozen.sum()),
                    longest_frozen_run=_longest_run(frozen),
                )
            )
    return records


def _statuses(logs: Sequence[EpisodeLog], status: Optional[Sequence[FrameStatus]]) -> List[FrameStatus]:
    if status is None:
        return [classify_frames(log) for log in logs]
    if len(status) != len(logs):
        raise ValueError(f"Got frame status of {len(status)} episodes for {len(logs)} logs")
    return list(status)


def avg_velocity_per_path(logs: Sequence[EpisodeLog]) -> float:
    """Mean over all paths of all episodes of the distance traveled per frame."""
    velocities = [
        record.velocity
        for log in logs
        for record in path_records(log, FrameStatus(frozen=np.zeros(log.positions.shape[:2], dtype=bool)))
        if record.n_frames > 0
    ]
    return _mean(velocities)


def pct_mutual_frozen(logs: Sequence[EpisodeLog], status: Optional[Sequence[FrameStatus]] = None) -> float:
    """Mean over episodes of the percentage of frames in which every agent is frozen."""
    shares = []
    for log, frame_status in zip(logs, _statuses(logs, status)):
        if not log.n_frames:
            continue
        mutual = frame_status.frozen.all(axis=1)
        shares.append(100.0 * int(mutual.sum()) / log.n_frames)
    return _mean(shares)


def pct_frozen_per_path(logs: Sequence[EpisodeLog], status: Optional[Sequence[FrameStatus]] = None) -> float:
    """Mean over all paths of the percentage of frames spent frozen."""
    shares = [
        100.0 * record.frozen_frames / record.n_frames
        for log, frame_status in zip(logs, _statuses(logs, status))
        for record in path_records(log, frame_status)
        if record.n_frames > 0
    ]
    return _mean(shares)


def occupied_paths(
    logs: Sequence[EpisodeLog], status: Optional[Sequence[FrameStatus]] = None
) -> Tuple[float, float]:
    """Average numbers of occupied paths and of all paths per episode.

    A path is occupied when it contains at least ``OCCUPIED_RUN`` consecutive frozen frames.
    """
    occupied = []
    total = []
    for log, frame_status in zip(logs, _statuses(logs, status)):
        records = path_records(log, frame_status)
        occupied.append(sum(1 for record in records if record.longest_frozen_run >= OCCUPIED_RUN))
        total.append(len(records))
    return _mean(occupied), _mean(total)


def pct_stuck_agents(logs: Sequence[EpisodeLog], avg_velocity: Optional[float] = None) -> float:
    """Percentage of (agent, episode) pairs without any reached goal and with a low mean speed.

    The mean speed of an agent is its distance traveled over the whole episode per frame, compared against a
    third of the average path velocity of all given logs.
    """
    if avg_velocity is None:
        avg_velocity = avg_velocity_per_path(logs)
    threshold = STUCK_VELOCITY_SHARE * avg_velocity

    stuck = 0
    pairs = 0
    for log in logs:
        if not log.n_frames:
            continue
        reached = {event.agent for event in log.reach_events}
        mean_speed = _step_lengths(log).sum(axis=0) / log.n_frames
        for agent in range(log.n_agents):
            pairs += 1
            if agent not in reached and mean_speed[agent] < threshold:
                stuck += 1
    return 100.0 * stuck / pairs if pairs else 0.0


def _report(policy: str, n_agents: int, logs: Sequence[EpisodeLog], theta: float) -> MetricsReport:
    status = [classify_frames(log, theta) for log in logs]
    velocity = avg_velocity_per_path(logs)
    occupied, total = occupied_paths(logs, status)
    return MetricsReport(
        policy=policy,
        n_agents=n_agents,
        n_episodes=len(logs),
        avg_velocity_per_path=velocity,
        pct_mutual_frozen_frames=pct_mutual_frozen(logs, status),
        pct_frozen_frames_per_path=pct_frozen_per_path(logs, status),
        avg_occupied_paths=occupied,
        avg_total_paths=total,
        pct_stuck_agents=pct_stuck_agents(logs, velocity),
    )


def _policy_order(policy: str) -> int:
    return POLICIES.index(policy) if policy in POLICIES else len(POLICIES)


def compute_report(logs: Sequence[EpisodeLog], theta: float = FROZEN_THETA) -> Dict[Tuple[str, int], MetricsReport]:
    """Compute metrics for every (policy, number of agents) group of logs.

    Logs are reduced in episode order, the result does not depend on the order they were given in.
    """
    groups: Dict[Tuple[str, int], List[EpisodeLog]] = {}
    for log in sorted(logs, key=lambda item: (item.n_agents, _policy_order(item.policy), item.episode)):
        groups.setdefault((log.policy, log.n_agents), []).append(log)

    reports = {}
    for (policy, n_agents), group in groups.items():
        reports[(policy, n_agents)] = _report(policy, n_agents, group, theta)
        _LOGGER.debug("Computed metrics of %d episodes of %s with %d agents", len(group), policy, n_agents)
    return reports


_ROWS = (
    ("Average velocity per path", "avg_velocity_per_path"),
    ("Mutual frozen frames per episode (%)", "pct_mutual_frozen_frames"),
    ("Frozen frames per path (%)", "pct_frozen_frames_per_path"),
    ("Occupied paths / total paths", None),
    ("Stuck agents (%)", "pct_stuck_agents"),
)


def _ordered(reports: Dict[Tuple[str, int], MetricsReport]) -> List[MetricsReport]:
    return sorted(reports.values(), key=lambda report: (report.n_agents, _policy_order(report.policy), report.policy))


def format_table(reports: Dict[Tuple[str, int], MetricsReport]) -> str:
    """Render reports as a table with a metric per row and a column per (number of agents, policy)."""
    ordered = _ordered(reports)
    label_width = max(len(label) for label, _ in _ROWS)
    column_width = 23

    groups = [f"{report.n_agents} agents".ljust(column_width) for report in ordered]
    policies = [report.policy.ljust(column_width) for report in ordered]
    lines = [
        " ".join(["Metric".ljust(label_width)] + groups).rstrip(),
        " ".join([" " * label_width] + policies).rstrip(),
    ]
    for label, name in _ROWS:
        cells = []
        for report in ordered:
            if name is None:
                cell = f"{report.avg_occupied_paths:.6f} / {report.avg_total_paths:.6f}"
            else:
                cell = f"{getattr(report, name):.6f}"
            cells.append(cell.ljust(column_width))
        lines.append(" ".join([label.ljust(label_width)] + cells).rstrip())
    episodes = ", ".join(f"{report.policy}.{report.n_agents}={report.n_episodes}" for report in ordered)
    lines.append(f"Episodes: {episodes}")
    return "\n".join(lines) + "\n"


def format_key_values(reports: Dict[Tuple[str, int], MetricsReport]) -> str:
    """Render reports as sorted ``<policy>.<n_agents>.<metric> = <value>`` lines."""
    entries = []
    for report in reports.values():
        prefix = f"{report.policy}.{report.n_agents}"
        entries.append((f"{prefix}.n_episodes", str(report.n_episodes)))
        for name, value in report.values().items():
            entries.append((f"{prefix}.{name}", f"{value:.6f}"))
    return "".join(f"{key} = {value}\n" for key, value in sorted(entries))
