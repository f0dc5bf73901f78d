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

"""Optimal reciprocal collision avoidance: half-plane constraints and the constrained nearest-velocity solver.

Velocities are expressed in meters per frame and a simulation step is ``dt`` frames. The permitted side of an
:class:`OrcaLine` is the side to the LEFT of its direction, that is velocities ``v`` with
``det(direction, v - point) >= 0``; every routine in this module uses this convention.
"""

import logging
import math
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import attr

from .geometry import RectObstacle
from .geometry import Vec2
from .geometry import ZERO

_LOGGER = logging.getLogger(__name__)

_EPSILON = 1e-9


@attr.s(slots=True)
class Agent:
    """Kinematic state and ORCA parameters of a disc agent."""

    id = attr.ib(type=int)
    position = attr.ib(type=Vec2)
    goal = attr.ib(type=Vec2)
    velocity = attr.ib(type=Vec2, default=ZERO)
    radius = attr.ib(type=float, default=0.3)
    max_speed = attr.ib(type=float, default=0.2)
    pref_velocity = attr.ib(type=Vec2, default=ZERO)
    neighbor_dist = attr.ib(type=float, default=3.0)
    max_neighbors = attr.ib(type=int, default=10)
    time_horizon = attr.ib(type=float, default=10.0)
    time_horizon_obst = attr.ib(type=float, default=10.0)

    @radius.validator
    @max_speed.validator
    @time_horizon.validator
    @time_horizon_obst.validator
    def _check_positive(self, attribute: "attr.Attribute[float]", value: float) -> None:
        if value <= 0:
            raise ValueError(f"Agent parameter {attribute.name!r} has to be positive, got {value}")


@attr.s(slots=True, frozen=True)
class OrcaLine:
    """A directed line in velocity space, velocities to its left are permitted."""

    point = attr.ib(type=Vec2)
    direction = attr.ib(type=Vec2)

    def violation(self, v: Vec2) -> float:
        """Get by how much the velocity lies on the forbidden side, zero or negative when permitted."""
        return self.direction.det(self.point - v)

    def permits(self, v: Vec2, tolerance: float = 0.0) -> bool:
        """Check the velocity lies on the permitted side of the line."""
        return self.violation(v) <= tolerance


@attr.s(slots=True, frozen=True)
class ObstacleVertex:
    """A vertex of an obstacle ring, edges run from a vertex to the next one in the ring."""

    point = attr.ib(type=Vec2)
    unit_dir = attr.ib(type=Vec2)
    prev_unit_dir = attr.ib(type=Vec2)
    is_convex = attr.ib(type=bool)


@attr.s(slots=True, frozen=True)
class ObstacleEdge:
    """A static obstacle segment; free space lies to its right."""

    start = attr.ib(type=ObstacleVertex)
    end = attr.ib(type=ObstacleVertex)


def _left_of(a: Vec2, b: Vec2, c: Vec2) -> float:
    """Positive when c lies to the left of the directed line ab."""
    return (a - c).det(b - a)


def _ring(points: Sequence[Vec2]) -> List[ObstacleEdge]:
    """Build the edges of a closed vertex ring."""
    n = len(points)
    unit_dirs = [(points[(i + 1) % n] - points[i]).normalized() for i in range(n)]
    vertices = [
        ObstacleVertex(
            point=points[i],
            unit_dir=unit_dirs[i],
            prev_unit_dir=unit_dirs[i - 1],
            is_convex=_left_of(points[i - 1], points[i], points[(i + 1) % n]) >= 0.0,
        )
        for i in range(n)
    ]
    return [ObstacleEdge(start=vertices[i], end=vertices[(i + 1) % n]) for i in range(n)]


def obstacle_edges(obstacles: Sequence[RectObstacle], world_w: float, world_h: float) -> List[ObstacleEdge]:
    """Build obstacle segments for the raw rectangles and the world boundary.

    Rectangles are traversed counterclockwise, the world boundary clockwise, so free space is always on the
    right of an edge.
    """
    edges: List[ObstacleEdge] = []
    for obstacle in obstacles:
        lo, hi = obstacle.min_corner, obstacle.max_corner
        edges.extend(_ring([lo, Vec2(hi.x, lo.y), hi, Vec2(lo.x, hi.y)]))

    edges.extend(_ring([ZERO, Vec2(0.0, world_h), Vec2(world_w, world_h), Vec2(world_w, 0.0)]))
    return edges


def _dist_sq_point_segment(a: Vec2, b: Vec2, p: Vec2) -> float:
    """Squared distance of a point to a segment."""
    ab = b - a
    r = (p - a).dot(ab) / ab.abs_sq()
    if r < 0.0:
        return (p - a).abs_sq()
    if r > 1.0:
        return (p - b).abs_sq()
    return (p - (a + ab * r)).abs_sq()


def _leg_left(rel: Vec2, leg: float, radius: float, dist_sq: float) -> Vec2:
    return Vec2(rel.x * leg - rel.y * radius, rel.x * radius + rel.y * leg) / dist_sq


def _leg_right(rel: Vec2, leg: float, radius: float, dist_sq: float) -> Vec2:
    return Vec2(rel.x * leg + rel.y * radius, -rel.x * radius + rel.y * leg) / dist_sq


def select_neighbors(a: Agent, others: Sequence[Agent]) -> List[Agent]:
    """Pick neighbours within ``neighbor_dist`` ordered by (distance, id), at most ``max_neighbors``."""
    range_sq = a.neighbor_dist * a.neighbor_dist
    candidates = []
    for other in others:
        if other.id == a.id:
            continue
        dist_sq = (other.position - a.position).abs_sq()
        if dist_sq < range_sq:
            candidates.append((dist_sq, other.id, other))

    candidates.sort(key=lambda item: (item[0], item[1]))
    return [other for _, _, other in candidates[: a.max_neighbors]]


def agent_orca_lines(a: Agent, neighbors: Sequence[Agent], dt: float = 1.0) -> List[OrcaLine]:
    """Compute reciprocal half-plane constraints induced by neighbouring agents.

    Each agent takes half of the responsibility for resolving the velocity obstacle of a pair. Pairs that
    already overlap get a constraint resolving the overlap within a single step of ``dt`` frames.
    """
    lines: List[OrcaLine] = []
    inv_time_horizon = 1.0 / a.time_horizon

    for other in select_neighbors(a, neighbors):
        relative_position = other.position - a.position
        relative_velocity = a.velocity - other.velocity
        dist_sq = relative_position.abs_sq()
        combined_radius = a.radius + other.radius
        combined_radius_sq = combined_radius * combined_radius

        if dist_sq > combined_radius_sq:
            # Vector from the cut-off circle center to the relative velocity.
            w = relative_velocity - relative_position * inv_time_horizon
            w_length_sq = w.abs_sq()
            dot_product = w.dot(relative_position)

            if dot_product < 0.0 and dot_product * dot_product > combined_radius_sq * w_length_sq:
                # Project on the cut-off circle.
                w_length = math.sqrt(w_length_sq)
                unit_w = w / w_length
                direction = Vec2(unit_w.y, -unit_w.x)
                u = unit_w * (combined_radius * inv_time_horizon - w_length)
            else:
                # Project on the legs.
                leg = math.sqrt(dist_sq - combined_radius_sq)
                if relative_position.det(w) > 0.0:
                    direction = _leg_left(relative_position, leg, combined_radius, dist_sq)
                else:
                    direction = -_leg_right(relative_position, leg, combined_radius, dist_sq)
                u = direction * relative_velocity.dot(direction) - relative_velocity
        else:
            # Already overlapping, resolve within one step.
            inv_time_step = 1.0 / dt
            w = relative_velocity - relative_position * inv_time_step
            w_length = w.norm()
            if w_length > 0.0:
                unit_w = w / w_length
            else:
                # Coincident agents with equal velocities, split them along x by id.
                unit_w = Vec2(1.0, 0.0) if a.id < other.id else Vec2(-1.0, 0.0)
            direction = Vec2(unit_w.y, -unit_w.x)
            u = unit_w * (combined_radius * inv_time_step - w_length)

        # Direction is unit length up to rounding, keep the invariant exact.
        lines.append(OrcaLine(point=a.velocity + u * 0.5, direction=direction.normalized()))

    return lines


def _select_obstacle_edges(a: Agent, edges: Sequence[ObstacleEdge]) -> List[ObstacleEdge]:
    """Pick obstacle edges facing the agent within ``neighbor_dist``, nearest first."""
    range_sq = a.neighbor_dist * a.neighbor_dist
    candidates = []
    for index, edge in enumerate(edges):
        if _left_of(edge.start.point, edge.end.point, a.position) >= 0.0:
            continue
        dist_sq = _dist_sq_point_segment(edge.start.point, edge.end.point, a.position)
        if dist_sq < range_sq:
            candidates.append((dist_sq, index, edge))

    candidates.sort(key=lambda item: (item[0], item[1]))
    return [edge for _, _, edge in candidates]


def obstacle_orca_lines(a: Agent, segments: Sequence[ObstacleEdge], dt: float = 1.0) -> List[OrcaLine]:
    """Compute half-plane constraints keeping the agent off static obstacle segments.

    The agent takes full responsibility, obstacles never move. The construction convexifies each segment's
    velocity obstacle independently and skips segments already covered by earlier constraints.
    """
    del dt  # obstacle constraints use time_horizon_obst only
    lines: List[OrcaLine] = []
    inv_time_horizon_obst = 1.0 / a.time_horizon_obst
    radius = a.radius
    radius_sq = radius * radius

    for edge in _select_obstacle_edges(a, segments):
        vertex1 = edge.start
        vertex2 = edge.end
        relative_position1 = vertex1.point - a.position
        relative_position2 = vertex2.point - a.position

        already_covered = False
        for line in lines:
            if (
                (relative_position1 * inv_time_horizon_obst - line.point).det(line.direction)
                - inv_time_horizon_obst * radius
                >= -_EPSILON
                and (relative_position2 * inv_time_horizon_obst - line.point).det(line.direction)
                - inv_time_horizon_obst * radius
                >= -_EPSILON
            ):
                already_covered = True
                break

        if already_covered:
            continue

        dist_sq1 = relative_position1.abs_sq()
        dist_sq2 = relative_position2.abs_sq()
        obstacle_vector = vertex2.point - vertex1.point
        s = (-relative_position1).dot(obstacle_vector) / obstacle_vector.abs_sq()
        dist_sq_line = (-relative_position1 - obstacle_vector * s).abs_sq()

        if s < 0.0 and dist_sq1 <= radius_sq:
            # Collision with the left vertex, ignored if non-convex.
            if vertex1.is_convex:
                lines.append(OrcaLine(point=ZERO, direction=relative_position1.perp().normalized()))
            continue

        if s > 1.0 and dist_sq2 <= radius_sq:
            # Collision with the right vertex, the neighbouring edge handles it unless it is convex and facing.
            if vertex2.is_convex and relative_position2.det(vertex2.unit_dir) >= 0.0:
                lines.append(OrcaLine(point=ZERO, direction=relative_position2.perp().normalized()))
            continue

        if 0.0 <= s < 1.0 and dist_sq_line <= radius_sq:
            # Collision with the segment itself.
            lines.append(OrcaLine(point=ZERO, direction=-vertex1.unit_dir))
            continue

        # No collision, compute legs. Viewed obliquely both legs may come from a single vertex; legs extend
        # the cut-off line at non-convex vertices.
        left_neighbor_dir = vertex1.prev_unit_dir
        right_edge_dir = vertex2.unit_dir
        single_vertex = False

        if s < 0.0 and dist_sq_line <= radius_sq:
            # The left vertex alone defines the velocity obstacle.
            if not vertex1.is_convex:
                continue
            vertex2 = vertex1
            right_edge_dir = vertex1.unit_dir
            single_vertex = True
            leg1 = math.sqrt(dist_sq1 - radius_sq)
            left_leg_direction = _leg_left(relative_position1, leg1, radius, dist_sq1)
            right_leg_direction = _leg_right(relative_position1, leg1, radius, dist_sq1)
        elif s > 1.0 and dist_sq_line <= radius_sq:
            # The right vertex alone defines the velocity obstacle.
            if not vertex2.is_convex:
                continue
            vertex1 = vertex2
            left_neighbor_dir = vertex2.prev_unit_dir
            single_vertex = True
            leg2 = math.sqrt(dist_sq2 - radius_sq)
            left_leg_direction = _leg_left(relative_position2, leg2, radius, dist_sq2)
            right_leg_direction = _leg_right(relative_position2, leg2, radius, dist_sq2)
        else:
            if vertex1.is_convex:
                leg1 = math.sqrt(dist_sq1 - radius_sq)
                left_leg_direction = _leg_left(relative_position1, leg1, radius, dist_sq1)
            else:
                left_leg_direction = -vertex1.unit_dir
            if vertex2.is_convex:
                leg2 = math.sqrt(dist_sq2 - radius_sq)
                right_leg_direction = _leg_right(relative_position2, leg2, radius, dist_sq2)
            else:
                right_leg_direction = vertex1.unit_dir

        # A leg pointing into the neighbouring edge is replaced by that edge's cut-off line; velocities
        # projected on such a foreign leg add no constraint.
        is_left_leg_foreign = False
        is_right_leg_foreign = False
        if vertex1.is_convex and left_leg_direction.det(-left_neighbor_dir) >= 0.0:
            left_leg_direction = -left_neighbor_dir
            is_left_leg_foreign = True
        if vertex2.is_convex and right_leg_direction.det(right_edge_dir) <= 0.0:
            right_leg_direction = right_edge_dir
            is_right_leg_foreign = True

        left_cutoff = (vertex1.point - a.position) * inv_time_horizon_obst
        right_cutoff = (vertex2.point - a.position) * inv_time_horizon_obst
        cutoff_vector = right_cutoff - left_cutoff

        velocity = a.velocity
        t = 0.5 if single_vertex else (velocity - left_cutoff).dot(cutoff_vector) / cutoff_vector.abs_sq()
        t_left = (velocity - left_cutoff).dot(left_leg_direction)
        t_right = (velocity - right_cutoff).dot(right_leg_direction)

        if (t < 0.0 and t_left < 0.0) or (single_vertex and t_left < 0.0 and t_right < 0.0):
            # Project on the left cut-off circle.
            unit_w = (velocity - left_cutoff).normalized()
            lines.append(
                OrcaLine(
                    point=left_cutoff + unit_w * (radius * inv_time_horizon_obst),
                    direction=Vec2(unit_w.y, -unit_w.x),
                )
            )
            continue

        if t > 1.0 and t_right < 0.0:
            # Project on the right cut-off circle.
            unit_w = (velocity - right_cutoff).normalized()
            lines.append(
                OrcaLine(
                    point=right_cutoff + unit_w * (radius * inv_time_horizon_obst),
                    direction=Vec2(unit_w.y, -unit_w.x),
                )
            )
            continue

        # Project on the left leg, the right leg or the cut-off line, whichever is closest to the velocity.
        if t < 0.0 or t > 1.0 or single_vertex:
            dist_sq_cutoff = math.inf
        else:
            dist_sq_cutoff = (velocity - (left_cutoff + cutoff_vector * t)).abs_sq()
        dist_sq_left = math.inf if t_left < 0.0 else (velocity - (left_cutoff + left_leg_direction * t_left)).abs_sq()
        dist_sq_right = (
            math.inf if t_right < 0.0 else (velocity - (right_cutoff + right_leg_direction * t_right)).abs_sq()
        )

        if dist_sq_cutoff <= dist_sq_left and dist_sq_cutoff <= dist_sq_right:
            direction = -vertex1.unit_dir
            lines.append(
                OrcaLine(
                    point=left_cutoff + direction.perp() * (radius * inv_time_horizon_obst),
                    direction=direction,
                )
            )
        elif dist_sq_left <= dist_sq_right:
            if is_left_leg_foreign:
                continue
            direction = left_leg_direction.normalized()
            lines.append(
                OrcaLine(
                    point=left_cutoff + direction.perp() * (radius * inv_time_horizon_obst),
                    direction=direction,
                )
            )
        else:
            if is_right_leg_foreign:
                continue
            direction = (-right_leg_direction).normalized()
            lines.append(
                OrcaLine(
                    point=right_cutoff + direction.perp() * (radius * inv_time_horizon_obst),
                    direction=direction,
                )
            )

    return lines


def _linear_program1(
    lines: Sequence[OrcaLine],
    line_no: int,
    radius: float,
    opt_velocity: Vec2,
    direction_opt: bool,
) -> Optional[Vec2]:
    """Optimize on a single constraint line subject to all lines before it and the speed disc."""
    line = lines[line_no]
    dot_product = line.point.dot(line.direction)
    discriminant = dot_product * dot_product + radius * radius - line.point.abs_sq()
    if discriminant < 0.0:
        # The speed disc does not reach the line.
        return None

    sqrt_discriminant = math.sqrt(discriminant)
    t_left = -dot_product - sqrt_discriminant
    t_right = -dot_product + sqrt_discriminant

    for i in range(line_no):
        other = lines[i]
        denominator = line.direction.det(other.direction)
        numerator = other.direction.det(line.point - other.point)

        if abs(denominator) <= _EPSILON:
            # Parallel lines.
            if numerator < 0.0:
                return None
            continue

        t = numerator / denominator
        if denominator >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)

        if t_left > t_right:
            return None

    if direction_opt:
        if opt_velocity.dot(line.direction) > 0.0:
            return line.point + line.direction * t_right
        return line.point + line.direction * t_left

    t = line.direction.dot(opt_velocity - line.point)
    t = min(max(t, t_left), t_right)
    return line.point + line.direction * t


def _linear_program2(
    lines: Sequence[OrcaLine],
    radius: float,
    opt_velocity: Vec2,
    direction_opt: bool,
) -> Tuple[Vec2, int]:
    """Solve the 2-D program incrementally, return the result and the index of the first infeasible line."""
    if direction_opt:
        # Optimize direction, the optimization velocity is a unit vector.
        result = opt_velocity * radius
    elif opt_velocity.abs_sq() > radius * radius:
        result = opt_velocity.normalized() * radius
    else:
        result = opt_velocity

    for i, line in enumerate(lines):
        if line.violation(result) > 0.0:
            candidate = _linear_program1(lines, i, radius, opt_velocity, direction_opt)
            if candidate is None:
                return result, i
            result = candidate

    return result, len(lines)


def _linear_program3(
    lines: Sequence[OrcaLine],
    n_obstacle_lines: int,
    begin_line: int,
    radius: float,
    result: Vec2,
) -> Vec2:
    """Minimize the largest violation of agent lines while keeping every obstacle line satisfied."""
    distance = 0.0
    for i in range(begin_line, len(lines)):
        line = lines[i]
        if line.violation(result) <= distance:
            continue

        projected: List[OrcaLine] = list(lines[:n_obstacle_lines])
        for j in range(n_obstacle_lines, i):
            other = lines[j]
            determinant = line.direction.det(other.direction)
            if abs(determinant) <= _EPSILON:
                if line.direction.dot(other.direction) > 0.0:
                    # Same direction, line j is redundant here.
                    continue
                point = (line.point + other.point) * 0.5
            else:
                point = line.point + line.direction * (other.direction.det(line.point - other.point) / determinant)

            projected.append(OrcaLine(point=point, direction=(other.direction - line.direction).normalized()))

        candidate, failed = _linear_program2(projected, radius, line.direction.perp(), True)
        if failed == len(projected):
            result = candidate
        # Otherwise a floating point artifact, the current result is kept.

        distance = line.violation(result)

    return result


def solve_velocity_ex(
    lines: Sequence[OrcaLine],
    n_obstacle_lines: int,
    max_speed: float,
    pref: Vec2,
) -> Tuple[Vec2, bool]:
    """Find the permitted velocity nearest to ``pref``, report whether the fallback program was engaged."""
    result, failed = _linear_program2(lines, max_speed, pref, False)
    fallback = failed < len(lines)
    if fallback:
        result = _linear_program3(lines, n_obstacle_lines, failed, max_speed, result)

    speed = result.norm()
    if speed > max_speed:
        result = result * (max_speed / speed)

    return result, fallback


def solve_velocity(lines: Sequence[OrcaLine], n_obstacle_lines: int, max_speed: float, pref: Vec2) -> Vec2:
    """Find the velocity within all half-planes and the speed disc nearest to the preferred velocity.

    Obstacle lines have to come first. When the agent lines are infeasible, the velocity minimizing the largest
    agent-line violation without violating obstacle lines is returned instead.
    """
    result, _ = solve_velocity_ex(lines, n_obstacle_lines, max_speed, pref)
    return result


def clamp_to_world(position: Vec2, radius: float, world_w: float, world_h: float) -> Vec2:
    """Keep the agent disc inside the world rectangle."""
    return Vec2(
        min(max(position.x, radius), world_w - radius),
        min(max(position.y, radius), world_h - radius),
    )


def orca_step_ex(
    agents: Sequence[Agent],
    obstacle_segments: Sequence[ObstacleEdge],
    dt: float = 1.0,
    *,
    world_w: Optional[float] = None,
    world_h: Optional[float] = None,
) -> Tuple[List[Agent], List[int]]:
    """Advance all agents by one step, double-buffered.

    Constraints of every agent are computed from the pre-step snapshot; all updates are committed together.
    Returns the updated agents and ids of agents whose solve engaged the fallback program.
    """
    new_velocities: List[Vec2] = []
    fallback_ids: List[int] = []

    for agent in agents:
        lines = obstacle_orca_lines(agent, obstacle_segments, dt)
        n_obstacle_lines = len(lines)
        lines.extend(agent_orca_lines(agent, agents, dt))
        velocity, fallback = solve_velocity_ex(lines, n_obstacle_lines, agent.max_speed, agent.pref_velocity)
        new_velocities.append(velocity)
        if fallback:
            fallback_ids.append(agent.id)

    updated = []
    for agent, velocity in zip(agents, new_velocities):
        position = agent.position + velocity * dt
        if world_w is not None and world_h is not None:
            position = clamp_to_world(position, agent.radius, world_w, world_h)
        updated.append(attr.evolve(agent, position=position, velocity=velocity))

    if fallback_ids:
        _LOGGER.debug("Fallback program engaged for agents %r", fallback_ids)

    return updated, fallback_ids


def orca_step(
    agents: Sequence[Agent],
    obstacle_segments: Sequence[ObstacleEdge],
    dt: float = 1.0,
    *,
    world_w: Optional[float] = None,
    world_h: Optional[float] = None,
) -> List[Agent]:
    """Advance all agents by one step using ORCA."""
    updated, _ = orca_step_ex(agents, obstacle_segments, dt, world_w=world_w, world_h=world_h)
    return updated
