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

"""Per-agent augmented graphs, shortest-path waypoints and the waypoint following controller."""

import heapq
import logging
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import attr

from .exceptions import BlockedPosition
from .exceptions import NoPath
from .geometry import OccupancyGrid
from .geometry import Vec2
from .geometry import ZERO
from .geometry import raycast_free
from .orca import Agent
from .topology import TopoGraph
from .topology import arc_length

_LOGGER = logging.getLogger(__name__)

# How an augmented edge is expanded into waypoints: ("line",), ("topo", edge index) or ("anchor", anchor index).
_Expansion = Tuple[str, int]


@attr.s(slots=True, frozen=True)
class VisibilityEdge:
    """A straight edge of the augmented graph between ids of the augmented graph."""

    source = attr.ib(type=int)
    target = attr.ib(type=int)
    length = attr.ib(type=float)


@attr.s(slots=True, frozen=True)
class Anchor:
    """A point splitting a topological edge, used to attach an endpoint that sees no graph node."""

    edge_index = attr.ib(type=int)
    vertex_index = attr.ib(type=int)
    position = attr.ib(type=Vec2)


@attr.s(slots=True, frozen=True)
class AugmentedGraph:
    """The topological graph of an agent extended with its start ``s``, its goal ``g`` and visibility edges.

    Ids ``0..n-1`` are the topological nodes, ``n`` is ``s``, ``n + 1`` is ``g`` and anchors follow.
    """

    base = attr.ib(type=TopoGraph)
    mask = attr.ib(type=OccupancyGrid)
    s = attr.ib(type=Vec2)
    g = attr.ib(type=Vec2)
    extra_edges = attr.ib(type=Tuple[VisibilityEdge, ...], converter=tuple)
    anchors = attr.ib(type=Tuple[Anchor, ...], converter=tuple, default=())

    @property
    def source_id(self) -> int:
        """Augmented id of the start."""
        return len(self.base.nodes)

    @property
    def goal_id(self) -> int:
        """Augmented id of the goal."""
        return len(self.base.nodes) + 1

    def anchor_id(self, index: int) -> int:
        """Augmented id of the given anchor."""
        return len(self.base.nodes) + 2 + index

    def position(self, vertex: int) -> Vec2:
        """Get position of an augmented graph vertex."""
        n = len(self.base.nodes)
        if vertex < n:
            return self.base.nodes[vertex].position
        if vertex == n:
            return self.s
        if vertex == n + 1:
            return self.g
        return self.anchors[vertex - n - 2].position

    def has_direct_edge(self) -> bool:
        """Check whether the goal is directly visible from the start."""
        return any({edge.source, edge.target} == {self.source_id, self.goal_id} for edge in self.extra_edges)

    def _anchor_pieces(self) -> List[Tuple[int, int, float, Tuple[Vec2, ...]]]:
        """Split anchored topological edges into (from, to, length, polyline) pieces."""
        pieces = []
        by_edge: Dict[int, List[int]] = {}
        for index, anchor in enumerate(self.anchors):
            by_edge.setdefault(anchor.edge_index, []).append(index)

        for edge_index, indices in sorted(by_edge.items()):
            edge = self.base.edges[edge_index]
            indices.sort(key=lambda i: (self.anchors[i].vertex_index, i))
            cuts = [(edge.node_a, 0)]
            cuts.extend((self.anchor_id(i), self.anchors[i].vertex_index) for i in indices)
            cuts.append((edge.node_b, len(edge.polyline) - 1))
            for (start, first), (end, last) in zip(cuts, cuts[1:]):
                polyline = edge.polyline[first : last + 1]
                pieces.append((start, end, arc_length(polyline), polyline))
        return pieces

    def adjacency(self) -> Dict[int, List[Tuple[int, float, int, Tuple[Vec2, ...]]]]:
        """Build adjacency lists of (neighbour, weight, edge key, polyline from this vertex)."""
        anchored = {anchor.edge_index for anchor in self.anchors}
        result: Dict[int, List[Tuple[int, float, int, Tuple[Vec2, ...]]]] = {}

        def link(a: int, b: int, weight: float, key: int, polyline: Tuple[Vec2, ...]) -> None:
            result.setdefault(a, []).append((b, weight, key, polyline))
            if a != b:
                result.setdefault(b, []).append((a, weight, key, tuple(reversed(polyline))))

        for index, edge in enumerate(self.base.edges):
            if index not in anchored and edge.node_a != edge.node_b:
                link(edge.node_a, edge.node_b, edge.length, index, edge.polyline)

        key = len(self.base.edges)
        for start, end, length, polyline in self._anchor_pieces():
            link(start, end, length, key, polyline)
            key += 1

        for edge in self.extra_edges:
            link(edge.source, edge.target, edge.length, key, (self.position(edge.source), self.position(edge.target)))
            key += 1

        return result


@attr.s(slots=True, frozen=True)
class WaypointPlan:
    """Waypoints from the start to the goal of an agent and the index of the one being followed."""

    waypoints = attr.ib(type=Tuple[Vec2, ...], converter=tuple)
    current_index = attr.ib(type=int, default=0)

    @waypoints.validator
    def _check_waypoints(self, _: "attr.Attribute[Tuple[Vec2, ...]]", value: Tuple[Vec2, ...]) -> None:
        if not value:
            raise ValueError("A plan needs at least one waypoint")

    @property
    def current(self) -> Vec2:
        """Waypoint currently followed."""
        return self.waypoints[self.current_index]

    @property
    def goal(self) -> Vec2:
        """Final waypoint."""
        return self.waypoints[-1]

    def is_last(self) -> bool:
        """Check whether the final waypoint is followed."""
        return self.current_index == len(self.waypoints) - 1

    def length(self) -> float:
        """Total length of the waypoint polyline."""
        return arc_length(self.waypoints)

    def to_text(self) -> str:
        """Export waypoints, one ``x y`` per line."""
        return "".join(f"{point.x:.6f} {point.y:.6f}\n" for point in self.waypoints)


def _nearest_anchor(topo: TopoGraph, mask: OccupancyGrid, p: Vec2) -> Optional[Anchor]:
    """Find the nearest polyline point of any topological edge visible from p."""
    candidates = []
    for edge_index, edge in enumerate(topo.edges):
        if edge.node_a == edge.node_b:
            continue
        for vertex_index, point in enumerate(edge.polyline[1:-1], start=1):
            candidates.append((p.distance(point), edge_index, vertex_index, point))

    candidates.sort(key=lambda item: item[:3])
    for _, edge_index, vertex_index, point in candidates:
        if raycast_free(mask, p, point):
            return Anchor(edge_index=edge_index, vertex_index=vertex_index, position=point)
    return None


def augment(topo: TopoGraph, mask: OccupancyGrid, s: Vec2, g: Vec2) -> AugmentedGraph:
    """Add the start and the goal to the topological graph, linked to every node they see."""
    for name, point in (("start", s), ("goal", g)):
        if not mask.is_free(point):
            raise BlockedPosition(f"The {name} position ({point.x:.3f}, {point.y:.3f}) is not in free space")

    n = len(topo.nodes)
    source_id, goal_id = n, n + 1
    extra_edges: List[VisibilityEdge] = []
    anchors: List[Anchor] = []

    direct = raycast_free(mask, s, g)
    if direct:
        extra_edges.append(VisibilityEdge(source=source_id, target=goal_id, length=s.distance(g)))

    for endpoint_id, point in ((source_id, s), (goal_id, g)):
        visible = [node for node in topo.nodes if raycast_free(mask, point, node.position)]
        extra_edges.extend(
            VisibilityEdge(source=endpoint_id, target=node.id, length=point.distance(node.position)) for node in visible
        )
        if visible or direct:
            continue

        anchor = _nearest_anchor(topo, mask, point)
        if anchor is not None:
            anchor_id = n + 2 + len(anchors)
            anchors.append(anchor)
            extra_edges.append(
                VisibilityEdge(source=endpoint_id, target=anchor_id, length=point.distance(anchor.position))
            )
            _LOGGER.debug("Attached endpoint (%.3f, %.3f) to edge %d", point.x, point.y, anchor.edge_index)

    return AugmentedGraph(base=topo, mask=mask, s=s, g=g, extra_edges=extra_edges, anchors=anchors)


def shortcut(points: Sequence[Vec2], mask: OccupancyGrid) -> Tuple[Vec2, ...]:
    """Simplify a polyline by jumping to the farthest vertex visible from the current one."""
    if len(points) <= 2:
        return tuple(points)

    result = [points[0]]
    i = 0
    last = len(points) - 1
    while i < last:
        j = last
        while j > i + 1 and not raycast_free(mask, points[i], points[j]):
            j -= 1
        result.append(points[j])
        i = j
    return tuple(result)


def _expand(ag: AugmentedGraph, polyline: Tuple[Vec2, ...], key: int, forward: bool) -> Tuple[Vec2, ...]:
    """Turn a traversed edge into waypoints, topological edges use their cached shortcut."""
    if key >= len(ag.base.edges):
        return shortcut(polyline, ag.mask)

    simplified = ag.base.shortcuts.get(key)
    if simplified is None:
        simplified = shortcut(ag.base.edges[key].polyline, ag.mask)
        ag.base.shortcuts[key] = simplified
    return simplified if forward else tuple(reversed(simplified))


def shortest_path(ag: AugmentedGraph) -> WaypointPlan:
    """Run Dijkstra from ``s`` to ``g`` and expand the traversed edges into waypoints.

    Ties between equally long paths are broken by the lexicographically smaller sequence of vertex ids.
    """
    if ag.s == ag.g:
        return WaypointPlan(waypoints=(ag.s,))
    if ag.has_direct_edge():
        # No detour is shorter than the straight edge.
        return WaypointPlan(waypoints=(ag.s, ag.g))

    adjacency = ag.adjacency()
    source, target = ag.source_id, ag.goal_id

    # Entries are (distance, vertex path, edge keys, traversal directions).
    queue: List[Tuple[float, Tuple[int, ...], Tuple[int, ...], Tuple[bool, ...]]] = [(0.0, (source,), (), ())]
    done = set()
    best = None
    while queue:
        distance, path, keys, forwards = heapq.heappop(queue)
        vertex = path[-1]
        if vertex in done:
            continue
        done.add(vertex)
        if vertex == target:
            best = (distance, path, keys, forwards)
            break
        for neighbour, weight, key, polyline in adjacency.get(vertex, ()):
            if neighbour in done:
                continue
            forward = key >= len(ag.base.edges) or ag.base.edges[key].node_a == vertex
            heapq.heappush(queue, (distance + weight, path + (neighbour,), keys + (key,), forwards + (forward,)))

    if best is None:
        raise NoPath(
            f"No path from ({ag.s.x:.3f}, {ag.s.y:.3f}) to ({ag.g.x:.3f}, {ag.g.y:.3f}) in the augmented graph"
        )

    distance, path, keys, forwards = best
    polylines = {}
    for vertex, neighbour_list in adjacency.items():
        for neighbour, _, key, polyline in neighbour_list:
            polylines[(vertex, neighbour, key)] = polyline

    waypoints = [ag.s]
    for (a, b), key, forward in zip(zip(path, path[1:]), keys, forwards):
        expanded = _expand(ag, polylines[(a, b, key)], key, forward)
        for point in expanded[1:]:
            if point != waypoints[-1]:
                waypoints.append(point)
    if waypoints[-1] != ag.g:
        waypoints.append(ag.g)

    _LOGGER.debug("Planned %d waypoints over %d graph vertices, %.3fm long", len(waypoints), len(path), distance)
    return WaypointPlan(waypoints=waypoints)


def toward(agent: Agent, target: Vec2, dt: float = 1.0) -> Vec2:
    """Head straight to the target at full speed, slowing down so as not to overshoot it."""
    offset = target - agent.position
    distance = offset.norm()
    if distance == 0.0:
        return ZERO

    speed = min(agent.max_speed, distance / dt)
    return offset * (speed / distance)


def follow(agent: Agent, plan: WaypointPlan, reach_radius: float, dt: float = 1.0) -> Tuple[Vec2, WaypointPlan]:
    """Compute the preferred velocity of an agent following its plan.

    Waypoints already within ``reach_radius`` are skipped, the final one is never passed. The speed is capped so
    that the agent does not overshoot the followed waypoint.
    """
    index = plan.current_index
    last = len(plan.waypoints) - 1
    while index < last and agent.position.distance(plan.waypoints[index]) < reach_radius:
        index += 1
    if index != plan.current_index:
        plan = attr.evolve(plan, current_index=index)

    return toward(agent, plan.current, dt), plan


def plan_for(agent: Agent, topo: TopoGraph, mask: OccupancyGrid) -> WaypointPlan:
    """Plan waypoints from the current position of an agent to its goal."""
    start = agent.position
    if not mask.is_free(start):
        # ORCA may leave an agent inside the inflation margin, it starts from the closest free cell center.
        start = mask.cell_center(*mask.nearest_free_cell(start))
        _LOGGER.debug("Agent %d planning from snapped start (%.3f, %.3f)", agent.id, start.x, start.y)

    plan = shortest_path(augment(topo, mask, start, agent.goal))
    if start != agent.position:
        plan = WaypointPlan(waypoints=(agent.position,) + plan.waypoints)
    return plan
