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

"""Topological graph of free space built from a medial-axis skeleton of the occupancy grid."""

import logging
import math
from typing import Any
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Set
from typing import Tuple

import attr
import networkx as nx
import numpy as np
from scipy import ndimage

from .geometry import EIGHT_CONNECTIVITY
from .geometry import OccupancyGrid
from .geometry import Vec2

_LOGGER = logging.getLogger(__name__)

Pixel = Tuple[int, int]  # (row, column)

# Ring of the 8-neighbourhood in thinning order P2..P9 as (row, column) offsets; rows grow with y.
_RING = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

# Self-loops need at least this many interior pixels to enclose a blocked cell.
_MIN_LOOP_PIXELS = 3


@attr.s(slots=True, frozen=True, eq=False)
class Skeleton:
    """Medial-axis pixels of a grid, ``cells[row, column]`` is ``True`` on the skeleton."""

    width = attr.ib(type=int)
    height = attr.ib(type=int)
    cells = attr.ib(type=np.ndarray)

    def __eq__(self, other: object) -> bool:
        """Compare skeletons pixel by pixel."""
        if not isinstance(other, Skeleton):
            return NotImplemented
        return bool(np.array_equal(self.cells, other.cells))

    __hash__ = object.__hash__

    def pixels(self) -> List[Pixel]:
        """List skeleton pixels as (row, column) in raster order."""
        rows, columns = np.nonzero(self.cells)
        return list(zip(rows.tolist(), columns.tolist()))


@attr.s(slots=True, frozen=True)
class TopoNode:
    """A skeleton junction, endpoint or cycle anchor."""

    id = attr.ib(type=int)
    position = attr.ib(type=Vec2)


@attr.s(slots=True, frozen=True)
class TopoEdge:
    """A skeleton branch between two nodes, traced by its polyline from ``node_a`` to ``node_b``."""

    node_a = attr.ib(type=int)
    node_b = attr.ib(type=int)
    length = attr.ib(type=float)
    polyline = attr.ib(type=Tuple[Vec2, ...], converter=tuple)

    def oriented(self, start: int) -> Tuple[Vec2, ...]:
        """Get the polyline as traversed from the given end node."""
        if start == self.node_a:
            return self.polyline
        return tuple(reversed(self.polyline))

    def other(self, node_id: int) -> int:
        """Get the node on the opposite end of the edge."""
        return self.node_b if node_id == self.node_a else self.node_a


@attr.s(slots=True, frozen=True)
class TopoGraph:
    """The topological multigraph G = (V, E) of free space; parallel edges are distinct homotopy classes."""

    nodes = attr.ib(type=Tuple[TopoNode, ...], converter=tuple)
    edges = attr.ib(type=Tuple[TopoEdge, ...], converter=tuple)
    # Edge polylines simplified on the mask the graph was built from, keyed by edge index.
    shortcuts = attr.ib(type=Dict[int, Tuple[Vec2, ...]], factory=dict, eq=False, repr=False)

    def node(self, node_id: int) -> TopoNode:
        """Get a node by its id."""
        return self.nodes[node_id]

    def degrees(self) -> Dict[int, int]:
        """Compute node degrees, a self-loop counts twice."""
        degree = {node.id: 0 for node in self.nodes}
        for edge in self.edges:
            degree[edge.node_a] += 1
            degree[edge.node_b] += 1
        return degree

    def incident(self, node_id: int) -> Iterator[Tuple[int, TopoEdge]]:
        """Iterate over (edge index, edge) pairs incident to the node."""
        for index, edge in enumerate(self.edges):
            if node_id in (edge.node_a, edge.node_b):
                yield index, edge

    def to_networkx(self) -> nx.MultiGraph:
        """Get a networkx multigraph view weighted by arc length."""
        graph = nx.MultiGraph()
        for node in self.nodes:
            graph.add_node(node.id, position=node.position.as_tuple())
        for index, edge in enumerate(self.edges):
            graph.add_edge(edge.node_a, edge.node_b, key=index, weight=edge.length)
        return graph

    def to_text(self) -> str:
        """Export as node list (``id x y``) followed by edge list with polyline points."""
        lines = [f"nodes {len(self.nodes)}"]
        for node in self.nodes:
            lines.append(f"{node.id} {node.position.x:.6f} {node.position.y:.6f}")
        lines.append(f"edges {len(self.edges)}")
        for edge in self.edges:
            lines.append(f"{edge.node_a} {edge.node_b} {edge.length:.6f} {len(edge.polyline)}")
            for point in edge.polyline:
                lines.append(f"{point.x:.6f} {point.y:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TopoGraph":
        """Parse the node/edge export back."""
        rows = iter(line.split() for line in text.splitlines() if line.strip())
        _, n_nodes = next(rows)
        nodes = []
        for _ in range(int(n_nodes)):
            node_id, x, y = next(rows)
            nodes.append(TopoNode(id=int(node_id), position=Vec2(float(x), float(y))))
        _, n_edges = next(rows)
        edges = []
        for _ in range(int(n_edges)):
            node_a, node_b, length, n_points = next(rows)
            polyline = [Vec2(float(x), float(y)) for x, y in (next(rows) for _ in range(int(n_points)))]
            edges.append(TopoEdge(node_a=int(node_a), node_b=int(node_b), length=float(length), polyline=polyline))
        return cls(nodes=nodes, edges=edges)


def arc_length(polyline: Any) -> float:
    """Compute length of a polyline."""
    return sum(a.distance(b) for a, b in zip(polyline, polyline[1:]))


def cycle_rank(graph: TopoGraph) -> int:
    """Number of independent cycles, |E| - |V| + number of components."""
    if not graph.nodes:
        return 0
    return len(graph.edges) - len(graph.nodes) + nx.number_connected_components(graph.to_networkx())


def _ring_values(work: np.ndarray, row: int, column: int) -> List[int]:
    """Read P2..P9 of a pixel from a padded image (row and column are in padded coordinates)."""
    return [int(work[row + dr, column + dc]) for dr, dc in _RING]


def _transitions(ring: List[int]) -> int:
    """Count 0 -> 1 transitions in the cyclic sequence P2..P9, P2."""
    return sum(1 for i in range(8) if ring[i] == 0 and ring[(i + 1) % 8] == 1)


def _deletable(ring: List[int], first: bool) -> bool:
    """Apply the two-subiteration parallel thinning conditions to a single pixel."""
    p2, _, p4, _, p6, _, p8, _ = ring
    neighbours = sum(ring)
    if not 2 <= neighbours <= 6 or _transitions(ring) != 1:
        return False
    if first:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def _candidates(work: np.ndarray, first: bool) -> np.ndarray:
    """Mark deletable pixels of one subiteration, reading only the given buffer."""
    core = work[1:-1, 1:-1]
    h, w = core.shape
    ring = [work[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w].astype(np.int8) for dr, dc in _RING]
    p2, _, p4, _, p6, _, p8, _ = ring

    neighbours = sum(ring)
    transitions = sum(((ring[i] == 0) & (ring[(i + 1) % 8] == 1)).astype(np.int8) for i in range(8))
    mask = core & (neighbours >= 2) & (neighbours <= 6) & (transitions == 1)
    if first:
        mask &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        mask &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return np.asarray(mask)


def _subiteration(work: np.ndarray, first: bool) -> bool:
    """Run one thinning subiteration in place, return whether anything was deleted.

    Isolated candidates are deleted together as in a fully parallel pass. Candidates touching other candidates
    are deleted one by one against the current buffer: judged only on the previous buffer, both pixels of a
    two pixel thick line or a 2x2 square pass the test and the line breaks or the square vanishes.
    """
    candidates = _candidates(work, first)
    if not candidates.any():
        return False

    padded = np.pad(candidates, 1)
    crowd = ndimage.convolve(padded.astype(np.int8), EIGHT_CONNECTIVITY.astype(np.int8), mode="constant")[1:-1, 1:-1]
    # Candidates without candidate neighbours are independent of each other.
    independent = candidates & (crowd == 1)
    work[1:-1, 1:-1][independent] = False

    # Adjacent candidates are committed in raster order, each re-checked on the current buffer so that every
    # deletion removes a simple point.
    rows, columns = np.nonzero(candidates & ~independent)
    for row, column in zip(rows.tolist(), columns.tolist()):
        if _deletable(_ring_values(work, row + 1, column + 1), first):
            work[row + 1, column + 1] = False

    return True


def _is_staircase(work: np.ndarray, row: int, column: int) -> bool:
    """Check a skeleton pixel is a redundant corner with two perpendicular 4-neighbours on the skeleton."""
    ring = _ring_values(work, row, column)
    north, east, south, west = ring[0], ring[2], ring[4], ring[6]
    if not ((north and east) or (east and south) or (south and west) or (west and north)):
        return False
    return 2 <= sum(ring) <= 6 and _transitions(ring) == 1


def _remove_staircases(work: np.ndarray) -> None:
    """Delete redundant corner pixels of diagonal steps."""
    changed = True
    while changed:
        changed = False
        rows, columns = np.nonzero(work)
        for row, column in zip(rows.tolist(), columns.tolist()):
            if _is_staircase(work, row, column):
                work[row, column] = False
                changed = True


def _is_simple(ring: List[int]) -> bool:
    """Check deleting a pixel keeps the local topology, its 8-connectivity number has to be one."""
    background = [1 - value for value in ring]
    crossings = sum(
        background[k] - background[k] * background[(k + 1) % 8] * background[(k + 2) % 8] for k in (0, 2, 4, 6)
    )
    return crossings == 1 and sum(ring) >= 2


def _break_blocks(work: np.ndarray) -> int:
    """Delete simple pixels out of 2x2 skeleton blocks, return the number of blocks no deletion can break.

    A block is left only when deleting any one of its pixels would change the topology of the skeleton.
    """
    forced = 0
    changed = True
    while changed:
        changed = False
        forced = 0
        blocks = work[:-1, :-1] & work[1:, :-1] & work[:-1, 1:] & work[1:, 1:]
        rows, columns = np.nonzero(blocks)
        for row, column in zip(rows.tolist(), columns.tolist()):
            corners = ((row, column), (row, column + 1), (row + 1, column), (row + 1, column + 1))
            if not all(work[corner] for corner in corners):
                continue
            for r, c in corners:
                if _is_simple(_ring_values(work, r, c)):
                    work[r, c] = False
                    changed = True
                    break
            else:
                forced += 1
    return forced


def thin(mask: OccupancyGrid) -> Skeleton:
    """Thin the free region of the grid down to its medial-axis skeleton.

    Grid borders are treated as blocked. The result is a subset of free cells with the same 8-connected
    components as the free region. It is at most one pixel wide: a 2x2 block of skeleton pixels survives only
    where deleting any of its pixels would split the skeleton or close a hole.
    """
    free = ~mask.cells
    work = np.pad(free, 1)

    iterations = 0
    while True:
        iterations += 1
        changed = _subiteration(work, first=True)
        changed = _subiteration(work, first=False) or changed
        if not changed:
            break

    _remove_staircases(work)
    forced = _break_blocks(work)
    if forced:
        _LOGGER.debug("Kept %d 2x2 skeleton blocks every pixel of which holds the skeleton together", forced)
    cells = work[1:-1, 1:-1].copy()

    # A component that thinned away entirely keeps its first pixel.
    labels, count = ndimage.label(free, structure=EIGHT_CONNECTIVITY)
    if count:
        kept = set(np.unique(labels[cells]).tolist())
        for label in range(1, count + 1):
            if label not in kept:
                rows, columns = np.nonzero(labels == label)
                cells[rows[0], columns[0]] = True

    _LOGGER.debug("Thinning converged after %d iterations, %d skeleton pixels", iterations, int(cells.sum()))
    return Skeleton(width=mask.width, height=mask.height, cells=cells)


def _neighbours(cells: np.ndarray, pixel: Pixel) -> List[Pixel]:
    """List 8-neighbours of a pixel on the skeleton, in ring order."""
    row, column = pixel
    h, w = cells.shape
    result = []
    for dr, dc in _RING:
        r, c = row + dr, column + dc
        if 0 <= r < h and 0 <= c < w and cells[r, c]:
            result.append((r, c))
    return result


def skeleton_to_graph(s: Skeleton, grid: OccupancyGrid) -> TopoGraph:
    """Extract nodes (pixels of degree other than two) and edges (chains of degree-two pixels) of a skeleton."""
    cells = s.cells
    pixels = s.pixels()
    if not pixels:
        return TopoGraph(nodes=(), edges=())

    degree = {pixel: len(_neighbours(cells, pixel)) for pixel in pixels}

    def center(pixel: Pixel) -> Vec2:
        return grid.cell_center(pixel[1], pixel[0])

    # Junction pixels adjacent to each other form a single node.
    junctions = np.zeros_like(cells)
    for pixel, d in degree.items():
        if d >= 3:
            junctions[pixel] = True
    labels, n_clusters = ndimage.label(junctions, structure=EIGHT_CONNECTIVITY)

    groups: List[List[Pixel]] = [[] for _ in range(n_clusters)]
    for pixel in pixels:
        label = int(labels[pixel])
        if label:
            groups[label - 1].append(pixel)
        elif degree[pixel] != 2:
            groups.append([pixel])

    # Node ids follow raster order of the first pixel of each group.
    groups.sort(key=lambda group: group[0])
    node_of: Dict[Pixel, int] = {}
    nodes: List[TopoNode] = []
    for node_id, group in enumerate(groups):
        cy = sum(p[0] for p in group) / len(group)
        cx = sum(p[1] for p in group) / len(group)
        snapped = min(group, key=lambda p: ((p[0] - cy) ** 2 + (p[1] - cx) ** 2, p))
        nodes.append(TopoNode(id=node_id, position=center(snapped)))
        for pixel in group:
            node_of[pixel] = node_id

    edges: List[TopoEdge] = []
    used_steps: Set[Tuple[Pixel, Pixel]] = set()
    chain_visited: Set[Pixel] = set()

    def trace(start: Pixel, first: Pixel) -> Tuple[List[Pixel], Pixel]:
        path = [start]
        prev, cur = start, first
        while cur not in node_of:
            path.append(cur)
            chain_visited.add(cur)
            following = [p for p in _neighbours(cells, cur) if p != prev]
            if not following:
                break
            prev, cur = cur, following[0]
            if cur == start:
                break
        return path, cur

    def add_edge(node_a: int, node_b: int, path: List[Pixel]) -> None:
        polyline = [center(p) for p in path]
        start_position = nodes[node_a].position
        end_position = nodes[node_b].position
        if polyline[0] != start_position:
            polyline.insert(0, start_position)
        if polyline[-1] != end_position:
            polyline.append(end_position)
        length = arc_length(polyline)
        if length <= 0.0:
            return
        if node_a == node_b and len(path) - 2 < _MIN_LOOP_PIXELS:
            return
        edges.append(TopoEdge(node_a=node_a, node_b=node_b, length=length, polyline=polyline))

    for group in groups:
        for pixel in group:
            for first in _neighbours(cells, pixel):
                if node_of.get(first) == node_of[pixel] or (pixel, first) in used_steps:
                    continue
                path, end = trace(pixel, first)
                if end not in node_of:
                    continue
                path.append(end)
                used_steps.add((pixel, first))
                used_steps.add((end, path[-2]))
                add_edge(node_of[pixel], node_of[end], path)

    # Remaining chain pixels belong to isolated cycles, anchored at their first pixel.
    for pixel in pixels:
        if pixel in node_of or pixel in chain_visited or degree[pixel] != 2:
            continue
        node_id = len(nodes)
        nodes.append(TopoNode(id=node_id, position=center(pixel)))
        node_of[pixel] = node_id
        chain_visited.add(pixel)
        first = _neighbours(cells, pixel)[0]
        path, end = trace(pixel, first)
        path.append(end)
        add_edge(node_id, node_id, path)

    _LOGGER.debug("Extracted topological graph with %d nodes and %d edges", len(nodes), len(edges))
    return TopoGraph(nodes=nodes, edges=edges)


def _merge(edge1: TopoEdge, edge2: TopoEdge, node_id: int) -> TopoEdge:
    """Join two edges meeting at a node of degree two."""
    start = edge1.other(node_id)
    end = edge2.other(node_id)
    first = list(reversed(edge1.oriented(node_id)))
    second = list(edge2.oriented(node_id))
    polyline = first + second[1:]
    return TopoEdge(node_a=start, node_b=end, length=edge1.length + edge2.length, polyline=polyline)


def _find_spur(graph: TopoGraph, min_length: float) -> Optional[Tuple[int, int]]:
    """Find the shortest dead-end edge hanging off a junction, as (edge index, leaf node)."""
    degree = graph.degrees()
    best: Optional[Tuple[float, int, int]] = None
    for index, edge in enumerate(graph.edges):
        if edge.node_a == edge.node_b or edge.length >= min_length:
            continue
        for leaf, other in ((edge.node_a, edge.node_b), (edge.node_b, edge.node_a)):
            if degree[leaf] == 1 and degree[other] >= 3:
                if best is None or (edge.length, index) < best[:2]:
                    best = (edge.length, index, leaf)
                break
    return None if best is None else (best[1], best[2])


def _compact(nodes: Dict[int, TopoNode], edges: List[TopoEdge]) -> TopoGraph:
    """Renumber node ids densely, preserving their order."""
    mapping = {old: new for new, old in enumerate(sorted(nodes))}
    return TopoGraph(
        nodes=[TopoNode(id=mapping[old], position=nodes[old].position) for old in sorted(nodes)],
        edges=[attr.evolve(edge, node_a=mapping[edge.node_a], node_b=mapping[edge.node_b]) for edge in edges],
    )


def prune_spurs(g: TopoGraph, min_length: float) -> TopoGraph:
    """Remove short dead-end branches and merge the degree-two nodes they leave behind."""
    if min_length <= 0.0:
        return g

    graph = g
    removed = 0
    while True:
        spur = _find_spur(graph, min_length)
        if spur is None:
            break

        index, leaf = spur
        junction = graph.edges[index].other(leaf)
        nodes = {node.id: node for node in graph.nodes if node.id != leaf}
        edges = [edge for i, edge in enumerate(graph.edges) if i != index]
        removed += 1

        incident = [edge for edge in edges if junction in (edge.node_a, edge.node_b)]
        if len(incident) == 2 and all(edge.node_a != edge.node_b for edge in incident):
            merged = _merge(incident[0], incident[1], junction)
            edges = [edge for edge in edges if edge not in incident]
            edges.append(merged)
            del nodes[junction]

        graph = TopoGraph(nodes=list(nodes.values()), edges=edges)

    if removed:
        _LOGGER.debug("Pruned %d spurs shorter than %.3fm", removed, min_length)
        return _compact({node.id: node for node in graph.nodes}, list(graph.edges))
    return g
