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

"""Continuous 2D primitives, rectangular obstacles and the occupancy grid they are rasterized to."""

import logging
import math
from typing import Any
from typing import Iterable
from typing import List
from typing import Sequence
from typing import Tuple

import attr
import numpy as np
from scipy import ndimage

_LOGGER = logging.getLogger(__name__)

# 8-connectivity structuring element used for component labelling.
EIGHT_CONNECTIVITY = np.ones((3, 3), dtype=bool)


def _finite(_: Any, attribute: "attr.Attribute[float]", value: float) -> None:
    """Reject NaN and infinite components."""
    if not math.isfinite(value):
        raise ValueError(f"Component {attribute.name!r} of a vector has to be finite, got {value!r}")


@attr.s(slots=True, frozen=True)
class Vec2:
    """A point or a vector in the plane, in meters (or meters/frame in velocity space)."""

    x = attr.ib(type=float, converter=float, validator=_finite)
    y = attr.ib(type=float, converter=float, validator=_finite)

    def __add__(self, other: "Vec2") -> "Vec2":
        """Add two vectors."""
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        """Subtract two vectors."""
        return Vec2(self.x - other.x, self.y - other.y)

    def __neg__(self) -> "Vec2":
        """Flip the vector."""
        return Vec2(-self.x, -self.y)

    def __mul__(self, scalar: float) -> "Vec2":
        """Scale the vector."""
        return Vec2(self.x * scalar, self.y * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Vec2":
        """Divide the vector by a scalar."""
        return Vec2(self.x / scalar, self.y / scalar)

    def dot(self, other: "Vec2") -> float:
        """Compute the dot product."""
        return self.x * other.x + self.y * other.y

    def det(self, other: "Vec2") -> float:
        """Compute the 2D cross product (determinant of the two column vectors)."""
        return self.x * other.y - self.y * other.x

    def abs_sq(self) -> float:
        """Compute the squared length."""
        return self.x * self.x + self.y * self.y

    def norm(self) -> float:
        """Compute the length."""
        return math.hypot(self.x, self.y)

    def normalized(self) -> "Vec2":
        """Get the unit vector pointing in the same direction; the zero vector stays zero."""
        length = self.norm()
        if length == 0.0:
            return self
        return Vec2(self.x / length, self.y / length)

    def perp(self) -> "Vec2":
        """Rotate by 90 degrees counterclockwise."""
        return Vec2(-self.y, self.x)

    def distance(self, other: "Vec2") -> float:
        """Euclidean distance to another point."""
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> Tuple[float, float]:
        """Get the vector as a plain tuple."""
        return self.x, self.y


ZERO = Vec2(0.0, 0.0)


@attr.s(slots=True, frozen=True)
class RectObstacle:
    """An axis-aligned rectangular static obstacle."""

    min_corner = attr.ib(type=Vec2)
    max_corner = attr.ib(type=Vec2)

    @max_corner.validator
    def _check_area(self, _: Any, value: Vec2) -> None:
        if not (self.min_corner.x < value.x and self.min_corner.y < value.y):
            raise ValueError(f"Obstacle corners {self.min_corner} and {value} do not span a positive area")

    @property
    def width(self) -> float:
        """Extent along the x axis."""
        return self.max_corner.x - self.min_corner.x

    @property
    def height(self) -> float:
        """Extent along the y axis."""
        return self.max_corner.y - self.min_corner.y

    @property
    def area(self) -> float:
        """Area of the rectangle."""
        return self.width * self.height

    def inside_world(self, world_w: float, world_h: float) -> bool:
        """Check the obstacle is fully contained in the world rectangle."""
        return (
            0.0 <= self.min_corner.x
            and 0.0 <= self.min_corner.y
            and self.max_corner.x <= world_w
            and self.max_corner.y <= world_h
        )

    def distance(self, p: Vec2) -> float:
        """Euclidean distance of a point to the rectangle, zero inside."""
        dx = max(self.min_corner.x - p.x, 0.0, p.x - self.max_corner.x)
        dy = max(self.min_corner.y - p.y, 0.0, p.y - self.max_corner.y)
        return math.hypot(dx, dy)

    def gap(self, other: "RectObstacle") -> float:
        """Euclidean distance between two rectangles, zero when they overlap or touch."""
        dx = max(other.min_corner.x - self.max_corner.x, 0.0, self.min_corner.x - other.max_corner.x)
        dy = max(other.min_corner.y - self.max_corner.y, 0.0, self.min_corner.y - other.max_corner.y)
        return math.hypot(dx, dy)


@attr.s(slots=True, frozen=True, eq=False)
class OccupancyGrid:
    """A discretized free/blocked map of the world.

    Cells are stored row-major in a (height, width) boolean array, ``cells[row, column]`` with the row index
    growing along +y; ``True`` marks a blocked cell. The world coordinate of the corner of cell (0, 0) is
    ``origin``.
    """

    width = attr.ib(type=int)
    height = attr.ib(type=int)
    cell_size = attr.ib(type=float)
    cells = attr.ib(type=np.ndarray)
    origin = attr.ib(type=Vec2, default=ZERO)

    @cells.validator
    def _check_cells(self, _: Any, value: np.ndarray) -> None:
        if value.shape != (self.height, self.width):
            raise ValueError(f"Expected {self.height}x{self.width} cells, got array of shape {value.shape}")
        value.setflags(write=False)

    def __eq__(self, other: object) -> bool:
        """Compare grids cell by cell."""
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size == other.cell_size
            and self.origin == other.origin
            and bool(np.array_equal(self.cells, other.cells))
        )

    __hash__ = object.__hash__

    @property
    def world_w(self) -> float:
        """Width of the covered world, in meters."""
        return self.width * self.cell_size

    @property
    def world_h(self) -> float:
        """Height of the covered world, in meters."""
        return self.height * self.cell_size

    def world_to_cell(self, p: Vec2) -> Tuple[int, int]:
        """Get (column, row) of the cell containing the given point, clamped to the grid."""
        column = int(math.floor((p.x - self.origin.x) / self.cell_size))
        row = int(math.floor((p.y - self.origin.y) / self.cell_size))
        return min(max(column, 0), self.width - 1), min(max(row, 0), self.height - 1)

    def cell_center(self, column: int, row: int) -> Vec2:
        """Get world coordinates of the center of the given cell."""
        return Vec2(
            self.origin.x + (column + 0.5) * self.cell_size,
            self.origin.y + (row + 0.5) * self.cell_size,
        )

    def in_bounds(self, p: Vec2) -> bool:
        """Check the point lies inside the world rectangle covered by the grid."""
        return (
            self.origin.x <= p.x <= self.origin.x + self.world_w
            and self.origin.y <= p.y <= self.origin.y + self.world_h
        )

    def is_blocked_cell(self, column: int, row: int) -> bool:
        """Check whether the given cell is blocked."""
        return bool(self.cells[row, column])

    def is_free(self, p: Vec2) -> bool:
        """Check the point lies inside the world and in a free cell."""
        if not self.in_bounds(p):
            return False
        column, row = self.world_to_cell(p)
        return not self.cells[row, column]

    def free_cells(self) -> List[Tuple[int, int]]:
        """List (column, row) of all free cells in raster order."""
        rows, columns = np.nonzero(~self.cells)
        return list(zip(columns.tolist(), rows.tolist()))

    def nearest_free_cell(self, p: Vec2) -> Tuple[int, int]:
        """Find the free cell whose center is closest to the given point, ties broken in raster order."""
        rows, columns = np.nonzero(~self.cells)
        if rows.size == 0:
            raise ValueError("The grid has no free cell")
        xs = self.origin.x + (columns + 0.5) * self.cell_size
        ys = self.origin.y + (rows + 0.5) * self.cell_size
        idx = int(np.argmin((xs - p.x) ** 2 + (ys - p.y) ** 2))
        return int(columns[idx]), int(rows[idx])


def rasterize(
    world_w: float,
    world_h: float,
    cell_size: float,
    obstacles: Sequence[RectObstacle],
    inflation: float,
) -> OccupancyGrid:
    """Rasterize rectangular obstacles inflated by a margin into an occupancy grid.

    A cell is blocked iff its center lies within ``inflation`` of an obstacle or outside the world rectangle
    shrunk by ``inflation``; the world boundary is handled as an obstacle.
    """
    if world_w <= 0 or world_h <= 0 or cell_size <= 0:
        raise ValueError("World dimensions and cell size have to be positive")
    if inflation < 0:
        raise ValueError(f"Inflation has to be non-negative, got {inflation}")
    if cell_size > min(world_w, world_h):
        raise ValueError(f"Cell size {cell_size} is larger than the world ({world_w}x{world_h})")

    width = int(round(world_w / cell_size))
    height = int(round(world_h / cell_size))
    xs = (np.arange(width) + 0.5) * cell_size
    ys = (np.arange(height) + 0.5) * cell_size
    cx, cy = np.meshgrid(xs, ys)

    blocked = (cx < inflation) | (cx > world_w - inflation) | (cy < inflation) | (cy > world_h - inflation)
    for obstacle in obstacles:
        dx = np.maximum(np.maximum(obstacle.min_corner.x - cx, 0.0), cx - obstacle.max_corner.x)
        dy = np.maximum(np.maximum(obstacle.min_corner.y - cy, 0.0), cy - obstacle.max_corner.y)
        if inflation > 0:
            blocked |= dx * dx + dy * dy <= inflation * inflation
        else:
            # Strict containment so that a rectangle aligned with cell edges blocks exactly the cells it covers.
            blocked |= (
                (cx > obstacle.min_corner.x)
                & (cx < obstacle.max_corner.x)
                & (cy > obstacle.min_corner.y)
                & (cy < obstacle.max_corner.y)
            )

    _LOGGER.debug("Rasterized %d obstacles to a %dx%d grid", len(obstacles), width, height)
    return OccupancyGrid(width=width, height=height, cell_size=cell_size, cells=blocked)


def traversable_fraction(grid: OccupancyGrid) -> float:
    """Get the fraction of free cells in the grid."""
    total = grid.width * grid.height
    return float(total - int(np.count_nonzero(grid.cells))) / total


def free_components(grid: OccupancyGrid) -> int:
    """Count 8-connected components of the free region."""
    _, count = ndimage.label(~grid.cells, structure=EIGHT_CONNECTIVITY)
    return int(count)


def supercover_cells(grid: OccupancyGrid, p: Vec2, q: Vec2) -> Iterable[Tuple[int, int]]:
    """Iterate over every grid cell the segment pq touches, corner-grazed cells included.

    Endpoints on the far edges of the world touch only the cells inside the grid.
    """
    for column, row in _lattice_walk(grid, p, q):
        if 0 <= column < grid.width and 0 <= row < grid.height:
            yield column, row


def _lattice_walk(grid: OccupancyGrid, p: Vec2, q: Vec2) -> Iterable[Tuple[int, int]]:
    """Walk lattice cells along pq in grid units, cells past the grid edges included."""
    x0 = (p.x - grid.origin.x) / grid.cell_size
    y0 = (p.y - grid.origin.y) / grid.cell_size
    x1 = (q.x - grid.origin.x) / grid.cell_size
    y1 = (q.y - grid.origin.y) / grid.cell_size

    ix = int(math.floor(x0))
    iy = int(math.floor(y0))
    yield ix, iy

    dx = x1 - x0
    dy = y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    t_delta_x = abs(1.0 / dx) if dx != 0 else math.inf
    t_delta_y = abs(1.0 / dy) if dy != 0 else math.inf
    if dx > 0:
        t_max_x = (ix + 1 - x0) / dx
    elif dx < 0:
        t_max_x = (x0 - ix) / -dx
    else:
        t_max_x = math.inf
    if dy > 0:
        t_max_y = (iy + 1 - y0) / dy
    elif dy < 0:
        t_max_y = (y0 - iy) / -dy
    else:
        t_max_y = math.inf

    while min(t_max_x, t_max_y) <= 1.0:
        if abs(t_max_x - t_max_y) <= 1e-12:
            # Passing through a lattice corner touches both side cells.
            yield ix + step_x, iy
            yield ix, iy + step_y
            ix += step_x
            iy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_delta_x
        else:
            iy += step_y
            t_max_y += t_delta_y
        yield ix, iy


def raycast_free(grid: OccupancyGrid, p: Vec2, q: Vec2) -> bool:
    """Check no blocked cell is touched by the segment pq."""
    # Canonical order makes the check symmetric in its endpoints.
    if (q.x, q.y) < (p.x, p.y):
        p, q = q, p

    cells = grid.cells
    for column, row in supercover_cells(grid, p, q):
        if cells[row, column]:
            return False
    return True


def to_pgm(grid: OccupancyGrid) -> str:
    """Export the grid as a plain-text PGM image, 0 for blocked and 255 for free cells.

    The first image row is the top of the world (highest y).
    """
    lines = ["P2", f"{grid.width} {grid.height}", "255"]
    for row in range(grid.height - 1, -1, -1):
        lines.append(" ".join("0" if blocked else "255" for blocked in grid.cells[row].tolist()))
    return "\n".join(lines) + "\n"
