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

"""Test geometric primitives, rasterization and raycasting."""

import math

import numpy as np
import pytest

from thoth.topo_orca.geometry import OccupancyGrid
from thoth.topo_orca.geometry import Vec2
from thoth.topo_orca.geometry import free_components
from thoth.topo_orca.geometry import rasterize
from thoth.topo_orca.geometry import raycast_free
from thoth.topo_orca.geometry import supercover_cells
from thoth.topo_orca.geometry import to_pgm
from thoth.topo_orca.geometry import traversable_fraction

from .base_test import TopoOrcaTestCase


class TestVec2(TopoOrcaTestCase):
    """Test vector arithmetic."""

    def test_arithmetic(self) -> None:
        """Test basic vector operations."""
        a = Vec2(1.0, 2.0)
        b = Vec2(3.0, -1.0)

        assert a + b == Vec2(4.0, 1.0)
        assert a - b == Vec2(-2.0, 3.0)
        assert -a == Vec2(-1.0, -2.0)
        assert a * 2 == Vec2(2.0, 4.0)
        assert 2 * a == Vec2(2.0, 4.0)
        assert b / 2 == Vec2(1.5, -0.5)
        assert a.dot(b) == 1.0
        assert a.det(b) == -7.0
        assert Vec2(3.0, 4.0).norm() == 5.0
        assert Vec2(3.0, 4.0).abs_sq() == 25.0
        assert Vec2(1.0, 0.0).perp() == Vec2(0.0, 1.0)
        assert Vec2(0.0, 0.0).normalized() == Vec2(0.0, 0.0)
        assert Vec2(0.0, 2.0).normalized() == Vec2(0.0, 1.0)

    @pytest.mark.parametrize("x,y", [(math.nan, 0.0), (0.0, math.inf), (-math.inf, 1.0)])
    def test_non_finite(self, x: float, y: float) -> None:
        """Test non-finite components are rejected."""
        with pytest.raises(ValueError):
            Vec2(x, y)

    def test_rect_obstacle(self) -> None:
        """Test obstacle extents and distances."""
        obstacle = self.rect(1.0, 1.0, 3.0, 2.0)

        assert obstacle.width == 2.0
        assert obstacle.height == 1.0
        assert obstacle.area == 2.0
        assert obstacle.inside_world(5.0, 5.0)
        assert not obstacle.inside_world(2.0, 5.0)
        assert obstacle.distance(Vec2(2.0, 1.5)) == 0.0
        assert obstacle.distance(Vec2(6.0, 6.0)) == 5.0
        assert obstacle.gap(self.rect(4.0, 1.0, 5.0, 2.0)) == 1.0
        assert obstacle.gap(self.rect(2.0, 1.5, 5.0, 2.5)) == 0.0

    def test_rect_obstacle_area(self) -> None:
        """Test obstacles without a positive area are rejected."""
        with pytest.raises(ValueError):
            self.rect(1.0, 1.0, 1.0, 2.0)


class TestRasterize(TopoOrcaTestCase):
    """Test rasterization of inflated obstacles."""

    def test_empty(self) -> None:
        """Test an empty world without inflation is free."""
        grid = rasterize(5.0, 4.0, 0.5, [], 0.0)

        assert grid.width == 10
        assert grid.height == 8
        assert not grid.cells.any()
        assert traversable_fraction(grid) == 1.0

    def test_exact_cover(self) -> None:
        """Test a rectangle aligned with cell edges blocks exactly the covered cells."""
        grid = rasterize(10.0, 10.0, 1.0, [self.rect(2.0, 2.0, 5.0, 5.0)], 0.0)

        blocked = {(column, row) for row, column in zip(*np.nonzero(grid.cells))}
        assert blocked == {(column, row) for column in range(2, 5) for row in range(2, 5)}

    def test_minkowski_area(self) -> None:
        """Test the blocked area matches the area of a square dilated by a disc."""
        grid = rasterize(10.0, 10.0, 0.1, [self.rect(4.5, 4.5, 5.5, 5.5)], 0.5)

        # The window leaves out the blocked band along the world boundary.
        blocked_area = int(np.count_nonzero(grid.cells[20:80, 20:80])) * 0.1 * 0.1
        expected = 1.0 + 4 * 0.5 + math.pi * 0.25
        assert abs(blocked_area - expected) / expected < 0.05

    def test_boundary_band(self) -> None:
        """Test the world boundary is inflated like an obstacle."""
        grid = rasterize(10.0, 10.0, 1.0, [], 1.0)

        assert grid.cells[0, :].all()
        assert grid.cells[:, 9].all()
        assert not grid.cells[1:9, 1:9].any()

    def test_inflation_monotonic(self) -> None:
        """Test a larger inflation never frees a cell."""
        obstacles = [self.rect(2.0, 3.0, 4.5, 4.0), self.rect(6.0, 6.0, 7.0, 8.5)]
        previous = rasterize(10.0, 10.0, 0.1, obstacles, 0.0)
        for inflation in (0.1, 0.25, 0.3, 0.7):
            grid = rasterize(10.0, 10.0, 0.1, obstacles, inflation)
            assert not (previous.cells & ~grid.cells).any()
            previous = grid

    @pytest.mark.parametrize(
        "world_w,world_h,cell_size,inflation",
        [(0.0, 1.0, 0.1, 0.0), (1.0, 1.0, 0.0, 0.0), (1.0, 1.0, 2.0, 0.0), (1.0, 1.0, 0.1, -0.1)],
    )
    def test_invalid(self, world_w: float, world_h: float, cell_size: float, inflation: float) -> None:
        """Test invalid rasterization parameters are rejected."""
        with pytest.raises(ValueError):
            rasterize(world_w, world_h, cell_size, [], inflation)


class TestOccupancyGrid(TopoOrcaTestCase):
    """Test occupancy grid helpers."""

    def test_traversable_fraction(self) -> None:
        """Test counting free cells."""
        cells = np.zeros((10, 10), dtype=bool)
        cells[3, :] = True
        cells[7, :] = True
        grid = OccupancyGrid(width=10, height=10, cell_size=1.0, cells=cells)

        assert traversable_fraction(grid) == 0.8
        assert traversable_fraction(OccupancyGrid(width=2, height=2, cell_size=1.0, cells=np.ones((2, 2), bool))) == 0.0

    def test_shape_checked(self) -> None:
        """Test cells have to match the declared dimensions."""
        with pytest.raises(ValueError):
            OccupancyGrid(width=3, height=2, cell_size=1.0, cells=np.zeros((3, 2), dtype=bool))

    def test_conversions(self) -> None:
        """Test world to cell and cell center conversions are inverse to each other."""
        grid = rasterize(4.0, 3.0, 0.25, [], 0.0)

        for column, row in [(0, 0), (3, 7), (15, 11)]:
            assert grid.world_to_cell(grid.cell_center(column, row)) == (column, row)

        p = Vec2(1.3, 2.9)
        assert grid.cell_center(*grid.world_to_cell(p)).distance(p) <= grid.cell_size * math.sqrt(2) / 2
        assert grid.world_to_cell(Vec2(4.0, 3.0)) == (15, 11)

    def test_is_free(self) -> None:
        """Test point queries."""
        grid = self.grid_from_rows(["..#", "...", "#.."])

        assert grid.is_free(Vec2(0.5, 0.5)) is False
        assert grid.is_free(Vec2(2.5, 2.5)) is False
        assert grid.is_free(Vec2(1.5, 1.5)) is True
        assert grid.is_free(Vec2(3.5, 1.5)) is False
        assert grid.free_cells()[0] == (1, 0)
        assert grid.nearest_free_cell(Vec2(0.4, 0.4)) == (1, 0)

    def test_free_components(self) -> None:
        """Test counting connected parts of the free space."""
        assert free_components(self.grid_from_rows(["..#..", "..#..", "..#.."])) == 2
        # Diagonal neighbours are connected.
        assert free_components(self.grid_from_rows([".#", "#."])) == 1

    def test_to_pgm(self) -> None:
        """Test the PGM export puts the top of the world first."""
        grid = self.grid_from_rows(["#.", ".."])

        assert to_pgm(grid) == "P2\n2 2\n255\n0 255\n255 255\n"


class TestRaycast(TopoOrcaTestCase):
    """Test visibility checks on a grid."""

    def test_degenerate(self) -> None:
        """Test a segment collapsed to a point in a free cell."""
        grid = self.grid_from_rows(["...", ".#.", "..."])

        assert raycast_free(grid, Vec2(0.5, 0.5), Vec2(0.5, 0.5))
        assert not raycast_free(grid, Vec2(1.5, 1.5), Vec2(1.5, 1.5))

    def test_blocked_row(self) -> None:
        """Test a blocked cell between two points of the same row."""
        grid = self.grid_from_rows([".....", "..#..", "....."])

        assert not raycast_free(grid, Vec2(0.5, 1.5), Vec2(4.5, 1.5))
        assert raycast_free(grid, Vec2(0.5, 0.5), Vec2(4.5, 0.5))

    def test_corner_graze(self) -> None:
        """Test a segment through a lattice corner touches both side cells."""
        grid = self.grid_from_rows(["...", "...", ".#."])

        assert set(supercover_cells(grid, Vec2(0.5, 0.5), Vec2(2.5, 2.5))) >= {(1, 0), (0, 1)}
        assert not raycast_free(grid, Vec2(0.5, 0.5), Vec2(2.5, 2.5))
        assert not raycast_free(grid, Vec2(2.5, 2.5), Vec2(0.5, 0.5))

    def test_world_edges(self) -> None:
        """Test segments ending on the world boundary visit only cells of the grid."""
        grid = self.grid_from_rows([".....", "....#"])

        assert list(supercover_cells(grid, Vec2(0.5, 0.5), Vec2(5.0, 0.5))) == [(c, 0) for c in range(5)]
        assert list(supercover_cells(grid, Vec2(2.5, 0.5), Vec2(0.0, 0.5))) == [(2, 0), (1, 0), (0, 0)]
        assert list(supercover_cells(grid, Vec2(5.0, 2.0), Vec2(3.5, 0.5))) == [(4, 1), (3, 1), (4, 0), (3, 0)]
        assert raycast_free(grid, Vec2(0.5, 1.5), Vec2(5.0, 1.5))
        assert not raycast_free(grid, Vec2(5.0, 0.0), Vec2(2.5, 1.5))

    def test_symmetric(self) -> None:
        """Test raycasting does not depend on the order of endpoints."""
        rng = np.random.default_rng(3)
        grid = OccupancyGrid(width=20, height=15, cell_size=0.5, cells=rng.random((15, 20)) < 0.1)

        for _ in range(300):
            p = Vec2(*rng.uniform((0.0, 0.0), (10.0, 7.5)).tolist())
            q = Vec2(*rng.uniform((0.0, 0.0), (10.0, 7.5)).tolist())
            assert raycast_free(grid, p, q) == raycast_free(grid, q, p)

    def test_dense_sampling(self) -> None:
        """Test a segment sampled to hit a blocked cell is never reported free."""
        rng = np.random.default_rng(11)
        t = np.linspace(0.0, 1.0, 10_000)

        for _ in range(20):
            cells = rng.random((12, 16)) < 0.08
            grid = OccupancyGrid(width=16, height=12, cell_size=0.5, cells=cells)
            for _ in range(10):
                p = rng.uniform((0.0, 0.0), (8.0, 6.0))
                q = rng.uniform((0.0, 0.0), (8.0, 6.0))
                samples = p + t[:, None] * (q - p)
                columns = np.clip(np.floor(samples[:, 0] / 0.5).astype(int), 0, 15)
                rows = np.clip(np.floor(samples[:, 1] / 0.5).astype(int), 0, 11)
                if cells[rows, columns].any():
                    assert not raycast_free(grid, Vec2(*p.tolist()), Vec2(*q.tolist()))
