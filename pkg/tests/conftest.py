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

"""Shared pytest configuration."""

from typing import Any
from typing import List

import pytest


def pytest_addoption(parser: Any) -> None:
    """Add an option enabling long running statistical checks."""
    parser.addoption("--run-slow", action="store_true", default=False, help="run tests marked as slow")


def pytest_collection_modifyitems(config: Any, items: List[Any]) -> None:
    """Skip slow tests unless explicitly requested."""
    if config.getoption("--run-slow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --run-slow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
