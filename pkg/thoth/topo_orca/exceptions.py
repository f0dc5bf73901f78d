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

"""Exceptions hierarchy in Thoth's topo-orca simulator."""

from typing import Optional


class TopoOrcaException(Exception):  # noqa: N818
    """A base class for topo-orca exception hierarchy."""


class ConfigError(TopoOrcaException):
    """Raised when a configuration key or value is not acceptable."""

    def __init__(self, message: str, *, key: Optional[str] = None, line: Optional[int] = None) -> None:
        """Keep the offending key and line so that diagnostics can point at them."""
        self.key = key
        self.line = line
        location = ""
        if line is not None:
            location += f"line {line}: "
        if key is not None:
            location += f"{key!r}: "
        super().__init__(location + message)


class BlockedPosition(TopoOrcaException):
    """Raised when a position expected in free space lies in a blocked cell."""


class NoPath(TopoOrcaException):  # noqa: N818
    """Raised when the goal is not reachable from the start on the augmented graph."""


class ScenarioInfeasible(TopoOrcaException):  # noqa: N818
    """Raised when no acceptable scenario was sampled within the rejection budget."""


class BenchmarkAborted(TopoOrcaException):  # noqa: N818
    """Raised when too many benchmark episodes were infeasible."""


class LogFormatError(TopoOrcaException):
    """Raised when an episode log cannot be parsed."""

    def __init__(self, message: str, *, path: Optional[str] = None, line: Optional[int] = None) -> None:
        """Keep file and line context of the malformed record."""
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location += f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}" if location else message)
