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

"""Static SVG rendering of scenes, topological graphs, waypoint paths and trajectories.

Drawings use world coordinates in meters with the y axis pointing up; the origin is the bottom-left corner of the
world. Scene elements are placed in a group flipping the SVG y axis.
"""

import logging
from typing import List
from typing import Optional
from typing import Sequence

import attr
import drawsvg as draw

from .episode_log import EpisodeLog
from .geometry import RectObstacle
from .geometry import Vec2
from .guidance import WaypointPlan
from .topology import TopoGraph

_LOGGER = logging.getLogger(__name__)

PIXELS_PER_METER = 30.0

_OBSTACLE_FILL = "#444444"
_GRAPH_COLOR = "#1f77b4"
_PATH_COLOR = "#d62728"
_AGENT_COLOR = "#2ca02c"
_GOAL_COLOR = "#ff7f0e"
_TRACE_COLOR = "#7f7f7f"


@attr.s(slots=True, frozen=True)
class SceneView:
    """What to draw."""

    world_w = attr.ib(type=float)
    world_h = attr.ib(type=float)
    obstacles = attr.ib(type=Sequence[RectObstacle], converter=tuple)
    radius = attr.ib(type=float, default=0.3)
    topo = attr.ib(type=Optional[TopoGraph], default=None)
    agents = attr.ib(type=Sequence[Vec2], converter=tuple, default=())
    goals = attr.ib(type=Sequence[Vec2], converter=tuple, default=())
    plans = attr.ib(type=Sequence[WaypointPlan], converter=tuple, default=())
    traces = attr.ib(type=Sequence[Sequence[Vec2]], converter=tuple, default=())


def _polyline(points: Sequence[Vec2], **kwargs: str) -> draw.Lines:
    coordinates: List[float] = []
    for point in points:
        coordinates.extend(point.as_tuple())
    return draw.Lines(*coordinates, close=False, fill="none", **kwargs)


def render_scene(view: SceneView, scale: float = PIXELS_PER_METER) -> draw.Drawing:
    """Draw obstacles, the graph, agents with their goals, plans and traces, back to front."""
    width = view.world_w * scale
    height = view.world_h * scale
    d = draw.Drawing(width, height)
    d.append(draw.Rectangle(0, 0, width, height, fill="white"))

    scene = draw.Group(transform=f"translate(0,{height}) scale({scale},{-scale})")
    scene.append(draw.Rectangle(0, 0, view.world_w, view.world_h, fill="none", stroke="black", stroke_width=0.05))

    for obstacle in view.obstacles:
        scene.append(
            draw.Rectangle(
                obstacle.min_corner.x,
                obstacle.min_corner.y,
                obstacle.width,
                obstacle.height,
                fill=_OBSTACLE_FILL,
            )
        )

    if view.topo is not None:
        for edge in view.topo.edges:
            scene.append(_polyline(edge.polyline, stroke=_GRAPH_COLOR, stroke_width="0.04"))
        for node in view.topo.nodes:
            scene.append(draw.Circle(node.position.x, node.position.y, 0.12, fill=_GRAPH_COLOR))

    for trace in view.traces:
        if len(trace) > 1:
            scene.append(_polyline(trace, stroke=_TRACE_COLOR, stroke_width="0.03"))

    for plan in view.plans:
        scene.append(_polyline(plan.waypoints, stroke=_PATH_COLOR, stroke_width="0.06"))
        for waypoint in plan.waypoints:
            scene.append(draw.Circle(waypoint.x, waypoint.y, 0.07, fill=_PATH_COLOR))

    for goal in view.goals:
        scene.append(draw.Circle(goal.x, goal.y, view.radius, fill="none", stroke=_GOAL_COLOR, stroke_width=0.05))
    for agent in view.agents:
        scene.append(draw.Circle(agent.x, agent.y, view.radius, fill=_AGENT_COLOR))

    d.append(scene)
    _LOGGER.debug(
        "Rendered %d obstacles, %d agents, %d plans and %d traces",
        len(view.obstacles),
        len(view.agents),
        len(view.plans),
        len(view.traces),
    )
    return d


def view_from_log(
    log: EpisodeLog,
    *,
    topo: Optional[TopoGraph] = None,
    plans: Sequence[WaypointPlan] = (),
    traces: bool = True,
) -> SceneView:
    """Build a view of an episode log, agents are drawn at their start positions."""
    initial_goals = {goal.agent: goal.position for goal in reversed(log.goals)}
    return SceneView(
        world_w=log.world_w,
        world_h=log.world_h,
        obstacles=log.obstacles,
        radius=log.radius,
        topo=topo,
        agents=log.starts,
        goals=[initial_goals[agent] for agent in sorted(initial_goals)],
        plans=plans,
        traces=[log.trajectory(agent) for agent in range(log.n_agents)] if traces and log.n_frames else (),
    )


def render_svg(view: SceneView, scale: float = PIXELS_PER_METER) -> str:
    """Render a view into SVG text."""
    return str(render_scene(view, scale).as_svg())
