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

"""Thoth's topo-orca command line interface."""

import logging
import os
import time
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import NoReturn
from typing import Optional
from typing import Tuple

import click
from thoth.common import init_logging

from thoth.topo_orca import __version__
from thoth.topo_orca.config import RunManifest
from thoth.topo_orca.config import parse_config
from thoth.topo_orca.episode_log import EpisodeLog
from thoth.topo_orca.exceptions import BenchmarkAborted
from thoth.topo_orca.exceptions import ConfigError
from thoth.topo_orca.exceptions import LogFormatError
from thoth.topo_orca.exceptions import TopoOrcaException
from thoth.topo_orca.geometry import rasterize
from thoth.topo_orca.geometry import to_pgm
from thoth.topo_orca.guidance import WaypointPlan
from thoth.topo_orca.guidance import plan_for
from thoth.topo_orca.metrics import compute_report
from thoth.topo_orca.metrics import format_key_values
from thoth.topo_orca.metrics import format_table
from thoth.topo_orca.orca import Agent
from thoth.topo_orca.render import SceneView
from thoth.topo_orca.render import render_svg
from thoth.topo_orca.render import view_from_log
from thoth.topo_orca.simulation import SCENARIO_STREAM
from thoth.topo_orca.simulation import ScenarioConfig
from thoth.topo_orca.simulation import derive_seed
from thoth.topo_orca.simulation import generate_scenario
from thoth.topo_orca.simulation import initial_plans
from thoth.topo_orca.simulation import run_benchmark
from thoth.topo_orca.topology import TopoGraph
from thoth.topo_orca.topology import prune_spurs
from thoth.topo_orca.topology import skeleton_to_graph
from thoth.topo_orca.topology import thin

init_logging()

_LOGGER = logging.getLogger("thoth.topo_orca")

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_MALFORMED = 4

_DEFAULT_JOBS = os.cpu_count() or 1

MANIFEST_FILE = "manifest.yaml"
LOGS_DIR = "logs"
REPORT_TABLE_FILE = "report.txt"
REPORT_KV_FILE = "report.kv"


def _print_version(ctx: click.Context, _: Any, value: bool) -> None:
    """Print version and exit."""
    if not value or ctx.resilient_parsing:
        return

    click.echo(__version__)
    ctx.exit()


def _fail(ctx: click.Context, message: str, code: int) -> NoReturn:
    """Report an error and exit with the given code."""
    _LOGGER.error("%s", message)
    ctx.exit(code)
    raise AssertionError("unreachable")  # pragma: no cover


def _log_path(out: Path, log: EpisodeLog) -> Path:
    return out / LOGS_DIR / f"{log.n_agents}_agents" / log.policy / f"episode_{log.episode:05d}.log"


def _write_reports(out: Path, logs: List[EpisodeLog], theta: float) -> str:
    reports = compute_report(logs, theta)
    table = format_table(reports)
    (out / REPORT_TABLE_FILE).write_text(table)
    (out / REPORT_KV_FILE).write_text(format_key_values(reports))
    return table


@click.group()
@click.pass_context
@click.option(
    "-v",
    "--verbose",
    is_flag=True,
    envvar="THOTH_TOPO_ORCA_DEBUG",
    help="Be verbose about what's going on.",
)
@click.option(
    "--version",
    is_flag=True,
    is_eager=True,
    callback=_print_version,
    expose_value=False,
    help="Print version and exit.",
)
def cli(ctx: click.Context, verbose: bool) -> None:
    """Thoth's topo-orca crowd simulation command line interface."""
    if ctx:
        ctx.auto_envvar_prefix = "THOTH_TOPO_ORCA"

    if verbose:
        _LOGGER.setLevel(logging.DEBUG)

    _LOGGER.debug("Debug mode is on")
    _LOGGER.info("Version: %s", __version__)


def _load_config(ctx: click.Context, config: Optional[str], overrides: Dict[str, Any]) -> ScenarioConfig:
    try:
        return parse_config(config, overrides)
    except ConfigError as exc:
        _fail(ctx, f"Configuration error: {exc}", EXIT_CONFIG)
    except OSError as exc:
        _fail(ctx, f"Cannot read configuration {config}: {exc}", EXIT_IO)


@cli.command("simulate")
@click.pass_context
@click.option("--config", "config", type=click.Path(dir_okay=False), help="Configuration file with key = value lines.")
@click.option(
    "--policy",
    type=click.Choice(["orca", "topo", "both"]),
    default=None,
    help="Policy to simulate, both runs the paired comparison.  [default: both]",
)
@click.option("--episodes", type=int, default=None, help="Number of episodes.")
@click.option("--agents", type=int, multiple=True, help="Number of agents, repeat to sweep over several counts.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master random seed.")
@click.option("--jobs", type=click.IntRange(1), default=_DEFAULT_JOBS, show_default=True, help="Worker processes.")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True, help="Output directory.")
@click.option(
    "--manifest",
    type=click.Path(dir_okay=False, exists=True),
    default=None,
    help="Replay the run described by a manifest, other scenario flags are ignored.",
)
def simulate(
    ctx: click.Context,
    config: Optional[str],
    policy: Optional[str],
    episodes: Optional[int],
    agents: Tuple[int, ...],
    seed: Optional[int],
    jobs: int,
    out: str,
    manifest: Optional[str],
) -> None:
    """Run the benchmark and write logs, a manifest and metric reports."""
    if manifest is not None:
        try:
            run = RunManifest.load(manifest)
        except ConfigError as exc:
            _fail(ctx, f"Manifest error: {exc}", EXIT_CONFIG)
        cfg = run.config
        agent_counts = run.agent_counts
    else:
        overrides = {"policy": policy, "n_episodes": episodes, "rng_seed": seed}
        if agents:
            overrides["n_agents"] = agents[0]
        cfg = _load_config(ctx, config, overrides)
        agent_counts = tuple(agents) or (cfg.n_agents,)

    out_dir = Path(out)
    run = RunManifest(
        config=cfg,
        version=__version__,
        agent_counts=agent_counts,
        layout={
            "manifest": MANIFEST_FILE,
            "logs": f"{LOGS_DIR}/<n_agents>_agents/<policy>/episode_<episode>.log",
            "report_table": REPORT_TABLE_FILE,
            "report_key_values": REPORT_KV_FILE,
        },
    )

    started = time.monotonic()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        run.dump(out_dir / MANIFEST_FILE)

        _LOGGER.info(
            "Running %d episodes with %s agents, policy %s, seed %d, %d jobs",
            cfg.n_episodes,
            ", ".join(map(str, agent_counts)),
            cfg.policy,
            cfg.rng_seed,
            jobs,
        )
        result = run_benchmark(cfg, agent_counts=agent_counts, jobs=jobs)

        for log in result.logs:
            path = _log_path(out_dir, log)
            path.parent.mkdir(parents=True, exist_ok=True)
            log.write(path)
        table = _write_reports(out_dir, result.logs, cfg.frozen_theta)

        run.duration = round(time.monotonic() - started, 3)
        run.dump(out_dir / MANIFEST_FILE)
    except BenchmarkAborted as exc:
        _fail(ctx, f"Benchmark aborted: {exc}", EXIT_ABORTED)
    except OSError as exc:
        _fail(ctx, f"Cannot write results to {exc.filename or out_dir}: {exc.strerror or exc}", EXIT_IO)

    click.echo(table, nl=False)
    _LOGGER.info("Results written to %s in %.1f seconds", out_dir, run.duration)


def _read_logs(ctx: click.Context, log_dir: Path) -> List[EpisodeLog]:
    paths = sorted(log_dir.rglob("*.log"))
    if not paths:
        _fail(ctx, f"No episode logs found in {log_dir}", EXIT_MALFORMED)

    logs = []
    errors = 0
    for path in paths:
        try:
            logs.append(EpisodeLog.read(path))
        except LogFormatError as exc:
            _LOGGER.error("Malformed episode log: %s", str(exc))
            errors += 1
        except OSError as exc:
            _fail(ctx, f"Cannot read episode log {path}: {exc}", EXIT_IO)

    if errors:
        _fail(ctx, f"{errors} of {len(paths)} episode logs are malformed, no report produced", EXIT_MALFORMED)
    return logs


def _manifest_theta(ctx: click.Context, log_dir: Path) -> float:
    """Use the frozen threshold of the run that produced the logs, if its manifest is around."""
    for candidate in (log_dir / MANIFEST_FILE, log_dir.parent / MANIFEST_FILE):
        if candidate.is_file():
            try:
                return RunManifest.load(candidate).config.frozen_theta
            except ConfigError as exc:
                _fail(ctx, f"Manifest error: {exc}", EXIT_CONFIG)
    return ScenarioConfig().frozen_theta


@cli.command("metrics")
@click.pass_context
@click.argument("log_dir", type=click.Path(file_okay=False, exists=True))
@click.option("--theta", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Write reports into this directory.")
def metrics(ctx: click.Context, log_dir: str, theta: Optional[float], out: Optional[str]) -> None:
    """Recompute metric reports from episode logs alone."""
    logs = _read_logs(ctx, Path(log_dir))
    if theta is None:
        theta = _manifest_theta(ctx, Path(log_dir))

    if out is None:
        click.echo(format_table(compute_report(logs, theta)), nl=False)
        return

    try:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        click.echo(_write_reports(out_dir, logs, theta), nl=False)
    except OSError as exc:
        _fail(ctx, f"Cannot write reports to {out}: {exc}", EXIT_IO)


def _graph_for(cfg: ScenarioConfig, log: EpisodeLog) -> Tuple[TopoGraph, Any]:
    """Rebuild the inflated grid and the topological graph of a logged scene."""
    grid = rasterize(log.world_w, log.world_h, cfg.cell_size, log.obstacles, log.radius)
    return prune_spurs(skeleton_to_graph(thin(grid), grid), cfg.prune_min_length), grid


@cli.command("render")
@click.pass_context
@click.option("--log", "log_path", type=click.Path(dir_okay=False, exists=True), help="Episode log to render.")
@click.option("--config", "config", type=click.Path(dir_okay=False), help="Configuration of a scenario to render.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master random seed of the scenario.")
@click.option("--episode", type=click.IntRange(0), default=0, show_default=True, help="Episode of the scenario.")
@click.option("--agent", type=click.IntRange(0), default=None, help="Overlay the initial plan of this agent.")
@click.option("--graph/--no-graph", default=True, show_default=True, help="Draw the topological graph.")
@click.option("--traces/--no-traces", default=True, show_default=True, help="Draw logged trajectories.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="SVG file to write.")
@click.option("--pgm", type=click.Path(dir_okay=False), default=None, help="Also export the inflated grid as PGM.")
@click.option("--graph-out", type=click.Path(dir_okay=False), default=None, help="Also export the graph as text.")
def render(
    ctx: click.Context,
    log_path: Optional[str],
    config: Optional[str],
    seed: Optional[int],
    episode: int,
    agent: Optional[int],
    graph: bool,
    traces: bool,
    out: str,
    pgm: Optional[str],
    graph_out: Optional[str],
) -> None:
    """Render a scene, its topological graph and plans or trajectories as SVG (meters, y axis up)."""
    cfg = _load_config(ctx, config, {"rng_seed": seed})

    try:
        if log_path is not None:
            log = EpisodeLog.read(log_path)
            topo, grid = _graph_for(cfg, log)
            plans: List[WaypointPlan] = []
            if agent is not None:
                if agent >= log.n_agents:
                    _fail(ctx, f"Episode log has no agent {agent}", EXIT_CONFIG)
                first_goal = next(goal.position for goal in log.goals if goal.agent == agent)
                start = Agent(id=agent, position=log.starts[agent], goal=first_goal, radius=log.radius)
                plans.append(plan_for(start, topo, grid))
            view = view_from_log(log, topo=topo if graph else None, plans=plans, traces=traces)
        else:
            scenario = generate_scenario(cfg, derive_seed(cfg.rng_seed, episode, SCENARIO_STREAM), episode)
            topo, grid = scenario.topo, scenario.grid
            plans = []
            agents: List[Agent] = []
            if agent is not None:
                if agent >= cfg.n_agents:
                    _fail(ctx, f"The scenario has no agent {agent}", EXIT_CONFIG)
                agents, agent_plans = initial_plans(cfg, scenario)
                plans.append(agent_plans[agent])
            view = SceneView(
                world_w=cfg.world_w,
                world_h=cfg.world_h,
                obstacles=scenario.obstacles,
                radius=cfg.radius,
                topo=topo if graph else None,
                agents=[a.position for a in agents if a.id == agent],
                goals=[a.goal for a in agents if a.id == agent],
                plans=plans,
            )

        Path(out).write_text(render_svg(view))
        if pgm is not None:
            Path(pgm).write_text(to_pgm(grid))
        if graph_out is not None:
            Path(graph_out).write_text(topo.to_text())
    except LogFormatError as exc:
        _fail(ctx, f"Malformed episode log: {exc}", EXIT_MALFORMED)
    except TopoOrcaException as exc:
        _fail(ctx, f"Cannot render the scene: {exc}", EXIT_ABORTED)
    except OSError as exc:
        _fail(ctx, f"Cannot write {exc.filename or out}: {exc.strerror or exc}", EXIT_IO)

    _LOGGER.info("Scene rendered to %s", out)


__name__ == "__main__" and cli()
