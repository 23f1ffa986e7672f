"""Batch entry point: single sessions, Monte-Carlo grids, log replay, serving.

Outputs are spreadsheet-friendly: metrics as CSV (one row per run plus a
mean/sd aggregate), event logs and belief trajectories as line-delimited
JSON. Grids are a pure function of (config, seeds): per-cell seeds derive
deterministically as base + run index.
"""

from __future__ import annotations

import csv
import json
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import click
import yaml

from .agents import PROFILES, get_profile
from .engine import (
    EngineConfig,
    SessionAborted,
    SessionMetrics,
    SessionResult,
    belief_trajectory,
    compute_metrics,
    events_from_jsonl,
    events_to_jsonl,
    run_session,
)
from .planner import CostModel
from .world import Difficulty, Scenario, ScenarioConfig, ScenarioError, build_scenario, load_config

METRIC_COLUMNS = ("profile", "seed", "status") + SessionMetrics.FIELDS


@dataclass(frozen=True)
class GridCell:
    profile: str
    reps: int = 100  # enough repetitions for stable means out of the box
    base_seed: int = 0
    difficulty: str = "medium"
    overrides: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentGrid:
    cells: tuple[GridCell, ...]

    @staticmethod
    def from_dict(raw: Mapping[str, Any]) -> "ExperimentGrid":
        cells = []
        for entry in raw.get("cells", []):
            cell = GridCell(
                profile=entry["profile"],
                reps=int(entry.get("reps", GridCell.reps)),
                base_seed=int(entry.get("base_seed", 0)),
                difficulty=entry.get("difficulty", "medium"),
                overrides={k: float(v) for k, v in entry.get("overrides", {}).items()},
            )
            if cell.reps < 1:
                raise ValueError(f"grid cell {cell.profile}: reps must be >= 1")
            if cell.profile not in PROFILES:
                raise ValueError(f"grid cell references unknown profile {cell.profile!r}")
            cells.append(cell)
        if not cells:
            raise ValueError("grid defines no cells")
        return ExperimentGrid(cells=tuple(cells))


def cost_model_with(overrides: Mapping[str, float]) -> CostModel:
    known = {
        "lead_penalty_s",
        "unattended_error_penalty_s",
        "conflict_penalty_s",
        "reject_inflation_factor",
        "reject_error_threshold",
    }
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown planner weight override(s): {sorted(unknown)}")
    return replace(CostModel(), **dict(overrides))


def run_one(
    scenario: Scenario,
    profile: str,
    seed: int,
    difficulty: str = "medium",
    overrides: Mapping[str, float] | None = None,
) -> tuple[str, SessionResult | None]:
    """Run one session; an aborted session is reported, not raised."""
    config = EngineConfig(cost_model=cost_model_with(overrides or {}))
    try:
        result = run_session(
            scenario,
            get_profile(profile),
            seed=seed,
            difficulty=Difficulty(difficulty),
            config=config,
        )
        return "ok", result
    except SessionAborted as abort:
        return f"aborted: {abort.reason}", None


def run_grid(
    grid: ExperimentGrid, scenario: Scenario
) -> tuple[list[dict[str, Any]], list[tuple[str, int, SessionResult]]]:
    """All grid runs in cell order; failures become rows, not exceptions."""
    rows: list[dict[str, Any]] = []
    results: list[tuple[str, int, SessionResult]] = []
    for cell in grid.cells:
        for rep in range(cell.reps):
            seed = cell.base_seed + rep
            status, result = run_one(
                scenario, cell.profile, seed, cell.difficulty, cell.overrides
            )
            row: dict[str, Any] = {"profile": cell.profile, "seed": seed, "status": status}
            metrics = result.metrics if result else SessionMetrics()
            row.update(metrics.as_dict())
            rows.append(row)
            if result is not None:
                results.append((cell.profile, seed, result))
    return rows, results


def aggregate_rows(rows: Iterable[Mapping[str, Any]]) -> list[dict[str, Any]]:
    by_profile: dict[str, list[Mapping[str, Any]]] = {}
    for row in rows:
        if row["status"] == "ok":
            by_profile.setdefault(row["profile"], []).append(row)
    out = []
    for profile in sorted(by_profile):
        group = by_profile[profile]
        agg: dict[str, Any] = {"profile": profile, "runs": len(group)}
        for field_name in SessionMetrics.FIELDS:
            values = [float(r[field_name]) for r in group]
            agg[f"{field_name}_mean"] = statistics.mean(values)
            agg[f"{field_name}_sd"] = statistics.stdev(values) if len(values) > 1 else 0.0
        out.append(agg)
    return out


def export_belief_trajectories(
    logs: Iterable[tuple[str, int, Iterable[Mapping[str, Any]]]],
) -> list[dict[str, Any]]:
    """Flatten per-run logs into plot-ready (profile, seed, step, p_f, p_e) rows."""
    out = []
    for profile, seed, events in logs:
        points = belief_trajectory(events)
        if not points:
            raise ValueError(f"run {profile}/{seed}: log contains no belief snapshots")
        for p in points:
            out.append({"profile": profile, "seed": seed, **p})
    return out


def write_metrics_csv(rows: Iterable[Mapping[str, Any]], path: Path) -> None:
    rows = list(rows)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRIC_COLUMNS})


def read_metrics_csv(path: Path) -> list[dict[str, Any]]:
    with path.open() as fh:
        return [dict(row) for row in csv.DictReader(fh)]


@click.group()
def main() -> None:
    """Adaptive collaboration planner: batch runs, grids, replay, service."""


@main.command("run")
@click.option("--profile", default=None, help="Enacted behaviour preset name.")
@click.option("--difficulty", default="medium",
              type=click.Choice([d.value for d in Difficulty]))
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="Scenario YAML (defaults built in).")
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Directory for log.jsonl / metrics.json / trajectory.jsonl.")
def run_cmd(profile, difficulty, seed, config_path, out_dir):
    """Run one scripted session and print its metrics."""
    try:
        cfg = load_config(config_path) if config_path else ScenarioConfig.default()
        scenario = build_scenario(cfg)
        profile = profile or cfg.default_profile or "follow_high"
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    except (ScenarioError, ValueError) as exc:
        raise click.ClickException(str(exc))
    status, result = run_one(scenario, profile, seed, difficulty)
    if result is None:
        raise click.ClickException(f"session failed: {status}")
    click.echo(f"profile={profile} seed={seed} difficulty={difficulty}")
    for key, value in result.metrics.as_dict().items():
        click.echo(f"  {key} = {value}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "log.jsonl").write_text(events_to_jsonl(result.events))
        (out / "metrics.json").write_text(json.dumps(result.metrics.as_dict(), indent=2))
        (out / "trajectory.jsonl").write_text(
            "\n".join(json.dumps(p, separators=(",", ":")) for p in result.belief_trajectory)
            + "\n"
        )
        click.echo(f"wrote {out}/log.jsonl, metrics.json, trajectory.jsonl")


@main.command("grid")
@click.option("--grid-file", required=True, type=click.Path(exists=True),
              help="YAML grid: cells of (profile, reps, base_seed, overrides).")
@click.option("--reps", default=None, type=int,
              help="Override repetitions for every cell.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
def grid_cmd(grid_file, reps, config_path, out_dir):
    """Run a Monte-Carlo grid and write metrics.csv / aggregate.csv / trajectories."""
    try:
        raw = yaml.safe_load(Path(grid_file).read_text())
        grid = ExperimentGrid.from_dict(raw or {})
        if reps is not None:
            grid = ExperimentGrid(
                cells=tuple(replace(c, reps=reps) for c in grid.cells)
            )
        cfg = load_config(config_path) if config_path else ScenarioConfig.default()
        scenario = build_scenario(cfg)
    except (ScenarioError, ValueError) as exc:
        raise click.ClickException(str(exc))
    rows, results = run_grid(grid, scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    agg = aggregate_rows(rows)
    if agg:
        with (out / "aggregate.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(agg[0].keys()))
            writer.writeheader()
            writer.writerows(agg)
    logs_dir = out / "logs"
    logs_dir.mkdir(exist_ok=True)
    for profile, seed, result in results:
        (logs_dir / f"{profile}_{seed}.jsonl").write_text(events_to_jsonl(result.events))
    trajectories = export_belief_trajectories(
        (profile, seed, result.events) for profile, seed, result in results
    )
    with (out / "trajectories.jsonl").open("w") as fh:
        for point in trajectories:
            fh.write(json.dumps(point, separators=(",", ":")) + "\n")
    failed = sum(1 for r in rows if r["status"] != "ok")
    click.echo(f"{len(rows)} runs ({failed} failed) -> {out}/metrics.csv")
    if failed:
        sys.exit(1)


@main.command("replay")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
def replay_cmd(log_path):
    """Recompute metrics from a saved event log (and check the stored copy)."""
    try:
        events = events_from_jsonl(Path(log_path).read_text())
        metrics = compute_metrics(events)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    for key, value in metrics.as_dict().items():
        click.echo(f"{key} = {value}")
    stored = [e for e in events if e.get("kind") == "metrics"]
    if stored:
        recorded = SessionMetrics.from_dict(stored[-1]["metrics"])
        if recorded != metrics:
            raise click.ClickException(
                "stored metrics do not match the log replay: "
                f"{recorded.as_dict()} vs {metrics.as_dict()}"
            )
        click.echo("stored metrics match the replay")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True, envvar="COPLAN_HOST")
@click.option("--port", default=8000, type=int, show_default=True, envvar="COPLAN_PORT")
@click.option("--time-scale", default=1.0, type=float, show_default=True,
              envvar="COPLAN_TIME_SCALE",
              help="Simulated seconds per wall second (higher = faster).")
@click.option("--log-dir", default=None, type=click.Path(), envvar="COPLAN_LOG_DIR",
              help="Persist finished session logs here.")
def serve_cmd(host, port, time_scale, log_dir):
    """Serve the interactive session API (used by the web UI)."""
    import uvicorn

    from .service import create_app

    app = create_app(default_time_scale=time_scale, log_dir=log_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
