"""Collaboration scenario model.

Defines the shared-workspace pick-and-place world as immutable data plus
pure query functions: the precedence-constrained task set, the two agents'
object tables, the target color pattern with its partially-hidden variants,
and the per-agent action timing model. Everything here is deterministic and
side-effect free; the engine owns all mutable session state.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

SCHEMA_VERSION = 1


class Color(str, Enum):
    GREEN = "green"
    BLUE = "blue"
    PINK = "pink"
    ORANGE = "orange"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    DIFFICULT = "difficult"


class Agent(str, Enum):
    HUMAN = "human"
    ROBOT = "robot"


class ScenarioError(ValueError):
    """Raised when a scenario config or query violates the world contracts."""


class ConsistencyError(ScenarioError):
    """Raised when a caller-supplied state (e.g. completed set) is inconsistent."""


def task_id_for(workspace: int, spot: int) -> str:
    return f"w{workspace}s{spot}"


@dataclass(frozen=True)
class TaskSpec:
    """One placement task: put the pattern's color on (workspace, spot)."""

    task_id: str
    workspace: int
    spot: int
    color: Color


@dataclass(frozen=True)
class TaskGraph:
    """Precedence-constrained task set. Edges (a, b) mean a must finish before b."""

    tasks: tuple[TaskSpec, ...]
    precedence: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate task ids in task graph")
        known = set(ids)
        for a, b in self.precedence:
            if a not in known or b not in known:
                raise ScenarioError(f"precedence edge ({a}, {b}) references unknown task")
        # Acyclicity check via Kahn's algorithm; raises on leftover nodes.
        self.topological_order()

    def by_id(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ScenarioError(f"unknown task id: {task_id}")

    def predecessors(self, task_id: str) -> set[str]:
        return {a for a, b in self.precedence if b == task_id}

    def successors(self, task_id: str) -> set[str]:
        return {b for a, b in self.precedence if a == task_id}

    def topological_order(self) -> list[str]:
        indeg = {t.task_id: 0 for t in self.tasks}
        for _, b in self.precedence:
            indeg[b] += 1
        ready = sorted(tid for tid, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            tid = ready.pop(0)
            order.append(tid)
            for succ in sorted(self.successors(tid)):
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    ready.append(succ)
            ready.sort()
        if len(order) != len(self.tasks):
            raise ScenarioError("task precedence contains a cycle")
        return order


@dataclass(frozen=True)
class Table:
    name: str
    distance_m: float
    colors: frozenset[Color]


@dataclass(frozen=True)
class Layout:
    """Per-agent object tables and their one-way distances to the shared workspace."""

    tables: Mapping[Agent, tuple[Table, Table]]

    def table_for(self, agent: Agent, color: Color) -> Table:
        matches = [tbl for tbl in self.tables[agent] if color in tbl.colors]
        if not matches:
            raise ScenarioError(f"color {color.value} not on any {agent.value} table")
        if len(matches) > 1:
            raise ScenarioError(f"color {color.value} on multiple {agent.value} tables")
        return matches[0]


@dataclass(frozen=True)
class AgentTiming:
    pick_s: float
    place_s: float
    speed_mps: float


@dataclass(frozen=True)
class DurationModel:
    human: AgentTiming
    robot: AgentTiming

    def timing(self, agent: Agent) -> AgentTiming:
        return self.human if agent is Agent.HUMAN else self.robot


@dataclass(frozen=True)
class Pattern:
    """Ground-truth color for every (workspace, spot)."""

    colors: Mapping[tuple[int, int], Color]

    def color_at(self, workspace: int, spot: int) -> Color:
        return self.colors[(workspace, spot)]

    def spots(self) -> list[tuple[int, int]]:
        return sorted(self.colors)


@dataclass(frozen=True)
class VariantSpot:
    """What the human sees for one spot: the true color alone, or true + distractor."""

    options: tuple[Color, ...]

    @property
    def is_ambiguous(self) -> bool:
        return len(self.options) == 2


@dataclass(frozen=True)
class PatternVariant:
    difficulty: Difficulty
    spots: Mapping[tuple[int, int], VariantSpot]

    def ambiguous_count(self) -> int:
        return sum(1 for s in self.spots.values() if s.is_ambiguous)


@dataclass(frozen=True)
class Scenario:
    graph: TaskGraph
    layout: Layout
    pattern: Pattern
    durations: DurationModel
    config: "ScenarioConfig"


# Default geometry and timing; calibrated so that session-level travel totals
# and completion times land in plausible ranges, not measured ground truth.
_DEFAULT_CONFIG: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "workspaces": 4,
    "spots_per_workspace": 5,
    "tables": {
        "human": {
            "close": {"distance_m": 4.0, "colors": ["green", "orange"]},
            "far": {"distance_m": 11.0, "colors": ["blue", "pink"]},
        },
        "robot": {
            "close": {"distance_m": 4.0, "colors": ["pink", "orange"]},
            "far": {"distance_m": 9.0, "colors": ["blue", "green"]},
        },
    },
    "durations": {
        "human": {"pick_s": 3.0, "place_s": 3.0, "speed_mps": 1.2},
        "robot": {"pick_s": 8.0, "place_s": 8.0, "speed_mps": 0.6},
    },
    "ambiguity_ratios": {"easy": 0.25, "medium": 0.5, "difficult": 0.75},
    "pattern": [
        ["green", "blue", "pink", "orange", "green"],
        ["blue", "pink", "orange", "green", "blue"],
        ["pink", "orange", "green", "blue", "pink"],
        ["orange", "green", "blue", "pink", "orange"],
    ],
    "default_profile": None,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario configuration (see `load_config` for the file format)."""

    workspaces: int
    spots_per_workspace: int
    tables: dict[str, dict[str, dict[str, Any]]]
    durations: dict[str, dict[str, float]]
    ambiguity_ratios: dict[str, float]
    pattern: list[list[str]]
    default_profile: str | None = None
    schema_version: int = SCHEMA_VERSION

    @staticmethod
    def default() -> "ScenarioConfig":
        return ScenarioConfig.from_dict(_DEFAULT_CONFIG)

    @staticmethod
    def from_dict(raw: Mapping[str, Any]) -> "ScenarioConfig":
        merged = _deep_merge(_DEFAULT_CONFIG, dict(raw))
        cfg = ScenarioConfig(
            workspaces=merged["workspaces"],
            spots_per_workspace=merged["spots_per_workspace"],
            tables=merged["tables"],
            durations=merged["durations"],
            ambiguity_ratios=merged["ambiguity_ratios"],
            pattern=merged["pattern"],
            default_profile=merged.get("default_profile"),
            schema_version=merged.get("schema_version", SCHEMA_VERSION),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "workspaces": self.workspaces,
            "spots_per_workspace": self.spots_per_workspace,
            "tables": self.tables,
            "durations": self.durations,
            "ambiguity_ratios": self.ambiguity_ratios,
            "pattern": self.pattern,
            "default_profile": self.default_profile,
        }

    def validate(self) -> None:
        problems: list[str] = []
        if self.schema_version != SCHEMA_VERSION:
            problems.append(
                f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}"
            )
        if not isinstance(self.workspaces, int) or self.workspaces < 1:
            problems.append(f"workspaces: must be a positive integer, got {self.workspaces!r}")
        if not isinstance(self.spots_per_workspace, int) or self.spots_per_workspace < 1:
            problems.append(
                f"spots_per_workspace: must be a positive integer, got {self.spots_per_workspace!r}"
            )
        for agent in ("human", "robot"):
            agent_tables = self.tables.get(agent, {})
            if set(agent_tables) != {"close", "far"}:
                problems.append(f"tables.{agent}: must define exactly 'close' and 'far'")
                continue
            seen: list[str] = []
            for name, spec in agent_tables.items():
                dist = spec.get("distance_m")
                if not isinstance(dist, (int, float)) or dist <= 0:
                    problems.append(f"tables.{agent}.{name}.distance_m: must be > 0, got {dist!r}")
                for c in spec.get("colors", []):
                    if c not in Color._value2member_map_:
                        problems.append(f"tables.{agent}.{name}.colors: unknown color {c!r}")
                    elif c in seen:
                        problems.append(
                            f"tables.{agent}: color {c!r} listed on more than one table"
                        )
                    else:
                        seen.append(c)
            timing = self.durations.get(agent, {})
            for key in ("pick_s", "place_s", "speed_mps"):
                val = timing.get(key)
                if not isinstance(val, (int, float)) or val <= 0:
                    problems.append(f"durations.{agent}.{key}: must be > 0, got {val!r}")
        for level in ("easy", "medium", "difficult"):
            ratio = self.ambiguity_ratios.get(level)
            if not isinstance(ratio, (int, float)) or not 0.0 <= ratio <= 1.0:
                problems.append(f"ambiguity_ratios.{level}: must be in [0, 1], got {ratio!r}")
        if len(self.pattern) != self.workspaces:
            problems.append(
                f"pattern: expected {self.workspaces} workspace rows, got {len(self.pattern)}"
            )
        for w, row in enumerate(self.pattern):
            if len(row) != self.spots_per_workspace:
                problems.append(
                    f"pattern[{w}]: expected {self.spots_per_workspace} spots, got {len(row)}"
                )
            for s, c in enumerate(row):
                if c not in Color._value2member_map_:
                    problems.append(f"pattern[{w}][{s}]: unknown color {c!r}")
        # Both agents must be able to fetch every color: wrong-color errors can
        # reach for any of the four, not just the ones the pattern uses.
        palette = {c.value for c in Color}
        for agent in ("human", "robot"):
            agent_tables = self.tables.get(agent, {})
            stocked = {c for spec in agent_tables.values() for c in spec.get("colors", [])}
            missing = sorted(palette - stocked)
            if missing:
                problems.append(
                    f"tables.{agent}: color(s) {missing} not stocked on any table"
                )
        if problems:
            raise ScenarioError("invalid scenario config: " + "; ".join(problems))


def _deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key in set(base) | set(override):
        if (
            key in base
            and key in override
            and isinstance(base[key], Mapping)
            and isinstance(override[key], Mapping)
        ):
            out[key] = _deep_merge(base[key], override[key])
        elif key in override:
            out[key] = override[key]
        else:
            out[key] = base[key]
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    """Load a YAML scenario config, overlaying the defaults."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"config file {path}: top level must be a mapping")
    return ScenarioConfig.from_dict(raw)


def save_config(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def build_scenario(config: ScenarioConfig | None = None) -> Scenario:
    """Assemble a consistent scenario from a validated config.

    The default config reproduces the reference layout: human close table
    holds green/orange, human far table blue/pink, robot far table blue/green,
    robot close table pink/orange, with spot order chained per workspace.
    """
    cfg = config or ScenarioConfig.default()
    cfg.validate()

    pattern_map: dict[tuple[int, int], Color] = {}
    tasks: list[TaskSpec] = []
    edges: set[tuple[str, str]] = set()
    for w in range(cfg.workspaces):
        for s in range(cfg.spots_per_workspace):
            color = Color(cfg.pattern[w][s])
            pattern_map[(w, s)] = color
            tasks.append(TaskSpec(task_id_for(w, s), w, s, color))
            if s > 0:
                edges.add((task_id_for(w, s - 1), task_id_for(w, s)))

    tables: dict[Agent, tuple[Table, Table]] = {}
    for agent in Agent:
        specs = cfg.tables[agent.value]
        tables[agent] = tuple(
            Table(
                name=name,
                distance_m=float(specs[name]["distance_m"]),
                colors=frozenset(Color(c) for c in specs[name]["colors"]),
            )
            for name in ("close", "far")
        )  # type: ignore[assignment]

    durations = DurationModel(
        human=AgentTiming(**{k: float(v) for k, v in cfg.durations["human"].items()}),
        robot=AgentTiming(**{k: float(v) for k, v in cfg.durations["robot"].items()}),
    )

    return Scenario(
        graph=TaskGraph(tasks=tuple(tasks), precedence=frozenset(edges)),
        layout=Layout(tables=tables),
        pattern=Pattern(colors=pattern_map),
        durations=durations,
        config=cfg,
    )


def generate_variant(
    pattern: Pattern,
    difficulty: Difficulty,
    rng_seed: int,
    ambiguity_ratios: Mapping[str, float] | None = None,
) -> PatternVariant:
    """Derive the partially-hidden pattern sheet for a difficulty level.

    A fixed fraction of spots (per difficulty) become two-color choices; the
    true color is always one of the two and the distractor is drawn uniformly
    from the other colors. Deterministic for a fixed seed.
    """
    ratios = dict(ambiguity_ratios or {"easy": 0.25, "medium": 0.5, "difficult": 0.75})
    ratio = ratios[difficulty.value]
    spots = pattern.spots()
    n_ambiguous = int(len(spots) * ratio + 0.5)
    rng = random.Random(rng_seed)
    ambiguous = set(rng.sample(spots, n_ambiguous))
    variant: dict[tuple[int, int], VariantSpot] = {}
    for key in spots:
        true_color = pattern.colors[key]
        if key in ambiguous:
            others = [c for c in Color if c is not true_color]
            distractor = rng.choice(others)
            pair = [true_color, distractor]
            rng.shuffle(pair)
            variant[key] = VariantSpot(options=tuple(pair))
        else:
            variant[key] = VariantSpot(options=(true_color,))
    return PatternVariant(difficulty=difficulty, spots=variant)


def frontier(graph: TaskGraph, completed: Iterable[str]) -> set[str]:
    """Tasks whose predecessors are all completed and are thus performable now."""
    done = set(completed)
    known = {t.task_id for t in graph.tasks}
    unknown = done - known
    if unknown:
        raise ConsistencyError(f"completed set references unknown tasks: {sorted(unknown)}")
    for tid in done:
        missing = graph.predecessors(tid) - done
        if missing:
            raise ConsistencyError(
                f"completed set is not downward-closed: {tid} done but {sorted(missing)} are not"
            )
    return {
        t.task_id
        for t in graph.tasks
        if t.task_id not in done and graph.predecessors(t.task_id) <= done
    }


def travel_distance(layout: Layout, agent: Agent, color: Color) -> float:
    """Round-trip meters from the agent's table holding `color` to the workspace."""
    return 2.0 * layout.table_for(agent, color).distance_m


def derive_duration(
    durations: DurationModel, layout: Layout, agent: Agent, task: TaskSpec
) -> float:
    """Seconds for one fetch-and-place: pick + place + round-trip walk."""
    timing = durations.timing(agent)
    walk = travel_distance(layout, agent, task.color) / timing.speed_mps
    return timing.pick_s + timing.place_s + walk
