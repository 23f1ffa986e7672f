"""Two-stage robot planner.

Stage one picks who does which currently-available task by minimizing the
worse of the two agents' expected workloads, where each task's cost is its
execution time plus belief-weighted penalties (bossing a lead-preferring
human, leaving an error-prone human unguided, grabbing a task already
assigned to the human). Stage two orders the chosen tasks per agent to
minimize the overall finish time under precedence and one-task-at-a-time
constraints. Both stages are solved exactly; frontiers in this scenario are
small, so enumeration with pruning is cheap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .belief import BeliefState
from .world import Agent, Layout, DurationModel, TaskGraph, TaskSpec, derive_duration


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Penalty weights in seconds-equivalent units, plus rejection gates.

    Calibration constants, not measured values; all overridable per run.
    """

    lead_penalty_s: float = 30.0
    unattended_error_penalty_s: float = 120.0
    conflict_penalty_s: float = 45.0
    reject_inflation_factor: float = 1.25
    reject_error_threshold: float = 0.4

    def __post_init__(self) -> None:
        for name in ("lead_penalty_s", "unattended_error_penalty_s", "conflict_penalty_s"):
            if getattr(self, name) < 0:
                raise PlanningError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Assignment:
    agent: Agent
    explicit: bool  # for human tasks: announced by the robot vs left as free choice


@dataclass(frozen=True)
class Allocation:
    by_task: Mapping[str, Assignment]
    objective: float  # max over agents of summed expected cost
    total_cost: float

    def agent_of(self, task_id: str) -> Agent:
        return self.by_task[task_id].agent

    def human_tasks(self) -> list[str]:
        return sorted(t for t, a in self.by_task.items() if a.agent is Agent.HUMAN)

    def robot_tasks(self) -> list[str]:
        return sorted(t for t, a in self.by_task.items() if a.agent is Agent.ROBOT)

    def explicit_human_tasks(self) -> list[str]:
        return sorted(
            t for t, a in self.by_task.items() if a.agent is Agent.HUMAN and a.explicit
        )


@dataclass(frozen=True)
class ScheduledTask:
    task_id: str
    agent: Agent
    start: float
    finish: float


@dataclass(frozen=True)
class Schedule:
    entries: tuple[ScheduledTask, ...]

    @property
    def makespan(self) -> float:
        return max((e.finish for e in self.entries), default=0.0)

    def for_agent(self, agent: Agent) -> list[ScheduledTask]:
        return sorted(
            (e for e in self.entries if e.agent is agent), key=lambda e: (e.start, e.task_id)
        )


def task_cost(
    task: TaskSpec,
    agent: Agent,
    beliefs: BeliefState,
    durations: DurationModel,
    layout: Layout,
    cost_model: CostModel,
    pending_assignments: frozenset[str] | set[str] = frozenset(),
    explicit: bool = True,
) -> float:
    """Expected cost of the task under one (agent, mode) option.

    Human/explicit pays the lead penalty scaled by how lead-preferring the
    human is believed to be; human/free pays the expected cost of an unguided,
    possibly-wrong placement; robot pays the conflict penalty when taking a
    task already assigned to the human.
    """
    base = derive_duration(durations, layout, agent, task)
    if agent is Agent.HUMAN:
        if explicit:
            return base + cost_model.lead_penalty_s * (1.0 - beliefs.follow_preference)
        return base + cost_model.unattended_error_penalty_s * beliefs.error_proneness
    cost = base
    if task.task_id in pending_assignments:
        cost += cost_model.conflict_penalty_s
    return cost


@dataclass(frozen=True)
class CostTable:
    """Per-task option costs feeding the min-max solver (kept for audit logs)."""

    human_explicit: Mapping[str, float]
    human_free: Mapping[str, float]
    robot: Mapping[str, float]

    def human_best(self, task_id: str) -> tuple[float, bool]:
        """Cheaper human mode; ties prefer explicit (the robot defaults to leading)."""
        exp, free = self.human_explicit[task_id], self.human_free[task_id]
        return (exp, True) if exp <= free else (free, False)

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {
            t: {
                "human_explicit": self.human_explicit[t],
                "human_free": self.human_free[t],
                "robot": self.robot[t],
            }
            for t in sorted(self.robot)
        }


def build_cost_table(
    tasks: Sequence[TaskSpec],
    beliefs: BeliefState,
    cost_model: CostModel,
    durations: DurationModel,
    layout: Layout,
    pending_assignments: frozenset[str] | set[str] = frozenset(),
) -> CostTable:
    pending = frozenset(pending_assignments)
    return CostTable(
        human_explicit={
            t.task_id: task_cost(t, Agent.HUMAN, beliefs, durations, layout, cost_model, pending, True)
            for t in tasks
        },
        human_free={
            t.task_id: task_cost(t, Agent.HUMAN, beliefs, durations, layout, cost_model, pending, False)
            for t in tasks
        },
        robot={
            t.task_id: task_cost(t, Agent.ROBOT, beliefs, durations, layout, cost_model, pending)
            for t in tasks
        },
    )


def solve_minmax(
    human_cost: Mapping[str, float],
    robot_cost: Mapping[str, float],
    forced_robot: frozenset[str] | set[str] = frozenset(),
    forced_human: frozenset[str] | set[str] = frozenset(),
) -> tuple[dict[str, Agent], float, float]:
    """Exact min-max load split of every task between the two agents.

    Branch and bound over the 2^n agent choices. Ties on the worse load break
    toward lower combined cost, then toward the lexicographically smallest
    assignment vector (tasks in id order, human before robot).
    """
    task_ids = sorted(human_cost)
    if set(robot_cost) != set(task_ids):
        raise PlanningError("human and robot cost tables cover different tasks")
    overlap = set(forced_robot) & set(forced_human)
    if overlap:
        raise PlanningError(f"tasks forced to both agents: {sorted(overlap)}")

    best: dict[str, object] = {"key": None, "vector": None}

    def key_rank(agent: Agent) -> int:
        return 0 if agent is Agent.HUMAN else 1

    def dfs(i: int, load_h: float, load_r: float, chosen: list[Agent]) -> None:
        current_max = max(load_h, load_r)
        if best["key"] is not None and current_max > best["key"][0]:  # type: ignore[index]
            return
        if i == len(task_ids):
            key = (
                current_max,
                load_h + load_r,
                tuple(key_rank(a) for a in chosen),
            )
            if best["key"] is None or key < best["key"]:  # type: ignore[operator]
                best["key"] = key
                best["vector"] = list(chosen)
            return
        tid = task_ids[i]
        options: list[Agent] = []
        if tid in forced_robot:
            options = [Agent.ROBOT]
        elif tid in forced_human:
            options = [Agent.HUMAN]
        else:
            options = [Agent.HUMAN, Agent.ROBOT]
        for agent in options:
            if agent is Agent.HUMAN:
                dfs(i + 1, load_h + human_cost[tid], load_r, chosen + [agent])
            else:
                dfs(i + 1, load_h, load_r + robot_cost[tid], chosen + [agent])

    dfs(0, 0.0, 0.0, [])
    vector: list[Agent] = best["vector"]  # type: ignore[assignment]
    assignment = dict(zip(task_ids, vector))
    objective, total = best["key"][0], best["key"][1]  # type: ignore[index]
    return assignment, objective, total


def select_allocation(
    tasks: Sequence[TaskSpec],
    beliefs: BeliefState,
    cost_model: CostModel,
    durations: DurationModel,
    layout: Layout,
    pending_assignments: frozenset[str] | set[str] = frozenset(),
    forced_robot: frozenset[str] | set[str] = frozenset(),
) -> Allocation:
    """Allocate every available task to exactly one agent, minimizing the
    worse agent's summed expected cost."""
    if not tasks:
        raise PlanningError("select_allocation requires a non-empty task set")
    table = build_cost_table(tasks, beliefs, cost_model, durations, layout, pending_assignments)
    human_cost: dict[str, float] = {}
    human_explicit: dict[str, bool] = {}
    for t in tasks:
        cost, explicit = table.human_best(t.task_id)
        human_cost[t.task_id] = cost
        human_explicit[t.task_id] = explicit
    assignment, objective, total = solve_minmax(
        human_cost, dict(table.robot), forced_robot=forced_robot
    )
    by_task = {
        tid: Assignment(agent=agent, explicit=human_explicit[tid] if agent is Agent.HUMAN else False)
        for tid, agent in assignment.items()
    }
    return Allocation(by_task=by_task, objective=objective, total_cost=total)


def _simulate_orders(
    orders: Mapping[Agent, Sequence[str]],
    durations: Mapping[str, float],
    preds: Mapping[str, set[str]],
    release: Mapping[Agent, float],
) -> dict[str, tuple[float, float]] | None:
    """Earliest-start simulation of fixed per-agent sequences.

    Returns task -> (start, finish), or None when the sequences deadlock on
    cross-agent precedence.
    """
    pos = {agent: 0 for agent in orders}
    agent_time = {agent: release.get(agent, 0.0) for agent in orders}
    finish: dict[str, float] = {}
    times: dict[str, tuple[float, float]] = {}
    remaining = sum(len(seq) for seq in orders.values())
    while remaining:
        progressed = False
        for agent in (Agent.HUMAN, Agent.ROBOT):
            seq = orders.get(agent, ())
            while pos.get(agent, 0) < len(seq):
                tid = seq[pos[agent]]
                blockers = preds.get(tid, set())
                if any(b not in finish for b in blockers):
                    break
                start = max(
                    agent_time[agent],
                    max((finish[b] for b in blockers), default=0.0),
                )
                end = start + durations[tid]
                times[tid] = (start, end)
                finish[tid] = end
                agent_time[agent] = end
                pos[agent] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            return None
    return times


def _precedence_orders(seq_tasks: list[str], preds: Mapping[str, set[str]]) -> Iterable[tuple[str, ...]]:
    """Permutations of one agent's tasks that respect precedence internally."""
    local = {t: preds.get(t, set()) & set(seq_tasks) for t in seq_tasks}
    for perm in itertools.permutations(seq_tasks):
        seen: set[str] = set()
        ok = True
        for t in perm:
            if not local[t] <= seen:
                ok = False
                break
            seen.add(t)
        if ok:
            yield perm


def schedule(
    allocation: Allocation,
    tasks: Sequence[TaskSpec],
    graph: TaskGraph,
    durations: Mapping[str, float],
    release: Mapping[Agent, float] | None = None,
    priority: Mapping[str, int] | None = None,
) -> Schedule:
    """Exact minimum-makespan ordering of the allocated tasks.

    Honors precedence edges among the scheduled tasks, same-agent
    non-overlap, and optional per-agent release offsets (time until the agent
    is free). `priority` biases tie-breaks only (lower runs earlier among
    equal-makespan orders); defaults to task-id order.
    """
    release = release or {}
    task_ids = [t.task_id for t in tasks]
    missing = [t for t in task_ids if t not in allocation.by_task]
    if missing:
        raise PlanningError(f"allocation does not cover tasks: {missing}")
    for tid in task_ids:
        if tid not in durations:
            raise PlanningError(f"no duration for task {tid}")

    in_set = set(task_ids)
    preds = {tid: graph.predecessors(tid) & in_set for tid in task_ids}
    rank = lambda tid: ((priority or {}).get(tid, 0), tid)

    per_agent: dict[Agent, list[str]] = {Agent.HUMAN: [], Agent.ROBOT: []}
    for tid in sorted(task_ids, key=rank):
        per_agent[allocation.agent_of(tid)].append(tid)

    if not any(preds.values()):
        # No internal precedence: any order gives the same makespan, so take
        # the tie-break order directly.
        entries: list[ScheduledTask] = []
        for agent, seq in per_agent.items():
            clock = release.get(agent, 0.0)
            for tid in seq:
                entries.append(ScheduledTask(tid, agent, clock, clock + durations[tid]))
                clock += durations[tid]
        return Schedule(entries=tuple(sorted(entries, key=lambda e: (e.start, e.task_id))))

    # No ordering can beat each agent's serial workload; once some pair of
    # orders reaches that bound the search can stop early.
    lower_bound = max(
        release.get(agent, 0.0) + sum(durations[t] for t in seq)
        for agent, seq in per_agent.items()
    )
    best_key: tuple[float, tuple] | None = None
    best_times: dict[str, tuple[float, float]] | None = None
    done = False
    for order_h in _precedence_orders(per_agent[Agent.HUMAN], preds):
        for order_r in _precedence_orders(per_agent[Agent.ROBOT], preds):
            times = _simulate_orders(
                {Agent.HUMAN: order_h, Agent.ROBOT: order_r}, durations, preds, release
            )
            if times is None:
                continue
            makespan = max((f for _, f in times.values()), default=0.0)
            key = (makespan, tuple(rank(t) for t in order_h) + tuple(rank(t) for t in order_r))
            if best_key is None or key < best_key:
                best_key = key
                best_times = times
            if makespan <= lower_bound + 1e-9:
                done = True
                break
        if done:
            break
    if best_times is None:
        raise PlanningError("no feasible schedule for the given allocation")
    entries = tuple(
        sorted(
            (
                ScheduledTask(tid, allocation.agent_of(tid), s, f)
                for tid, (s, f) in best_times.items()
            ),
            key=lambda e: (e.start, e.task_id),
        )
    )
    return Schedule(entries=entries)


def check_schedule(
    sched: Schedule, graph: TaskGraph, durations: Mapping[str, float]
) -> None:
    """Assert the structural validity of a schedule; raises PlanningError."""
    by_id = {e.task_id: e for e in sched.entries}
    for e in sched.entries:
        if abs(e.finish - (e.start + durations[e.task_id])) > 1e-9:
            raise PlanningError(f"{e.task_id}: finish != start + duration")
    for a, b in graph.precedence:
        if a in by_id and b in by_id and by_id[a].finish > by_id[b].start + 1e-9:
            raise PlanningError(f"precedence violated: {a} finishes after {b} starts")
    for agent in Agent:
        own = sched.for_agent(agent)
        for first, second in zip(own, own[1:]):
            if first.finish > second.start + 1e-9:
                raise PlanningError(
                    f"{agent.value} tasks overlap: {first.task_id} and {second.task_id}"
                )


@dataclass(frozen=True)
class PlanResult:
    allocation: Allocation
    schedule: Schedule
    next_robot_action: str | None  # task id, "wait", or None when no robot tasks
    cost_table: CostTable


def plan_cycle(
    tasks: Sequence[TaskSpec],
    graph: TaskGraph,
    beliefs: BeliefState,
    cost_model: CostModel,
    durations_model: DurationModel,
    layout: Layout,
    pending_assignments: frozenset[str] | set[str] = frozenset(),
    forced_robot: frozenset[str] | set[str] = frozenset(),
    release: Mapping[Agent, float] | None = None,
    priority: Mapping[str, int] | None = None,
) -> PlanResult | None:
    """One full planning pass: allocate, then order. None when nothing to plan."""
    if not tasks:
        return None
    allocation = select_allocation(
        tasks, beliefs, cost_model, durations_model, layout, pending_assignments, forced_robot
    )
    durs = {
        t.task_id: derive_duration(durations_model, layout, allocation.agent_of(t.task_id), t)
        for t in tasks
    }
    sched = schedule(allocation, tasks, graph, durs, release=release, priority=priority)
    robot_entries = sched.for_agent(Agent.ROBOT)
    robot_release = (release or {}).get(Agent.ROBOT, 0.0)
    if not robot_entries:
        next_action = None
    elif robot_entries[0].start <= robot_release + 1e-9:
        next_action = robot_entries[0].task_id
    else:
        next_action = "wait"
    table = build_cost_table(
        tasks, beliefs, cost_model, durations_model, layout, pending_assignments
    )
    return PlanResult(
        allocation=allocation, schedule=sched, next_robot_action=next_action, cost_table=table
    )


def evaluate_human_assignment(
    task: TaskSpec,
    tasks: Sequence[TaskSpec],
    graph: TaskGraph,
    beliefs: BeliefState,
    cost_model: CostModel,
    durations_model: DurationModel,
    layout: Layout,
    pending_assignments: frozenset[str] | set[str] = frozenset(),
    forced_robot: frozenset[str] | set[str] = frozenset(),
    release: Mapping[Agent, float] | None = None,
) -> tuple[bool, str]:
    """Decide whether the robot takes on a task the human assigned to it.

    Deference rule: accept unless honoring the request inflates the planned
    finish time beyond the configured factor AND the human currently looks
    error-prone. Requests for tasks that are not actually performable are
    always rejected.

    Returns (accepted, reason).
    """
    if task.task_id not in {t.task_id for t in tasks}:
        return False, "infeasible: task is not currently available"
    base = plan_cycle(
        tasks, graph, beliefs, cost_model, durations_model, layout,
        pending_assignments, forced_robot, release,
    )
    forced = plan_cycle(
        tasks, graph, beliefs, cost_model, durations_model, layout,
        pending_assignments, frozenset(forced_robot) | {task.task_id}, release,
    )
    assert base is not None and forced is not None
    base_makespan = max(base.schedule.makespan, 1e-9)
    inflation = forced.schedule.makespan / base_makespan
    if (
        inflation > cost_model.reject_inflation_factor
        and beliefs.error_proneness > cost_model.reject_error_threshold
    ):
        return False, (
            f"plan inflation {inflation:.2f} exceeds {cost_model.reject_inflation_factor:.2f} "
            "and the partner's recent accuracy is low"
        )
    return True, "accepted"
