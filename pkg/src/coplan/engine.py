"""Discrete-event collaboration session.

Owns all mutable session state: the clock, both agents' activities, the
shared-workspace mutual exclusion, pending assignments in both directions,
error detection and correction, the append-only event log, and the summary
metrics folded from that log. The same state machine drives both batch runs
(a scripted policy supplies human decisions) and interactive sessions (the
service feeds validated commands at human-idle instants).

Log records are line-delimited JSON with a stable field order. Record types:
``action`` (protocol actions plus wait/pick/place sub-events), ``plan``
(allocation, schedule and cost table of each planning pass), ``belief``
(posterior snapshot after each update), and ``session`` markers. Metrics are
a pure fold over the ``action`` records, so a saved log replays to exactly
the metrics the engine reported.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from . import agents as agents_mod
from .agents import HumanPolicy, PolicyView, RobotView
from .belief import BeliefState, EstimatorParams, ObservationKind, DEFAULT_PARAMS
from .planner import (
    CostModel,
    PlanResult,
    check_schedule,
    evaluate_human_assignment,
    plan_cycle,
)
from .world import (
    Agent,
    Color,
    Difficulty,
    PatternVariant,
    Scenario,
    TaskSpec,
    derive_duration,
    frontier,
    generate_variant,
    travel_distance,
)

# Closed action vocabulary: the protocol actions of both agents plus the
# wait/pick/place sub-events. Anything else in a log is a bug.
HUMAN_ACTION_KINDS = frozenset(
    {
        "select_own_task",
        "assign_task_to_robot",
        "return_object",
        "perform_assigned_task",
        "cancel_own_assignment",
        "pick",
        "place",
        "wait",
    }
)
ROBOT_ACTION_KINDS = frozenset(
    {
        "select_own_task",
        "assign_task_to_human",
        "return_wrong_object",
        "perform_human_task",
        "cancel_human_assignment",
        "reject_human_assignment",
        "pick",
        "place",
        "wait",
    }
)


class ProtocolError(Exception):
    """An action the session rules forbid; mirrors the tablet's guardrails."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class SessionAborted(RuntimeError):
    def __init__(self, reason: str, events: list[dict]):
        super().__init__(reason)
        self.reason = reason
        self.events = events


@dataclass(frozen=True)
class EngineConfig:
    think_s: float = 5.0  # pause before each human decision (scripted mode)
    return_s: float = 10.0  # workspace-side handling of one wrong block
    clock_cap_s: float = 3600.0  # livelock guard
    estimator: EstimatorParams = field(default_factory=lambda: DEFAULT_PARAMS)
    cost_model: CostModel = field(default_factory=CostModel)


@dataclass(frozen=True)
class SessionMetrics:
    """Per-session summary: error count, assignment counts in both directions,
    travel distances, task totals, and completion time in minutes."""

    n_wrong_h: int = 0
    n_assign_h_to_r: int = 0
    n_assign_r_to_h: int = 0
    d_h_m: float = 0.0
    d_r_m: float = 0.0
    n_tasks_h: int = 0
    n_tasks_r: int = 0
    t_total_min: float = 0.0

    FIELDS = (
        "n_wrong_h",
        "n_assign_h_to_r",
        "n_assign_r_to_h",
        "d_h_m",
        "d_r_m",
        "n_tasks_h",
        "n_tasks_r",
        "t_total_min",
    )

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}

    @staticmethod
    def from_dict(raw: Mapping[str, Any]) -> "SessionMetrics":
        return SessionMetrics(
            n_wrong_h=int(raw["n_wrong_h"]),
            n_assign_h_to_r=int(raw["n_assign_h_to_r"]),
            n_assign_r_to_h=int(raw["n_assign_r_to_h"]),
            d_h_m=float(raw["d_h_m"]),
            d_r_m=float(raw["d_r_m"]),
            n_tasks_h=int(raw["n_tasks_h"]),
            n_tasks_r=int(raw["n_tasks_r"]),
            t_total_min=float(raw["t_total_min"]),
        )


@dataclass
class _Activity:
    task_id: str
    color: Color
    provenance: str  # "self" | "assigned" | "human_request" | "return"
    phase: str  # "fetch" | "place" | "return"


@dataclass
class _AgentRuntime:
    busy: bool = False
    activity: _Activity | None = None


def compute_metrics(events: Iterable[Mapping[str, Any]]) -> SessionMetrics:
    """Fold a session log into its metrics. Only ``action`` records count."""
    n_wrong = n_h2r = n_r2h = 0
    d = {Agent.HUMAN.value: 0.0, Agent.ROBOT.value: 0.0}
    n_tasks = {Agent.HUMAN.value: 0, Agent.ROBOT.value: 0}
    t_last = 0.0
    for rec in events:
        if rec.get("type") != "action":
            continue
        kind = rec.get("kind")
        agent = rec.get("agent")
        if kind is None or agent is None or "t" not in rec:
            raise ValueError(f"malformed action record: {rec!r}")
        t_last = max(t_last, float(rec["t"]))
        if kind == "assign_task_to_robot":
            n_h2r += 1
        elif kind == "assign_task_to_human":
            n_r2h += 1
        elif kind == "pick":
            d[agent] += float(rec.get("distance_m", 0.0))
        elif kind == "place":
            n_tasks[agent] += 1
            if agent == Agent.HUMAN.value and rec.get("outcome") == "wrong":
                n_wrong += 1
        elif kind in ("return_wrong_object", "return_object"):
            n_tasks[agent] += 1
    return SessionMetrics(
        n_wrong_h=n_wrong,
        n_assign_h_to_r=n_h2r,
        n_assign_r_to_h=n_r2h,
        d_h_m=d[Agent.HUMAN.value],
        d_r_m=d[Agent.ROBOT.value],
        n_tasks_h=n_tasks[Agent.HUMAN.value],
        n_tasks_r=n_tasks[Agent.ROBOT.value],
        t_total_min=t_last / 60.0,
    )


@dataclass
class SessionResult:
    metrics: SessionMetrics
    events: list[dict]
    belief_trajectory: list[dict]
    completed: bool


class SessionEngine:
    """One collaboration session advanced event by event.

    In scripted mode (`policy` given) the engine samples human decisions at
    idle instants; in interactive mode callers submit validated actions via
    `submit_human_action` and pump time with `advance_to`.
    """

    def __init__(
        self,
        scenario: Scenario,
        seed: int = 0,
        difficulty: Difficulty = Difficulty.MEDIUM,
        policy: HumanPolicy | None = None,
        config: EngineConfig | None = None,
        variant: PatternVariant | None = None,
    ):
        self.scenario = scenario
        self.config = config or EngineConfig()
        self.policy = policy
        self.seed = seed
        self.difficulty = difficulty
        self.variant = variant or generate_variant(
            scenario.pattern,
            difficulty,
            seed,
            scenario.config.ambiguity_ratios,
        )
        self._policy_rng = random.Random(f"{seed}:human-policy")

        self.clock = 0.0
        self.completed: set[str] = set()
        self.occupancy: dict[tuple[int, int], Color] = {}
        self.misplaced: dict[str, Color] = {}  # insertion order = detection order
        self.announced: dict[str, int] = {}  # robot->human assignments, undone
        self.robot_committed: list[str] = []  # accepted human->robot requests
        self.pending_verdicts: list[str] = []
        self.beliefs = BeliefState.initial()
        self.agents = {Agent.HUMAN: _AgentRuntime(), Agent.ROBOT: _AgentRuntime()}
        self.workspace_busy_until = 0.0
        self.first_human_action_done = False
        self.decision_index = 0
        self.current_plan: PlanResult | None = None
        self._announce_counter = 0

        self.events: list[dict] = []
        self._seq = 0
        self._queue: list[tuple[float, int, str, Any]] = []
        self._queue_seq = 0
        self._next_decide_earliest = 0.0
        self.finished = False
        self.aborted_reason: str | None = None

        self._tasks_by_id = {t.task_id: t for t in scenario.graph.tasks}
        self._record(
            "session",
            kind="started",
            extras={
                "seed": seed,
                "difficulty": difficulty.value,
                "profile": policy.name if policy else None,
                "n_tasks": len(scenario.graph.tasks),
            },
        )
        if self.policy is not None:
            self._schedule(0.0, "human_decide", None)

    # ------------------------------------------------------------------ util

    def _record(
        self,
        rec_type: str,
        agent: Agent | None = None,
        kind: str | None = None,
        task: str | None = None,
        outcome: str | None = None,
        extras: Mapping[str, Any] | None = None,
    ) -> dict:
        rec: dict[str, Any] = {"seq": self._seq, "t": round(self.clock, 6), "type": rec_type}
        if agent is not None:
            rec["agent"] = agent.value
        if kind is not None:
            rec["kind"] = kind
        if task is not None:
            rec["task"] = task
        if outcome is not None:
            rec["outcome"] = outcome
        rec["p_f"] = round(self.beliefs.follow_preference, 9)
        rec["p_e"] = round(self.beliefs.error_proneness, 9)
        if extras:
            rec.update(extras)
        if rec_type == "action":
            allowed = HUMAN_ACTION_KINDS if agent is Agent.HUMAN else ROBOT_ACTION_KINDS
            if kind not in allowed:
                raise AssertionError(f"action kind {kind!r} outside the closed protocol set")
        self._seq += 1
        self.events.append(rec)
        return rec

    def _schedule(self, t: float, tag: str, payload: Any) -> None:
        heapq.heappush(self._queue, (t, self._queue_seq, tag, payload))
        self._queue_seq += 1

    def _observe(self, obs: ObservationKind) -> None:
        self.beliefs = self.beliefs.observe(obs, self.config.estimator)
        self._record(
            "belief",
            kind=obs.value,
            extras={
                "decision_index": self.decision_index,
                "preference_pmf": [round(p, 9) for p in self.beliefs.preference.pmf],
                "performance_pmf": [round(p, 9) for p in self.beliefs.performance.pmf],
            },
        )

    def _task(self, task_id: str) -> TaskSpec:
        task = self._tasks_by_id.get(task_id)
        if task is None:
            raise ProtocolError("unknown_task", f"no task named {task_id!r}")
        return task

    def _in_progress_ids(self) -> set[str]:
        return {
            rt.activity.task_id
            for rt in self.agents.values()
            if rt.busy and rt.activity is not None and rt.activity.phase != "return"
        }

    def _returns_in_progress(self) -> set[str]:
        return {
            rt.activity.task_id
            for rt in self.agents.values()
            if rt.busy and rt.activity is not None and rt.activity.phase == "return"
        }

    def available_tasks(self) -> list[TaskSpec]:
        """Frontier tasks that are actually actionable: spot empty, nobody on them."""
        ready = frontier(self.scenario.graph, self.completed)
        busy = self._in_progress_ids()
        out = []
        for tid in sorted(ready):
            task = self._tasks_by_id[tid]
            if tid in busy or tid in self.misplaced:
                continue
            if (task.workspace, task.spot) in self.occupancy:
                continue
            out.append(task)
        return out

    def _plannable_tasks(self) -> list[TaskSpec]:
        # Tasks awaiting a verdict stay plannable; a rejection frees them and
        # an acceptance forces them to the robot, both via the next replan.
        return [t for t in self.available_tasks() if t.task_id not in self.pending_verdicts]

    def is_complete(self) -> bool:
        return len(self.completed) == len(self.scenario.graph.tasks)

    # ------------------------------------------------------- legality checks

    def check_human_action(self, kind: str, task_id: str | None, color: str | None) -> None:
        """Validate a human action against the session rules; raise ProtocolError.

        The same checks back both the scripted policies (which never trip
        them) and the interactive API (where they mirror the tablet's greyed
        out controls).
        """
        if self.finished:
            raise ProtocolError("wrong_phase", "the session is already finished")
        if kind == "wait":
            return
        if kind not in ("select_own_task", "assign_task_to_robot", "perform_assigned_task",
                        "cancel_own_assignment", "return_object"):
            raise ProtocolError("unknown_kind", f"unsupported human action {kind!r}")
        # Tablet taps (assign/cancel) are fine mid-walk; physical actions are not.
        if kind not in ("assign_task_to_robot", "cancel_own_assignment"):
            if self.agents[Agent.HUMAN].busy:
                raise ProtocolError("agent_busy", "the human is mid-action")
        if task_id is None:
            raise ProtocolError("unknown_task", "action requires a task id")
        task = self._task(task_id)
        if kind == "cancel_own_assignment":
            if task_id in self.pending_verdicts or task_id in self.robot_committed:
                return
            if task_id in self._in_progress_ids():
                raise ProtocolError("task_in_progress", "the robot is already performing it")
            raise ProtocolError("assignment_not_pending", f"{task_id} was not assigned to the robot")
        if kind == "return_object":
            if task_id not in self.misplaced:
                raise ProtocolError("not_misplaced", f"{task_id} has no wrong block to return")
            if task_id in self._returns_in_progress():
                raise ProtocolError("task_in_progress", f"{task_id} is already being returned")
            return
        # Remaining kinds target a performable task.
        if task_id in self.completed:
            raise ProtocolError("task_completed", f"{task_id} is already done")
        if task_id in self._in_progress_ids():
            raise ProtocolError("task_in_progress", f"{task_id} is being performed")
        if task_id in self.misplaced or (task.workspace, task.spot) in self.occupancy:
            raise ProtocolError("spot_occupied", f"the spot of {task_id} holds a wrong block")
        ready = frontier(self.scenario.graph, self.completed)
        if task_id not in ready:
            raise ProtocolError(
                "precedence_violation", f"{task_id} has unfinished predecessor spots"
            )
        if kind == "assign_task_to_robot":
            if task_id in self.pending_verdicts or task_id in self.robot_committed:
                raise ProtocolError("already_assigned", f"{task_id} is already with the robot")
        if kind == "perform_assigned_task":
            if task_id not in self.announced:
                raise ProtocolError("not_assigned", f"{task_id} was not assigned to you")
        if kind in ("select_own_task", "perform_assigned_task") and color is not None:
            if color not in Color._value2member_map_:
                raise ProtocolError("unknown_color", f"no color named {color!r}")

    # --------------------------------------------------------- human actions

    def _begin_fetch(self, agent: Agent, task: TaskSpec, color: Color, provenance: str) -> None:
        timing = self.scenario.durations.timing(agent)
        trip = travel_distance(self.scenario.layout, agent, color)
        fetch_time = trip / timing.speed_mps + timing.pick_s
        rt = self.agents[agent]
        rt.busy = True
        rt.activity = _Activity(task.task_id, color, provenance, "fetch")
        self._schedule(self.clock + fetch_time, "fetch_done", agent)

    def apply_human_action(
        self,
        kind: str,
        task_id: str | None = None,
        color: str | None = None,
        _defer_followup: bool = False,
    ) -> None:
        """Validate and apply one human action at the current clock.

        `_defer_followup` lets the scripted decision handler apply the two
        actions of one decision (pick + delegation) atomically before the
        robot reacts; external callers never need it.
        """
        self.check_human_action(kind, task_id, color)
        if kind == "wait":
            self._record("action", agent=Agent.HUMAN, kind="wait")
            return
        assert task_id is not None
        task = self._tasks_by_id.get(task_id)
        opening_move = not self.first_human_action_done
        self.first_human_action_done = True

        if kind == "assign_task_to_robot":
            self.announced.pop(task_id, None)  # human overrides a suggestion
            self._record("action", agent=Agent.HUMAN, kind=kind, task=task_id)
            self._observe(ObservationKind.ASSIGNED_TASK_TO_ROBOT)
            self.pending_verdicts.append(task_id)
            if not _defer_followup:
                self._after_state_change()
            return

        if kind == "cancel_own_assignment":
            if task_id in self.pending_verdicts:
                self.pending_verdicts.remove(task_id)
            if task_id in self.robot_committed:
                self.robot_committed.remove(task_id)
            self._record("action", agent=Agent.HUMAN, kind=kind, task=task_id)
            self._observe(ObservationKind.CANCELED_ROBOT_ASSIGNMENT)
            self._after_state_change()
            return

        if kind == "return_object":
            rt = self.agents[Agent.HUMAN]
            rt.busy = True
            rt.activity = _Activity(task_id, self.misplaced[task_id], "self", "return")
            start = max(self.clock, self.workspace_busy_until)
            done = start + self.config.return_s
            self.workspace_busy_until = done
            self._schedule(done, "return_done", Agent.HUMAN)
            self._after_state_change()
            return

        assert task is not None
        true_color = self.scenario.pattern.color_at(task.workspace, task.spot)
        if kind == "perform_assigned_task":
            self.announced.pop(task_id, None)
            self._record("action", agent=Agent.HUMAN, kind="perform_assigned_task", task=task_id)
            self._observe(ObservationKind.COMPLIED_WITH_ASSIGNMENT)
            self._begin_fetch(Agent.HUMAN, task, true_color, "assigned")
            if not _defer_followup:
                self._after_state_change()
            return

        # Selecting via the board is an own choice even if the task happened
        # to be suggested; the suggestion is simply consumed.
        chosen = Color(color) if color is not None else true_color
        self.announced.pop(task_id, None)
        self._record(
            "action",
            agent=Agent.HUMAN,
            kind="select_own_task",
            task=task_id,
            extras={"color": chosen.value},
        )
        if not opening_move:
            # The session-opening selection is protocol-mandated (the human
            # always makes the first move), so it carries no preference
            # evidence; assignments made alongside it do.
            self._observe(ObservationKind.SELF_SELECTED_TASK)
        self._begin_fetch(Agent.HUMAN, task, chosen, "self")
        if not _defer_followup:
            self._after_state_change()

    # --------------------------------------------------------- robot actions

    def _unannounced_explicit(self) -> tuple[str, ...]:
        if self.current_plan is None:
            return ()
        busy = self._in_progress_ids()
        return tuple(
            tid
            for tid in self.current_plan.allocation.explicit_human_tasks()
            if tid not in self.announced and tid not in busy and tid not in self.completed
        )

    def _announce(self, task_ids: Iterable[str]) -> None:
        for tid in task_ids:
            self._announce_counter += 1
            self.announced[tid] = self._announce_counter
            self._record("action", agent=Agent.ROBOT, kind="assign_task_to_human", task=tid)

    def _cancel_stale_announcements(self) -> None:
        if self.current_plan is None:
            return
        human_allocated = set(self.current_plan.allocation.human_tasks())
        stale = [tid for tid in self.announced if tid not in human_allocated]
        for tid in stale:
            del self.announced[tid]
            self._record("action", agent=Agent.ROBOT, kind="cancel_human_assignment", task=tid)

    def _robot_step(self) -> None:
        """Let the robot act (possibly several zero-duration actions) until it
        is occupied or chooses to wait."""
        while not self.finished and not self.agents[Agent.ROBOT].busy:
            returning = self._returns_in_progress()
            view = RobotView(
                misplaced=tuple(t for t in self.misplaced if t not in returning),
                pending_verdicts=tuple(self.pending_verdicts),
                unannounced_explicit=self._unannounced_explicit(),
                session_started=self.first_human_action_done,
            )
            decision = agents_mod.robot_controller_step(view, self.current_plan)
            if decision.kind == "wait":
                return
            if decision.kind == "return":
                tid = decision.task_id
                assert tid is not None
                rt = self.agents[Agent.ROBOT]
                rt.busy = True
                rt.activity = _Activity(tid, self.misplaced[tid], "self", "return")
                start = max(self.clock, self.workspace_busy_until)
                done = start + self.config.return_s
                self.workspace_busy_until = done
                self._schedule(done, "return_done", Agent.ROBOT)
                return
            if decision.kind == "verdict":
                self._apply_verdict(decision.task_id)  # type: ignore[arg-type]
                continue
            if decision.kind == "start":
                tid = decision.task_id
                assert tid is not None
                task = self._tasks_by_id[tid]
                provenance = "human_request" if tid in self.robot_committed else "self"
                if tid in self.robot_committed:
                    self.robot_committed.remove(tid)
                kind = "perform_human_task" if provenance == "human_request" else "select_own_task"
                conflict = tid in self.announced
                self.announced.pop(tid, None)
                extras = {"conflict": True} if conflict else None
                self._record("action", agent=Agent.ROBOT, kind=kind, task=tid, extras=extras)
                true_color = self.scenario.pattern.color_at(task.workspace, task.spot)
                self._begin_fetch(Agent.ROBOT, task, true_color, provenance)
                self._replan()
                return
            if decision.kind == "announce":
                self._announce(decision.task_ids)
                self._replan()
                continue
            raise AssertionError(f"unknown robot decision {decision.kind!r}")

    def _apply_verdict(self, task_id: str) -> None:
        self.pending_verdicts.remove(task_id)
        available = self.available_tasks()
        task = self._tasks_by_id.get(task_id)
        if task is None or task_id not in {t.task_id for t in available}:
            self._record(
                "action",
                agent=Agent.ROBOT,
                kind="reject_human_assignment",
                task=task_id,
                outcome="infeasible: task is not currently available",
            )
            self._replan()
            return
        accepted, reason = evaluate_human_assignment(
            task,
            self._plannable_tasks(),
            self.scenario.graph,
            self.beliefs,
            self.config.cost_model,
            self.scenario.durations,
            self.scenario.layout,
            pending_assignments=frozenset(self.announced),
            forced_robot=frozenset(self.robot_committed),
            release=self._release_times(),
        )
        if accepted:
            self.robot_committed.append(task_id)
            self._record(
                "session", kind="assignment_accepted", task=task_id, outcome=reason
            )
        else:
            self._record(
                "action",
                agent=Agent.ROBOT,
                kind="reject_human_assignment",
                task=task_id,
                outcome=reason,
            )
        self._replan()

    # ------------------------------------------------------------- planning

    def _release_times(self) -> dict[Agent, float]:
        release = {}
        for agent, rt in self.agents.items():
            release[agent] = 0.0
            if rt.busy and rt.activity is not None:
                # Remaining committed time: approximated by the scheduled
                # completion of the current activity.
                release[agent] = max(0.0, self._busy_until(agent) - self.clock)
        return release

    def _busy_until(self, agent: Agent) -> float:
        horizon = self.clock
        for t, _, tag, payload in self._queue:
            if tag in ("fetch_done", "place_done", "return_done") and payload is agent:
                horizon = max(horizon, t)
        return horizon

    def _replan(self) -> None:
        if not self.first_human_action_done or self.finished:
            return
        tasks = self._plannable_tasks()
        if not tasks:
            self.current_plan = None
            return
        # Accepted human requests run before the robot's own picks.
        priority = {tid: -1 for tid in self.robot_committed} or None
        plan = plan_cycle(
            tasks,
            self.scenario.graph,
            self.beliefs,
            self.config.cost_model,
            self.scenario.durations,
            self.scenario.layout,
            pending_assignments=frozenset(self.announced),
            forced_robot=frozenset(self.robot_committed),
            release=self._release_times(),
            priority=priority,
        )
        assert plan is not None
        durs = {
            t.task_id: derive_duration(
                self.scenario.durations, self.scenario.layout, plan.allocation.agent_of(t.task_id), t
            )
            for t in tasks
        }
        check_schedule(plan.schedule, self.scenario.graph, durs)
        self.current_plan = plan
        self._record(
            "plan",
            extras={
                "allocation": {
                    tid: {"agent": a.agent.value, "explicit": a.explicit}
                    for tid, a in sorted(plan.allocation.by_task.items())
                },
                "schedule": [
                    {"task": e.task_id, "agent": e.agent.value, "start": round(e.start, 6),
                     "finish": round(e.finish, 6)}
                    for e in plan.schedule.entries
                ],
                "next_robot_action": plan.next_robot_action,
                "costs": plan.cost_table.as_dict(),
            },
        )
        # Newly explicit allocations are announced right away (the tablet
        # shows assignments the moment the plan adopts them), and assignments
        # no longer allocated to the human are withdrawn.
        self._cancel_stale_announcements()
        fresh = self._unannounced_explicit()
        if fresh:
            self._announce(fresh)

    def _after_state_change(self) -> None:
        if self.finished:
            return
        if self.is_complete():
            self._finish()
            return
        self._replan()
        if not self.agents[Agent.ROBOT].busy:
            self._robot_step()

    def _finish(self) -> None:
        self.finished = True
        self._record("session", kind="completed", extras={"n_completed": len(self.completed)})
        metrics = compute_metrics(self.events)
        self._record("session", kind="metrics", extras={"metrics": metrics.as_dict()})

    # --------------------------------------------------------- event handlers

    def _handle_fetch_done(self, agent: Agent) -> None:
        rt = self.agents[agent]
        assert rt.activity is not None and rt.activity.phase == "fetch"
        act = rt.activity
        dist = travel_distance(self.scenario.layout, agent, act.color)
        self._record(
            "action",
            agent=agent,
            kind="pick",
            task=act.task_id,
            extras={"color": act.color.value, "distance_m": dist},
        )
        act.phase = "place"
        timing = self.scenario.durations.timing(agent)
        start = max(self.clock, self.workspace_busy_until)
        done = start + timing.place_s
        self.workspace_busy_until = done
        self._schedule(done, "place_done", agent)

    def _handle_place_done(self, agent: Agent) -> None:
        rt = self.agents[agent]
        assert rt.activity is not None and rt.activity.phase == "place"
        act = rt.activity
        task = self._tasks_by_id[act.task_id]
        true_color = self.scenario.pattern.color_at(task.workspace, task.spot)
        correct = act.color is true_color
        self.occupancy[(task.workspace, task.spot)] = act.color
        if correct:
            self.completed.add(act.task_id)
        else:
            self.misplaced[act.task_id] = act.color
        rt.busy = False
        rt.activity = None
        # A placement supersedes any open delegation of the same task.
        if act.task_id in self.robot_committed:
            self.robot_committed.remove(act.task_id)
        if act.task_id in self.pending_verdicts:
            self.pending_verdicts.remove(act.task_id)
        self._record(
            "action",
            agent=agent,
            kind="place",
            task=act.task_id,
            outcome="correct" if correct else "wrong",
            extras={"color": act.color.value},
        )
        if agent is Agent.HUMAN and act.provenance == "self":
            self._observe(
                ObservationKind.PLACEMENT_CORRECT if correct else ObservationKind.PLACEMENT_WRONG
            )
        self._after_state_change()
        self._wake_agent(agent)

    def _handle_return_done(self, agent: Agent) -> None:
        rt = self.agents[agent]
        assert rt.activity is not None and rt.activity.phase == "return"
        act = rt.activity
        task = self._tasks_by_id[act.task_id]
        self.occupancy.pop((task.workspace, task.spot), None)
        self.misplaced.pop(act.task_id, None)
        rt.busy = False
        rt.activity = None
        kind = "return_wrong_object" if agent is Agent.ROBOT else "return_object"
        self._record("action", agent=agent, kind=kind, task=act.task_id, outcome="returned")
        self._after_state_change()
        self._wake_agent(agent)

    def _wake_agent(self, agent: Agent) -> None:
        if self.finished:
            return
        if agent is Agent.HUMAN and self.policy is not None:
            self._next_decide_earliest = self.clock + self.config.think_s
            self._schedule(self._next_decide_earliest, "human_decide", None)
        if agent is Agent.ROBOT and not self.agents[Agent.ROBOT].busy:
            self._robot_step()

    def _team_stalled(self) -> bool:
        robot = self.agents[Agent.ROBOT]
        if robot.busy or self.misplaced or self.pending_verdicts or self.announced:
            return False
        plan = self.current_plan
        robot_has_work = plan is not None and plan.next_robot_action is not None
        return self.first_human_action_done and not robot_has_work and bool(self.available_tasks())

    def _policy_view(self) -> PolicyView:
        # Suggested (announced) tasks stay selectable: a leading partner is free
        # to do them their own way. Tasks promised to the robot are off the board.
        candidates = [
            t
            for t in self.available_tasks()
            if t.task_id not in self.pending_verdicts
            and t.task_id not in self.robot_committed
        ]
        pending = tuple(sorted(self.announced, key=lambda tid: self.announced[tid]))
        human_duration = {
            t.task_id: derive_duration(self.scenario.durations, self.scenario.layout, Agent.HUMAN, t)
            for t in self.available_tasks()
        }
        variant_options = {
            t.task_id: self.variant.spots[(t.workspace, t.spot)].options
            for t in self.scenario.graph.tasks
        }
        true_color = {
            t.task_id: self.scenario.pattern.color_at(t.workspace, t.spot)
            for t in self.scenario.graph.tasks
        }
        return PolicyView(
            pending=pending,
            candidates=tuple(candidates),
            human_duration=human_duration,
            variant_options=variant_options,
            true_color=true_color,
            decision_index=self.decision_index,
            first_decision=not self.first_human_action_done,
            team_stalled=self._team_stalled(),
        )

    def _handle_human_decide(self) -> None:
        if self.finished or self.policy is None:
            return
        if self.agents[Agent.HUMAN].busy:
            return
        if self.clock + 1e-9 < self._next_decide_earliest:
            return
        view = self._policy_view()
        decision = agents_mod.human_policy_step(self.policy, view, self._policy_rng)
        self.decision_index += 1
        if decision.kind == "wait":
            self.apply_human_action("wait")
            self._next_decide_earliest = self.clock + self.config.think_s
            self._schedule(self._next_decide_earliest, "human_decide", None)
            return
        # Both halves of the decision land at one instant; the robot reacts
        # to the completed decision, not to its first half.
        if decision.kind == "comply":
            self.apply_human_action("perform_assigned_task", decision.task_id,
                                    _defer_followup=True)
        elif decision.kind == "self_select":
            assert decision.color is not None
            self.apply_human_action("select_own_task", decision.task_id, decision.color.value,
                                    _defer_followup=True)
        if decision.assign_task_id is not None:
            self.apply_human_action("assign_task_to_robot", decision.assign_task_id,
                                    _defer_followup=True)
        self._after_state_change()

    # ------------------------------------------------------------ main loops

    def next_wakeup(self) -> float | None:
        if self._queue:
            return self._queue[0][0]
        return None

    def _dispatch(self, tag: str, payload: Any) -> None:
        if tag == "human_decide":
            self._handle_human_decide()
        elif tag == "fetch_done":
            self._handle_fetch_done(payload)
        elif tag == "place_done":
            self._handle_place_done(payload)
        elif tag == "return_done":
            self._handle_return_done(payload)
        else:
            raise AssertionError(f"unknown wakeup {tag!r}")

    def advance_to(self, sim_time: float) -> None:
        """Process every queued wakeup up to and including `sim_time`."""
        guard = 0
        while self._queue and not self.finished:
            t, _, tag, payload = self._queue[0]
            if t > sim_time + 1e-12:
                break
            heapq.heappop(self._queue)
            self.clock = max(self.clock, t)
            if self.clock > self.config.clock_cap_s:
                self._abort(f"clock exceeded cap of {self.config.clock_cap_s} s")
            self._dispatch(tag, payload)
            guard += 1
            if guard > 500_000:
                self._abort("no-progress guard tripped (500000 wakeups in one advance)")
        if sim_time > self.clock and not self.finished:
            self.clock = sim_time

    def _abort(self, reason: str) -> None:
        self.aborted_reason = reason
        self._record("session", kind="aborted", outcome=reason)
        self.finished = True
        raise SessionAborted(reason, self.events)

    def run(self) -> SessionResult:
        """Drive a scripted session to completion (batch mode)."""
        if self.policy is None:
            raise ValueError("run() requires a scripted human policy")
        while not self.finished:
            nxt = self.next_wakeup()
            if nxt is None:
                self._abort("no pending wakeups but the session is incomplete")
            self.advance_to(nxt)
        return self.result()

    def result(self) -> SessionResult:
        return SessionResult(
            metrics=compute_metrics(self.events),
            events=self.events,
            belief_trajectory=belief_trajectory(self.events),
            completed=self.is_complete(),
        )

    # ------------------------------------------------------- interactive API

    def submit_human_action(
        self, kind: str, task_id: str | None = None, color: str | None = None
    ) -> list[dict]:
        """Apply an externally supplied human action; returns the new records."""
        start = len(self.events)
        self.apply_human_action(kind, task_id, color)
        return self.events[start:]


def belief_trajectory(events: Iterable[Mapping[str, Any]]) -> list[dict]:
    """Per-update (step, decision, time, expectation) series from a session log."""
    out = []
    step = 0
    for rec in events:
        if rec.get("type") != "belief":
            continue
        out.append(
            {
                "step": step,
                "decision_index": rec.get("decision_index", 0),
                "t": rec["t"],
                "obs": rec.get("kind"),
                "p_f": rec["p_f"],
                "p_e": rec["p_e"],
            }
        )
        step += 1
    return out


def resolve_return(engine: SessionEngine, task_id: str) -> None:
    """Force an immediate robot return of a misplaced block (test utility).

    The batch loop normally triggers returns through the controller; this
    applies the same state transition synchronously.
    """
    if task_id not in engine.misplaced:
        raise ProtocolError("not_misplaced", f"{task_id} has no wrong block to return")
    task = engine._tasks_by_id[task_id]
    engine.occupancy.pop((task.workspace, task.spot), None)
    engine.misplaced.pop(task_id, None)
    engine.clock = max(engine.clock, engine.workspace_busy_until) + engine.config.return_s
    engine._record("action", agent=Agent.ROBOT, kind="return_wrong_object", task=task_id,
                   outcome="returned")


def run_session(
    scenario: Scenario,
    policy: HumanPolicy,
    seed: int = 0,
    difficulty: Difficulty = Difficulty.MEDIUM,
    config: EngineConfig | None = None,
) -> SessionResult:
    """One scripted session from first human move to the last correct block."""
    engine = SessionEngine(
        scenario, seed=seed, difficulty=difficulty, policy=policy, config=config
    )
    return engine.run()


def events_to_jsonl(events: Iterable[Mapping[str, Any]]) -> str:
    return "\n".join(json.dumps(rec, separators=(",", ":")) for rec in events) + "\n"


def events_from_jsonl(text: str) -> list[dict]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed log line: {line[:80]!r}") from exc
    return out
