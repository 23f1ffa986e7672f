"""Scripted partner behaviours and the robot's action arbitration.

The human policies enact the evaluated partner types (follower/leader ×
accurate/sloppy, plus a leader whose accuracy degrades mid-session) as
simple stochastic rules over the same action vocabulary a live participant
would use. The robot controller turns the current plan and session state
into the robot's next action using a fixed priority order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping

from .planner import PlanResult
from .world import Color, TaskSpec


@dataclass(frozen=True)
class HumanPolicy:
    """Stochastic partner model.

    follow_bias: probability of complying with a pending robot assignment,
    and of staying passive (not self-initiating) when nothing is assigned.
    error_rate: probability a self-chosen placement uses a wrong color.
    assign_rate: probability of also delegating a task to the robot when
    acting on own initiative.
    drift: ordered (decision_index, new_error_rate) switch points.
    """

    name: str
    follow_bias: float
    error_rate: float
    assign_rate: float
    drift: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        for field_name in ("follow_bias", "error_rate", "assign_rate"):
            v = getattr(self, field_name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{field_name} must be in [0, 1], got {v}")
        steps = [s for s, _ in self.drift]
        if steps != sorted(set(steps)):
            raise ValueError("drift steps must be strictly increasing")

    def error_rate_at(self, decision_index: int) -> float:
        rate = self.error_rate
        for step, new_rate in self.drift:
            if decision_index >= step:
                rate = new_rate
        return rate


# Enacted behaviour presets. Parameters are calibrated to reproduce the
# qualitative orderings of the evaluation scenarios and are configurable.
PROFILES: dict[str, HumanPolicy] = {
    "follow_high": HumanPolicy("follow_high", follow_bias=0.95, error_rate=0.02, assign_rate=0.0),
    "follow_low": HumanPolicy("follow_low", follow_bias=0.95, error_rate=0.30, assign_rate=0.0),
    "lead_high": HumanPolicy("lead_high", follow_bias=0.15, error_rate=0.02, assign_rate=0.6),
    "lead_low": HumanPolicy("lead_low", follow_bias=0.15, error_rate=0.40, assign_rate=0.6),
    "lead_drift": HumanPolicy(
        "lead_drift", follow_bias=0.15, error_rate=0.0, assign_rate=0.6, drift=((6, 0.75),)
    ),
}


def get_profile(name: str) -> HumanPolicy:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class PolicyView:
    """What the human can see when deciding: the tablet's state, not engine internals."""

    pending: tuple[str, ...]  # robot-assigned tasks, oldest first
    candidates: tuple[TaskSpec, ...]  # tasks selectable for oneself right now
    human_duration: Mapping[str, float]
    variant_options: Mapping[str, tuple[Color, ...]]  # task -> colors shown on the sheet
    true_color: Mapping[str, Color]
    decision_index: int
    first_decision: bool
    team_stalled: bool  # robot idle with nothing to do while work remains


@dataclass(frozen=True)
class HumanDecision:
    kind: str  # "comply" | "self_select" | "wait"
    task_id: str | None = None
    color: Color | None = None
    assign_task_id: str | None = None


def _pick_wrong_color(view: PolicyView, task_id: str, rng: random.Random) -> Color:
    # On a two-color spot the mistake is the printed distractor; on a known
    # spot it is any other color (misremembered pattern).
    true = view.true_color[task_id]
    options = view.variant_options.get(task_id, (true,))
    if len(options) == 2:
        return options[0] if options[1] is true else options[1]
    return rng.choice([c for c in Color if c is not true])


def human_policy_step(
    policy: HumanPolicy, view: PolicyView, rng: random.Random
) -> HumanDecision:
    """Sample the partner's next move.

    The first decision always self-initiates (the session starts with the
    human's move); afterwards a pending assignment is obeyed with probability
    follow_bias, and with no assignment pending the human initiates with
    probability 1 - follow_bias (always, if the robot is stalled and work
    remains, since nobody waits forever in front of an idle robot).
    """
    initiating = False
    if view.first_decision:
        initiating = True
    elif view.pending:
        if rng.random() < policy.follow_bias:
            return HumanDecision(kind="comply", task_id=view.pending[0])
        initiating = True
    else:
        initiating = view.team_stalled or rng.random() >= policy.follow_bias

    if not initiating:
        return HumanDecision(kind="wait")
    if not view.candidates:
        if view.pending:
            return HumanDecision(kind="comply", task_id=view.pending[0])
        return HumanDecision(kind="wait")

    # Self-interested pick: the cheapest task for oneself.
    chosen = min(view.candidates, key=lambda t: (view.human_duration[t.task_id], t.task_id))
    err_rate = policy.error_rate_at(view.decision_index)
    if rng.random() < err_rate:
        color = _pick_wrong_color(view, chosen.task_id, rng)
    else:
        color = view.true_color[chosen.task_id]

    assign: str | None = None
    if policy.assign_rate > 0 and rng.random() < policy.assign_rate:
        others = [t for t in view.candidates if t.task_id != chosen.task_id]
        if others:
            # Delegate the task that is most expensive for oneself.
            assign = max(
                others, key=lambda t: (view.human_duration[t.task_id], t.task_id)
            ).task_id
    return HumanDecision(
        kind="self_select", task_id=chosen.task_id, color=color, assign_task_id=assign
    )


@dataclass(frozen=True)
class RobotDecision:
    kind: str  # "return" | "verdict" | "start" | "announce" | "wait"
    task_id: str | None = None
    task_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class RobotView:
    misplaced: tuple[str, ...]  # oldest first
    pending_verdicts: tuple[str, ...]
    unannounced_explicit: tuple[str, ...]
    session_started: bool


def robot_controller_step(view: RobotView, plan: PlanResult | None) -> RobotDecision:
    """The robot's next action, in fixed priority order.

    Fixing a misplaced block preempts everything; then pending verdicts on
    human requests, then the schedule's next own task, then announcing any
    not-yet-announced assignments, then waiting. The robot stays put until
    the human has made their first move.
    """
    if not view.session_started:
        return RobotDecision(kind="wait")
    if view.misplaced:
        return RobotDecision(kind="return", task_id=view.misplaced[0])
    if view.pending_verdicts:
        return RobotDecision(kind="verdict", task_id=view.pending_verdicts[0])
    if plan is not None and plan.next_robot_action not in (None, "wait"):
        return RobotDecision(kind="start", task_id=plan.next_robot_action)
    if view.unannounced_explicit:
        return RobotDecision(kind="announce", task_ids=view.unannounced_explicit)
    return RobotDecision(kind="wait")
