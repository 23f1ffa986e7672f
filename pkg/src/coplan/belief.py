"""Robot-side belief tracking over the partner's hidden traits.

Two discrete posteriors are maintained: how strongly the human prefers to
follow rather than lead (support 0.0..1.0 in steps of 0.2), and how likely
they are to misplace an object (support 0.0..1.0 in steps of 0.1). Updates
are hidden-Markov forward steps: a lazy random-walk prediction over the
support followed by an observation reweighting, then renormalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

PREFERENCE_SUPPORT: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
PERFORMANCE_SUPPORT: tuple[float, ...] = tuple(round(i * 0.1, 1) for i in range(11))

_SUM_TOLERANCE = 1e-9


class BeliefError(ValueError):
    pass


class ObservationKind(str, Enum):
    """Protocol evidence the estimator consumes.

    The first four bear on the follow/lead preference; the last two bear on
    error-proneness and are only emitted for self-chosen placements.
    """

    COMPLIED_WITH_ASSIGNMENT = "complied_with_assignment"
    SELF_SELECTED_TASK = "self_selected_task"
    ASSIGNED_TASK_TO_ROBOT = "assigned_task_to_robot"
    CANCELED_ROBOT_ASSIGNMENT = "canceled_robot_assignment"
    PLACEMENT_CORRECT = "placement_correct"
    PLACEMENT_WRONG = "placement_wrong"


PREFERENCE_KINDS = frozenset(
    {
        ObservationKind.COMPLIED_WITH_ASSIGNMENT,
        ObservationKind.SELF_SELECTED_TASK,
        ObservationKind.ASSIGNED_TASK_TO_ROBOT,
        ObservationKind.CANCELED_ROBOT_ASSIGNMENT,
    }
)
PERFORMANCE_KINDS = frozenset(
    {ObservationKind.PLACEMENT_CORRECT, ObservationKind.PLACEMENT_WRONG}
)


@dataclass(frozen=True)
class Belief:
    """A probability mass function over a fixed ascending support."""

    support: tuple[float, ...]
    pmf: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.pmf):
            raise BeliefError("support and pmf lengths differ")
        if any(p < 0 for p in self.pmf):
            raise BeliefError("pmf entries must be non-negative")
        total = sum(self.pmf)
        if abs(total - 1.0) > _SUM_TOLERANCE:
            raise BeliefError(f"pmf sums to {total!r}, not 1")


def _binomial_pmf(n: int, p: float) -> tuple[float, ...]:
    return tuple(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(n + 1))


def init_preference_belief() -> Belief:
    """Initial assumption: the human will likely follow (binomial n=5, p=0.8)."""
    return Belief(support=PREFERENCE_SUPPORT, pmf=_binomial_pmf(5, 0.8))


def init_performance_belief() -> Belief:
    """Initial assumption: the human is mostly accurate (binomial n=10, p=0.1)."""
    return Belief(support=PERFORMANCE_SUPPORT, pmf=_binomial_pmf(10, 0.1))


# Monotone observation models: higher follow-preference makes compliance more
# likely and self-directed actions less likely; higher error-proneness makes
# wrong placements more likely. Preference likelihoods saturate at 0.05
# because even a committed follower occasionally acts alone (and a committed
# leader occasionally complies); without the saturation a single off-type
# action craters the posterior at the support endpoints.
_PREFERENCE_RESIDUAL = 0.05


def _saturate(raw: Callable[[float], float]) -> Callable[[float], float]:
    return lambda v: max(raw(v), _PREFERENCE_RESIDUAL)


_LIKELIHOODS: dict[ObservationKind, Callable[[float], float]] = {
    ObservationKind.COMPLIED_WITH_ASSIGNMENT: _saturate(lambda v: v),
    ObservationKind.SELF_SELECTED_TASK: _saturate(lambda v: 1.0 - v),
    ObservationKind.ASSIGNED_TASK_TO_ROBOT: _saturate(lambda v: 1.0 - v),
    ObservationKind.CANCELED_ROBOT_ASSIGNMENT: _saturate(lambda v: 1.0 - v),
    ObservationKind.PLACEMENT_WRONG: lambda w: w,
    ObservationKind.PLACEMENT_CORRECT: lambda w: 1.0 - w,
}


@dataclass(frozen=True)
class EstimatorParams:
    """Update-model knobs.

    `likelihood_floor` keeps support endpoints from becoming absorbing;
    `stay_prob` is the lazy-walk self-transition (1.0 selects the identity
    transition, useful for conjugate-style analysis and tests).
    """

    likelihood_floor: float = 0.01
    stay_prob: float = 0.8
    likelihoods: dict[ObservationKind, Callable[[float], float]] = field(
        default_factory=lambda: dict(_LIKELIHOODS)
    )

    def __post_init__(self) -> None:
        if not 0.0 < self.likelihood_floor <= 0.1:
            raise BeliefError(f"likelihood_floor must be in (0, 0.1], got {self.likelihood_floor}")
        if not 0.5 < self.stay_prob <= 1.0:
            raise BeliefError(f"stay_prob must be in (0.5, 1], got {self.stay_prob}")


DEFAULT_PARAMS = EstimatorParams()


def applicable_kinds(belief: Belief) -> frozenset[ObservationKind]:
    return PREFERENCE_KINDS if belief.support == PREFERENCE_SUPPORT else PERFORMANCE_KINDS


def _predict(pmf: tuple[float, ...], stay: float) -> list[float]:
    # Lazy random walk over support indices, reflecting at the ends: the move
    # probability that would leave the support folds back into staying put.
    if stay >= 1.0:
        return list(pmf)
    move = (1.0 - stay) / 2.0
    n = len(pmf)
    out = [0.0] * n
    for i, mass in enumerate(pmf):
        left = i - 1 if i > 0 else i
        right = i + 1 if i < n - 1 else i
        out[left] += mass * move
        out[right] += mass * move
        out[i] += mass * stay
    return out


def update_belief(
    belief: Belief, obs: ObservationKind, params: EstimatorParams = DEFAULT_PARAMS
) -> Belief:
    """One forward step: predict with the lazy walk, reweight, renormalize."""
    if obs not in applicable_kinds(belief):
        raise BeliefError(f"observation {obs.value} does not apply to this belief's variable")
    likelihood = params.likelihoods[obs]
    predicted = _predict(belief.pmf, params.stay_prob)
    weighted = [
        mass * max(likelihood(value), params.likelihood_floor)
        for mass, value in zip(predicted, belief.support)
    ]
    total = sum(weighted)
    if total <= 0.0:
        raise BeliefError("belief update produced an all-zero posterior")
    return Belief(support=belief.support, pmf=tuple(w / total for w in weighted))


def expectation(belief: Belief) -> float:
    return sum(p * v for p, v in zip(belief.pmf, belief.support))


@dataclass(frozen=True)
class BeliefState:
    """The estimator's two posteriors, updated as a pair from protocol evidence."""

    preference: Belief
    performance: Belief

    @staticmethod
    def initial() -> "BeliefState":
        return BeliefState(init_preference_belief(), init_performance_belief())

    def observe(self, obs: ObservationKind, params: EstimatorParams = DEFAULT_PARAMS) -> "BeliefState":
        if obs in PREFERENCE_KINDS:
            return BeliefState(update_belief(self.preference, obs, params), self.performance)
        return BeliefState(self.preference, update_belief(self.performance, obs, params))

    @property
    def follow_preference(self) -> float:
        return expectation(self.preference)

    @property
    def error_proneness(self) -> float:
        return expectation(self.performance)
