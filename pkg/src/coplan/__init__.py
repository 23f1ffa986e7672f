"""Adaptive human-robot collaboration planning and simulation toolkit."""

from .world import (
    Agent,
    Color,
    Difficulty,
    Scenario,
    ScenarioConfig,
    ScenarioError,
    build_scenario,
    derive_duration,
    frontier,
    generate_variant,
    load_config,
    travel_distance,
)
from .belief import (
    Belief,
    BeliefState,
    EstimatorParams,
    ObservationKind,
    expectation,
    init_performance_belief,
    init_preference_belief,
    update_belief,
)
from .planner import (
    Allocation,
    CostModel,
    PlanResult,
    Schedule,
    check_schedule,
    evaluate_human_assignment,
    plan_cycle,
    schedule,
    select_allocation,
    task_cost,
)
from .agents import PROFILES, HumanPolicy, get_profile, human_policy_step, robot_controller_step
from .engine import (
    EngineConfig,
    ProtocolError,
    SessionAborted,
    SessionEngine,
    SessionMetrics,
    SessionResult,
    compute_metrics,
    run_session,
)

__version__ = "0.1.0"
