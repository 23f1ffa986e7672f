"""Acceptance gate: one test per top-level criterion, each printing a
pass/fail line. Tolerances are pinned here, not deferred.

1. Belief contracts: exact priors, normalization to 1e-9, monotone update
   directions.
2. Solver oracle equivalence: 500 allocation instances (<= 6 tasks) and 500
   scheduling instances (<= 5 tasks) against exhaustive enumeration.
3. Schedule validity on every plan emitted across 100 full sessions.
4. Qualitative reproduction of the four-profile summary table orderings,
   each with >= 95% bootstrap confidence over 100 seeded sessions/profile.
5. Belief-trajectory shapes per profile (fixed seeds).
6. Byte-identical logs for identical seeds.
7. Protocol closure over 10,000 fuzzed policy steps.
"""

import itertools
import math
import random

import numpy as np
import pytest

from coplan.agents import HumanPolicy, get_profile
from coplan.belief import (
    Belief,
    BeliefState,
    EstimatorParams,
    ObservationKind,
    PERFORMANCE_SUPPORT,
    PREFERENCE_SUPPORT,
    expectation,
    init_performance_belief,
    init_preference_belief,
    update_belief,
)
from coplan.engine import (
    HUMAN_ACTION_KINDS,
    ROBOT_ACTION_KINDS,
    run_session,
    events_to_jsonl,
)
from coplan.planner import (
    Allocation,
    Assignment,
    CostModel,
    build_cost_table,
    schedule,
    select_allocation,
)
from coplan.world import Agent, Color, TaskGraph, TaskSpec, build_scenario

TABLE_PROFILES = ("follow_high", "follow_low", "lead_low", "lead_high")
SESSIONS_PER_PROFILE = 100
BOOTSTRAP_DRAWS = 2000
BOOTSTRAP_CONFIDENCE = 0.95
DRIFT_STEP = 6  # lead_drift preset switches error rate at this decision


def announce(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"[acceptance] {name}: {status}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def scenario():
    return build_scenario()


@pytest.fixture(scope="module")
def profile_runs(scenario):
    runs = {}
    for profile in TABLE_PROFILES + ("lead_drift",):
        runs[profile] = [
            run_session(scenario, get_profile(profile), seed=seed)
            for seed in range(SESSIONS_PER_PROFILE)
        ]
    return runs


def test_1_belief_contracts():
    pref = init_preference_belief()
    perf = init_performance_belief()
    priors_ok = (
        abs(pref.pmf[5] - 0.32768) <= 1e-12
        and abs(perf.pmf[0] - 0.9**10) <= 1e-12
        and abs(sum(pref.pmf) - 1.0) <= 1e-12
        and abs(sum(perf.pmf) - 1.0) <= 1e-12
    )

    rng = random.Random(0)
    pref_obs = [
        ObservationKind.COMPLIED_WITH_ASSIGNMENT,
        ObservationKind.SELF_SELECTED_TASK,
        ObservationKind.ASSIGNED_TASK_TO_ROBOT,
        ObservationKind.CANCELED_ROBOT_ASSIGNMENT,
    ]
    perf_obs = [ObservationKind.PLACEMENT_CORRECT, ObservationKind.PLACEMENT_WRONG]

    norm_ok = True
    mono_ok = True
    # (a) arbitrary pmfs, identity transition: universal directions
    identity = EstimatorParams(stay_prob=1.0)
    for _ in range(500):
        raw = [rng.random() for _ in range(6)]
        total = sum(raw)
        belief = Belief(PREFERENCE_SUPPORT, tuple(x / total for x in raw))
        obs = rng.choice(pref_obs)
        post = update_belief(belief, obs, identity)
        norm_ok &= abs(sum(post.pmf) - 1.0) <= 1e-9 and all(p >= 0 for p in post.pmf)
        if obs is ObservationKind.COMPLIED_WITH_ASSIGNMENT:
            mono_ok &= expectation(post) >= expectation(belief) - 1e-12
        else:
            mono_ok &= expectation(post) <= expectation(belief) + 1e-12
        raw = [rng.random() for _ in range(11)]
        total = sum(raw)
        belief = Belief(PERFORMANCE_SUPPORT, tuple(x / total for x in raw))
        obs = rng.choice(perf_obs)
        post = update_belief(belief, obs, identity)
        norm_ok &= abs(sum(post.pmf) - 1.0) <= 1e-9
        if obs is ObservationKind.PLACEMENT_WRONG:
            mono_ok &= expectation(post) >= expectation(belief) - 1e-12
        else:
            mono_ok &= expectation(post) <= expectation(belief) + 1e-12
    # (b) states reachable from the priors, default lazy-walk transition
    for _ in range(300):
        state = BeliefState.initial()
        for _ in range(25):
            obs = rng.choice(pref_obs + perf_obs)
            f0, e0 = state.follow_preference, state.error_proneness
            state = state.observe(obs)
            norm_ok &= (
                abs(sum(state.preference.pmf) - 1.0) <= 1e-9
                and abs(sum(state.performance.pmf) - 1.0) <= 1e-9
            )
            if obs is ObservationKind.COMPLIED_WITH_ASSIGNMENT:
                mono_ok &= state.follow_preference >= f0 - 1e-12
            elif obs in pref_obs:
                mono_ok &= state.follow_preference <= f0 + 1e-12
            elif obs is ObservationKind.PLACEMENT_WRONG:
                mono_ok &= state.error_proneness >= e0 - 1e-12
            else:
                mono_ok &= state.error_proneness <= e0 + 1e-12

    announce(
        "1 belief contracts",
        priors_ok and norm_ok and mono_ok,
        f"priors={priors_ok} normalization={norm_ok} monotonicity={mono_ok}",
    )


def _oracle_allocation_objective(table):
    ids = sorted(table.robot)
    best = None
    for combo in itertools.product(range(3), repeat=len(ids)):
        load_h = load_r = 0.0
        for tid, opt in zip(ids, combo):
            if opt == 0:
                load_h += table.human_explicit[tid]
            elif opt == 1:
                load_h += table.human_free[tid]
            else:
                load_r += table.robot[tid]
        key = max(load_h, load_r)
        if best is None or key < best:
            best = key
    return best


def _oracle_makespan(tasks, graph, assignment, durations):
    ids = [t.task_id for t in tasks]
    in_set = set(ids)
    preds = {tid: graph.predecessors(tid) & in_set for tid in ids}
    own_h = [t for t in ids if assignment[t] is Agent.HUMAN]
    own_r = [t for t in ids if assignment[t] is Agent.ROBOT]
    best = None
    for order_h in itertools.permutations(own_h):
        for order_r in itertools.permutations(own_r):
            pos = {Agent.HUMAN: 0, Agent.ROBOT: 0}
            clock = {Agent.HUMAN: 0.0, Agent.ROBOT: 0.0}
            seqs = {Agent.HUMAN: order_h, Agent.ROBOT: order_r}
            finish = {}
            while len(finish) < len(ids):
                moved = False
                for ag in (Agent.HUMAN, Agent.ROBOT):
                    while pos[ag] < len(seqs[ag]):
                        tid = seqs[ag][pos[ag]]
                        if any(p not in finish for p in preds[tid]):
                            break
                        start = max(clock[ag], max((finish[p] for p in preds[tid]), default=0.0))
                        finish[tid] = start + durations[tid]
                        clock[ag] = finish[tid]
                        pos[ag] += 1
                        moved = True
                if not moved:
                    break
            if len(finish) < len(ids):
                continue
            mk = max(finish.values())
            if best is None or mk < best:
                best = mk
    return best


def test_2_solver_oracle_equivalence(scenario):
    rng = random.Random(12345)
    alloc_ok = 0
    for _ in range(500):
        n = rng.randint(1, 6)
        tasks = [TaskSpec(f"t{i}", 0, i, rng.choice(list(Color))) for i in range(n)]
        beliefs = BeliefState.initial()
        for _ in range(rng.randint(0, 6)):
            beliefs = beliefs.observe(rng.choice(list(ObservationKind)))
        pending = frozenset(t.task_id for t in tasks if rng.random() < 0.25)
        cm = CostModel(
            lead_penalty_s=rng.choice([0.0, 15.0, 30.0, 60.0]),
            unattended_error_penalty_s=rng.choice([0.0, 60.0, 120.0]),
            conflict_penalty_s=rng.choice([0.0, 45.0]),
        )
        table = build_cost_table(tasks, beliefs, cm, scenario.durations, scenario.layout, pending)
        alloc = select_allocation(
            tasks, beliefs, cm, scenario.durations, scenario.layout, pending
        )
        expected = _oracle_allocation_objective(table)
        if math.isclose(alloc.objective, expected, abs_tol=1e-9):
            alloc_ok += 1

    sched_ok = 0
    for _ in range(500):
        n = rng.randint(1, 5)
        tasks = tuple(TaskSpec(f"t{i}", 0, i, Color.GREEN) for i in range(n))
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.35:
                    edges.add((f"t{i}", f"t{j}"))
        graph = TaskGraph(tasks=tasks, precedence=frozenset(edges))
        assignment = {
            t.task_id: (Agent.HUMAN if rng.random() < 0.5 else Agent.ROBOT) for t in tasks
        }
        durations = {t.task_id: float(rng.randint(1, 25)) for t in tasks}
        alloc = Allocation(
            by_task={tid: Assignment(ag, False) for tid, ag in assignment.items()},
            objective=0.0,
            total_cost=0.0,
        )
        sched = schedule(alloc, list(tasks), graph, durations)
        expected = _oracle_makespan(tasks, graph, assignment, durations)
        if expected is not None and math.isclose(sched.makespan, expected, abs_tol=1e-9):
            sched_ok += 1

    announce(
        "2 solver oracle equivalence",
        alloc_ok == 500 and sched_ok == 500,
        f"allocation {alloc_ok}/500, schedule {sched_ok}/500",
    )


def test_3_schedule_validity_across_sessions(profile_runs, scenario):
    checked = 0
    bad = 0
    durations_cache: dict[tuple[str, str], float] = {}
    from coplan.world import derive_duration

    for profile in TABLE_PROFILES:
        for res in profile_runs[profile][:25]:  # 4 profiles x 25 = 100 sessions
            for rec in res.events:
                if rec["type"] != "plan":
                    continue
                checked += 1
                rows = rec["schedule"]
                allocated = rec["allocation"]
                for row in rows:
                    key = (row["task"], row["agent"])
                    if key not in durations_cache:
                        durations_cache[key] = derive_duration(
                            scenario.durations,
                            scenario.layout,
                            Agent(row["agent"]),
                            scenario.graph.by_id(row["task"]),
                        )
                    if abs(row["finish"] - (row["start"] + durations_cache[key])) > 1e-6:
                        bad += 1
                pos = {row["task"]: row for row in rows}
                for a, b in scenario.graph.precedence:
                    if a in pos and b in pos and pos[a]["finish"] > pos[b]["start"] + 1e-6:
                        bad += 1
                for agent in ("human", "robot"):
                    own = sorted(
                        (r for r in rows if r["agent"] == agent), key=lambda r: r["start"]
                    )
                    for r1, r2 in zip(own, own[1:]):
                        if r1["finish"] > r2["start"] + 1e-6:
                            bad += 1
                for row in rows:
                    if row["task"] not in allocated:
                        bad += 1
    announce(
        "3 schedule validity",
        checked > 0 and bad == 0,
        f"{checked} plans checked, {bad} violations",
    )


def _bootstrap_less_than(a, b, rng, draws=BOOTSTRAP_DRAWS):
    """P(mean(resample a) < mean(resample b)) via paired bootstrap draws."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = 0
    for _ in range(draws):
        ma = rng.choice(a, size=len(a), replace=True).mean()
        mb = rng.choice(b, size=len(b), replace=True).mean()
        if ma < mb:
            wins += 1
    return wins / draws


def test_4_table_orderings_with_bootstrap(profile_runs):
    rng = np.random.default_rng(2024)
    metrics = {
        p: [r.metrics for r in profile_runs[p]] for p in TABLE_PROFILES
    }
    t_total = {p: [m.t_total_min for m in metrics[p]] for p in TABLE_PROFILES}
    n_wrong = {p: [m.n_wrong_h for m in metrics[p]] for p in TABLE_PROFILES}
    h2r = {p: [m.n_assign_h_to_r for m in metrics[p]] for p in TABLE_PROFILES}
    r2h = {p: [m.n_assign_r_to_h for m in metrics[p]] for p in TABLE_PROFILES}

    # (a) follow_high completes fastest
    conf_a = min(
        _bootstrap_less_than(t_total["follow_high"], t_total[p], rng)
        for p in TABLE_PROFILES
        if p != "follow_high"
    )
    ok_a = conf_a >= BOOTSTRAP_CONFIDENCE

    # (b) lead_low makes the most mistakes
    conf_b = min(
        _bootstrap_less_than(n_wrong[p], n_wrong["lead_low"], rng)
        for p in TABLE_PROFILES
        if p != "lead_low"
    )
    ok_b = conf_b >= BOOTSTRAP_CONFIDENCE

    # (c) upward delegation only from lead profiles
    follow_means = [np.mean(h2r["follow_high"]), np.mean(h2r["follow_low"])]
    lead_means = [np.mean(h2r["lead_high"]), np.mean(h2r["lead_low"])]
    ok_c = max(follow_means) <= 0.05 and min(lead_means) > 0.5

    # (d) the robot assigns least to the accurate leader
    conf_d = min(
        _bootstrap_less_than(r2h["lead_high"], r2h[p], rng)
        for p in TABLE_PROFILES
        if p != "lead_high"
    )
    ok_d = conf_d >= BOOTSTRAP_CONFIDENCE

    announce(
        "4 summary-table orderings",
        ok_a and ok_b and ok_c and ok_d,
        f"a:{conf_a:.3f} b:{conf_b:.3f} c:{follow_means}/{lead_means} d:{conf_d:.3f}",
    )


def test_5_belief_trajectory_shapes(scenario):
    seeds = range(10)
    ok_lead = ok_follow = ok_drift = True
    for seed in seeds:
        for profile in ("lead_high", "lead_low", "lead_drift"):
            tr = run_session(scenario, get_profile(profile), seed=seed).belief_trajectory
            early = [p["p_f"] for p in tr if p["decision_index"] <= 10]
            ok_lead &= bool(early) and min(early) < 0.4
        for profile in ("follow_high", "follow_low"):
            tr = run_session(scenario, get_profile(profile), seed=seed).belief_trajectory
            ok_follow &= all(p["p_f"] >= 0.6 for p in tr)
        tr = run_session(scenario, get_profile("lead_drift"), seed=seed).belief_trajectory
        before = [p["p_e"] for p in tr if p["decision_index"] <= DRIFT_STEP]
        after = [p["p_e"] for p in tr if p["decision_index"] > DRIFT_STEP]
        ok_drift &= bool(before) and min(before) < 0.085
        ok_drift &= bool(after) and max(after) > 0.3
    announce(
        "5 belief trajectory shapes",
        ok_lead and ok_follow and ok_drift,
        f"lead<0.4@10:{ok_lead} follow>=0.6:{ok_follow} drift dip/rise:{ok_drift}",
    )


def test_6_engine_determinism(scenario):
    same = True
    for profile in ("follow_low", "lead_drift"):
        a = run_session(scenario, get_profile(profile), seed=31)
        b = run_session(scenario, get_profile(profile), seed=31)
        same &= events_to_jsonl(a.events) == events_to_jsonl(b.events)
    announce("6 engine determinism", same, "byte-identical logs for equal seeds")


def test_7_protocol_closure_fuzz(scenario):
    rng = random.Random(77)
    applied = 0
    illegal = 0
    invariant_violations = 0
    while applied < 10_000:
        policy = HumanPolicy(
            "fuzz",
            follow_bias=round(rng.uniform(0.0, 1.0), 2),
            error_rate=round(rng.uniform(0.0, 0.7), 2),
            assign_rate=round(rng.uniform(0.0, 1.0), 2),
            drift=((rng.randint(3, 12), round(rng.uniform(0.0, 0.8), 2)),),
        )
        res = run_session(scenario, policy, seed=rng.randint(0, 100_000))
        held: dict[str, int] = {}
        for rec in res.events:
            if rec["type"] != "action":
                continue
            applied += 1
            allowed = (
                HUMAN_ACTION_KINDS if rec["agent"] == "human" else ROBOT_ACTION_KINDS
            )
            if rec["kind"] not in allowed:
                illegal += 1
            if rec["kind"] == "place":
                held[rec["task"]] = held.get(rec["task"], 0) + 1
                if held[rec["task"]] != 1:
                    invariant_violations += 1
            elif rec["kind"] in ("return_wrong_object", "return_object"):
                held[rec["task"]] = held.get(rec["task"], 0) - 1
                if held[rec["task"]] != 0:
                    invariant_violations += 1
        times = [rec["t"] for rec in res.events]
        if times != sorted(times):
            invariant_violations += 1
        if not res.completed:
            invariant_violations += 1
    announce(
        "7 protocol closure fuzz",
        illegal == 0 and invariant_violations == 0,
        f"{applied} applied actions, {illegal} illegal, "
        f"{invariant_violations} invariant violations",
    )
