"""Planner: cost model, min-max allocation vs exhaustive oracle, scheduling
vs permutation brute force, plan cycles, assignment verdicts."""

import itertools
import random

import pytest

from coplan.belief import Belief, BeliefState, PREFERENCE_SUPPORT, PERFORMANCE_SUPPORT
from coplan.planner import (
    Allocation,
    Assignment,
    CostModel,
    PlanningError,
    check_schedule,
    build_cost_table,
    evaluate_human_assignment,
    plan_cycle,
    schedule,
    select_allocation,
    solve_minmax,
    task_cost,
)
from coplan.world import (
    Agent,
    Color,
    ScenarioConfig,
    TaskGraph,
    TaskSpec,
    build_scenario,
)


def beliefs_with(p_f: float, p_e: float) -> BeliefState:
    """Point-ish beliefs with the exact requested expectations."""

    def pmf_for(support, target):
        lo = max(v for v in support if v <= target + 1e-12)
        hi = min(v for v in support if v >= target - 1e-12)
        if lo == hi:
            return tuple(1.0 if v == lo else 0.0 for v in support)
        w = (target - lo) / (hi - lo)
        return tuple(
            (1.0 - w) if v == lo else (w if v == hi else 0.0) for v in support
        )

    return BeliefState(
        preference=Belief(PREFERENCE_SUPPORT, pmf_for(PREFERENCE_SUPPORT, p_f)),
        performance=Belief(PERFORMANCE_SUPPORT, pmf_for(PERFORMANCE_SUPPORT, p_e)),
    )


@pytest.fixture(scope="module")
def scenario():
    return build_scenario()


class TestTaskCost:
    def test_sure_follower_explicit_has_no_lead_penalty(self, scenario):
        task = scenario.graph.by_id("w0s0")
        cm = CostModel()
        b = beliefs_with(1.0, 0.0)
        base = task_cost(task, Agent.HUMAN, b, scenario.durations, scenario.layout, cm,
                         explicit=True)
        d = 3 + 3 + 8 / 1.2  # green from the close table
        assert base == pytest.approx(d)

    def test_sure_leader_explicit_pays_full_penalty(self, scenario):
        task = scenario.graph.by_id("w0s0")
        cm = CostModel(lead_penalty_s=30.0)
        b = beliefs_with(0.0, 0.0)
        cost = task_cost(task, Agent.HUMAN, b, scenario.durations, scenario.layout, cm,
                         explicit=True)
        d = 3 + 3 + 8 / 1.2
        assert cost == pytest.approx(d + 30.0)

    def test_free_choice_prices_expected_errors(self, scenario):
        task = scenario.graph.by_id("w0s0")
        cm = CostModel(unattended_error_penalty_s=120.0)
        b = beliefs_with(0.5, 0.5)
        cost = task_cost(task, Agent.HUMAN, b, scenario.durations, scenario.layout, cm,
                         explicit=False)
        d = 3 + 3 + 8 / 1.2
        assert cost == pytest.approx(d + 60.0)

    def test_conflict_penalty_for_claimed_tasks(self, scenario):
        task = scenario.graph.by_id("w0s0")
        cm = CostModel(conflict_penalty_s=45.0)
        b = beliefs_with(0.5, 0.0)
        with_claim = task_cost(task, Agent.ROBOT, b, scenario.durations, scenario.layout,
                               cm, pending_assignments={"w0s0"})
        without = task_cost(task, Agent.ROBOT, b, scenario.durations, scenario.layout, cm)
        assert with_claim == pytest.approx(without + 45.0)


def oracle_allocation(human_explicit, human_free, robot):
    """Exhaustive enumeration over the full per-task option space
    (human-explicit, human-free, robot), with the solver's tie-break order."""
    ids = sorted(robot)
    best = None
    for combo in itertools.product(range(3), repeat=len(ids)):
        load_h = load_r = 0.0
        for tid, opt in zip(ids, combo):
            if opt == 0:
                load_h += human_explicit[tid]
            elif opt == 1:
                load_h += human_free[tid]
            else:
                load_r += robot[tid]
        vector = tuple(0 if opt < 2 else 1 for opt in combo)
        key = (max(load_h, load_r), load_h + load_r, vector)
        if best is None or key < best:
            best = key
    return best


class TestSelectAllocation:
    def test_single_task_goes_to_cheaper_agent(self):
        assignment, objective, _ = solve_minmax({"t1": 10.0}, {"t1": 40.0})
        assert assignment == {"t1": Agent.HUMAN}
        assert objective == pytest.approx(10.0)

    def test_two_task_tie_breaks_by_total_cost(self):
        # Both-human and the split reach max load 40; both-human has the
        # lower combined cost (40 vs 70), so the tie-break picks it.
        assignment, objective, total = solve_minmax(
            {"t1": 10.0, "t2": 30.0}, {"t1": 40.0, "t2": 50.0}
        )
        assert objective == pytest.approx(40.0)
        assert assignment == {"t1": Agent.HUMAN, "t2": Agent.HUMAN}
        assert total == pytest.approx(40.0)

    def test_forced_robot_constraint(self):
        assignment, _, _ = solve_minmax(
            {"t1": 1.0, "t2": 1.0}, {"t1": 100.0, "t2": 100.0}, forced_robot={"t1"}
        )
        assert assignment["t1"] is Agent.ROBOT

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_matches_exhaustive_oracle(self, n, scenario):
        rng = random.Random(100 + n)
        cm = CostModel()
        colors = list(Color)
        for trial in range(80):
            tasks = [
                TaskSpec(f"t{i}", workspace=0, spot=i, color=rng.choice(colors))
                for i in range(n)
            ]
            b = beliefs_with(
                round(rng.uniform(0, 1), 3), round(rng.uniform(0, 1), 3)
            )
            pending = frozenset(t.task_id for t in tasks if rng.random() < 0.2)
            table = build_cost_table(tasks, b, cm, scenario.durations, scenario.layout, pending)
            alloc = select_allocation(
                tasks, b, cm, scenario.durations, scenario.layout, pending
            )
            best = oracle_allocation(
                dict(table.human_explicit), dict(table.human_free), dict(table.robot)
            )
            assert alloc.objective == pytest.approx(best[0], abs=1e-9)
            assert alloc.total_cost == pytest.approx(best[1], abs=1e-9)
            vector = tuple(
                0 if alloc.by_task[tid].agent is Agent.HUMAN else 1
                for tid in sorted(alloc.by_task)
            )
            assert vector == best[2]

    def test_every_task_assigned_exactly_once(self, scenario):
        tasks = [scenario.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        alloc = select_allocation(
            tasks, BeliefState.initial(), CostModel(), scenario.durations, scenario.layout
        )
        assert sorted(alloc.by_task) == sorted(t.task_id for t in tasks)

    def test_empty_frontier_rejected(self, scenario):
        with pytest.raises(PlanningError):
            select_allocation([], BeliefState.initial(), CostModel(),
                              scenario.durations, scenario.layout)

    def test_raising_lead_penalty_never_adds_explicit_assignments(self, scenario):
        rng = random.Random(5)
        for trial in range(60):
            n = rng.randint(1, 5)
            tasks = [TaskSpec(f"t{i}", 0, i, rng.choice(list(Color))) for i in range(n)]
            b = beliefs_with(round(rng.uniform(0, 1), 2), round(rng.uniform(0, 1), 2))
            lo = CostModel(lead_penalty_s=10.0)
            hi = CostModel(lead_penalty_s=50.0)
            a_lo = select_allocation(tasks, b, lo, scenario.durations, scenario.layout)
            a_hi = select_allocation(tasks, b, hi, scenario.durations, scenario.layout)
            assert len(a_hi.explicit_human_tasks()) <= len(a_lo.explicit_human_tasks())
            # cross-optimality sanity on the shared instance
            assert a_hi.objective <= a_lo.objective + 50.0 * n


def chain_graph(durations_h):
    tasks = tuple(
        TaskSpec(f"c{i}", workspace=0, spot=i, color=Color.GREEN)
        for i in range(len(durations_h))
    )
    edges = frozenset((f"c{i}", f"c{i+1}") for i in range(len(durations_h) - 1))
    return TaskGraph(tasks=tasks, precedence=edges)


def oracle_makespan(tasks, graph, assignment, durations):
    """Brute-force over all per-agent orders with earliest-start simulation."""
    ids = [t.task_id for t in tasks]
    in_set = set(ids)
    preds = {tid: graph.predecessors(tid) & in_set for tid in ids}
    own = {
        Agent.HUMAN: [t for t in ids if assignment[t] is Agent.HUMAN],
        Agent.ROBOT: [t for t in ids if assignment[t] is Agent.ROBOT],
    }
    best = None
    for order_h in itertools.permutations(own[Agent.HUMAN]):
        for order_r in itertools.permutations(own[Agent.ROBOT]):
            pos = {Agent.HUMAN: 0, Agent.ROBOT: 0}
            t_agent = {Agent.HUMAN: 0.0, Agent.ROBOT: 0.0}
            seqs = {Agent.HUMAN: order_h, Agent.ROBOT: order_r}
            finish = {}
            stuck = False
            while len(finish) < len(ids):
                moved = False
                for ag in (Agent.HUMAN, Agent.ROBOT):
                    while pos[ag] < len(seqs[ag]):
                        tid = seqs[ag][pos[ag]]
                        if any(p not in finish for p in preds[tid]):
                            break
                        start = max(t_agent[ag], max((finish[p] for p in preds[tid]), default=0.0))
                        finish[tid] = start + durations[tid]
                        t_agent[ag] = finish[tid]
                        pos[ag] += 1
                        moved = True
                if not moved:
                    stuck = True
                    break
            if stuck:
                continue
            mk = max(finish.values())
            if best is None or mk < best:
                best = mk
    return best


class TestSchedule:
    def test_forced_chain_on_one_agent(self):
        graph = chain_graph([10.0, 30.0])
        alloc = Allocation(
            by_task={"c0": Assignment(Agent.HUMAN, True), "c1": Assignment(Agent.HUMAN, True)},
            objective=0.0,
            total_cost=0.0,
        )
        sched = schedule(alloc, list(graph.tasks), graph, {"c0": 10.0, "c1": 30.0})
        by_id = {e.task_id: e for e in sched.entries}
        assert (by_id["c0"].start, by_id["c0"].finish) == (0.0, 10.0)
        assert (by_id["c1"].start, by_id["c1"].finish) == (10.0, 40.0)
        assert sched.makespan == pytest.approx(40.0)

    def test_independent_tasks_run_in_parallel(self):
        tasks = (
            TaskSpec("a", 0, 0, Color.GREEN),
            TaskSpec("b", 1, 0, Color.BLUE),
        )
        graph = TaskGraph(tasks=tasks, precedence=frozenset())
        alloc = Allocation(
            by_task={"a": Assignment(Agent.HUMAN, True), "b": Assignment(Agent.ROBOT, False)},
            objective=0.0,
            total_cost=0.0,
        )
        sched = schedule(alloc, list(tasks), graph, {"a": 20.0, "b": 25.0})
        by_id = {e.task_id: e for e in sched.entries}
        assert by_id["a"].start == 0.0 and by_id["b"].start == 0.0
        assert sched.makespan == pytest.approx(25.0)

    def test_release_offsets_shift_agent_start(self):
        tasks = (TaskSpec("a", 0, 0, Color.GREEN),)
        graph = TaskGraph(tasks=tasks, precedence=frozenset())
        alloc = Allocation(by_task={"a": Assignment(Agent.ROBOT, False)}, objective=0, total_cost=0)
        sched = schedule(alloc, list(tasks), graph, {"a": 5.0}, release={Agent.ROBOT: 7.0})
        assert sched.entries[0].start == pytest.approx(7.0)

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_matches_permutation_oracle(self, n):
        rng = random.Random(50 + n)
        for trial in range(60):
            tasks = tuple(TaskSpec(f"t{i}", 0, i, Color.GREEN) for i in range(n))
            edges = set()
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.3:
                        edges.add((f"t{i}", f"t{j}"))
            graph = TaskGraph(tasks=tasks, precedence=frozenset(edges))
            assignment = {
                t.task_id: (Agent.HUMAN if rng.random() < 0.5 else Agent.ROBOT) for t in tasks
            }
            durations = {t.task_id: float(rng.randint(1, 20)) for t in tasks}
            alloc = Allocation(
                by_task={tid: Assignment(ag, False) for tid, ag in assignment.items()},
                objective=0.0,
                total_cost=0.0,
            )
            sched = schedule(alloc, list(tasks), graph, durations)
            expected = oracle_makespan(tasks, graph, assignment, durations)
            assert sched.makespan == pytest.approx(expected, abs=1e-9)
            check_schedule(sched, graph, durations)

    def test_schedule_validity_invariants(self):
        graph = chain_graph([5.0, 5.0, 5.0])
        alloc = Allocation(
            by_task={
                "c0": Assignment(Agent.HUMAN, True),
                "c1": Assignment(Agent.ROBOT, False),
                "c2": Assignment(Agent.HUMAN, True),
            },
            objective=0.0,
            total_cost=0.0,
        )
        durs = {"c0": 5.0, "c1": 5.0, "c2": 5.0}
        sched = schedule(alloc, list(graph.tasks), graph, durs)
        check_schedule(sched, graph, durs)
        assert sched.makespan == pytest.approx(15.0)

    def test_missing_allocation_rejected(self):
        graph = chain_graph([5.0])
        alloc = Allocation(by_task={}, objective=0, total_cost=0)
        with pytest.raises(PlanningError):
            schedule(alloc, list(graph.tasks), graph, {"c0": 5.0})


class TestPlanCycle:
    def test_follower_frontier_goes_mostly_explicit_human(self, scenario):
        frontier_tasks = [scenario.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        b = beliefs_with(1.0, 0.0)  # sure, accurate follower
        plan = plan_cycle(
            frontier_tasks, scenario.graph, b, CostModel(), scenario.durations, scenario.layout
        )
        assert plan is not None
        # cheap-for-human tasks are explicit assignments, none left free
        for tid in plan.allocation.human_tasks():
            assert plan.allocation.by_task[tid].explicit

    def test_empty_frontier_returns_none(self, scenario):
        assert plan_cycle([], scenario.graph, BeliefState.initial(), CostModel(),
                          scenario.durations, scenario.layout) is None

    def test_dominant_human_gets_everything_robot_only_announces(self):
        # human so fast that even the summed human load beats one robot task:
        # the whole frontier goes to the human as explicit assignments and the
        # robot has nothing of its own this cycle
        cfg = ScenarioConfig.from_dict(
            {
                "durations": {
                    "human": {"pick_s": 0.1, "place_s": 0.1, "speed_mps": 100.0},
                    "robot": {"pick_s": 100.0, "place_s": 100.0, "speed_mps": 0.01},
                }
            }
        )
        sc = build_scenario(cfg)
        tasks = [sc.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        plan = plan_cycle(
            tasks, sc.graph, beliefs_with(1.0, 0.0), CostModel(), sc.durations, sc.layout
        )
        assert plan is not None
        assert plan.allocation.robot_tasks() == []
        assert plan.next_robot_action is None
        assert sorted(plan.allocation.explicit_human_tasks()) == [t.task_id for t in tasks]

    def test_next_robot_action_none_when_all_human(self, scenario):
        tasks = [scenario.graph.by_id("w0s0")]
        b = beliefs_with(1.0, 0.0)
        plan = plan_cycle(tasks, scenario.graph, b, CostModel(), scenario.durations,
                          scenario.layout)
        assert plan is not None
        if not plan.allocation.robot_tasks():
            assert plan.next_robot_action is None

    def test_deterministic(self, scenario):
        tasks = [scenario.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        b = BeliefState.initial()
        p1 = plan_cycle(tasks, scenario.graph, b, CostModel(), scenario.durations, scenario.layout)
        p2 = plan_cycle(tasks, scenario.graph, b, CostModel(), scenario.durations, scenario.layout)
        assert p1 is not None and p2 is not None
        assert p1.allocation.by_task == p2.allocation.by_task
        assert p1.schedule == p2.schedule


class TestEvaluateHumanAssignment:
    def test_accept_task_already_planned_for_robot(self, scenario):
        tasks = [scenario.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        b = BeliefState.initial()
        cm = CostModel()
        plan = plan_cycle(tasks, scenario.graph, b, cm, scenario.durations, scenario.layout)
        assert plan is not None
        robot_tasks = plan.allocation.robot_tasks()
        if robot_tasks:
            task = scenario.graph.by_id(robot_tasks[0])
            accepted, reason = evaluate_human_assignment(
                task, tasks, scenario.graph, b, cm, scenario.durations, scenario.layout
            )
            assert accepted

    def test_accurate_human_is_deferred_to(self, scenario):
        # Low error estimate: even a plan-inflating request is accepted.
        tasks = [scenario.graph.by_id(t) for t in ("w0s0", "w1s0", "w2s0", "w3s0")]
        b = beliefs_with(0.0, 0.05)
        cm = CostModel(reject_inflation_factor=1.0001, reject_error_threshold=0.4)
        for task in tasks:
            accepted, _ = evaluate_human_assignment(
                task, tasks, scenario.graph, b, cm, scenario.durations, scenario.layout
            )
            assert accepted

    def test_unavailable_task_always_rejected(self, scenario):
        tasks = [scenario.graph.by_id("w0s0")]
        blocked = scenario.graph.by_id("w0s3")  # predecessors unfinished
        accepted, reason = evaluate_human_assignment(
            blocked, tasks, scenario.graph, BeliefState.initial(), CostModel(),
            scenario.durations, scenario.layout,
        )
        assert not accepted
        assert "infeasible" in reason

    def test_error_prone_inflating_request_rejected(self, scenario):
        # Force an inflation: the only other agent option is much cheaper.
        cfg = ScenarioConfig.from_dict(
            {
                "workspaces": 1,
                "spots_per_workspace": 1,
                "pattern": [["pink"]],  # pink: close for robot, far for human
            }
        )
        sc = build_scenario(cfg)
        task = sc.graph.by_id("w0s0")
        b = beliefs_with(0.0, 0.8)
        cm = CostModel(reject_inflation_factor=1.05, reject_error_threshold=0.4)
        accepted, reason = evaluate_human_assignment(
            task, [task], sc.graph, b, cm, sc.durations, sc.layout
        )
        # forcing the robot is what the request does; here the robot IS the
        # cheap agent so inflation stays 1.0 and it accepts
        assert accepted
        # flip: a green task is far for the robot, near for the human
        cfg2 = ScenarioConfig.from_dict(
            {"workspaces": 1, "spots_per_workspace": 1, "pattern": [["green"]]}
        )
        sc2 = build_scenario(cfg2)
        task2 = sc2.graph.by_id("w0s0")
        accepted2, reason2 = evaluate_human_assignment(
            task2, [task2], sc2.graph, b, cm, sc2.durations, sc2.layout
        )
        assert not accepted2
        assert "inflation" in reason2
