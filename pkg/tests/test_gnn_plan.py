import numpy as np
import pytest
from conftest import AT_C1_L1, AT_C1_L2, EMPTY, FERRY_L1

from vecplan.domain_file import parse_domain
from vecplan.exceptions import BudgetExceeded, Unsolvable
from vecplan.gnn_plan import (
    GoalMode,
    PlanOutcome,
    SearchState,
    format_plan,
    goal_targets,
    plan,
    simulate,
)
from vecplan.oracles import GroundTruthTransition, OracleSelector, perfect_model
from vecplan.strips_core import Instance, validate_plan
from vecplan.trace_pipeline import with_goal_states

# going 1 -> trap leads nowhere; the search must back up and take 1 -> 2
CORRIDOR = """\
domain corridor
proposition at0
proposition at1
proposition at2
proposition trap
action go01
  pre at0
  add at1
  del at0
end
action go12
  pre at1
  add at2
  del at1
end
action fall
  pre at1
  add trap
  del at1
end
"""

# g is unreachable; a and b alternate forever
CYCLE = """\
domain cycle
proposition a
proposition b
proposition g
action ab
  pre a
  add b
  del a
end
action ba
  pre b
  add a
  del b
end
"""


class FixedSelector:
    def __init__(self, confidences):
        self.conf = np.asarray(confidences, dtype=float)
        self.num_actions = self.conf.size

    def confidences(self, from_vector, goal_vector):
        return self.conf


@pytest.fixture
def corridor():
    return parse_domain(CORRIDOR)


@pytest.fixture
def cycle():
    return parse_domain(CYCLE)


def test_backtracks_out_of_a_dead_end(corridor):
    inst = Instance(frozenset({0}), frozenset({2}))
    result = plan(perfect_model(corridor), FixedSelector([0.5, 0.3, 0.9]), inst)
    assert result.solved
    assert corridor.action_names(result.plan) == ["go01", "go12"]
    assert result.stats.expansions == 3
    assert result.stats.backtracks == 1
    assert result.stats.goal_attempts == 1
    assert validate_plan(corridor, inst, result.plan)


def test_top_k_limits_candidates(corridor):
    # with k=1 only "fall" is ever recommended at1; the search dies there
    inst = Instance(frozenset({1}), frozenset({2}))
    result = plan(perfect_model(corridor), FixedSelector([0.5, 0.3, 0.9]), inst, top_k=1, goal_mode="completion")
    assert result.outcome is PlanOutcome.FAIL
    assert plan(perfect_model(corridor), FixedSelector([0.5, 0.3, 0.9]), inst, top_k=2).solved is False
    assert plan(perfect_model(corridor), FixedSelector([0.5, 0.9, 0.3]), inst, top_k=1).plan == (1,)


def test_visited_pairs_end_a_cycle(cycle):
    inst = Instance(frozenset({0}), frozenset({2}))
    result = plan(perfect_model(cycle), FixedSelector([0.5, 0.5]), inst)
    assert result.outcome is PlanOutcome.FAIL
    assert result.plan == ()
    # overlay and completion targets, each searched from scratch
    assert result.stats.goal_attempts == 2
    assert result.stats.expansions == 4
    assert result.stats.backtracks == 4
    with pytest.raises(Unsolvable):
        result.unwrap()


def test_recorded_goal_state_adds_a_target(cycle):
    inst = Instance(frozenset({0}), frozenset({2}), goal_state=frozenset({1}))
    assert plan(perfect_model(cycle), FixedSelector([0.5, 0.5]), inst).stats.goal_attempts == 3


def test_budget_is_an_outcome(cycle):
    inst = Instance(frozenset({0}), frozenset({2}))
    result = plan(perfect_model(cycle), FixedSelector([0.5, 0.5]), inst, budget=1)
    assert result.outcome is PlanOutcome.BUDGET_EXCEEDED
    assert result.stats.expansions == 1
    with pytest.raises(BudgetExceeded):
        result.unwrap(budget=1)


def test_goal_already_true(ferry):
    inst = Instance(frozenset({AT_C1_L1, FERRY_L1, EMPTY}), frozenset({AT_C1_L1}))
    result = plan(perfect_model(ferry), FixedSelector(np.zeros(6)), inst)
    assert result.solved and result.plan == ()
    assert result.stats.expansions == 0 and result.stats.goal_attempts == 0
    assert result.unwrap() == ()


def test_goal_targets():
    inst = Instance(frozenset({0, 1}), frozenset({2}), goal_state=frozenset({1, 2}))
    assert goal_targets(inst, GoalMode.AUTO) == [frozenset({1, 2}), frozenset({0, 1, 2}), frozenset({2})]
    assert goal_targets(inst, "overlay") == [frozenset({0, 1, 2})]
    assert goal_targets(inst, "completion") == [frozenset({2})]
    plain = Instance(frozenset({2}), frozenset({2}))
    # overlay and completion coincide
    assert goal_targets(plain) == [frozenset({2})]
    with pytest.raises(ValueError):
        goal_targets(plain, GoalMode.RECORDED)
    with pytest.raises(ValueError):
        goal_targets(plain, "nearest")


def test_search_state_is_lifo(ferry):
    model = GroundTruthTransition(ferry)
    s0, s1 = frozenset({0}), frozenset({1})
    search = SearchState(s0, np.zeros(6))
    search.push(3)
    search.current = s1
    search.push(4)
    search.current = frozenset({2})
    assert search.plan == [3, 4]
    search.regress(model)
    assert search.current == s1 and search.plan == [3]
    search.regress(model)
    assert search.current == s0 and search.plan == []
    assert search.visited == {(s0, 3), (s1, 4)}
    assert np.array_equal(search.vector, np.array([1.0, 0, 0, 0, 0, 0]))


def test_exact_components_solve_every_instance(ferry2, ferry2_data):
    instances, traces = ferry2_data
    learned = perfect_model(ferry2)
    selector = OracleSelector(ferry2)
    for inst, trace in zip(with_goal_states(instances, traces), traces):
        result = plan(learned, selector, inst, top_k=3)
        assert result.solved
        assert validate_plan(ferry2, inst, result.plan)
        assert len(result.plan) <= len(trace)


def test_simulate_replays_transitions(ferry, ferry_trace):
    states = simulate(perfect_model(ferry), ferry_trace.initial, ferry_trace.actions)
    assert states == list(ferry_trace.states)
    assert simulate(GroundTruthTransition(ferry), ferry_trace.initial, []) == [ferry_trace.initial]


def test_plan_output(ferry, ferry_trace):
    assert format_plan(ferry, ferry_trace.actions) == "board(c1,l1)\nsail(l1,l2)\ndebark(c1,l2)\n"
    inst = Instance(ferry_trace.initial, frozenset({AT_C1_L2}))
    record = plan(perfect_model(ferry), OracleSelector(ferry), inst).to_record(ferry)
    assert record["outcome"] == "plan"
    assert record["plan"] == ["board(c1,l1)", "sail(l1,l2)", "debark(c1,l2)"]
