import pytest
import yaml

from vecplan.config import DomainSettings, LearnerSettings, PlannerSettings, RunConfig, SelectorSettings
from vecplan.domains import build_domain
from vecplan.trace_pipeline import PartialTrace, PlanTrace, gen_instances, gen_traces

# ferry-c1-l2 ids
AT_C1_L1, AT_C1_L2, FERRY_L1, FERRY_L2, ON_C1, EMPTY = range(6)
BOARD_L1, BOARD_L2, SAIL_L1_L2, SAIL_L2_L1, DEBARK_L1, DEBARK_L2 = range(6)


@pytest.fixture
def ferry():
    """One car, two locations: 6 propositions, 6 actions."""
    return build_domain("ferry", {"cars": 1, "locations": 2})


@pytest.fixture
def ferry_trace() -> PlanTrace:
    """Carry c1 from l1 to l2."""
    states = (
        frozenset({AT_C1_L1, FERRY_L1, EMPTY}),
        frozenset({FERRY_L1, ON_C1}),
        frozenset({FERRY_L2, ON_C1}),
        frozenset({AT_C1_L2, FERRY_L2, EMPTY}),
    )
    return PlanTrace(states, (BOARD_L1, SAIL_L1_L2, DEBARK_L2))


@pytest.fixture
def ferry_partial(ferry_trace) -> PartialTrace:
    """The ferry trace with one proposition observed per intermediate state."""
    return PartialTrace(
        ferry_trace.initial,
        ferry_trace.final,
        ferry_trace.actions,
        (frozenset({ON_C1}), frozenset({FERRY_L2})),
    )


@pytest.fixture
def ferry2():
    return build_domain("ferry", {"cars": 2, "locations": 3})


@pytest.fixture
def ferry2_data(ferry2):
    """Twelve solvable ferry-c2-l3 instances and their oracle traces."""
    instances = gen_instances("ferry", {"cars": 2, "locations": 3}, 12, seed=5, domain=ferry2)
    return instances, gen_traces(ferry2, instances)


@pytest.fixture
def tiny_learner() -> LearnerSettings:
    return LearnerSettings(embedding_dim=4, hidden_sizes=(8,), epochs=3, batch_size=4)


@pytest.fixture
def tiny_selector() -> SelectorSettings:
    return SelectorSettings(hidden_sizes=(8,), epochs=3, batch_size=8)


@pytest.fixture
def tiny_config(tiny_learner, tiny_selector) -> RunConfig:
    return RunConfig(
        domain=DomainSettings("ferry", {"cars": 1, "locations": 3}),
        train_traces=8,
        test_instances=3,
        observation_percentages=(100,),
        learner=tiny_learner,
        selector=tiny_selector,
        planner=PlannerSettings(expansion_budget=200),
    )


@pytest.fixture
def tiny_config_file(tmp_path, tiny_config):
    path = tmp_path / "tiny.yml"
    path.write_text(yaml.safe_dump(tiny_config.to_dict()), encoding="utf-8")
    return path
