"""
End-to-end runs on a small ferry domain at full size settings.

These take minutes on a CPU; run with ``pytest -m slow``.
"""

import pytest

from vecplan.config import DomainSettings, RunConfig
from vecplan.eval_harness import plan_identity_rate, prepare_data, run_experiment
from vecplan.gnn_plan import plan
from vecplan.heuristic_learner import build_pairs, recommend, train_selector
from vecplan.model_extraction import (
    bridge_state,
    build_learned_model,
    estimate_traces,
    extract_preconditions,
    learned_applicable,
)
from vecplan.psg_learner import SequenceModel, decode, state_to_attrs, train
from vecplan.strips_core import apply, validate_plan
from vecplan.trace_pipeline import as_partial, mask_traces

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def config():
    return RunConfig(
        domain=DomainSettings("ferry", {"cars": 2, "locations": 3}),
        train_traces=200,
        test_instances=30,
        observation_percentages=(0, 40, 100),
        workers=3,
    ).validate()


@pytest.fixture(scope="module")
def data(config):
    return prepare_data(config)


@pytest.fixture(scope="module")
def report(config, data):
    return run_experiment(config, data=data)[0]


def test_full_observation_is_interpreted(report):
    row = report.row(100)
    assert row.train_loss_final < 1e-3
    assert row.precision >= 0.99 and row.recall >= 0.99


def test_partial_observation_is_robust(report):
    row = report.row(40)
    assert row.precision >= 0.90 and row.recall >= 0.90
    assert report.row(100).precision >= row.precision >= report.row(0).precision


def test_learned_planner_solves_and_matches_oracle(report):
    row = report.row(100)
    assert row.instances_solved >= 0.8
    assert row.plan_identity_rate >= 0.6
    # the sweep also completes at zero observation
    assert 0.0 <= report.row(0).instances_solved <= 1.0


def test_components_at_full_observation(config, data):
    domain = data.domain
    partial = mask_traces(data.train_traces, 100, config.seeds.mask)
    model = SequenceModel(domain.num_propositions, domain.num_actions, config.learner, seed=config.seeds.learner)
    model, _ = train(model, partial, seed=config.seeds.learner)

    transitions = [(s, a, t) for tr in data.train_traces for s, a, t in zip(tr.states, tr.actions, tr.states[1:])]
    matches = 0
    for s, a, t in transitions:
        attrs = state_to_attrs(s, domain.num_propositions).astype(float)
        nxt = decode(model, model.edge_update(attrs, model.state_update(attrs), a))
        matches += frozenset(int(j) for j in nxt.nonzero()[0]) == apply(domain, s, a) == t
    assert matches >= 0.99 * len(transitions)

    learned = build_learned_model(model, partial)
    estimated = estimate_traces(model, partial)
    pairs = build_pairs(estimated, lambda s: bridge_state(model, s), domain.num_actions, seed=config.seeds.selector)
    selector, _ = train_selector(pairs, config.selector, config.seeds.selector)

    hits = 0
    for tr in data.train_traces:
        top = recommend(selector, bridge_state(model, tr.initial), bridge_state(model, tr.final), 3)
        hits += tr.actions[0] in [a for a, _ in top]
    assert hits >= 0.9 * len(data.train_traces)

    results = [plan(learned, selector, inst) for inst in data.test_instances]
    solved = [r.solved and bool(validate_plan(domain, inst, r.plan)) for r, inst in zip(results, data.test_instances)]
    assert sum(solved) >= 0.8 * len(solved)
    assert plan_identity_rate(results, [t.actions for t in data.test_traces], solved) >= 0.6


@pytest.mark.parametrize("pct", [100, 40])
def test_extracted_preconditions_hold_on_training_steps(config, data, pct):
    domain = data.domain
    partial = mask_traces(data.train_traces, pct, config.seeds.mask)
    model = SequenceModel(domain.num_propositions, domain.num_actions, config.learner, seed=config.seeds.learner)
    model, _ = train(model, partial, seed=config.seeds.learner)
    estimated = estimate_traces(model, partial)
    pre = extract_preconditions(estimated)

    assert set(pre) == {a for tr in data.train_traces for a in tr.actions}
    for trace in estimated:
        for s, a in zip(trace.state_sets(), trace.actions):
            assert pre[a] <= s

    learned = build_learned_model(model, partial)
    assert learned.preconditions == pre
    steps = [(s, a) for tr in data.train_traces for s, a in zip(tr.states, tr.actions)]
    held = sum(a in learned_applicable(learned, s) for s, a in steps)
    assert held >= (0.98 if pct == 100 else 0.9) * len(steps)
