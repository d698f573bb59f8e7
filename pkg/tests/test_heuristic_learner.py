import json
import random

import numpy as np
import pytest
from conftest import BOARD_L1, DEBARK_L2, SAIL_L1_L2

from vecplan.config import SelectorSettings
from vecplan.exceptions import EmptyInput, FingerprintMismatch
from vecplan.heuristic_learner import (
    PairExample,
    SelectorNet,
    build_pairs,
    candidate_pairs,
    load_selector,
    recommend,
    save_selector,
    train_selector,
    write_pairs,
)
from vecplan.model_extraction import estimate_traces
from vecplan.oracles import GroundTruthTransition
from vecplan.psg_learner import EstimatedTrace, state_to_attrs
from vecplan.trace_pipeline import as_partial


def _estimated(states, actions, num_propositions=6):
    decoded = tuple(state_to_attrs(s, num_propositions) for s in states)
    return EstimatedTrace(tuple(actions), decoded, decoded, decoded)


def _size_bridge(state):
    return np.array([float(len(state)), float(sum(state))])


class FixedSelector:
    def __init__(self, confidences):
        self.conf = np.asarray(confidences, dtype=float)
        self.num_actions = self.conf.size

    def confidences(self, from_vector, goal_vector):
        return self.conf


def test_candidate_pairs_keep_required_pairs():
    rng = random.Random(0)
    assert candidate_pairs(1, 10, rng) == [(0, 1)]
    # every pair fits in a budget of 10n
    assert len(candidate_pairs(3, 30, rng)) == 6
    tight = candidate_pairs(6, 6, rng)
    assert len(tight) == 11
    assert all(j == i + 1 or j == 6 for i, j in tight)
    assert len(candidate_pairs(6, 13, rng)) == 13


def test_pairs_from_one_trace(ferry, ferry_trace, ferry_partial):
    estimated = estimate_traces(GroundTruthTransition(ferry), [ferry_partial])
    pairs = build_pairs(estimated, _size_bridge, ferry.num_actions)
    assert len(pairs) == 6
    first = pairs[0]
    assert first.from_state == ferry_trace.states[0]
    assert first.label_ids == [BOARD_L1]
    goal_pairs = [p for p in pairs if p.to_state == ferry_trace.final]
    assert sorted(p.label_ids[0] for p in goal_pairs) == [BOARD_L1, SAIL_L1_L2, DEBARK_L2]


def test_labels_merge_across_traces():
    a = _estimated([{0}, {1}], [2])
    b = _estimated([{0}, {1}], [4])
    pairs = build_pairs([a, b], _size_bridge, 6)
    assert len(pairs) == 1
    assert pairs[0].label_ids == [2, 4]


def test_budget_caps_long_traces(ferry2, ferry2_data):
    _, traces = ferry2_data
    estimated = estimate_traces(GroundTruthTransition(ferry2), [as_partial(t) for t in traces])
    small = build_pairs(estimated, _size_bridge, ferry2.num_actions, budget_factor=2, seed=1)
    large = build_pairs(estimated, _size_bridge, ferry2.num_actions, budget_factor=10, seed=1)
    assert len(large) <= sum(len(t) * (len(t) + 1) // 2 for t in traces)
    again = build_pairs(estimated, _size_bridge, ferry2.num_actions, budget_factor=2, seed=1)
    assert [(p.from_state, p.to_state) for p in again] == [(p.from_state, p.to_state) for p in small]


def test_pair_inputs_are_validated():
    with pytest.raises(EmptyInput):
        build_pairs([], _size_bridge, 3)
    with pytest.raises(ValueError):
        PairExample(frozenset(), frozenset(), np.zeros(2), np.zeros(2), np.zeros(3, dtype=bool))
    with pytest.raises(EmptyInput):
        train_selector([])


def test_selector_overfits_a_single_pair():
    rng = np.random.default_rng(0)
    labels = np.zeros(5, dtype=bool)
    labels[3] = True
    pair = PairExample(frozenset({0}), frozenset({1}), rng.normal(size=4), rng.normal(size=4), labels)
    settings = SelectorSettings(hidden_sizes=(16, 16), learning_rate=1e-2, epochs=300, tolerance=1e-3)
    net, curve = train_selector([pair], settings, seed=0)
    assert curve[-1] < curve[0]
    top = recommend(net, pair.from_vector, pair.to_vector, 1)
    assert top[0][0] == 3
    assert top[0][1] > 0.9


def test_zero_epochs_keeps_initial_parameters():
    labels = np.array([True, False])
    pair = PairExample(frozenset(), frozenset({0}), np.ones(3), np.zeros(3), labels)
    net, curve = train_selector([pair], SelectorSettings(hidden_sizes=(4,), epochs=0), seed=9)
    fresh = SelectorNet(3, 2, SelectorSettings(hidden_sizes=(4,), epochs=0), seed=np.random.default_rng(9))
    assert curve == []
    assert all(np.array_equal(net.params[n], fresh.params[n]) for n in fresh.params)


def test_selector_training_is_deterministic(ferry, ferry_partial, tiny_selector):
    estimated = estimate_traces(GroundTruthTransition(ferry), [ferry_partial])
    pairs = build_pairs(estimated, _size_bridge, ferry.num_actions)
    a, curve_a = train_selector(pairs, tiny_selector, seed=4)
    b, curve_b = train_selector(pairs, tiny_selector, seed=4)
    assert curve_a == curve_b
    assert np.array_equal(a.confidences(np.ones(2), np.zeros(2)), b.confidences(np.ones(2), np.zeros(2)))


def test_flat_confidences_rank_by_id():
    net = SelectorNet(2, 4, SelectorSettings(hidden_sizes=(3,)))
    for name, value in net.params.items():
        if not name.endswith(".gain"):
            value[...] = 0.0
    assert recommend(net, np.ones(2), np.ones(2), 3) == [(0, 0.5), (1, 0.5), (2, 0.5)]


def test_recommend_orders_by_confidence_then_id():
    selector = FixedSelector([0.2, 0.9, 0.9, 0.1])
    assert recommend(selector, None, None, 3) == [(1, 0.9), (2, 0.9), (0, 0.2)]
    assert len(recommend(selector, None, None, 10)) == 4
    with pytest.raises(ValueError):
        recommend(selector, None, None, 0)


def test_selector_checkpoint(tmp_path, ferry, tiny_selector):
    net = SelectorNet(4, ferry.num_actions, tiny_selector, seed=2, domain_fingerprint=ferry.fingerprint())
    path = tmp_path / "selector.ckpt"
    save_selector(path, net)
    loaded = load_selector(path, ferry.fingerprint())
    x, g = np.linspace(0, 1, 4), np.linspace(1, 0, 4)
    assert np.array_equal(loaded.confidences(x, g), net.confidences(x, g))
    with pytest.raises(FingerprintMismatch):
        load_selector(path, "other")


def test_pairs_export_by_name(tmp_path, ferry, ferry_partial):
    estimated = estimate_traces(GroundTruthTransition(ferry), [ferry_partial])
    path = tmp_path / "pairs.jsonl"
    write_pairs(path, build_pairs(estimated, _size_bridge, ferry.num_actions), ferry)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert first["actions"] == ["board(c1,l1)"]
    assert first["from"] == ["at(c1,l1)", "at-ferry(l1)", "empty-ferry"]
