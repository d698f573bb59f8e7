import dataclasses
import random

import numpy as np
import pytest
from conftest import AT_C1_L1, EMPTY, FERRY_L1, FERRY_L2, ON_C1, SAIL_L1_L2

from vecplan.config import OBSERVATION_PERCENTAGES, LearnerSettings
from vecplan.domains import build_domain, get_family
from vecplan.exceptions import ConfigError, EmptyInput, FingerprintMismatch, NonFiniteLoss, ShapeMismatch
from vecplan.oracles import GroundTruthTransition
from vecplan.psg_learner import (
    INFERENCE,
    TRAINING,
    PropStateGraph,
    SequenceModel,
    attrs_to_state,
    decode,
    entry_losses,
    load_model,
    loss_targets,
    save_model,
    sequence_loss,
    state_to_attrs,
    trace_loss,
    train,
    transition,
    unroll,
)
from vecplan.strips_core import applicable, apply
from vecplan.tensor_nn import numeric_gradient
from vecplan.trace_pipeline import PartialTrace, PlanTrace, as_partial, mask_trace


def _model(domain, settings, seed=0):
    return SequenceModel(domain.num_propositions, domain.num_actions, settings, seed=seed)


def test_decode_threshold_is_inclusive(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    assert decode(model, np.array([0.49, 0.5, 0.51, 0.0])).tolist() == [False, True, True, False]


def test_state_attr_conversions():
    attrs = state_to_attrs({0, 3}, 5)
    assert attrs.dtype == bool and attrs.tolist() == [True, False, False, True, False]
    assert attrs_to_state(attrs) == frozenset({0, 3})


def test_same_seed_same_model(ferry, tiny_learner):
    a, b = _model(ferry, tiny_learner, seed=4), _model(ferry, tiny_learner, seed=4)
    assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params)
    c = _model(ferry, tiny_learner, seed=5)
    assert not np.array_equal(a.params["prop_vectors"], c.params["prop_vectors"])


def test_embeddings_start_within_bound(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    assert model.params["prop_vectors"].shape == (6, 4)
    assert np.all(np.abs(model.params["action_vectors"]) <= tiny_learner.init_bound)


def test_zeroed_state_network_gives_zero_vector(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    for name in model.params:
        if name.startswith("state_net.") and not name.endswith(".gain"):
            model.params[name][...] = 0.0
    s = model.state_update(state_to_attrs({AT_C1_L1, FERRY_L1}, 6).astype(float))
    assert np.array_equal(s, np.zeros(4))


def test_edge_probabilities_are_open_unit_interval(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    attrs = state_to_attrs({AT_C1_L1, FERRY_L1, EMPTY}, 6).astype(float)
    p = model.edge_update(attrs, model.state_update(attrs), SAIL_L1_L2)
    assert p.shape == (6,)
    assert np.all((p > 0) & (p < 1))


def test_shape_checks(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    with pytest.raises(ShapeMismatch):
        model.state_update(np.zeros(5))
    with pytest.raises(ShapeMismatch):
        model.edge_update(np.zeros(6), np.zeros(3), 0)
    with pytest.raises(ValueError):
        model.edge_update(np.zeros(6), np.zeros(4), 6)


def test_graph_state_vector_follows_edges(ferry, tiny_learner):
    model = _model(ferry, tiny_learner)
    attrs = state_to_attrs({ON_C1, FERRY_L1}, 6)
    graph = PropStateGraph.build(model, attrs).with_action(SAIL_L1_L2)
    assert graph.pending_action == SAIL_L1_L2
    assert np.array_equal(graph.state_vector, model.state_update(attrs.astype(float)))
    moved = graph.with_edges(model, state_to_attrs({ON_C1}, 6))
    assert moved.pending_action is None
    assert not np.array_equal(moved.state_vector, graph.state_vector)


def test_transition_matches_ground_truth(ferry):
    oracle = GroundTruthTransition(ferry)
    nxt, vector = transition(oracle, state_to_attrs({AT_C1_L1, FERRY_L1, EMPTY}, 6), SAIL_L1_L2)
    assert attrs_to_state(nxt) == {AT_C1_L1, FERRY_L2, EMPTY}
    assert np.array_equal(vector, nxt.astype(float))


def test_unroll_with_exact_transitions_recovers_states(ferry, ferry_trace, ferry_partial):
    estimated = unroll(GroundTruthTransition(ferry), ferry_partial)
    assert estimated.state_sets() == list(ferry_trace.states)
    assert len(estimated.edge_probabilities) == len(ferry_trace.states)
    assert len(estimated.state_vectors) == len(ferry_trace.states)


def test_unroll_anchors_endpoints(ferry, ferry_trace, ferry_partial, tiny_learner):
    for mode in (INFERENCE, TRAINING):
        estimated = unroll(_model(ferry, tiny_learner), ferry_partial, mode)
        states = estimated.state_sets()
        assert states[0] == ferry_trace.initial
        assert states[-1] == ferry_trace.final
        assert len(states) == 4


def test_unroll_of_empty_trace(ferry, ferry_trace, tiny_learner):
    trace = PartialTrace(ferry_trace.initial, ferry_trace.initial, (), ())
    estimated = unroll(_model(ferry, tiny_learner), trace)
    assert estimated.state_sets() == [ferry_trace.initial]
    with pytest.raises(ValueError):
        unroll(_model(ferry, tiny_learner), trace, "sampling")


def test_exact_transitions_have_near_zero_loss(ferry, ferry_partial, ferry_trace):
    oracle = GroundTruthTransition(ferry)
    assert trace_loss(oracle, ferry_partial) < 1e-5
    assert trace_loss(oracle, as_partial(ferry_trace), absent_as_negative=True) < 1e-5


def test_loss_mask_counts(ferry_partial):
    targets, mask = loss_targets(ferry_partial, 6)
    assert mask.sum(axis=1).tolist() == [1.0, 1.0, 6.0]
    assert targets[0, ON_C1] == 1.0
    assert targets[2].sum() == 3.0
    _, full = loss_targets(ferry_partial, 6, absent_as_negative=True)
    assert full.sum() == 18.0


def test_sequence_loss_agrees_with_interface_loss(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    loss, _ = sequence_loss(model, ferry_partial)
    assert loss == pytest.approx(trace_loss(model, ferry_partial))


TOY_DOMAINS = [("ferry", {"cars": 1, "locations": 2}), ("zeno", {"cities": 2, "people": 1})]


def _toy_case(seed: int):
    """A small domain, a random walk through it and random learner flags."""
    rng = np.random.default_rng(seed)
    family, sizes = TOY_DOMAINS[seed % len(TOY_DOMAINS)]
    domain = build_domain(family, sizes)
    start = get_family(family).sample(domain, random.Random(seed), **sizes).initial
    states, actions = [start], []
    for _ in range(int(rng.integers(1, 5))):
        options = sorted(applicable(domain, states[-1]))
        actions.append(options[int(rng.integers(0, len(options)))])
        states.append(apply(domain, states[-1], actions[-1]))
    pct = OBSERVATION_PERCENTAGES[int(rng.integers(0, len(OBSERVATION_PERCENTAGES)))]
    partial = mask_trace(PlanTrace(tuple(states), tuple(actions)), pct, seed)
    settings = LearnerSettings(
        embedding_dim=int(rng.integers(1, 4)),
        hidden_sizes=tuple(int(h) for h in rng.integers(2, 4, size=int(rng.integers(1, 3)))),
        layer_norm=bool(rng.integers(0, 2)),
        hidden_activation="tanh",
        absent_as_negative=bool(rng.integers(0, 2)),
        teacher_forcing=bool(rng.integers(0, 2)),
    )
    return _model(domain, settings, seed=seed), partial


@pytest.mark.parametrize("seed", range(100))
def test_sequence_gradient(seed):
    model, partial = _toy_case(seed)
    assert model.num_propositions <= 6
    _, grads = sequence_loss(model, partial)
    assert set(grads) == set(model.params)
    for name, value in model.params.items():
        numeric = numeric_gradient(lambda: sequence_loss(model, partial)[0], value, h=1e-5)
        assert np.allclose(grads[name], numeric, rtol=1e-4, atol=1e-7), name


def test_dropping_an_observation_only_drops_its_entry(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    fewer = dataclasses.replace(ferry_partial, observations=(frozenset(), ferry_partial.observations[1]))
    full_terms, fewer_terms = entry_losses(model, ferry_partial), entry_losses(model, fewer)
    assert full_terms[0, ON_C1] > 0.0 and fewer_terms[0, ON_C1] == 0.0
    changed = np.zeros_like(full_terms, dtype=bool)
    changed[0, ON_C1] = True
    assert np.array_equal(full_terms[~changed], fewer_terms[~changed])
    # the loss is the masked mean of the entry terms
    assert trace_loss(model, ferry_partial) == pytest.approx(full_terms.sum() / 8)
    assert trace_loss(model, fewer) == pytest.approx(fewer_terms.sum() / 7)


def test_empty_trace_has_no_loss(ferry, ferry_trace, tiny_learner):
    trace = PartialTrace(ferry_trace.initial, ferry_trace.initial, (), ())
    assert sequence_loss(_model(ferry, tiny_learner), trace) == (0.0, {})


def test_zero_epochs_returns_untouched_copy(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    trained, curve = train(model, [ferry_partial], dataclasses.replace(tiny_learner, epochs=0))
    assert curve == []
    assert trained is not model
    assert all(np.array_equal(trained.params[n], model.params[n]) for n in model.params)


def test_training_is_deterministic(ferry2, ferry2_data, tiny_learner):
    _, traces = ferry2_data
    data = [as_partial(t) for t in traces]
    model = _model(ferry2, tiny_learner, seed=1)
    first, curve_a = train(model, data, seed=2)
    second, curve_b = train(model, data, seed=2)
    assert curve_a == curve_b
    assert all(np.array_equal(first.params[n], second.params[n]) for n in first.params)


def test_training_reduces_loss(ferry2, ferry2_data):
    _, traces = ferry2_data
    settings = LearnerSettings(embedding_dim=8, hidden_sizes=(16,), learning_rate=1e-2, batch_size=4, epochs=30)
    _, curve = train(_model(ferry2, settings), [as_partial(t) for t in traces], seed=0)
    assert curve[-1] < curve[0]


def test_nan_parameters_abort_training(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    model.params["edge_net.dense0.bias"][:] = np.nan
    with pytest.raises(NonFiniteLoss) as err:
        train(model, [ferry_partial])
    assert err.value.epoch == 0 and err.value.batch == 0


def test_empty_dataset(ferry, tiny_learner):
    with pytest.raises(EmptyInput):
        train(_model(ferry, tiny_learner), [])


def test_checkpoint_round_trip(tmp_path, ferry, ferry_partial, tiny_learner):
    model = SequenceModel(6, 6, tiny_learner, seed=3, domain_fingerprint=ferry.fingerprint())
    path = tmp_path / "model.ckpt"
    save_model(path, model)
    loaded = load_model(path, expected_fingerprint=ferry.fingerprint())
    assert loaded.settings == model.settings
    assert trace_loss(loaded, ferry_partial) == trace_loss(model, ferry_partial)
    with pytest.raises(FingerprintMismatch):
        load_model(path, expected_fingerprint="0" * 64)


def test_training_adopts_new_settings(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    settings = dataclasses.replace(tiny_learner, decode_threshold=0.7, learning_rate=5e-2, epochs=1)
    trained, _ = train(model, [ferry_partial], settings)
    assert trained.settings is settings
    assert model.settings is tiny_learner
    assert decode(trained, np.array([0.6, 0.7])).tolist() == [False, True]


def test_training_rejects_a_different_architecture(ferry, ferry_partial, tiny_learner):
    model = _model(ferry, tiny_learner)
    with pytest.raises(ConfigError, match="embedding_dim"):
        train(model, [ferry_partial], dataclasses.replace(tiny_learner, embedding_dim=5))
    # a list spelling of the same hidden sizes is the same architecture
    train(model, [ferry_partial], dataclasses.replace(tiny_learner, hidden_sizes=[8], epochs=0))
