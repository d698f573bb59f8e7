"""
Proposition-state graph sequence model.

A state is encoded by its edge attributes E (one per proposition, 1 when the
proposition holds). The state network maps the interleaved layout
[p_1, e_1, p_2, e_2, ...] to a state vector s; the edge network, shared
across edges, maps each row [e_j, s, p_j, a] to the probability that p_j
holds after applying action a. Decoding thresholds those probabilities.

Training unrolls a trace softly: the probabilities of one step are the edge
attributes of the next, so gradients reach every step. Inference feeds the
decoded booleans forward instead.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from vecplan.config import LearnerSettings
from vecplan.exceptions import ConfigError, EmptyInput, FingerprintMismatch, NonFiniteLoss, ShapeMismatch
from vecplan.tensor_nn import (
    LINEAR,
    SIGMOID,
    AdamState,
    MLPSpec,
    Params,
    adam_step,
    add_grads,
    as_rng,
    backward_mlp,
    bce_loss,
    bce_terms,
    forward_mlp,
    init_mlp,
    init_uniform,
    load_tensors,
    save_tensors,
    scale_grads,
)
from vecplan.trace_pipeline import PartialTrace

# settings fixed once the parameter tensors exist
ARCHITECTURE_FIELDS: Tuple[str, ...] = (
    "embedding_dim",
    "hidden_sizes",
    "layer_norm",
    "hidden_activation",
    "init_bound",
)
INFERENCE: str = "inference"
TRAINING: str = "training"


class TransitionModel(Protocol):
    """What unrolling, extraction and planning need from a transition model."""

    num_propositions: int
    decode_threshold: float

    def state_update(self, attrs: np.ndarray) -> np.ndarray: ...

    def edge_update(self, attrs: np.ndarray, state_vector: np.ndarray, action: int) -> np.ndarray: ...


class SequenceModel:
    """
    Embedding tables plus the state and edge networks.

    Parameters
    ----------
    num_propositions, num_actions : int
        Sizes of the ground domain the model is trained on.
    settings : LearnerSettings
        Embedding size, hidden layers, init bound and decode threshold.
    seed : int
        Initialization seed; ignored when `params` is given.
    params : Params, optional
        Existing parameter table (e.g. from a checkpoint).
    domain_fingerprint : str
        Fingerprint of the ground domain, checked when loading.
    """

    def __init__(
        self,
        num_propositions: int,
        num_actions: int,
        settings: Optional[LearnerSettings] = None,
        seed: int = 0,
        params: Optional[Params] = None,
        domain_fingerprint: str = "",
    ):
        self.settings = settings or LearnerSettings()
        self.num_propositions = num_propositions
        self.num_actions = num_actions
        self.domain_fingerprint = domain_fingerprint
        k = self.settings.embedding_dim
        hidden = tuple(self.settings.hidden_sizes)
        self.state_spec = MLPSpec(
            num_propositions * (k + 1),
            hidden,
            k,
            self.settings.layer_norm,
            self.settings.hidden_activation,
            LINEAR,
        )
        self.edge_spec = MLPSpec(
            1 + 3 * k, hidden, 1, self.settings.layer_norm, self.settings.hidden_activation, SIGMOID
        )
        if params is None:
            rng = as_rng(seed)
            params = {
                "prop_vectors": init_uniform((num_propositions, k), self.settings.init_bound, rng),
                "action_vectors": init_uniform((num_actions, k), self.settings.init_bound, rng),
            }
            params.update(init_mlp(self.state_spec, "state_net", rng))
            params.update(init_mlp(self.edge_spec, "edge_net", rng))
        self.params = params
        self._check_shapes()

    def _check_shapes(self) -> None:
        k = self.settings.embedding_dim
        expected = {
            "prop_vectors": (self.num_propositions, k),
            "action_vectors": (self.num_actions, k),
        }
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeMismatch(f"'{name}' has shape {self.params[name].shape}, expected {shape}")

    @property
    def embedding_dim(self) -> int:
        return self.settings.embedding_dim

    @property
    def decode_threshold(self) -> float:
        return self.settings.decode_threshold

    def copy(self) -> "SequenceModel":
        return SequenceModel(
            self.num_propositions,
            self.num_actions,
            self.settings,
            params={name: value.copy() for name, value in self.params.items()},
            domain_fingerprint=self.domain_fingerprint,
        )

    # -- forward pieces ---------------------------------------------------

    def _attrs(self, attrs: np.ndarray) -> np.ndarray:
        attrs = np.asarray(attrs, dtype=np.float64)
        if attrs.shape != (self.num_propositions,):
            raise ShapeMismatch(
                f"Expected {self.num_propositions} edge attributes, got shape {attrs.shape}"
            )
        return attrs

    def _state_forward(self, attrs: np.ndarray):
        x = np.concatenate([self.params["prop_vectors"], attrs[:, None]], axis=1).ravel()
        return forward_mlp(self.state_spec, self.params, "state_net", x)

    def _edge_forward(self, attrs: np.ndarray, state_vector: np.ndarray, action: int):
        if not 0 <= action < self.num_actions:
            raise ValueError(f"Action id {action} outside [0, {self.num_actions})")
        state_vector = np.asarray(state_vector, dtype=np.float64)
        if state_vector.shape != (self.embedding_dim,):
            raise ShapeMismatch(
                f"Expected a state vector of size {self.embedding_dim}, got shape {state_vector.shape}"
            )
        n = self.num_propositions
        rows = np.concatenate(
            [
                attrs[:, None],
                np.broadcast_to(state_vector, (n, self.embedding_dim)),
                self.params["prop_vectors"],
                np.broadcast_to(self.params["action_vectors"][action], (n, self.embedding_dim)),
            ],
            axis=1,
        )
        out, cache = forward_mlp(self.edge_spec, self.params, "edge_net", rows)
        return out[:, 0], cache

    def state_update(self, attrs: np.ndarray) -> np.ndarray:
        return self._state_forward(self._attrs(attrs))[0]

    def edge_update(self, attrs: np.ndarray, state_vector: np.ndarray, action: int) -> np.ndarray:
        return self._edge_forward(self._attrs(attrs), state_vector, action)[0]


@dataclass(frozen=True)
class PropStateGraph:
    """
    One state vertex, all proposition vertexes and the pending action.

    Build with ``PropStateGraph.build`` or ``with_edges`` so the state vector
    always matches the edge attributes.
    """

    edge_attrs: np.ndarray
    state_vector: np.ndarray
    pending_action: Optional[int] = None

    @classmethod
    def build(cls, model: TransitionModel, attrs: np.ndarray, pending_action: Optional[int] = None):
        attrs = np.asarray(attrs, dtype=np.float64)
        return cls(attrs, model.state_update(attrs), pending_action)

    def with_edges(self, model: TransitionModel, attrs: np.ndarray) -> "PropStateGraph":
        return PropStateGraph.build(model, attrs)

    def with_action(self, action: int) -> "PropStateGraph":
        return dataclasses.replace(self, pending_action=action)


@dataclass(frozen=True)
class EstimatedTrace:
    actions: Tuple[int, ...]
    decoded_states: Tuple[np.ndarray, ...]
    edge_probabilities: Tuple[np.ndarray, ...]
    state_vectors: Tuple[np.ndarray, ...]

    def state_sets(self) -> List[frozenset]:
        return [attrs_to_state(d) for d in self.decoded_states]


def state_to_attrs(state, num_propositions: int) -> np.ndarray:
    attrs = np.zeros(num_propositions, dtype=bool)
    attrs[list(state)] = True
    return attrs


def attrs_to_state(attrs: np.ndarray) -> frozenset:
    return frozenset(int(j) for j in np.flatnonzero(attrs))


def state_update(model: TransitionModel, attrs: np.ndarray) -> np.ndarray:
    return model.state_update(attrs)


def edge_update(model: TransitionModel, attrs: np.ndarray, state_vector: np.ndarray, action: int) -> np.ndarray:
    return model.edge_update(attrs, state_vector, action)


def decode(model: TransitionModel, probabilities: np.ndarray) -> np.ndarray:
    """Threshold at the model's decode threshold; ties map to true."""
    return np.asarray(probabilities) >= model.decode_threshold


def transition(model: TransitionModel, attrs: np.ndarray, action: int) -> Tuple[np.ndarray, np.ndarray]:
    """f(s, a): decoded next attributes and their state vector."""
    s = model.state_update(np.asarray(attrs, dtype=np.float64))
    nxt = decode(model, model.edge_update(np.asarray(attrs, dtype=np.float64), s, action))
    return nxt, model.state_update(nxt.astype(np.float64))


def unroll(model: TransitionModel, trace: PartialTrace, mode: str = INFERENCE) -> EstimatedTrace:
    """
    Run the model along the trace's actions from its fully observed s_0.

    In inference mode each step consumes the decoded state of the previous
    one; in training mode it consumes the raw probabilities. Either way the
    first and last decoded states are the observed endpoints.
    """
    if mode not in (INFERENCE, TRAINING):
        raise ValueError(f"Unknown unroll mode '{mode}'")
    n_props = model.num_propositions
    initial = state_to_attrs(trace.initial, n_props)
    decoded = [initial]
    probabilities = [initial.astype(np.float64)]
    graph = PropStateGraph.build(model, initial)
    vectors = [graph.state_vector]

    carried = initial.astype(np.float64)
    for i, a in enumerate(trace.actions):
        p = model.edge_update(carried, model.state_update(carried), a)
        probabilities.append(p)
        if i == len(trace.actions) - 1:
            d = state_to_attrs(trace.final, n_props)
        else:
            d = decode(model, p)
        decoded.append(d)
        graph = graph.with_edges(model, d)
        vectors.append(graph.state_vector)
        carried = d.astype(np.float64) if mode == INFERENCE else p

    return EstimatedTrace(tuple(trace.actions), tuple(decoded), tuple(probabilities), tuple(vectors))


def loss_targets(
    trace: PartialTrace, num_propositions: int, absent_as_negative: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Targets and mask for the n predicted states of a trace.

    Row i labels the prediction of state i+1. The final row covers every
    proposition. Intermediate rows mark observed propositions positive and
    leave the rest out of the loss unless `absent_as_negative` is set.
    """
    n = len(trace.actions)
    targets = np.zeros((n, num_propositions))
    mask = np.zeros((n, num_propositions))
    for i in range(n):
        if i == n - 1:
            targets[i, list(trace.final)] = 1.0
            mask[i] = 1.0
        else:
            observed = list(trace.observations[i])
            targets[i, observed] = 1.0
            if absent_as_negative:
                mask[i] = 1.0
            else:
                mask[i, observed] = 1.0
    return targets, mask


def _soft_outputs(model: TransitionModel, trace: PartialTrace) -> np.ndarray:
    carried = state_to_attrs(trace.initial, model.num_propositions).astype(np.float64)
    outputs = []
    for a in trace.actions:
        carried = model.edge_update(carried, model.state_update(carried), a)
        outputs.append(carried)
    return np.stack(outputs)


def trace_loss(model: TransitionModel, trace: PartialTrace, absent_as_negative: bool = False) -> float:
    """Loss of a soft unroll using only the TransitionModel interface."""
    if not trace.actions:
        return 0.0
    targets, mask = loss_targets(trace, model.num_propositions, absent_as_negative)
    return bce_loss(_soft_outputs(model, trace), targets, mask)[0]


def entry_losses(model: TransitionModel, trace: PartialTrace, absent_as_negative: bool = False) -> np.ndarray:
    """
    Per-entry loss terms of a soft unroll, shape (n, |P|).

    Row i holds the contribution of each proposition to the prediction of
    state i+1, zero outside the loss mask. ``trace_loss`` is their sum over
    the number of masked entries. Predictions never read the observations,
    so changing one observation set only changes that set's own entries.
    """
    n_props = model.num_propositions
    if not trace.actions:
        return np.zeros((0, n_props))
    targets, mask = loss_targets(trace, n_props, absent_as_negative)
    return bce_terms(_soft_outputs(model, trace), targets, mask)


def sequence_loss(model: SequenceModel, trace: PartialTrace) -> Tuple[float, Params]:
    """
    Masked cross-entropy of a soft unroll and its gradient for every tensor.

    With teacher forcing on, observed propositions are reset to 1 before
    they are fed to the next step; no gradient flows through reset entries.
    """
    settings = model.settings
    n_props, k = model.num_propositions, model.embedding_dim
    if not trace.actions:
        return 0.0, {}

    steps = []
    outputs = []
    carried = state_to_attrs(trace.initial, n_props).astype(np.float64)
    for i, a in enumerate(trace.actions):
        s, state_cache = model._state_forward(carried)
        p, edge_cache = model._edge_forward(carried, s, a)
        outputs.append(p)
        forced = None
        nxt = p
        if settings.teacher_forcing and i < len(trace.actions) - 1 and trace.observations[i]:
            forced = np.array(sorted(trace.observations[i]))
            nxt = p.copy()
            nxt[forced] = 1.0
        steps.append((a, state_cache, edge_cache, forced))
        carried = nxt

    targets, mask = loss_targets(trace, n_props, settings.absent_as_negative)
    loss, d_outputs = bce_loss(np.stack(outputs), targets, mask)

    grads: Params = {}
    d_props = np.zeros_like(model.params["prop_vectors"])
    d_actions = np.zeros_like(model.params["action_vectors"])
    carry = np.zeros(n_props)
    for i in range(len(steps) - 1, -1, -1):
        a, state_cache, edge_cache, forced = steps[i]
        d_p = d_outputs[i] + carry
        edge_grads, d_rows = backward_mlp(model.edge_spec, model.params, "edge_net", edge_cache, d_p[:, None])
        add_grads(grads, edge_grads)
        d_attrs = d_rows[:, 0].copy()
        d_state = d_rows[:, 1 : 1 + k].sum(axis=0)
        d_props += d_rows[:, 1 + k : 1 + 2 * k]
        d_actions[a] += d_rows[:, 1 + 2 * k :].sum(axis=0)

        state_grads, d_x = backward_mlp(model.state_spec, model.params, "state_net", state_cache, d_state)
        add_grads(grads, state_grads)
        d_x = d_x.reshape(n_props, k + 1)
        d_props += d_x[:, :k]
        d_attrs += d_x[:, k]

        # d_attrs is the gradient w.r.t. the input of step i, i.e. the
        # (possibly reset) output of step i-1
        if i > 0:
            prev_forced = steps[i - 1][3]
            if prev_forced is not None:
                d_attrs[prev_forced] = 0.0
        carry = d_attrs

    grads["prop_vectors"] = d_props
    grads["action_vectors"] = d_actions
    return loss, grads


def _normalized(value):
    return tuple(value) if isinstance(value, list) else value


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train(
    model: SequenceModel,
    dataset: Sequence[PartialTrace],
    settings: Optional[LearnerSettings] = None,
    seed: int = 0,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Tuple[SequenceModel, List[float]]:
    """
    Fit the model to partially observed traces with Adam.

    Training runs on a copy. It stops after ``settings.epochs`` epochs or as
    soon as an epoch's mean trace loss drops below ``settings.tolerance``.

    Returns
    -------
    (SequenceModel, List[float])
        The trained copy and the per-epoch mean loss.

    Raises
    ------
    NonFiniteLoss
        If a batch loss is NaN or infinite.
    ConfigError
        If `settings` changes a field listed in ``ARCHITECTURE_FIELDS``.
    """
    if not dataset:
        raise EmptyInput("Cannot train on an empty dataset")
    settings = settings or model.settings
    for name in ARCHITECTURE_FIELDS:
        if _normalized(getattr(settings, name)) != _normalized(getattr(model.settings, name)):
            raise ConfigError(
                f"Learner.{name} is {getattr(settings, name)!r} but the model was built with "
                f"{getattr(model.settings, name)!r}"
            )
    model = model.copy()
    model.settings = settings
    if settings.epochs == 0:
        return model, []

    rng = np.random.default_rng(seed)
    adam = AdamState(learning_rate=settings.learning_rate)
    curve: List[float] = []
    train_log = logger.bind(stage="train")
    for epoch in range(settings.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for b, batch in enumerate(_batches(order, settings.batch_size)):
            total: Params = {}
            batch_loss = 0.0
            for idx in batch:
                loss, grads = sequence_loss(model, dataset[idx])
                batch_loss += loss
                add_grads(total, grads)
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(epoch, b, batch_loss)
            adam_step(adam, model.params, scale_grads(total, 1.0 / len(batch)))
            epoch_loss += batch_loss
        mean_loss = epoch_loss / len(dataset)
        curve.append(mean_loss)
        train_log.debug(f"epoch {epoch + 1}/{settings.epochs} loss={mean_loss:.6g}")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        if mean_loss < settings.tolerance:
            train_log.info(f"Converged after {epoch + 1} epochs (loss {mean_loss:.3g})")
            break
    else:
        train_log.info(f"Stopped at epoch cap {settings.epochs} (loss {curve[-1]:.3g})")
    return model, curve


# ------------------------------------------------------------ checkpoints


def model_meta(model: SequenceModel) -> dict:
    settings = dataclasses.asdict(model.settings)
    settings["hidden_sizes"] = list(settings["hidden_sizes"])
    return {
        "kind": "sequence_model",
        "num_propositions": model.num_propositions,
        "num_actions": model.num_actions,
        "settings": settings,
        "domain_fingerprint": model.domain_fingerprint,
    }


def model_from_checkpoint(tensors: Params, meta: dict) -> SequenceModel:
    settings = dict(meta["settings"])
    settings["hidden_sizes"] = tuple(settings["hidden_sizes"])
    return SequenceModel(
        meta["num_propositions"],
        meta["num_actions"],
        LearnerSettings(**settings),
        params=tensors,
        domain_fingerprint=meta["domain_fingerprint"],
    )


def check_fingerprint(found: str, expected: Optional[str]) -> None:
    if expected is not None and found != expected:
        raise FingerprintMismatch(expected, found)


def save_model(path: Union[str, Path], model: SequenceModel) -> None:
    save_tensors(path, model.params, model_meta(model))


def load_model(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> SequenceModel:
    tensors, meta = load_tensors(path)
    check_fingerprint(meta["domain_fingerprint"], expected_fingerprint)
    return model_from_checkpoint(tensors, meta)
