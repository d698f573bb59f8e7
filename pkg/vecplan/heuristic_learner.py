"""
Goal-driven action selection.

Pairs (s_i, s_j), i < j, of each estimated trace are labeled with the action
executed at s_i. A sigmoid network over [g(s_i) ∥ g(s_j)] learns these
multi-label targets; its per-action confidences rank candidate actions at
planning time.
"""

import dataclasses
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from vecplan.config import SelectorSettings
from vecplan.exceptions import EmptyInput, NonFiniteLoss
from vecplan.psg_learner import EstimatedTrace, check_fingerprint
from vecplan.strips_core import GroundDomain, State
from vecplan.tensor_nn import (
    SIGMOID,
    AdamState,
    MLPSpec,
    Params,
    adam_step,
    as_rng,
    backward_mlp,
    bce_loss,
    forward_mlp,
    init_mlp,
    load_tensors,
    save_tensors,
)

PREFIX: str = "selector"


class ActionSelector(Protocol):
    """Anything that scores every action for a (current, goal) vector pair."""

    num_actions: int

    def confidences(self, from_vector: np.ndarray, goal_vector: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class PairExample:
    from_state: State
    to_state: State
    from_vector: np.ndarray
    to_vector: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if not self.labels.any():
            raise ValueError("A pair example needs at least one positive label")

    @property
    def label_ids(self) -> List[int]:
        return [int(a) for a in np.flatnonzero(self.labels)]


def candidate_pairs(n: int, budget: int, rng: random.Random) -> List[Tuple[int, int]]:
    """
    Index pairs (i, j), 0 <= i < j <= n, kept for a trace with n actions.

    Adjacent pairs and pairs ending at the final state are always kept; the
    remaining pairs are sampled uniformly until `budget` pairs are reached.
    """
    required = {(i, i + 1) for i in range(n)} | {(i, n) for i in range(n)}
    rest = [(i, j) for i in range(n) for j in range(i + 2, n) if (i, j) not in required]
    room = max(0, budget - len(required))
    if room < len(rest):
        rest = rng.sample(rest, room)
    return sorted(required | set(rest))


def build_pairs(
    estimated: Sequence[EstimatedTrace],
    bridge: Callable[[State], np.ndarray],
    num_actions: int,
    budget_factor: int = 10,
    seed: int = 0,
) -> List[PairExample]:
    """
    Labeled state pairs from estimated traces.

    Parameters
    ----------
    estimated : Sequence[EstimatedTrace]
        Decoded traces from the learned transition model.
    bridge : Callable
        Maps a decoded state to its state vector.
    budget_factor : int
        At most ``budget_factor * n`` pairs are kept from a trace with n actions.
    seed : int
        Pair sampling seed; trace t samples from stream ``(seed, t)``.

    Returns
    -------
    List[PairExample]
        One example per distinct (from_state, to_state) pair, in first-seen
        order, with labels merged by union.
    """
    if not estimated:
        raise EmptyInput("No estimated traces to build pairs from")
    labels: Dict[Tuple[State, State], set] = {}
    for t, trace in enumerate(estimated):
        n = len(trace.actions)
        if n == 0:
            continue
        states = trace.state_sets()
        rng = random.Random(f"{seed}/{t}")
        for i, j in candidate_pairs(n, budget_factor * n, rng):
            labels.setdefault((states[i], states[j]), set()).add(trace.actions[i])

    vectors: Dict[State, np.ndarray] = {}

    def vector(state: State) -> np.ndarray:
        if state not in vectors:
            vectors[state] = bridge(state)
        return vectors[state]

    pairs = []
    for (s_from, s_to), actions in labels.items():
        label = np.zeros(num_actions, dtype=bool)
        label[sorted(actions)] = True
        pairs.append(PairExample(s_from, s_to, vector(s_from), vector(s_to), label))
    logger.bind(stage="selector").debug(f"Built {len(pairs)} state pairs from {len(estimated)} traces")
    return pairs


class SelectorNet:
    """Sigmoid multi-label network over [current ∥ goal] state vectors."""

    def __init__(
        self,
        embedding_dim: int,
        num_actions: int,
        settings: Optional[SelectorSettings] = None,
        seed: int = 0,
        params: Optional[Params] = None,
        domain_fingerprint: str = "",
    ):
        self.settings = settings or SelectorSettings()
        self.embedding_dim = embedding_dim
        self.num_actions = num_actions
        self.domain_fingerprint = domain_fingerprint
        self.spec = MLPSpec(
            2 * embedding_dim,
            tuple(self.settings.hidden_sizes),
            num_actions,
            self.settings.layer_norm,
            self.settings.hidden_activation,
            SIGMOID,
        )
        self.params = params if params is not None else init_mlp(self.spec, PREFIX, seed)

    def copy(self) -> "SelectorNet":
        return SelectorNet(
            self.embedding_dim,
            self.num_actions,
            self.settings,
            params={name: value.copy() for name, value in self.params.items()},
            domain_fingerprint=self.domain_fingerprint,
        )

    def confidences(self, from_vector: np.ndarray, goal_vector: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.asarray(from_vector, dtype=np.float64), np.asarray(goal_vector, dtype=np.float64)])
        return forward_mlp(self.spec, self.params, PREFIX, x)[0]


def _pair_arrays(pairs: Sequence[PairExample]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.concatenate([p.from_vector, p.to_vector]) for p in pairs])
    y = np.stack([p.labels for p in pairs]).astype(np.float64)
    return x, y


def train_selector(
    pairs: Sequence[PairExample],
    settings: Optional[SelectorSettings] = None,
    seed: int = 0,
    domain_fingerprint: str = "",
) -> Tuple[SelectorNet, List[float]]:
    """
    Fit a fresh selector with sigmoid cross-entropy and Adam.

    Returns the network and its per-epoch mean loss. With zero epochs the
    network keeps its initial parameters.
    """
    if not pairs:
        raise EmptyInput("Cannot train a selector without pairs")
    settings = settings or SelectorSettings()
    x, y = _pair_arrays(pairs)
    rng = as_rng(seed)
    net = SelectorNet(
        pairs[0].from_vector.size, y.shape[1], settings, seed=rng, domain_fingerprint=domain_fingerprint
    )
    if settings.epochs == 0:
        return net, []

    adam = AdamState(learning_rate=settings.learning_rate)
    mask = np.ones_like(y)
    curve: List[float] = []
    train_log = logger.bind(stage="selector")
    for epoch in range(settings.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(order), settings.batch_size)):
            idx = order[start : start + settings.batch_size]
            out, cache = forward_mlp(net.spec, net.params, PREFIX, x[idx])
            loss, d_out = bce_loss(out, y[idx], mask[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            grads, _ = backward_mlp(net.spec, net.params, PREFIX, cache, d_out)
            adam_step(adam, net.params, grads)
            epoch_loss += loss * len(idx)
        mean_loss = epoch_loss / len(pairs)
        curve.append(mean_loss)
        train_log.debug(f"epoch {epoch + 1}/{settings.epochs} loss={mean_loss:.6g}")
        if mean_loss < settings.tolerance:
            break
    train_log.info(f"Selector trained on {len(pairs)} pairs for {len(curve)} epochs (loss {curve[-1]:.3g})")
    return net, curve


def recommend(
    selector: ActionSelector, from_vector: np.ndarray, goal_vector: np.ndarray, k_top: int
) -> List[Tuple[int, float]]:
    """Top `k_top` actions by descending confidence, ties by ascending id."""
    if k_top < 1:
        raise ValueError("k_top must be at least 1")
    conf = np.asarray(selector.confidences(from_vector, goal_vector), dtype=np.float64)
    ids = np.arange(conf.size)
    order = np.lexsort((ids, -conf))[: min(k_top, conf.size)]
    return [(int(a), float(conf[a])) for a in order]


def write_pairs(path: Union[str, Path], pairs: Sequence[PairExample], domain: GroundDomain) -> None:
    """Export pairs as JSON lines of proposition and action names."""
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            record = {
                "from": domain.state_names(p.from_state),
                "to": domain.state_names(p.to_state),
                "actions": domain.action_names(p.label_ids),
            }
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def save_selector(path: Union[str, Path], selector: SelectorNet) -> None:
    settings = dataclasses.asdict(selector.settings)
    settings["hidden_sizes"] = list(settings["hidden_sizes"])
    meta = {
        "kind": "selector",
        "embedding_dim": selector.embedding_dim,
        "num_actions": selector.num_actions,
        "settings": settings,
        "domain_fingerprint": selector.domain_fingerprint,
    }
    save_tensors(path, selector.params, meta)


def load_selector(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> SelectorNet:
    tensors, meta = load_tensors(path)
    check_fingerprint(meta["domain_fingerprint"], expected_fingerprint)
    settings = dict(meta["settings"])
    settings["hidden_sizes"] = tuple(settings["hidden_sizes"])
    return SelectorNet(
        meta["embedding_dim"],
        meta["num_actions"],
        SelectorSettings(**settings),
        params=tensors,
        domain_fingerprint=meta["domain_fingerprint"],
    )
