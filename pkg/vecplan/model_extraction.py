"""
Learned domain model: preconditions, applicability and the state bridge.

pre(a) is the intersection of the decoded states in which `a` executes
across the estimated training traces. Actions that never occur get no
precondition and are never applicable.
"""

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Union

import numpy as np
from loguru import logger

from vecplan.psg_learner import (
    INFERENCE,
    EstimatedTrace,
    SequenceModel,
    TransitionModel,
    attrs_to_state,
    check_fingerprint,
    model_from_checkpoint,
    model_meta,
    state_to_attrs,
    unroll,
)
from vecplan.strips_core import GroundDomain, State
from vecplan.tensor_nn import load_tensors, save_tensors
from vecplan.trace_pipeline import PartialTrace

StateLike = Union[State, Iterable[int], np.ndarray]


@dataclass(frozen=True)
class LearnedDomainModel:
    sequence_model: TransitionModel
    preconditions: Dict[int, FrozenSet[int]]
    occurrence_counts: Dict[int, int] = field(default_factory=dict)

    @property
    def seen_actions(self) -> FrozenSet[int]:
        return frozenset(self.preconditions)

    @property
    def num_propositions(self) -> int:
        return self.sequence_model.num_propositions


def as_state(state: StateLike) -> State:
    """Accept a proposition-id set or a boolean edge-attribute vector."""
    if isinstance(state, np.ndarray):
        return attrs_to_state(state)
    return frozenset(state)


def estimate_traces(model: TransitionModel, dataset: Sequence[PartialTrace]) -> List[EstimatedTrace]:
    return [unroll(model, trace, INFERENCE) for trace in dataset]


def extract_preconditions(estimated: Sequence[EstimatedTrace]) -> Dict[int, FrozenSet[int]]:
    """Intersect, per action, the decoded states it was executed in."""
    pre: Dict[int, FrozenSet[int]] = {}
    for trace in estimated:
        states = trace.state_sets()
        for i, a in enumerate(trace.actions):
            pre[a] = states[i] if a not in pre else pre[a] & states[i]
    return dict(sorted(pre.items()))


def action_occurrences(estimated: Sequence[EstimatedTrace]) -> Dict[int, int]:
    counts = Counter(a for trace in estimated for a in trace.actions)
    return dict(sorted(counts.items()))


def learned_applicable(learned: LearnedDomainModel, state: StateLike) -> Set[int]:
    """α(s) = {a seen in training | pre(a) ⊆ s}."""
    s = as_state(state)
    return {a for a, pre in learned.preconditions.items() if pre <= s}


def bridge_state(model: TransitionModel, state: StateLike) -> np.ndarray:
    """g(s): the state vector of any decoded state, seen or not."""
    if isinstance(state, np.ndarray) and state.dtype != bool:
        attrs = state.astype(np.float64)
    else:
        attrs = state_to_attrs(as_state(state), model.num_propositions).astype(np.float64)
    return model.state_update(attrs)


def learned_model_from_estimates(model: TransitionModel, estimated: Sequence[EstimatedTrace]) -> LearnedDomainModel:
    learned = LearnedDomainModel(model, extract_preconditions(estimated), action_occurrences(estimated))
    logger.bind(stage="extract").info(
        f"Extracted preconditions for {len(learned.preconditions)} actions from {len(estimated)} traces"
    )
    return learned


def build_learned_model(model: TransitionModel, dataset: Sequence[PartialTrace]) -> LearnedDomainModel:
    return learned_model_from_estimates(model, estimate_traces(model, dataset))


def precondition_report(learned: LearnedDomainModel, domain: GroundDomain, compare_truth: bool = True) -> str:
    """
    Human-readable listing of pre(a) by name.

    With `compare_truth` each action also lists the true preconditions the
    learned set misses and the extra propositions it demands.
    """
    lines = [f"# learned preconditions for {domain.name}"]
    lines.append(f"# seen actions: {len(learned.seen_actions)}/{domain.num_actions}")
    for a, pre in learned.preconditions.items():
        action = domain.actions[a]
        count = learned.occurrence_counts.get(a, 0)
        lines.append(f"{action.name} (seen {count}x)")
        lines.append("  pre: " + " ".join(domain.state_names(pre)))
        if compare_truth:
            missing = action.precondition - pre
            extra = pre - action.precondition
            if missing:
                lines.append("  missing: " + " ".join(domain.state_names(missing)))
            if extra:
                lines.append("  extra: " + " ".join(domain.state_names(extra)))
    unseen = [domain.actions[a].name for a in range(domain.num_actions) if a not in learned.preconditions]
    if unseen:
        lines.append("# never observed: " + " ".join(unseen))
    return "\n".join(lines) + "\n"


def save_learned_model(path: Union[str, Path], learned: LearnedDomainModel) -> None:
    """Write the sequence model tensors plus preconditions and counts."""
    if not isinstance(learned.sequence_model, SequenceModel):
        raise TypeError("Only SequenceModel-backed learned models can be saved")
    meta = model_meta(learned.sequence_model)
    meta["kind"] = "learned_model"
    meta["preconditions"] = {str(a): sorted(pre) for a, pre in learned.preconditions.items()}
    meta["occurrence_counts"] = {str(a): c for a, c in learned.occurrence_counts.items()}
    save_tensors(path, learned.sequence_model.params, meta)


def load_learned_model(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> LearnedDomainModel:
    tensors, meta = load_tensors(path)
    check_fingerprint(meta["domain_fingerprint"], expected_fingerprint)
    model = model_from_checkpoint(tensors, meta)
    preconditions = {int(a): frozenset(pre) for a, pre in meta.get("preconditions", {}).items()}
    counts = {int(a): c for a, c in meta.get("occurrence_counts", {}).items()}
    return LearnedDomainModel(model, dict(sorted(preconditions.items())), dict(sorted(counts.items())))
