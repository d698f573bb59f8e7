"""
Ground-truth stand-ins for the learned components.

`GroundTruthTransition` answers the transition-model interface with exact
STRIPS effects and uses the edge attributes themselves as the state vector;
`OracleSelector` puts all its confidence on the first action of a shortest
plan. Together with the true preconditions they bound what the planner can
achieve with perfect learning.
"""

from typing import Dict, Tuple

import numpy as np

from vecplan.exceptions import BudgetExceeded, Unsolvable
from vecplan.model_extraction import LearnedDomainModel
from vecplan.psg_learner import attrs_to_state
from vecplan.strips_core import BFS, GroundDomain, Instance, State, oracle_plan
from vecplan.tensor_nn import PROB_CLAMP


class GroundTruthTransition:
    decode_threshold: float = 0.5

    def __init__(self, domain: GroundDomain):
        self.domain = domain
        self.num_propositions = domain.num_propositions

    def state_update(self, attrs: np.ndarray) -> np.ndarray:
        return np.asarray(attrs, dtype=np.float64).copy()

    def edge_update(self, attrs: np.ndarray, state_vector: np.ndarray, action: int) -> np.ndarray:
        state = attrs_to_state(np.asarray(attrs) >= self.decode_threshold)
        act = self.domain.actions[action]
        nxt = (state - act.del_effects) | act.add_effects
        p = np.full(self.num_propositions, PROB_CLAMP)
        p[sorted(nxt)] = 1.0 - PROB_CLAMP
        return p


class OracleSelector:
    def __init__(self, domain: GroundDomain, budget: int = 50_000):
        self.domain = domain
        self.num_actions = domain.num_actions
        self.budget = budget
        self._cache: Dict[Tuple[State, State], np.ndarray] = {}

    def confidences(self, from_vector: np.ndarray, goal_vector: np.ndarray) -> np.ndarray:
        state = attrs_to_state(np.asarray(from_vector) >= 0.5)
        goal = attrs_to_state(np.asarray(goal_vector) >= 0.5)
        key = (state, goal)
        if key not in self._cache:
            conf = np.full(self.num_actions, PROB_CLAMP)
            if goal and not goal <= state:
                try:
                    conf[oracle_plan(self.domain, Instance(state, goal), self.budget, BFS)[0]] = 1.0 - PROB_CLAMP
                except (Unsolvable, BudgetExceeded):
                    pass
            self._cache[key] = conf
        return self._cache[key]


def perfect_model(domain: GroundDomain) -> LearnedDomainModel:
    """Learned-model view holding the exact transition function and preconditions."""
    preconditions = {a.id: a.precondition for a in domain.actions}
    return LearnedDomainModel(GroundTruthTransition(domain), preconditions, {})
