"""
Backtracking forward search over the learned transition function.

At each state the selector's top-k actions for (state, goal target) are
intersected with the learned applicable set; the best unvisited one is
expanded. When nothing is left the search pops its history and removes the
last action from the plan. Each goal target gets a fresh search.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np
from loguru import logger

from vecplan.exceptions import BudgetExceeded, Unsolvable
from vecplan.heuristic_learner import ActionSelector, recommend
from vecplan.model_extraction import LearnedDomainModel, bridge_state, learned_applicable
from vecplan.psg_learner import TransitionModel, attrs_to_state, state_to_attrs, transition
from vecplan.strips_core import GroundDomain, Instance, State, satisfies

DEFAULT_TOP_K: int = 3
DEFAULT_BUDGET: int = 10_000


class GoalMode(str, Enum):
    AUTO = "auto"
    RECORDED = "recorded"
    OVERLAY = "overlay"
    COMPLETION = "completion"


class PlanOutcome(str, Enum):
    PLAN = "plan"
    FAIL = "fail"
    BUDGET_EXCEEDED = "budget_exceeded"


@dataclass
class PlanStats:
    expansions: int = 0
    backtracks: int = 0
    goal_attempts: int = 0


@dataclass(frozen=True)
class PlanResult:
    outcome: PlanOutcome
    plan: Tuple[int, ...] = ()
    stats: PlanStats = field(default_factory=PlanStats)
    goal_target: Optional[State] = None

    @property
    def solved(self) -> bool:
        return self.outcome is PlanOutcome.PLAN

    def unwrap(self, budget: Optional[int] = None) -> Tuple[int, ...]:
        """The plan, or the matching exception for FAIL / BUDGET_EXCEEDED."""
        if self.outcome is PlanOutcome.BUDGET_EXCEEDED:
            raise BudgetExceeded(budget if budget is not None else self.stats.expansions, "expansions")
        if self.outcome is PlanOutcome.FAIL:
            raise Unsolvable(f"No plan found after {self.stats.goal_attempts} goal targets")
        return self.plan

    def to_record(self, domain: Optional[GroundDomain] = None) -> Dict:
        record = {
            "outcome": self.outcome.value,
            "plan": list(self.plan) if domain is None else domain.action_names(self.plan),
            "expansions": self.stats.expansions,
            "backtracks": self.stats.backtracks,
            "goal_attempts": self.stats.goal_attempts,
        }
        return record


@dataclass
class SearchState:
    current: State
    vector: np.ndarray
    visited: Set[Tuple[State, int]] = field(default_factory=set)
    history: List[Tuple[State, Tuple[int, ...]]] = field(default_factory=list)
    plan: List[int] = field(default_factory=list)

    def push(self, action: int) -> None:
        self.visited.add((self.current, action))
        self.history.append((self.current, tuple(self.plan)))
        self.plan.append(action)

    def regress(self, model: TransitionModel) -> None:
        """Return to the last recorded state; the plan loses its last action."""
        self.current, prefix = self.history.pop()
        self.plan = list(prefix)
        self.vector = bridge_state(model, self.current)


def goal_targets(instance: Instance, mode: Union[GoalMode, str] = GoalMode.AUTO) -> List[State]:
    """
    Full states the selector is steered towards.

    ``recorded`` is the instance's recorded goal state, ``overlay`` the goal
    laid over the initial state, ``completion`` the goal alone with every
    other proposition false. ``auto`` tries them in that order, skipping
    duplicates and a missing recorded state.
    """
    mode = GoalMode(mode)
    overlay = frozenset(instance.initial | instance.goal)
    completion = frozenset(instance.goal)
    if mode is GoalMode.RECORDED:
        if instance.goal_state is None:
            raise ValueError("Instance has no recorded goal state")
        return [instance.goal_state]
    if mode is GoalMode.OVERLAY:
        return [overlay]
    if mode is GoalMode.COMPLETION:
        return [completion]
    targets: List[State] = []
    for t in (instance.goal_state, overlay, completion):
        if t is not None and t not in targets:
            targets.append(t)
    return targets


def candidate_actions(
    learned: LearnedDomainModel,
    selector: ActionSelector,
    search: SearchState,
    goal_vector: np.ndarray,
    top_k: int,
) -> List[int]:
    """Top-k recommended actions that are applicable and not yet tried here."""
    allowed = learned_applicable(learned, search.current)
    return [
        a
        for a, _ in recommend(selector, search.vector, goal_vector, top_k)
        if a in allowed and (search.current, a) not in search.visited
    ]


def plan(
    learned: LearnedDomainModel,
    selector: ActionSelector,
    instance: Instance,
    budget: int = DEFAULT_BUDGET,
    top_k: int = DEFAULT_TOP_K,
    goal_mode: Union[GoalMode, str] = GoalMode.AUTO,
) -> PlanResult:
    """
    Search for a plan under the learned model.

    Parameters
    ----------
    budget : int
        Maximum number of expansions over all goal targets.
    top_k : int
        Number of recommended actions considered at each state.
    goal_mode : GoalMode
        Which goal targets to try, see ``goal_targets``.

    Returns
    -------
    PlanResult
        PLAN with the action sequence, FAIL once every goal target is
        exhausted, or BUDGET_EXCEEDED.
    """
    model = learned.sequence_model
    stats = PlanStats()
    if satisfies(instance.initial, instance.goal):
        return PlanResult(PlanOutcome.PLAN, (), stats)

    plan_log = logger.bind(stage="plan")
    for target in goal_targets(instance, goal_mode):
        stats.goal_attempts += 1
        goal_vector = bridge_state(model, target)
        search = SearchState(instance.initial, bridge_state(model, instance.initial))
        while True:
            candidates = candidate_actions(learned, selector, search, goal_vector, top_k)
            if not candidates:
                if not search.history:
                    break
                search.regress(model)
                stats.backtracks += 1
                continue
            if stats.expansions >= budget:
                plan_log.debug(f"Expansion budget {budget} exhausted")
                return PlanResult(PlanOutcome.BUDGET_EXCEEDED, tuple(search.plan), stats, target)
            a = candidates[0]
            search.push(a)
            attrs, search.vector = transition(model, state_to_attrs(search.current, model.num_propositions), a)
            search.current = attrs_to_state(attrs)
            stats.expansions += 1
            if satisfies(search.current, instance.goal):
                return PlanResult(PlanOutcome.PLAN, tuple(search.plan), stats, target)
        plan_log.debug(f"Goal target {stats.goal_attempts} exhausted after {stats.expansions} expansions")

    return PlanResult(PlanOutcome.FAIL, (), stats)


def simulate(learned: Union[LearnedDomainModel, TransitionModel], state: State, actions) -> List[State]:
    """Replay `actions` through the learned transition function."""
    model = learned.sequence_model if isinstance(learned, LearnedDomainModel) else learned
    states = [frozenset(state)]
    attrs = state_to_attrs(state, model.num_propositions)
    for a in actions:
        attrs, _ = transition(model, attrs, a)
        states.append(attrs_to_state(attrs))
    return states


def format_plan(domain: GroundDomain, actions) -> str:
    """One action name per line."""
    return "".join(f"{name}\n" for name in domain.action_names(actions))
