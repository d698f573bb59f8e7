"""
Ground STRIPS semantics and the reference planner.

States are frozensets of proposition ids. A goal is a condition: a state
satisfies it when every goal proposition is a member. All functions here are
pure and every tie is broken by ascending action id, so results are
reproducible across runs and workers.
"""

import hashlib
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from loguru import logger

from vecplan.exceptions import BudgetExceeded, InapplicableAction, Unsolvable

State = FrozenSet[int]

BFS: str = "bfs"
GBFS: str = "gbfs"
AUTO: str = "auto"

# Node cap for the breadth-first pass of the "auto" strategy
AUTO_BFS_NODES: int = 20_000


@dataclass(frozen=True)
class Proposition:
    id: int
    name: str


@dataclass(frozen=True)
class GroundAction:
    id: int
    name: str
    precondition: FrozenSet[int]
    add_effects: FrozenSet[int]
    del_effects: FrozenSet[int]


@dataclass(frozen=True)
class GroundDomain:
    """
    A finite propositional universe and the ground actions over it.

    Parameters
    ----------
    name : str
        Display name, e.g. "ferry-c2-l3".
    propositions : tuple of Proposition
        Ids must be 0..|P|-1 in order.
    actions : tuple of GroundAction
        Ids must be 0..|A|-1 in order; names unique.
    """

    name: str
    propositions: Tuple[Proposition, ...]
    actions: Tuple[GroundAction, ...]
    _prop_index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _action_index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        prop_index: Dict[str, int] = {}
        for i, prop in enumerate(self.propositions):
            if prop.id != i:
                raise ValueError(f"Proposition ids must be contiguous, got {prop.id} at {i}")
            if prop.name in prop_index:
                raise ValueError(f"Duplicate proposition name '{prop.name}'")
            prop_index[prop.name] = i

        action_index: Dict[str, int] = {}
        universe = range(len(self.propositions))
        for i, action in enumerate(self.actions):
            if action.id != i:
                raise ValueError(f"Action ids must be contiguous, got {action.id} at {i}")
            if action.name in action_index:
                raise ValueError(f"Duplicate action name '{action.name}'")
            if action.add_effects & action.del_effects:
                raise ValueError(f"Action '{action.name}' adds and deletes the same proposition")
            for pid in action.precondition | action.add_effects | action.del_effects:
                if pid not in universe:
                    raise ValueError(f"Action '{action.name}' uses unknown proposition id {pid}")
            action_index[action.name] = i

        object.__setattr__(self, "_prop_index", prop_index)
        object.__setattr__(self, "_action_index", action_index)

    @property
    def num_propositions(self) -> int:
        return len(self.propositions)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def proposition_id(self, name: str) -> int:
        return self._prop_index[name]

    def action_id(self, name: str) -> int:
        return self._action_index[name]

    def has_proposition(self, name: str) -> bool:
        return name in self._prop_index

    def has_action(self, name: str) -> bool:
        return name in self._action_index

    def state_from_names(self, names: Iterable[str]) -> State:
        return frozenset(self._prop_index[n] for n in names)

    def state_names(self, state: Iterable[int]) -> List[str]:
        return [self.propositions[pid].name for pid in sorted(state)]

    def action_names(self, plan: Iterable[int]) -> List[str]:
        return [self.actions[aid].name for aid in plan]

    def fingerprint(self) -> str:
        """SHA-256 over the canonical domain text."""
        from vecplan.domain_file import format_domain

        return hashlib.sha256(format_domain(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Instance:
    initial: State
    goal: FrozenSet[int]
    # Full final state of the trace the instance came from, when known
    goal_state: Optional[State] = None

    def __post_init__(self) -> None:
        if not self.goal:
            raise ValueError("Instance goal must be nonempty")


@dataclass(frozen=True)
class PlanValidation:
    valid: bool
    step: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


def satisfies(state: Iterable[int], goal: FrozenSet[int]) -> bool:
    return goal <= frozenset(state)


def applicable(domain: GroundDomain, s: State) -> Set[int]:
    """Return every action whose precondition is a subset of `s`."""
    return {a.id for a in domain.actions if a.precondition <= s}


def apply(domain: GroundDomain, s: State, a: int) -> State:
    """
    Successor of `s` under action `a`: delete effects first, then add effects.

    Raises
    ------
    InapplicableAction
        If a precondition of `a` is missing from `s`.
    """
    action = domain.actions[a]
    if not action.precondition <= s:
        missing = domain.state_names(action.precondition - s)
        raise InapplicableAction(action.name, missing)
    return (s - action.del_effects) | action.add_effects


def validate_plan(domain: GroundDomain, inst: Instance, plan: Sequence[int]) -> PlanValidation:
    s = inst.initial
    for step, a in enumerate(plan):
        if not 0 <= a < domain.num_actions:
            return PlanValidation(False, step, f"unknown action id {a}")
        action = domain.actions[a]
        if not action.precondition <= s:
            missing = domain.state_names(action.precondition - s)
            return PlanValidation(False, step, f"'{action.name}' inapplicable, missing {missing}")
        s = (s - action.del_effects) | action.add_effects
    if not inst.goal <= s:
        missing = domain.state_names(inst.goal - s)
        return PlanValidation(False, len(plan), f"goal not reached, missing {missing}")
    return PlanValidation(True)


def _successors(domain: GroundDomain, s: State):
    for action in domain.actions:
        if action.precondition <= s:
            yield action.id, (s - action.del_effects) | action.add_effects


def _extract_plan(parents: Dict[State, Tuple[Optional[State], int]], goal_state: State) -> List[int]:
    plan: List[int] = []
    s = goal_state
    while True:
        parent, a = parents[s]
        if parent is None:
            break
        plan.append(a)
        s = parent
    plan.reverse()
    return plan


def _breadth_first(domain: GroundDomain, inst: Instance, budget: int) -> List[int]:
    parents: Dict[State, Tuple[Optional[State], int]] = {inst.initial: (None, -1)}
    frontier = deque([inst.initial])
    expanded = 0
    while frontier:
        s = frontier.popleft()
        if inst.goal <= s:
            return _extract_plan(parents, s)
        expanded += 1
        if expanded > budget:
            raise BudgetExceeded(budget)
        for a, nxt in _successors(domain, s):
            if nxt not in parents:
                parents[nxt] = (s, a)
                frontier.append(nxt)
    raise Unsolvable(f"Goal unreachable in {domain.name} after {expanded} expansions")


def additive_heuristic(domain: GroundDomain, s: State, goal: FrozenSet[int]) -> float:
    """
    Delete-relaxation h_add: sum over goal propositions of their relaxed costs.

    Returns ``inf`` when some goal proposition is unreachable even when
    deletes are ignored.
    """
    inf = float("inf")
    cost = [inf] * domain.num_propositions
    for pid in s:
        cost[pid] = 0.0
    changed = True
    while changed:
        changed = False
        for action in domain.actions:
            pre_cost = 0.0
            for pid in action.precondition:
                pre_cost += cost[pid]
                if pre_cost == inf:
                    break
            if pre_cost == inf:
                continue
            reach = pre_cost + 1.0
            for pid in action.add_effects:
                if reach < cost[pid]:
                    cost[pid] = reach
                    changed = True
    return sum(cost[pid] for pid in goal)


def _greedy_best_first(domain: GroundDomain, inst: Instance, budget: int) -> List[int]:
    parents: Dict[State, Tuple[Optional[State], int]] = {inst.initial: (None, -1)}
    h0 = additive_heuristic(domain, inst.initial, inst.goal)
    if h0 == float("inf"):
        raise Unsolvable(f"Goal is relaxed-unreachable in {domain.name}")
    counter = 0
    frontier: List[Tuple[float, int, State]] = [(h0, counter, inst.initial)]
    closed: Set[State] = set()
    while frontier:
        _, _, s = heapq.heappop(frontier)
        if s in closed:
            continue
        if inst.goal <= s:
            return _extract_plan(parents, s)
        closed.add(s)
        if len(closed) > budget:
            raise BudgetExceeded(budget)
        for a, nxt in _successors(domain, s):
            if nxt in parents:
                continue
            h = additive_heuristic(domain, nxt, inst.goal)
            if h == float("inf"):
                continue
            parents[nxt] = (s, a)
            counter += 1
            heapq.heappush(frontier, (h, counter, nxt))
    raise Unsolvable(f"Goal unreachable in {domain.name} after {len(closed)} expansions")


def oracle_plan(
    domain: GroundDomain, inst: Instance, budget: int = 200_000, strategy: str = AUTO
) -> List[int]:
    """
    Compute a reference plan for `inst`.

    Parameters
    ----------
    budget : int
        Maximum number of expanded nodes.
    strategy : str
        "bfs" (shortest plans), "gbfs" (greedy best-first on h_add) or
        "auto": breadth-first up to ``AUTO_BFS_NODES`` nodes, then greedy
        best-first with the remaining budget.

    Raises
    ------
    Unsolvable, BudgetExceeded
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if inst.goal <= inst.initial:
        return []
    if strategy == BFS:
        return _breadth_first(domain, inst, budget)
    if strategy == GBFS:
        return _greedy_best_first(domain, inst, budget)
    if strategy != AUTO:
        raise ValueError(f"Unknown strategy '{strategy}'")

    bfs_budget = min(budget, AUTO_BFS_NODES)
    try:
        return _breadth_first(domain, inst, bfs_budget)
    except BudgetExceeded:
        if bfs_budget >= budget:
            raise
        logger.debug(f"BFS cap of {bfs_budget} nodes hit, switching to greedy best-first")
        return _greedy_best_first(domain, inst, budget - bfs_budget)
