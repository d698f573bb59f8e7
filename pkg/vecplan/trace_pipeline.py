"""
Instance generation, plan traces, observation masking and trace files.

Every random choice is drawn from a stream derived from ``(seed, index)`` so
that serial and parallel runs produce identical data.
"""

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from loguru import logger

from vecplan.domains import get_family, resolve_sizes
from vecplan.exceptions import BudgetExceeded, GenerationExhausted, TraceParseError, Unsolvable
from vecplan.strips_core import AUTO, GroundDomain, Instance, State, apply, oracle_plan

OBSERVATION_PERCENTAGES: Tuple[int, ...] = (0, 20, 40, 60, 80, 100)

# Attempts allowed per requested instance before giving up
ATTEMPTS_PER_INSTANCE: int = 50


@dataclass(frozen=True)
class PlanTrace:
    states: Tuple[State, ...]
    actions: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"A trace with {len(self.actions)} actions needs {len(self.actions) + 1} states"
            )

    @property
    def initial(self) -> State:
        return self.states[0]

    @property
    def final(self) -> State:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class PartialTrace:
    initial: State
    final: State
    actions: Tuple[int, ...]
    # σ_1..σ_{n-1}: observed subsets of the intermediate states
    observations: Tuple[State, ...]

    def __post_init__(self) -> None:
        expected = max(0, len(self.actions) - 1)
        if len(self.observations) != expected:
            raise ValueError(
                f"A trace with {len(self.actions)} actions needs {expected} observation sets"
            )

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[PartialTrace, ...]
    test: Tuple[PlanTrace, ...]
    test_instances: Tuple[Instance, ...]


def _stream(seed: int, index: int) -> random.Random:
    return random.Random(f"{seed}/{index}")


def gen_instances(
    family: str,
    sizes: Mapping[str, int],
    count: int,
    seed: int,
    domain: Optional[GroundDomain] = None,
    budget: int = 200_000,
    allow_trivial: bool = False,
) -> List[Instance]:
    """
    Sample `count` pairwise distinct instances solvable by the oracle planner.

    Parameters
    ----------
    family : str
        Domain family name, see ``vecplan.domains.DOMAIN_FAMILIES``.
    sizes : Mapping[str, int]
        Family size parameters.
    domain : GroundDomain, optional
        Prebuilt domain for the family and sizes; built when omitted.
    allow_trivial : bool
        Keep instances whose initial state already satisfies the goal.

    Raises
    ------
    GenerationExhausted
        If ``ATTEMPTS_PER_INSTANCE * count`` samples do not yield enough
        distinct solvable instances.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    fam = get_family(family)
    resolved = resolve_sizes(fam, sizes)
    if domain is None:
        domain = fam.build(**resolved)

    instances: List[Instance] = []
    seen = set()
    max_attempts = ATTEMPTS_PER_INSTANCE * count
    attempt = 0
    while len(instances) < count:
        if attempt >= max_attempts:
            raise GenerationExhausted(
                f"Found {len(instances)}/{count} distinct solvable {domain.name} instances "
                f"after {max_attempts} attempts; enlarge the domain sizes or lower the count"
            )
        inst = fam.sample(domain, _stream(seed, attempt), **resolved)
        attempt += 1
        key = (inst.initial, inst.goal)
        if key in seen:
            continue
        seen.add(key)
        if not allow_trivial and inst.goal <= inst.initial:
            continue
        try:
            oracle_plan(domain, inst, budget)
        except (Unsolvable, BudgetExceeded):
            continue
        instances.append(inst)

    logger.debug(f"Generated {count} {domain.name} instances in {attempt} attempts")
    return instances


def _trace_for(args) -> PlanTrace:
    domain, inst, budget, strategy = args
    plan = oracle_plan(domain, inst, budget, strategy)
    states = [inst.initial]
    for a in plan:
        states.append(apply(domain, states[-1], a))
    return PlanTrace(tuple(states), tuple(plan))


def gen_traces(
    domain: GroundDomain,
    instances: Sequence[Instance],
    budget: int = 200_000,
    strategy: str = AUTO,
    workers: int = 1,
) -> List[PlanTrace]:
    """Plan every instance with the oracle and record the state sequence."""
    jobs = [(domain, inst, budget, strategy) for inst in instances]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_trace_for, jobs))
    return [_trace_for(job) for job in jobs]


def observed_count(size: int, observe_pct: int) -> int:
    """round(observe_pct / 100 * size) with halves rounded up."""
    return (2 * observe_pct * size + 100) // 200


def mask_trace(trace: PlanTrace, observe_pct: int, seed: int, index: int = 0) -> PartialTrace:
    """
    Keep `observe_pct` percent of every intermediate state's propositions.

    Endpoints are copied in full. `index` selects the random stream so each
    trace of a dataset is masked independently of the others.
    """
    if observe_pct not in OBSERVATION_PERCENTAGES:
        raise ValueError(
            f"observe_pct must be one of {OBSERVATION_PERCENTAGES}, got {observe_pct}"
        )
    rng = _stream(seed, index)
    observations = []
    for s in trace.states[1:-1]:
        members = sorted(s)
        keep = observed_count(len(members), observe_pct)
        observations.append(frozenset(rng.sample(members, keep)))
    return PartialTrace(trace.initial, trace.final, trace.actions, tuple(observations))


def mask_traces(traces: Sequence[PlanTrace], observe_pct: int, seed: int) -> List[PartialTrace]:
    return [mask_trace(t, observe_pct, seed, i) for i, t in enumerate(traces)]


def as_partial(trace: PlanTrace) -> PartialTrace:
    """Fully observed partial view of a trace."""
    return PartialTrace(trace.initial, trace.final, trace.actions, tuple(trace.states[1:-1]))


def make_split(
    train_traces: Sequence[PlanTrace],
    test_traces: Sequence[PlanTrace],
    test_instances: Sequence[Instance],
    observe_pct: int,
    seed: int,
    train_instances: Sequence[Instance] = (),
) -> DatasetSplit:
    """Mask the training traces; test traces stay fully observed."""
    train_keys = {(inst.initial, inst.goal) for inst in train_instances}
    if any((inst.initial, inst.goal) in train_keys for inst in test_instances):
        raise ValueError("Train and test instance sets overlap")
    return DatasetSplit(
        tuple(mask_traces(train_traces, observe_pct, seed)),
        tuple(test_traces),
        tuple(test_instances),
    )


def with_goal_states(instances: Sequence[Instance], traces: Sequence[PlanTrace]) -> List[Instance]:
    """Attach each trace's final state to its instance as the recorded goal state."""
    return [
        Instance(inst.initial, inst.goal, goal_state=trace.final)
        for inst, trace in zip(instances, traces)
    ]


# ------------------------------------------------------------------ files


def _names(domain: GroundDomain, state: Iterable[int]) -> List[str]:
    return domain.state_names(state)


def _trace_record(domain: GroundDomain, trace: Union[PlanTrace, PartialTrace]) -> dict:
    if isinstance(trace, PlanTrace):
        return {
            "kind": "plan",
            "states": [_names(domain, s) for s in trace.states],
            "actions": domain.action_names(trace.actions),
        }
    return {
        "kind": "partial",
        "initial": _names(domain, trace.initial),
        "final": _names(domain, trace.final),
        "actions": domain.action_names(trace.actions),
        "observations": [_names(domain, o) for o in trace.observations],
    }


def write_traces(
    path: Union[str, Path], traces: Sequence[Union[PlanTrace, PartialTrace]], domain: GroundDomain
) -> None:
    """Write one JSON record per line (UTF-8), propositions and actions by name."""
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(_trace_record(domain, trace), ensure_ascii=False))
            f.write("\n")


class _RecordReader:
    def __init__(self, domain: GroundDomain, source: str):
        self.domain = domain
        self.source = source
        self.line = 0

    def fail(self, message: str, token: Optional[str] = None):
        raise TraceParseError(message, self.line, token, self.source)

    def field(self, record: dict, key: str, kind: type):
        if key not in record:
            self.fail(f"missing field '{key}'")
        value = record[key]
        if not isinstance(value, kind):
            self.fail(f"field '{key}' must be a {kind.__name__}")
        return value

    def state(self, names) -> State:
        if not isinstance(names, list):
            self.fail("a state must be a list of proposition names")
        members = set()
        for name in names:
            if not isinstance(name, str) or not self.domain.has_proposition(name):
                self.fail("unknown proposition", str(name))
            members.add(self.domain.proposition_id(name))
        return frozenset(members)

    def actions(self, names) -> Tuple[int, ...]:
        ids = []
        for name in names:
            if not isinstance(name, str) or not self.domain.has_action(name):
                self.fail("unknown action", str(name))
            ids.append(self.domain.action_id(name))
        return tuple(ids)

    def records(self, path: Union[str, Path]):
        with open(path, encoding="utf-8") as f:
            for self.line, raw in enumerate(f, 1):
                if not raw.strip():
                    continue
                try:
                    record = json.loads(raw)
                except json.JSONDecodeError as e:
                    self.fail(f"invalid JSON at column {e.colno}: {e.msg}")
                if not isinstance(record, dict):
                    self.fail("each line must hold a JSON object")
                yield record


def read_traces(path: Union[str, Path], domain: GroundDomain) -> List[Union[PlanTrace, PartialTrace]]:
    reader = _RecordReader(domain, str(path))
    traces: List[Union[PlanTrace, PartialTrace]] = []
    for record in reader.records(path):
        kind = reader.field(record, "kind", str)
        actions = reader.actions(reader.field(record, "actions", list))
        try:
            if kind == "plan":
                states = tuple(reader.state(s) for s in reader.field(record, "states", list))
                traces.append(PlanTrace(states, actions))
            elif kind == "partial":
                traces.append(
                    PartialTrace(
                        reader.state(reader.field(record, "initial", list)),
                        reader.state(reader.field(record, "final", list)),
                        actions,
                        tuple(reader.state(o) for o in reader.field(record, "observations", list)),
                    )
                )
            else:
                reader.fail("unknown record kind", kind)
        except ValueError as e:
            reader.fail(str(e))
    return traces


def write_instances(path: Union[str, Path], instances: Sequence[Instance], domain: GroundDomain) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            record = {
                "initial": _names(domain, inst.initial),
                "goal": _names(domain, inst.goal),
                "goal_state": None if inst.goal_state is None else _names(domain, inst.goal_state),
            }
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def read_instances(path: Union[str, Path], domain: GroundDomain) -> List[Instance]:
    reader = _RecordReader(domain, str(path))
    instances = []
    for record in reader.records(path):
        goal = reader.state(reader.field(record, "goal", list))
        if not goal:
            reader.fail("goal must be nonempty")
        goal_state = record.get("goal_state")
        instances.append(
            Instance(
                reader.state(reader.field(record, "initial", list)),
                goal,
                None if goal_state is None else reader.state(goal_state),
            )
        )
    return instances
