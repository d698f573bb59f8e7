"""
Parameterized mini-domain families.

Each family builds a ground domain from a few size parameters and samples
random instances over it. Sizes are kept to tens of propositions so a model
trains on a CPU in minutes.

Families
--------
ferry      cars moved between locations by a one-car ferry
logistics  packages moved by per-city trucks and one airplane
blocks     single-arm blocks world (depot-like stacking)
zeno       people flown between cities by one aircraft
mprime     cargo carried by a vehicle whose fuel lives at the locations
"""

import itertools
import random
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Tuple

from vecplan.exceptions import ConfigError
from vecplan.strips_core import GroundAction, GroundDomain, Instance, Proposition


class _DomainBuilder:
    """Collects propositions and actions by name, assigning dense ids."""

    def __init__(self, name: str):
        self.name = name
        self.props: List[Proposition] = []
        self.index: Dict[str, int] = {}
        self.actions: List[GroundAction] = []

    def prop(self, name: str) -> int:
        if name not in self.index:
            self.index[name] = len(self.props)
            self.props.append(Proposition(len(self.props), name))
        return self.index[name]

    def ids(self, names: Iterable[str]) -> FrozenSet[int]:
        return frozenset(self.index[n] for n in names)

    def action(self, name: str, pre: Iterable[str], add: Iterable[str], delete: Iterable[str]) -> None:
        self.actions.append(
            GroundAction(len(self.actions), name, self.ids(pre), self.ids(add), self.ids(delete))
        )

    def build(self) -> GroundDomain:
        return GroundDomain(self.name, tuple(self.props), tuple(self.actions))


# ---------------------------------------------------------------- ferry


def build_ferry(cars: int = 2, locations: int = 3) -> GroundDomain:
    b = _DomainBuilder(f"ferry-c{cars}-l{locations}")
    cs = [f"c{i + 1}" for i in range(cars)]
    ls = [f"l{i + 1}" for i in range(locations)]
    for c in cs:
        for l in ls:
            b.prop(f"at({c},{l})")
    for l in ls:
        b.prop(f"at-ferry({l})")
    for c in cs:
        b.prop(f"on({c})")
    b.prop("empty-ferry")

    for c in cs:
        for l in ls:
            b.action(
                f"board({c},{l})",
                pre=[f"at({c},{l})", f"at-ferry({l})", "empty-ferry"],
                add=[f"on({c})"],
                delete=[f"at({c},{l})", "empty-ferry"],
            )
    for l1, l2 in itertools.permutations(ls, 2):
        b.action(
            f"sail({l1},{l2})",
            pre=[f"at-ferry({l1})"],
            add=[f"at-ferry({l2})"],
            delete=[f"at-ferry({l1})"],
        )
    for c in cs:
        for l in ls:
            b.action(
                f"debark({c},{l})",
                pre=[f"on({c})", f"at-ferry({l})"],
                add=[f"at({c},{l})", "empty-ferry"],
                delete=[f"on({c})"],
            )
    return b.build()


def sample_ferry(domain: GroundDomain, rng: random.Random, cars: int = 2, locations: int = 3) -> Instance:
    ls = [f"l{i + 1}" for i in range(locations)]
    init = [f"at-ferry({rng.choice(ls)})", "empty-ferry"]
    goal = []
    for i in range(cars):
        c = f"c{i + 1}"
        init.append(f"at({c},{rng.choice(ls)})")
        goal.append(f"at({c},{rng.choice(ls)})")
    return Instance(domain.state_from_names(init), domain.state_from_names(goal))


# ------------------------------------------------------------ logistics


def _logistics_layout(cities: int) -> Tuple[List[str], List[str], Dict[str, List[str]]]:
    trucks = [f"t{i + 1}" for i in range(cities)]
    airports = [f"a{i + 1}" for i in range(cities)]
    city_locs = {t: [f"d{i + 1}", f"a{i + 1}"] for i, t in enumerate(trucks)}
    return trucks, airports, city_locs


def build_logistics(cities: int = 2, packages: int = 1) -> GroundDomain:
    b = _DomainBuilder(f"logistics-c{cities}-p{packages}")
    trucks, airports, city_locs = _logistics_layout(cities)
    locs = [l for t in trucks for l in city_locs[t]]
    pkgs = [f"p{i + 1}" for i in range(packages)]
    vehicles = trucks + ["plane"]

    for p in pkgs:
        for l in locs:
            b.prop(f"at({p},{l})")
    for t in trucks:
        for l in city_locs[t]:
            b.prop(f"at({t},{l})")
    for a in airports:
        b.prop(f"at(plane,{a})")
    for p in pkgs:
        for v in vehicles:
            b.prop(f"in({p},{v})")

    for t in trucks:
        for p in pkgs:
            for l in city_locs[t]:
                b.action(
                    f"load-truck({p},{t},{l})",
                    pre=[f"at({t},{l})", f"at({p},{l})"],
                    add=[f"in({p},{t})"],
                    delete=[f"at({p},{l})"],
                )
                b.action(
                    f"unload-truck({p},{t},{l})",
                    pre=[f"at({t},{l})", f"in({p},{t})"],
                    add=[f"at({p},{l})"],
                    delete=[f"in({p},{t})"],
                )
        for l1, l2 in itertools.permutations(city_locs[t], 2):
            b.action(
                f"drive-truck({t},{l1},{l2})",
                pre=[f"at({t},{l1})"],
                add=[f"at({t},{l2})"],
                delete=[f"at({t},{l1})"],
            )
    for p in pkgs:
        for a in airports:
            b.action(
                f"load-airplane({p},{a})",
                pre=[f"at(plane,{a})", f"at({p},{a})"],
                add=[f"in({p},plane)"],
                delete=[f"at({p},{a})"],
            )
            b.action(
                f"unload-airplane({p},{a})",
                pre=[f"at(plane,{a})", f"in({p},plane)"],
                add=[f"at({p},{a})"],
                delete=[f"in({p},plane)"],
            )
    for a1, a2 in itertools.permutations(airports, 2):
        b.action(
            f"fly-airplane({a1},{a2})",
            pre=[f"at(plane,{a1})"],
            add=[f"at(plane,{a2})"],
            delete=[f"at(plane,{a1})"],
        )
    return b.build()


def sample_logistics(domain: GroundDomain, rng: random.Random, cities: int = 2, packages: int = 1) -> Instance:
    trucks, airports, city_locs = _logistics_layout(cities)
    locs = [l for t in trucks for l in city_locs[t]]
    init = [f"at({t},{rng.choice(city_locs[t])})" for t in trucks]
    init.append(f"at(plane,{rng.choice(airports)})")
    goal = []
    for i in range(packages):
        p = f"p{i + 1}"
        init.append(f"at({p},{rng.choice(locs)})")
        goal.append(f"at({p},{rng.choice(locs)})")
    return Instance(domain.state_from_names(init), domain.state_from_names(goal))


# --------------------------------------------------------------- blocks


def build_blocks(blocks: int = 3) -> GroundDomain:
    b = _DomainBuilder(f"blocks-b{blocks}")
    bs = [f"b{i + 1}" for i in range(blocks)]
    for x, y in itertools.permutations(bs, 2):
        b.prop(f"on({x},{y})")
    for x in bs:
        b.prop(f"ontable({x})")
    for x in bs:
        b.prop(f"clear({x})")
    for x in bs:
        b.prop(f"holding({x})")
    b.prop("handempty")

    for x in bs:
        b.action(
            f"pick-up({x})",
            pre=[f"clear({x})", f"ontable({x})", "handempty"],
            add=[f"holding({x})"],
            delete=[f"clear({x})", f"ontable({x})", "handempty"],
        )
        b.action(
            f"put-down({x})",
            pre=[f"holding({x})"],
            add=[f"ontable({x})", f"clear({x})", "handempty"],
            delete=[f"holding({x})"],
        )
    for x, y in itertools.permutations(bs, 2):
        b.action(
            f"stack({x},{y})",
            pre=[f"holding({x})", f"clear({y})"],
            add=[f"on({x},{y})", f"clear({x})", "handempty"],
            delete=[f"holding({x})", f"clear({y})"],
        )
        b.action(
            f"unstack({x},{y})",
            pre=[f"on({x},{y})", f"clear({x})", "handempty"],
            add=[f"holding({x})", f"clear({y})"],
            delete=[f"on({x},{y})", f"clear({x})", "handempty"],
        )
    return b.build()


def _random_towers(rng: random.Random, bs: List[str]) -> List[List[str]]:
    order = list(bs)
    rng.shuffle(order)
    towers: List[List[str]] = []
    for block in order:
        if towers and rng.random() < 0.5:
            rng.choice(towers).append(block)
        else:
            towers.append([block])
    return towers


def _tower_facts(towers: List[List[str]]) -> List[str]:
    facts = []
    for tower in towers:
        facts.append(f"ontable({tower[0]})")
        for below, above in zip(tower, tower[1:]):
            facts.append(f"on({above},{below})")
        facts.append(f"clear({tower[-1]})")
    return facts


def sample_blocks(domain: GroundDomain, rng: random.Random, blocks: int = 3) -> Instance:
    bs = [f"b{i + 1}" for i in range(blocks)]
    init = _tower_facts(_random_towers(rng, bs)) + ["handempty"]
    goal = [f for f in _tower_facts(_random_towers(rng, bs)) if f.startswith(("on(", "ontable("))]
    return Instance(domain.state_from_names(init), domain.state_from_names(goal))


# ----------------------------------------------------------------- zeno


def build_zeno(cities: int = 3, people: int = 2) -> GroundDomain:
    b = _DomainBuilder(f"zeno-c{cities}-p{people}")
    cs = [f"city{i + 1}" for i in range(cities)]
    ps = [f"person{i + 1}" for i in range(people)]
    for p in ps:
        for c in cs:
            b.prop(f"at({p},{c})")
    for p in ps:
        b.prop(f"in({p})")
    for c in cs:
        b.prop(f"aircraft-at({c})")

    for p in ps:
        for c in cs:
            b.action(
                f"board({p},{c})",
                pre=[f"at({p},{c})", f"aircraft-at({c})"],
                add=[f"in({p})"],
                delete=[f"at({p},{c})"],
            )
            b.action(
                f"debark({p},{c})",
                pre=[f"in({p})", f"aircraft-at({c})"],
                add=[f"at({p},{c})"],
                delete=[f"in({p})"],
            )
    for c1, c2 in itertools.permutations(cs, 2):
        b.action(
            f"fly({c1},{c2})",
            pre=[f"aircraft-at({c1})"],
            add=[f"aircraft-at({c2})"],
            delete=[f"aircraft-at({c1})"],
        )
    return b.build()


def sample_zeno(domain: GroundDomain, rng: random.Random, cities: int = 3, people: int = 2) -> Instance:
    cs = [f"city{i + 1}" for i in range(cities)]
    init = [f"aircraft-at({rng.choice(cs)})"]
    goal = []
    for i in range(people):
        p = f"person{i + 1}"
        init.append(f"at({p},{rng.choice(cs)})")
        goal.append(f"at({p},{rng.choice(cs)})")
    return Instance(domain.state_from_names(init), domain.state_from_names(goal))


# --------------------------------------------------------------- mprime


def build_mprime(locations: int = 3, cargoes: int = 1, fuel: int = 2, space: int = 1) -> GroundDomain:
    """
    One vehicle moving cargo between fully connected locations.

    Every location holds a fuel level in 0..`fuel`; leaving a location burns
    one unit of its fuel, and any location with fuel may donate a unit to
    another location that is not full. The vehicle carries up to `space`
    cargoes. Levels are grounded into the action names, so the successor
    relations of the lifted domain disappear.
    """
    b = _DomainBuilder(f"mprime-l{locations}-c{cargoes}-f{fuel}-s{space}")
    ls = [f"l{i + 1}" for i in range(locations)]
    cs = [f"c{i + 1}" for i in range(cargoes)]
    for l in ls:
        b.prop(f"at(v1,{l})")
    for c in cs:
        for l in ls:
            b.prop(f"at({c},{l})")
    for c in cs:
        b.prop(f"in({c},v1)")
    for l in ls:
        for k in range(fuel + 1):
            b.prop(f"fuel({l},f{k})")
    for k in range(space + 1):
        b.prop(f"space(v1,s{k})")

    for l1, l2 in itertools.permutations(ls, 2):
        for k in range(1, fuel + 1):
            b.action(
                f"move(v1,{l1},{l2},f{k})",
                pre=[f"at(v1,{l1})", f"fuel({l1},f{k})"],
                add=[f"at(v1,{l2})", f"fuel({l1},f{k - 1})"],
                delete=[f"at(v1,{l1})", f"fuel({l1},f{k})"],
            )
    for c in cs:
        for l in ls:
            for k in range(1, space + 1):
                b.action(
                    f"load({c},v1,{l},s{k})",
                    pre=[f"at({c},{l})", f"at(v1,{l})", f"space(v1,s{k})"],
                    add=[f"in({c},v1)", f"space(v1,s{k - 1})"],
                    delete=[f"at({c},{l})", f"space(v1,s{k})"],
                )
            for k in range(space):
                b.action(
                    f"unload({c},v1,{l},s{k})",
                    pre=[f"in({c},v1)", f"at(v1,{l})", f"space(v1,s{k})"],
                    add=[f"at({c},{l})", f"space(v1,s{k + 1})"],
                    delete=[f"in({c},v1)", f"space(v1,s{k})"],
                )
    for l1, l2 in itertools.permutations(ls, 2):
        for i in range(1, fuel + 1):
            for j in range(fuel):
                b.action(
                    f"donate({l1},{l2},f{i},f{j})",
                    pre=[f"fuel({l1},f{i})", f"fuel({l2},f{j})"],
                    add=[f"fuel({l1},f{i - 1})", f"fuel({l2},f{j + 1})"],
                    delete=[f"fuel({l1},f{i})", f"fuel({l2},f{j})"],
                )
    return b.build()


def sample_mprime(
    domain: GroundDomain, rng: random.Random, locations: int = 3, cargoes: int = 1, fuel: int = 2, space: int = 1
) -> Instance:
    ls = [f"l{i + 1}" for i in range(locations)]
    levels = {l: rng.randint(1, fuel) for l in ls}
    # two moves per cargo always suffice once fuel can be donated around
    while sum(levels.values()) < 2 * cargoes and any(v < fuel for v in levels.values()):
        levels[rng.choice([l for l in ls if levels[l] < fuel])] += 1
    init = [f"at(v1,{rng.choice(ls)})", f"space(v1,s{space})"]
    init.extend(f"fuel({l},f{k})" for l, k in levels.items())
    goal = []
    for i in range(cargoes):
        c = f"c{i + 1}"
        init.append(f"at({c},{rng.choice(ls)})")
        goal.append(f"at({c},{rng.choice(ls)})")
    return Instance(domain.state_from_names(init), domain.state_from_names(goal))


# ------------------------------------------------------------- registry


@dataclass(frozen=True)
class DomainFamily:
    name: str
    build: Callable[..., GroundDomain]
    sample: Callable[..., Instance]
    default_sizes: Mapping[str, int]


DOMAIN_FAMILIES: Dict[str, DomainFamily] = {
    "ferry": DomainFamily("ferry", build_ferry, sample_ferry, {"cars": 2, "locations": 3}),
    "logistics": DomainFamily(
        "logistics", build_logistics, sample_logistics, {"cities": 2, "packages": 1}
    ),
    "blocks": DomainFamily("blocks", build_blocks, sample_blocks, {"blocks": 3}),
    "zeno": DomainFamily("zeno", build_zeno, sample_zeno, {"cities": 3, "people": 2}),
    "mprime": DomainFamily(
        "mprime", build_mprime, sample_mprime, {"locations": 3, "cargoes": 1, "fuel": 2, "space": 1}
    ),
}


def get_family(name: str) -> DomainFamily:
    if name not in DOMAIN_FAMILIES:
        raise ConfigError(
            f"Unknown domain family '{name}'. Available families: {sorted(DOMAIN_FAMILIES)}"
        )
    return DOMAIN_FAMILIES[name]


def resolve_sizes(family: DomainFamily, sizes: Mapping[str, int]) -> Dict[str, int]:
    unknown = set(sizes) - set(family.default_sizes)
    if unknown:
        raise ConfigError(
            f"Unknown size parameter(s) {sorted(unknown)} for family '{family.name}'; "
            f"expected {sorted(family.default_sizes)}"
        )
    resolved = {**family.default_sizes, **sizes}
    for key, value in resolved.items():
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"Size '{key}' must be a positive integer, got {value!r}")
    if family.name == "blocks" and resolved["blocks"] < 2:
        raise ConfigError("Size 'blocks' must be at least 2; a single block has no nontrivial goal")
    if family.name == "mprime" and resolved["locations"] < 2:
        raise ConfigError("Size 'locations' must be at least 2 for mprime")
    return resolved


def build_domain(family: str, sizes: Mapping[str, int] = None) -> GroundDomain:
    fam = get_family(family)
    return fam.build(**resolve_sizes(fam, sizes or {}))
