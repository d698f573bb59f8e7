"""
Run configuration.

`config.yml` uses CamelCase keys grouped in sections (``Learner:``,
``Selector:``, ...). Each section maps onto a dataclass with snake_case
fields; unknown keys are rejected with their full key path.
"""

import dataclasses
import hashlib
import json
import os
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml

from vecplan.exceptions import ConfigError

CONFIG_FILE: str = "config.yml"
OUTPUT_ENV: str = "VECPLAN_OUTPUT"
DEFAULT_OUTPUT_DIR: str = "runs"

GOAL_MODES: Tuple[str, ...] = ("auto", "recorded", "overlay", "completion")
ORACLE_STRATEGIES: Tuple[str, ...] = ("auto", "bfs", "gbfs")
ACTIVATIONS: Tuple[str, ...] = ("relu", "tanh")
OBSERVATION_PERCENTAGES: Tuple[int, ...] = (0, 20, 40, 60, 80, 100)


@dataclass
class DomainSettings:
    family: str = "ferry"
    sizes: Dict[str, int] = field(default_factory=lambda: {"cars": 2, "locations": 3})


@dataclass
class SeedSettings:
    data: int = 7
    mask: int = 11
    learner: int = 13
    selector: int = 17


@dataclass
class LearnerSettings:
    embedding_dim: int = 100
    hidden_sizes: Tuple[int, ...] = (100, 100)
    layer_norm: bool = True
    hidden_activation: str = "relu"
    init_bound: float = 0.6
    learning_rate: float = 1e-3
    batch_size: int = 20
    epochs: int = 300
    tolerance: float = 1e-5
    decode_threshold: float = 0.5
    absent_as_negative: bool = False
    teacher_forcing: bool = False


@dataclass
class SelectorSettings:
    hidden_sizes: Tuple[int, ...] = (150, 150)
    layer_norm: bool = True
    hidden_activation: str = "relu"
    learning_rate: float = 1e-3
    batch_size: int = 20
    epochs: int = 200
    tolerance: float = 1e-4
    pair_budget_factor: int = 10


@dataclass
class PlannerSettings:
    top_k: int = 3
    expansion_budget: int = 10_000
    goal_mode: str = "auto"
    oracle_budget: int = 200_000
    oracle_strategy: str = "auto"


@dataclass
class RunConfig:
    domain: DomainSettings = field(default_factory=DomainSettings)
    train_traces: int = 200
    test_instances: int = 30
    observation_percentages: Tuple[int, ...] = OBSERVATION_PERCENTAGES
    output_dir: Optional[str] = None
    workers: int = 1
    log_level: str = "INFO"
    seeds: SeedSettings = field(default_factory=SeedSettings)
    learner: LearnerSettings = field(default_factory=LearnerSettings)
    selector: SelectorSettings = field(default_factory=SelectorSettings)
    planner: PlannerSettings = field(default_factory=PlannerSettings)

    def validate(self) -> "RunConfig":
        def require(ok: bool, key: str, message: str) -> None:
            if not ok:
                raise ConfigError(f"{key}: {message}")

        require(self.train_traces > 0, "TrainTraces", "must be positive")
        require(self.test_instances > 0, "TestInstances", "must be positive")
        require(self.workers >= 1, "Workers", "must be at least 1")
        require(len(self.observation_percentages) > 0, "ObservationPercentages", "must be nonempty")
        for pct in self.observation_percentages:
            require(
                pct in OBSERVATION_PERCENTAGES,
                "ObservationPercentages",
                f"{pct} is not one of {OBSERVATION_PERCENTAGES}",
            )

        lr = self.learner
        require(lr.embedding_dim > 0, "Learner.EmbeddingDim", "must be positive")
        require(all(h > 0 for h in lr.hidden_sizes), "Learner.HiddenSizes", "must be positive")
        require(lr.hidden_activation in ACTIVATIONS, "Learner.HiddenActivation", f"one of {ACTIVATIONS}")
        require(lr.init_bound > 0, "Learner.InitBound", "must be positive")
        require(lr.learning_rate > 0, "Learner.LearningRate", "must be positive")
        require(lr.batch_size > 0, "Learner.BatchSize", "must be positive")
        require(lr.epochs >= 0, "Learner.Epochs", "must be non-negative")
        require(0.0 < lr.decode_threshold < 1.0, "Learner.DecodeThreshold", "must lie in (0, 1)")

        sel = self.selector
        require(all(h > 0 for h in sel.hidden_sizes), "Selector.HiddenSizes", "must be positive")
        require(sel.hidden_activation in ACTIVATIONS, "Selector.HiddenActivation", f"one of {ACTIVATIONS}")
        require(sel.learning_rate > 0, "Selector.LearningRate", "must be positive")
        require(sel.batch_size > 0, "Selector.BatchSize", "must be positive")
        require(sel.epochs >= 0, "Selector.Epochs", "must be non-negative")
        require(sel.pair_budget_factor > 0, "Selector.PairBudgetFactor", "must be positive")

        pl = self.planner
        require(pl.top_k >= 1, "Planner.TopK", "must be at least 1")
        require(pl.expansion_budget > 0, "Planner.ExpansionBudget", "must be positive")
        require(pl.oracle_budget > 0, "Planner.OracleBudget", "must be positive")
        require(pl.goal_mode in GOAL_MODES, "Planner.GoalMode", f"one of {GOAL_MODES}")
        require(pl.oracle_strategy in ORACLE_STRATEGIES, "Planner.OracleStrategy", f"one of {ORACLE_STRATEGIES}")

        from vecplan.domains import get_family, resolve_sizes

        resolve_sizes(get_family(self.domain.family), self.domain.sizes)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return _to_camel_dict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    def resolve_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR)


def camel_to_snake(name: str) -> str:
    return re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name).lower()


def snake_to_camel(name: str) -> str:
    return "".join(part.title() for part in name.split("_"))


def _coerce(value: Any, hint: Any, key: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
        return _coerce(value, hint, key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(_coerce(v, args[0], key) for v in value)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return dict(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: Dict[str, Any], path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = camel_to_snake(str(key))
        key_path = f"{path}.{key}" if path else str(key)
        if name not in fields:
            raise ConfigError(f"Unknown config key '{key_path}'")
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key_path)
        else:
            kwargs[name] = _coerce(value, hint, key_path)
    return cls(**kwargs)


def _to_camel_dict(obj) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            value = _to_camel_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, dict):
            value = dict(sorted(value.items()))
        out[snake_to_camel(f.name)] = value
    return out


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    return _build(RunConfig, data or {})


def load_config(path: Union[str, Path, None] = None) -> RunConfig:
    """
    Read a YAML config file; a missing default `config.yml` yields defaults.

    Validation is left to the caller so overrides can be applied first.
    """
    if path is None:
        path = Path(CONFIG_FILE)
        if not path.is_file():
            return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file '{path}' not found")
    with open(path, encoding="utf-8") as config_file:
        try:
            data = yaml.safe_load(config_file)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})")
    return config_from_dict(data)


def apply_overrides(config: RunConfig, assignments: Iterable[str]) -> RunConfig:
    """
    Apply ``Section.Key=value`` assignments (values parsed as YAML scalars).
    """
    data = config.to_dict()
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"Override '{assignment}' must look like Section.Key=value")
        dotted, raw = assignment.split("=", 1)
        parts = dotted.strip().split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"Unknown config key '{dotted}'")
            node = node[part]
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)
