"""
Metrics and the observation-percentage experiment.

State estimates are scored per state and macro-averaged; instances solved
counts plans that validate under the ground domain. `run_experiment` runs
the whole pipeline once per observation percentage and collects one report
row per percentage.
"""

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from loguru import logger

from vecplan.config import PlannerSettings, RunConfig
from vecplan.domains import build_domain
from vecplan.exceptions import EmptyInput, StageError, VecPlanError
from vecplan.gnn_plan import PlanResult, plan
from vecplan.heuristic_learner import ActionSelector, build_pairs, save_selector, train_selector
from vecplan.model_extraction import (
    LearnedDomainModel,
    bridge_state,
    estimate_traces,
    learned_model_from_estimates,
    precondition_report,
    save_learned_model,
)
from vecplan.psg_learner import EstimatedTrace, SequenceModel, TransitionModel, train
from vecplan.strips_core import GroundDomain, Instance, State, validate_plan
from vecplan.trace_pipeline import (
    PlanTrace,
    as_partial,
    gen_instances,
    gen_traces,
    mask_traces,
    with_goal_states,
)

CSV_COLUMNS: Tuple[str, ...] = (
    "observation_pct",
    "precision",
    "recall",
    "instances_solved",
    "plan_identity_rate",
    "train_loss_final",
    "seeds",
    "solved_count",
    "test_count",
    "states_scored",
    "selector_loss_final",
)
REPORT_FILE: str = "report.csv"
SUMMARY_FILE: str = "report.md"


@dataclass(frozen=True)
class StateScore:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            logger.debug("Empty estimate: precision taken as 1.0")
            return 1.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            logger.debug("Empty real state: recall taken as 1.0")
            return 1.0
        return self.tp / (self.tp + self.fn)


def score_state(real: State, estimated: State, num_propositions: int) -> StateScore:
    real, estimated = frozenset(real), frozenset(estimated)
    tp = len(real & estimated)
    fp = len(estimated - real)
    fn = len(real - estimated)
    return StateScore(tp, num_propositions - tp - fp - fn, fp, fn)


def aggregate(scores: Sequence[StateScore]) -> Tuple[float, float]:
    """Unweighted mean of per-state precision and recall."""
    if not scores:
        raise EmptyInput("No state scores to aggregate")
    n = len(scores)
    return sum(s.precision for s in scores) / n, sum(s.recall for s in scores) / n


def score_estimates(
    estimated: Sequence[EstimatedTrace], real: Sequence[PlanTrace], num_propositions: int
) -> List[StateScore]:
    """
    Score the intermediate states of every estimated trace.

    Endpoints are copied from the observations and are skipped. When no
    trace has an intermediate state, every state is scored instead.
    """
    scores = []
    for est, truth in zip(estimated, real):
        for s_real, s_est in zip(truth.states[1:-1], est.state_sets()[1:-1]):
            scores.append(score_state(s_real, s_est, num_propositions))
    if not scores:
        for est, truth in zip(estimated, real):
            for s_real, s_est in zip(truth.states, est.state_sets()):
                scores.append(score_state(s_real, s_est, num_propositions))
    return scores


def _plan_of(result) -> Optional[Sequence[int]]:
    if isinstance(result, PlanResult):
        return result.plan if result.solved else None
    return result


def solved_mask(domain: GroundDomain, instances: Sequence[Instance], plans: Sequence) -> List[bool]:
    if len(instances) != len(plans):
        raise ValueError(f"{len(plans)} plans for {len(instances)} instances")
    mask = []
    for inst, result in zip(instances, plans):
        actions = _plan_of(result)
        mask.append(actions is not None and bool(validate_plan(domain, inst, actions)))
    return mask


def instances_solved(domain: GroundDomain, instances: Sequence[Instance], plans: Sequence) -> float:
    """
    Fraction of instances whose plan validates under the ground domain.

    `plans` holds a PlanResult, an action sequence or None per instance;
    anything that is not a found plan counts as unsolved.
    """
    if not instances:
        raise EmptyInput("No test instances")
    return sum(solved_mask(domain, instances, plans)) / len(instances)


def plan_identity_rate(plans: Sequence, reference: Sequence[Sequence[int]], solved: Sequence[bool]) -> float:
    """Share of solved instances whose plan equals the reference plan."""
    credited = [(p, r) for p, r, ok in zip(plans, reference, solved) if ok]
    if not credited:
        return 0.0
    return sum(tuple(_plan_of(p)) == tuple(r) for p, r in credited) / len(credited)


@dataclass(frozen=True)
class ExperimentRow:
    observation_pct: int
    precision: float
    recall: float
    instances_solved: float
    plan_identity_rate: float
    train_loss_final: float
    seeds: str
    solved_count: int
    test_count: int
    states_scored: int
    selector_loss_final: float


@dataclass
class ExperimentReport:
    rows: List[ExperimentRow]
    config_fingerprint: str = ""
    seeds: Dict[str, int] = field(default_factory=dict)
    loss_curves: Dict[int, List[float]] = field(default_factory=dict)

    def row(self, observation_pct: int) -> ExperimentRow:
        for r in self.rows:
            if r.observation_pct == observation_pct:
                return r
        raise KeyError(f"No row for {observation_pct}% observation")


def seeds_label(seeds: Dict[str, int]) -> str:
    return ";".join(f"{k}={v}" for k, v in seeds.items())


def _cell(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def report_csv_text(report: ExperimentReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([_cell(getattr(row, name)) for name in CSV_COLUMNS])
    return buffer.getvalue()


def write_report_csv(path: Union[str, Path], report: ExperimentReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(report_csv_text(report))


def read_report_csv(path: Union[str, Path]) -> List[ExperimentRow]:
    kinds = {f.name: f.type for f in fields(ExperimentRow)}
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for record in csv.DictReader(f):
            values = {}
            for name in CSV_COLUMNS:
                kind = kinds[name]
                raw = record[name]
                values[name] = int(raw) if kind in (int, "int") else float(raw) if kind in (float, "float") else raw
            rows.append(ExperimentRow(**values))
    return rows


def report_markdown(report: ExperimentReport) -> str:
    """Summary table, one column per observation percentage."""
    rows = sorted(report.rows, key=lambda r: r.observation_pct)
    header = "| Metric | " + " | ".join(f"{r.observation_pct}%" for r in rows) + " |"
    rule = "|---|" + "---|" * len(rows)

    def line(label: str, attr: str) -> str:
        return f"| {label} | " + " | ".join(f"{100 * getattr(r, attr):.1f}" for r in rows) + " |"

    lines = [
        header,
        rule,
        line("Precision", "precision"),
        line("Recall", "recall"),
        line("Instances solved", "instances_solved"),
        line("Plan identity", "plan_identity_rate"),
    ]
    return "\n".join(lines) + "\n"


def precision_trend_violations(report: ExperimentReport, tolerance: float = 0.05) -> List[Tuple[int, int, float]]:
    """
    Consecutive observation percentages where precision drops by more than `tolerance`.

    Returns (lower_pct, higher_pct, drop) triples.
    """
    rows = sorted(report.rows, key=lambda r: r.observation_pct)
    violations = []
    for lo, hi in zip(rows, rows[1:]):
        drop = lo.precision - hi.precision
        if drop > tolerance:
            violations.append((lo.observation_pct, hi.observation_pct, drop))
    return violations


# ------------------------------------------------------------ experiment


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Re-raise anything failing inside the block as a StageError naming it."""
    try:
        yield
    except StageError:
        raise
    except (VecPlanError, ValueError, KeyError, OSError) as e:
        raise StageError(name, e) from e


@dataclass(frozen=True)
class ExperimentData:
    domain: GroundDomain
    train_traces: Tuple[PlanTrace, ...]
    test_traces: Tuple[PlanTrace, ...]
    test_instances: Tuple[Instance, ...]


def prepare_data(config: RunConfig) -> ExperimentData:
    """Generate disjoint train and test instances and their oracle traces."""
    with stage("gen"):
        domain = build_domain(config.domain.family, config.domain.sizes)
        instances = gen_instances(
            config.domain.family,
            config.domain.sizes,
            config.train_traces + config.test_instances,
            config.seeds.data,
            domain=domain,
            budget=config.planner.oracle_budget,
        )
        traces = gen_traces(
            domain, instances, config.planner.oracle_budget, config.planner.oracle_strategy, config.workers
        )
    n = config.train_traces
    return ExperimentData(
        domain,
        tuple(traces[:n]),
        tuple(traces[n:]),
        tuple(with_goal_states(instances[n:], traces[n:])),
    )


def estimate_test_traces(model: TransitionModel, traces: Sequence[PlanTrace]) -> List[EstimatedTrace]:
    return estimate_traces(model, [as_partial(t) for t in traces])


@dataclass(frozen=True)
class Evaluation:
    precision: float
    recall: float
    states_scored: int
    solved: Tuple[bool, ...]
    plan_identity_rate: float
    results: Tuple[PlanResult, ...]

    @property
    def instances_solved(self) -> float:
        return sum(self.solved) / len(self.solved) if self.solved else 0.0

    def to_record(self, domain: Optional[GroundDomain] = None) -> Dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "states_scored": self.states_scored,
            "instances_solved": self.instances_solved,
            "solved_count": sum(self.solved),
            "test_count": len(self.solved),
            "plan_identity_rate": self.plan_identity_rate,
            "plans": [r.to_record(domain) for r in self.results],
        }


def evaluate_models(
    domain: GroundDomain,
    learned: LearnedDomainModel,
    selector: ActionSelector,
    test_traces: Sequence[PlanTrace],
    test_instances: Sequence[Instance],
    planner: PlannerSettings,
) -> Evaluation:
    """
    Score state estimates on the test traces and plan every test instance.

    Plan identity compares against each test trace's actions, which are the
    oracle plans of the test instances.
    """
    if not test_instances:
        raise EmptyInput("No test instances")
    with stage("plan"):
        results = tuple(
            plan(learned, selector, inst, planner.expansion_budget, planner.top_k, planner.goal_mode)
            for inst in test_instances
        )
    with stage("eval"):
        model = learned.sequence_model
        scores = score_estimates(estimate_test_traces(model, test_traces), test_traces, domain.num_propositions)
        precision, recall = aggregate(scores)
        solved = tuple(solved_mask(domain, test_instances, results))
        identity = plan_identity_rate(results, [t.actions for t in test_traces], solved)
    return Evaluation(precision, recall, len(scores), solved, identity, results)


def run_cell(
    config: RunConfig, data: ExperimentData, observe_pct: int, output_dir: Optional[Path] = None
) -> Tuple[ExperimentRow, List[float], List[Path]]:
    """
    Mask, train, extract, train the selector, plan and score for one percentage.

    Returns the report row, the learner's loss curve and the paths of the
    artifacts written under ``output_dir/pct<NNN>``.
    """
    domain = data.domain
    seeds = config.seeds
    fingerprint = domain.fingerprint()
    cell_log = logger.bind(stage="sweep", observation_pct=observe_pct)
    cell_log.info(f"Running {domain.name} at {observe_pct}% observation")

    with stage("mask"):
        partial = mask_traces(data.train_traces, observe_pct, seeds.mask)
    with stage("train"):
        model = SequenceModel(
            domain.num_propositions,
            domain.num_actions,
            config.learner,
            seed=seeds.learner,
            domain_fingerprint=fingerprint,
        )
        model, curve = train(model, partial, config.learner, seed=seeds.learner)
    with stage("extract"):
        estimated = estimate_traces(model, partial)
        learned = learned_model_from_estimates(model, estimated)
    with stage("train-selector"):
        pairs = build_pairs(
            estimated,
            lambda s: bridge_state(model, s),
            domain.num_actions,
            config.selector.pair_budget_factor,
            seeds.selector,
        )
        selector, selector_curve = train_selector(pairs, config.selector, seeds.selector, fingerprint)
    evaluation = evaluate_models(domain, learned, selector, data.test_traces, data.test_instances, config.planner)

    artifacts: List[Path] = []
    if output_dir is not None:
        with stage("write"):
            cell_dir = Path(output_dir) / f"pct{observe_pct:03d}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            save_learned_model(cell_dir / "model.ckpt", learned)
            save_selector(cell_dir / "selector.ckpt", selector)
            (cell_dir / "preconditions.txt").write_text(precondition_report(learned, domain), encoding="utf-8")
            artifacts = [cell_dir / "model.ckpt", cell_dir / "selector.ckpt", cell_dir / "preconditions.txt"]

    row = ExperimentRow(
        observation_pct=observe_pct,
        precision=evaluation.precision,
        recall=evaluation.recall,
        instances_solved=evaluation.instances_solved,
        plan_identity_rate=evaluation.plan_identity_rate,
        train_loss_final=curve[-1] if curve else float("nan"),
        seeds=seeds_label(vars(seeds)),
        solved_count=sum(evaluation.solved),
        test_count=len(evaluation.solved),
        states_scored=evaluation.states_scored,
        selector_loss_final=selector_curve[-1] if selector_curve else float("nan"),
    )
    cell_log.info(
        f"{observe_pct}%: P={row.precision:.4f} R={row.recall:.4f} "
        f"solved={row.solved_count}/{row.test_count} identity={row.plan_identity_rate:.3f}"
    )
    return row, curve, artifacts


def _run_cell_job(args):
    return run_cell(*args)


def run_experiment(
    config: RunConfig, output_dir: Union[str, Path, None] = None, data: Optional[ExperimentData] = None
) -> Tuple[ExperimentReport, List[Path]]:
    """
    Run every configured observation percentage.

    Cells run in `config.workers` processes when more than one is
    configured; rows keep the configured percentage order either way.

    Raises
    ------
    StageError
        Wrapping the first failure, with the name of the stage it came from.
    """
    config.validate()
    if data is None:
        data = prepare_data(config)
    out = Path(output_dir) if output_dir is not None else None
    jobs = [(config, data, pct, out) for pct in config.observation_percentages]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(job) for job in jobs]

    report = ExperimentReport(
        rows=[row for row, _, _ in results],
        config_fingerprint=config.fingerprint(),
        seeds=dict(vars(config.seeds)),
        loss_curves={row.observation_pct: curve for row, curve, _ in results},
    )
    artifacts = [p for _, _, paths in results for p in paths]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / REPORT_FILE, report)
        (out / SUMMARY_FILE).write_text(report_markdown(report), encoding="utf-8")
        artifacts += [out / REPORT_FILE, out / SUMMARY_FILE]
    return report, artifacts
