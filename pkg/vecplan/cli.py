"""
Command-line entry point.

Every subcommand works inside one output directory (``-o``, else
`OutputDir` from the config, else ``$VECPLAN_OUTPUT``, else ``runs``) and
reads and writes the fixed file names below unless a path flag overrides
them, so the commands chain without extra arguments:

    vecplan gen -o run
    vecplan mask -o run --pct 40
    vecplan train -o run
    vecplan extract -o run
    vecplan train-selector -o run
    vecplan eval -o run

Each run writes ``<command>.manifest.json`` (config, seeds, artifact hashes)
and a JSON-lines log ``run.log.jsonl`` into the output directory.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from loguru import logger

from vecplan.config import GOAL_MODES, OBSERVATION_PERCENTAGES, RunConfig, apply_overrides, load_config
from vecplan.domain_file import read_domain, write_domain
from vecplan.eval_harness import (
    evaluate_models,
    precision_trend_violations,
    prepare_data,
    report_markdown,
    run_experiment,
)
from vecplan.event_logger import RunLogger
from vecplan.exceptions import VecPlanError
from vecplan.gnn_plan import format_plan, plan
from vecplan.heuristic_learner import build_pairs, load_selector, save_selector, train_selector, write_pairs
from vecplan.model_extraction import (
    bridge_state,
    build_learned_model,
    estimate_traces,
    load_learned_model,
    precondition_report,
    save_learned_model,
)
from vecplan.psg_learner import SequenceModel, load_model, save_model, train
from vecplan.strips_core import GroundDomain
from vecplan.trace_pipeline import (
    PartialTrace,
    PlanTrace,
    as_partial,
    mask_traces,
    read_instances,
    read_traces,
    write_instances,
    write_traces,
)

DOMAIN_FILE: str = "domain.txt"
TRAIN_TRACES_FILE: str = "train_traces.jsonl"
TEST_TRACES_FILE: str = "test_traces.jsonl"
TEST_INSTANCES_FILE: str = "test_instances.jsonl"
PARTIAL_TRACES_FILE: str = "partial_traces.jsonl"
MODEL_FILE: str = "model.ckpt"
LOSS_CURVE_FILE: str = "loss_curve.json"
LEARNED_FILE: str = "learned.ckpt"
PRECONDITIONS_FILE: str = "preconditions.txt"
SELECTOR_FILE: str = "selector.ckpt"
PLANS_FILE: str = "plans.jsonl"
EVAL_FILE: str = "eval.json"
LOG_FILE: str = "run.log.jsonl"

LOG_FORMAT: str = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {extra[stage]} | {message}"

EXIT_OK: int = 0
EXIT_FAILURE: int = 1
EXIT_USAGE: int = 2


def setup_logging(level: str, output_dir: Optional[Path] = None) -> None:
    """Human-readable stderr sink plus a serialized sink in the output directory."""
    logger.remove()
    logger.configure(extra={"stage": "-"})
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    if output_dir is not None:
        logger.add(output_dir / LOG_FILE, level="DEBUG", serialize=True, mode="a", encoding="utf-8")


class Context:
    """Resolved config, output directory and run recorder for one command."""

    def __init__(self, args: argparse.Namespace, config: RunConfig):
        self.args = args
        self.config = config
        self.output_dir = Path(args.output) if args.output else config.resolve_output_dir()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.run = RunLogger(self.output_dir, args.command)

    def path(self, flag: Optional[str], default_name: str) -> Path:
        return Path(flag) if flag else self.output_dir / default_name

    def domain(self, flag: Optional[str] = None, near: Optional[Path] = None) -> GroundDomain:
        if flag:
            return read_domain(flag)
        base = near.parent if near is not None else self.output_dir
        return read_domain(base / DOMAIN_FILE)

    def wrote(self, *paths: Path) -> None:
        self.run.add_artifacts(paths)


def _as_partial_traces(traces: Sequence) -> List[PartialTrace]:
    return [as_partial(t) if isinstance(t, PlanTrace) else t for t in traces]


def _plan_traces(traces: Sequence, source: Path) -> List[PlanTrace]:
    if not all(isinstance(t, PlanTrace) for t in traces):
        raise VecPlanError(f"{source} must hold fully observed plan traces")
    return list(traces)


# ------------------------------------------------------------ commands


def cmd_gen(ctx: Context) -> None:
    config = ctx.config
    ctx.run.start_stage("gen")
    data = prepare_data(config)
    domain_path = ctx.path(None, DOMAIN_FILE)
    train_path = ctx.path(None, TRAIN_TRACES_FILE)
    test_path = ctx.path(None, TEST_TRACES_FILE)
    instances_path = ctx.path(None, TEST_INSTANCES_FILE)
    write_domain(domain_path, data.domain)
    write_traces(train_path, data.train_traces, data.domain)
    write_traces(test_path, data.test_traces, data.domain)
    write_instances(instances_path, data.test_instances, data.domain)
    ctx.wrote(domain_path, train_path, test_path, instances_path)
    ctx.run.end_stage(
        "gen",
        domain=data.domain.name,
        propositions=data.domain.num_propositions,
        actions=data.domain.num_actions,
        train_traces=len(data.train_traces),
        test_instances=len(data.test_instances),
    )


def cmd_mask(ctx: Context) -> None:
    args = ctx.args
    domain = ctx.domain(args.domain)
    source = ctx.path(args.traces, TRAIN_TRACES_FILE)
    traces = _plan_traces(read_traces(source, domain), source)
    ctx.run.start_stage("mask")
    partial = mask_traces(traces, args.pct, ctx.config.seeds.mask)
    out = ctx.path(args.out, PARTIAL_TRACES_FILE)
    write_traces(out, partial, domain)
    ctx.wrote(out)
    observed = sum(len(o) for t in partial for o in t.observations)
    ctx.run.end_stage("mask", traces=len(partial), observation_pct=args.pct, observed_propositions=observed)


def cmd_train(ctx: Context) -> None:
    args, config = ctx.args, ctx.config
    domain = ctx.domain(args.domain)
    source = ctx.path(args.traces, PARTIAL_TRACES_FILE)
    dataset = _as_partial_traces(read_traces(source, domain))
    ctx.run.start_stage("train")
    model = SequenceModel(
        domain.num_propositions,
        domain.num_actions,
        config.learner,
        seed=config.seeds.learner,
        domain_fingerprint=domain.fingerprint(),
    )
    model, curve = train(model, dataset, config.learner, seed=config.seeds.learner)
    out = ctx.path(args.out, MODEL_FILE)
    save_model(out, model)
    curve_path = out.with_name(LOSS_CURVE_FILE)
    curve_path.write_text(json.dumps(curve) + "\n", encoding="utf-8")
    ctx.wrote(out, curve_path)
    ctx.run.end_stage("train", epochs=len(curve), final_loss=curve[-1] if curve else None)


def cmd_extract(ctx: Context) -> None:
    args = ctx.args
    domain = ctx.domain(args.domain)
    model = load_model(ctx.path(args.model, MODEL_FILE), domain.fingerprint())
    dataset = _as_partial_traces(read_traces(ctx.path(args.traces, PARTIAL_TRACES_FILE), domain))
    ctx.run.start_stage("extract")
    learned = build_learned_model(model, dataset)
    out = ctx.path(args.out, LEARNED_FILE)
    save_learned_model(out, learned)
    report_path = ctx.path(args.report, PRECONDITIONS_FILE)
    report_path.write_text(precondition_report(learned, domain), encoding="utf-8")
    ctx.wrote(out, report_path)
    ctx.run.end_stage("extract", seen_actions=len(learned.seen_actions), total_actions=domain.num_actions)


def cmd_train_selector(ctx: Context) -> None:
    args, config = ctx.args, ctx.config
    domain = ctx.domain(args.domain)
    fingerprint = domain.fingerprint()
    learned = load_learned_model(ctx.path(args.model, LEARNED_FILE), fingerprint)
    dataset = _as_partial_traces(read_traces(ctx.path(args.traces, PARTIAL_TRACES_FILE), domain))
    ctx.run.start_stage("train-selector")
    model = learned.sequence_model
    pairs = build_pairs(
        estimate_traces(model, dataset),
        lambda s: bridge_state(model, s),
        domain.num_actions,
        config.selector.pair_budget_factor,
        config.seeds.selector,
    )
    selector, curve = train_selector(pairs, config.selector, config.seeds.selector, fingerprint)
    out = ctx.path(args.out, SELECTOR_FILE)
    save_selector(out, selector)
    ctx.wrote(out)
    if args.export_pairs:
        write_pairs(args.export_pairs, pairs, domain)
        ctx.wrote(Path(args.export_pairs))
    ctx.run.end_stage("train-selector", pairs=len(pairs), epochs=len(curve), final_loss=curve[-1] if curve else None)


def cmd_plan(ctx: Context) -> None:
    args, planner = ctx.args, ctx.config.planner
    model_path = ctx.path(args.model, LEARNED_FILE)
    domain = ctx.domain(args.domain, near=model_path)
    fingerprint = domain.fingerprint()
    learned = load_learned_model(model_path, fingerprint)
    selector = load_selector(ctx.path(args.selector, SELECTOR_FILE), fingerprint)
    instances = read_instances(ctx.path(args.instance, TEST_INSTANCES_FILE), domain)

    ctx.run.start_stage("plan")
    out = ctx.path(args.out, PLANS_FILE)
    solved = 0
    with open(out, "w", encoding="utf-8") as f:
        for i, inst in enumerate(instances):
            result = plan(learned, selector, inst, planner.expansion_budget, planner.top_k, planner.goal_mode)
            solved += result.solved
            record = {"instance": i, **result.to_record(domain)}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            if len(instances) > 1:
                sys.stdout.write(f"; instance {i}: {result.outcome.value}\n")
            sys.stdout.write(format_plan(domain, result.plan) if result.solved else "; no plan\n")
    ctx.wrote(out)
    ctx.run.end_stage("plan", instances=len(instances), plans_found=solved)


def cmd_eval(ctx: Context) -> None:
    args, config = ctx.args, ctx.config
    model_path = ctx.path(args.model, LEARNED_FILE)
    domain = ctx.domain(args.domain, near=model_path)
    fingerprint = domain.fingerprint()
    learned = load_learned_model(model_path, fingerprint)
    selector = load_selector(ctx.path(args.selector, SELECTOR_FILE), fingerprint)
    traces_path = ctx.path(args.test_traces, TEST_TRACES_FILE)
    test_traces = _plan_traces(read_traces(traces_path, domain), traces_path)
    instances = read_instances(ctx.path(args.instance, TEST_INSTANCES_FILE), domain)

    ctx.run.start_stage("eval")
    evaluation = evaluate_models(domain, learned, selector, test_traces, instances, config.planner)
    out = ctx.path(args.out, EVAL_FILE)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(evaluation.to_record(domain), f, indent=2, ensure_ascii=False)
        f.write("\n")
    ctx.wrote(out)
    sys.stdout.write(
        f"precision={evaluation.precision:.4f} recall={evaluation.recall:.4f} "
        f"instances_solved={evaluation.instances_solved:.4f} "
        f"plan_identity={evaluation.plan_identity_rate:.4f}\n"
    )
    ctx.run.end_stage(
        "eval",
        precision=evaluation.precision,
        recall=evaluation.recall,
        instances_solved=evaluation.instances_solved,
    )


def cmd_sweep(ctx: Context) -> None:
    args, config = ctx.args, ctx.config
    ctx.run.start_stage("sweep")
    report, artifacts = run_experiment(config, ctx.output_dir)
    ctx.wrote(*artifacts)
    if args.plots:
        from vecplan.visualize import plot_loss_curves, plot_sweep

        sweep_png = ctx.output_dir / "sweep.png"
        loss_png = ctx.output_dir / "loss.png"
        if plot_sweep(report.rows, sweep_png, title=config.domain.family):
            ctx.wrote(sweep_png)
        if plot_loss_curves(report.loss_curves, loss_png):
            ctx.wrote(loss_png)
    sys.stdout.write(report_markdown(report))
    for lo, hi, drop in precision_trend_violations(report):
        logger.warning(f"Precision drops by {drop:.3f} from {lo}% to {hi}% observation")
    ctx.run.end_stage("sweep", rows=len(report.rows), config_fingerprint=report.config_fingerprint)


COMMANDS: Dict[str, Callable[[Context], None]] = {
    "gen": cmd_gen,
    "mask": cmd_mask,
    "train": cmd_train,
    "extract": cmd_extract,
    "train-selector": cmd_train_selector,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML config file (default: ./config.yml if present)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="Section.Key=value",
        help="Override a config value; repeatable",
    )
    common.add_argument("-o", "--output", type=str, help="Output directory")
    common.add_argument("--workers", type=int, help="Worker processes (default from config, 1)")
    common.add_argument("--log-level", type=str, help="stderr log level (DEBUG, INFO, ...)")
    common.add_argument("--domain", type=str, help="Domain file (default: domain.txt in the output directory)")

    parser = argparse.ArgumentParser(
        prog="vecplan",
        description="Learn vectorized domain models from partially observed traces and plan with them.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sub.add_parser("gen", parents=[common], help="Generate a domain, instances and oracle traces")

    p = sub.add_parser("mask", parents=[common], help="Hide propositions of intermediate states")
    p.add_argument("--traces", type=str, help=f"Plan traces (default: {TRAIN_TRACES_FILE})")
    p.add_argument("--pct", type=int, required=True, choices=OBSERVATION_PERCENTAGES, help="Observed percentage")
    p.add_argument("--out", type=str, help=f"Output file (default: {PARTIAL_TRACES_FILE})")

    p = sub.add_parser("train", parents=[common], help="Train the sequence model")
    p.add_argument("--traces", type=str, help=f"Training traces (default: {PARTIAL_TRACES_FILE})")
    p.add_argument("--out", type=str, help=f"Checkpoint (default: {MODEL_FILE})")

    p = sub.add_parser("extract", parents=[common], help="Extract preconditions into a learned model")
    p.add_argument("--model", type=str, help=f"Sequence model checkpoint (default: {MODEL_FILE})")
    p.add_argument("--traces", type=str, help=f"Training traces (default: {PARTIAL_TRACES_FILE})")
    p.add_argument("--out", type=str, help=f"Learned model checkpoint (default: {LEARNED_FILE})")
    p.add_argument("--report", type=str, help=f"Precondition report (default: {PRECONDITIONS_FILE})")

    p = sub.add_parser("train-selector", parents=[common], help="Train the action selector")
    p.add_argument("--model", type=str, help=f"Learned model checkpoint (default: {LEARNED_FILE})")
    p.add_argument("--traces", type=str, help=f"Training traces (default: {PARTIAL_TRACES_FILE})")
    p.add_argument("--out", type=str, help=f"Selector checkpoint (default: {SELECTOR_FILE})")
    p.add_argument("--export-pairs", type=str, help="Also write the state pairs as JSON lines")

    p = sub.add_parser("plan", parents=[common], help="Plan instances with the learned model")
    p.add_argument("--model", type=str, help=f"Learned model checkpoint (default: {LEARNED_FILE})")
    p.add_argument("--selector", type=str, help=f"Selector checkpoint (default: {SELECTOR_FILE})")
    p.add_argument("--instance", type=str, help=f"Instance file (default: {TEST_INSTANCES_FILE})")
    p.add_argument("--goal-mode", type=str, choices=GOAL_MODES, help="Goal targets to try")
    p.add_argument("--top-k", type=int, help="Recommended actions considered per state")
    p.add_argument("--budget", type=int, help="Expansion budget per instance")
    p.add_argument("--out", type=str, help=f"Result records (default: {PLANS_FILE})")

    p = sub.add_parser("eval", parents=[common], help="Score a learned model and selector on test data")
    p.add_argument("--model", type=str, help=f"Learned model checkpoint (default: {LEARNED_FILE})")
    p.add_argument("--selector", type=str, help=f"Selector checkpoint (default: {SELECTOR_FILE})")
    p.add_argument("--test-traces", type=str, help=f"Test traces (default: {TEST_TRACES_FILE})")
    p.add_argument("--instance", type=str, help=f"Instance file (default: {TEST_INSTANCES_FILE})")
    p.add_argument("--out", type=str, help=f"Metrics file (default: {EVAL_FILE})")

    p = sub.add_parser("sweep", parents=[common], help="Run the full pipeline for every observation percentage")
    p.add_argument("--plots", action="store_true", help="Also draw figures (needs matplotlib)")

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    assignments = list(args.overrides)
    if args.workers is not None:
        assignments.append(f"Workers={args.workers}")
    if args.log_level:
        assignments.append(f"LogLevel={args.log_level}")
    if getattr(args, "goal_mode", None):
        assignments.append(f"Planner.GoalMode={args.goal_mode}")
    if getattr(args, "top_k", None) is not None:
        assignments.append(f"Planner.TopK={args.top_k}")
    if getattr(args, "budget", None) is not None:
        assignments.append(f"Planner.ExpansionBudget={args.budget}")
    return apply_overrides(config, assignments).validate()


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, run one subcommand and return its exit code.

    Returns 0 on success, 1 when the pipeline fails and 2 on usage or config
    errors, including an output directory that cannot be created.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        config = resolve_config(args)
        ctx = Context(args, config)
        setup_logging(config.log_level, ctx.output_dir)
    except (VecPlanError, OSError, ValueError) as e:
        sys.stderr.write(f"vecplan {args.command}: {e}\n")
        return EXIT_USAGE

    try:
        COMMANDS[args.command](ctx)
    except (VecPlanError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"vecplan {args.command}: {e}\n")
        return EXIT_FAILURE
    finally:
        ctx.run.export_to_json(f"{args.command}.stages.json")

    ctx.run.write_manifest(config.to_dict(), dict(vars(config.seeds)), {"config_fingerprint": config.fingerprint()})
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
