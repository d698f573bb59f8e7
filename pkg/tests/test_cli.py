import json

import pytest

from vecplan.cli import build_parser, dispatch
from vecplan.domain_file import read_domain
from vecplan.strips_core import Instance, validate_plan
from vecplan.trace_pipeline import PartialTrace, read_instances, read_traces, write_instances


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / "run"


def _run(config_file, out, *args):
    return dispatch([*args, "--config", str(config_file), "-o", str(out)])


def test_pipeline_chains_through_default_files(tiny_config_file, run_dir, capsys):
    assert _run(tiny_config_file, run_dir, "gen") == 0
    assert _run(tiny_config_file, run_dir, "mask", "--pct", "40") == 0
    assert _run(tiny_config_file, run_dir, "train") == 0
    assert _run(tiny_config_file, run_dir, "extract") == 0
    assert _run(tiny_config_file, run_dir, "train-selector", "--export-pairs", str(run_dir / "pairs.jsonl")) == 0
    assert _run(tiny_config_file, run_dir, "plan") == 0
    assert _run(tiny_config_file, run_dir, "eval") == 0

    domain = read_domain(run_dir / "domain.txt")
    partial = read_traces(run_dir / "partial_traces.jsonl", domain)
    assert len(partial) == 8 and all(isinstance(t, PartialTrace) for t in partial)
    assert len(json.loads((run_dir / "loss_curve.json").read_text(encoding="utf-8"))) <= 3
    assert (run_dir / "preconditions.txt").read_text(encoding="utf-8").startswith("# learned preconditions")
    assert (run_dir / "pairs.jsonl").is_file()

    instances = read_instances(run_dir / "test_instances.jsonl", domain)
    records = [json.loads(line) for line in (run_dir / "plans.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [r["instance"] for r in records] == list(range(len(instances)))
    for inst, record in zip(instances, records):
        if record["outcome"] == "plan":
            assert validate_plan(domain, inst, [domain.action_id(n) for n in record["plan"]])

    metrics = json.loads((run_dir / "eval.json").read_text(encoding="utf-8"))
    assert metrics["test_count"] == len(instances)
    assert 0.0 <= metrics["precision"] <= 1.0
    assert "precision=" in capsys.readouterr().out

    manifest = json.loads((run_dir / "train.manifest.json").read_text(encoding="utf-8"))
    assert set(manifest["artifacts"]) == {"model.ckpt", "loss_curve.json"}
    assert manifest["seeds"]["learner"] == 13
    assert (run_dir / "train.stages.json").is_file()
    assert (run_dir / "run.log.jsonl").is_file()


def test_trivial_instance_prints_empty_plan(tiny_config_file, run_dir, capsys):
    assert _run(tiny_config_file, run_dir, "gen") == 0
    assert _run(tiny_config_file, run_dir, "mask", "--pct", "100") == 0
    assert _run(tiny_config_file, run_dir, "train") == 0
    assert _run(tiny_config_file, run_dir, "extract") == 0
    assert _run(tiny_config_file, run_dir, "train-selector") == 0
    capsys.readouterr()

    domain = read_domain(run_dir / "domain.txt")
    start = domain.state_from_names(["at(c1,l1)", "at-ferry(l1)", "empty-ferry"])
    instance_file = run_dir / "trivial.jsonl"
    goal = domain.state_from_names(["at(c1,l1)"])
    write_instances(instance_file, [Instance(start, goal)], domain)
    assert _run(tiny_config_file, run_dir, "plan", "--instance", str(instance_file), "--top-k", "2") == 0
    assert capsys.readouterr().out == ""
    record = json.loads((run_dir / "plans.jsonl").read_text(encoding="utf-8"))
    assert record["outcome"] == "plan" and record["plan"] == []
    manifest = json.loads((run_dir / "plan.manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["Planner"]["TopK"] == 2


def test_usage_errors_exit_with_two(tiny_config_file, run_dir):
    assert dispatch(["gen", "--frobnicate"]) == 2
    assert dispatch(["mask", "--pct", "50"]) == 2
    assert dispatch([]) == 2
    assert _run(tiny_config_file, run_dir, "gen", "--set", "Learner.Epochs=-1") == 2
    assert _run(tiny_config_file, run_dir, "gen", "--set", "Learner.Nope=1") == 2


def test_output_path_that_is_a_file_exits_with_two(tiny_config_file, tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    assert _run(tiny_config_file, blocker, "gen") == 2
    assert "vecplan gen" in capsys.readouterr().err
    assert blocker.read_text() == "not a directory"


def test_missing_inputs_exit_with_one(tiny_config_file, run_dir, capsys):
    assert _run(tiny_config_file, run_dir, "train") == 1
    assert "vecplan train" in capsys.readouterr().err
    assert (run_dir / "train.stages.json").is_file()
    assert not (run_dir / "train.manifest.json").exists()


def test_sweep_writes_report_and_manifest(tiny_config_file, run_dir, capsys):
    assert _run(tiny_config_file, run_dir, "sweep") == 0
    assert (run_dir / "report.csv").read_text(encoding="utf-8").startswith("observation_pct,precision,recall")
    manifest = json.loads((run_dir / "sweep.manifest.json").read_text(encoding="utf-8"))
    assert "report.csv" in manifest["artifacts"]
    assert "pct100/model.ckpt" in manifest["artifacts"]
    assert manifest["config_fingerprint"]
    assert capsys.readouterr().out.startswith("| Metric | 100% |")


def test_every_command_is_registered():
    parser = build_parser()
    for command in ("gen", "train", "extract", "train-selector", "plan", "eval", "sweep"):
        assert parser.parse_args([command]).command == command
    assert parser.parse_args(["mask", "--pct", "20"]).pct == 20
