import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from unittest.mock import patch

import pytest

from src.common import exceptions
from src.experiments import commands, persistence
from src.experiments.commands import execute_run
from src.experiments.config import parse_config
from src.experiments.persistence import ResultsPersistenceManager, build_bundle
from src.main import app
from src.simulation import runner as simulation_runner
from tests.experiments.factories import make_result

CONFIGS = Path(__file__).parents[2] / "configs"
STARTED_AT = datetime(2026, 1, 5, tzinfo=timezone.utc)

SMOKE = """
[experiment]
name = cli
dataset = synthetic
rounds = 2
num_clients = 4
master_seed = 3
workers = 2

[synthetic]
num_classes = 3
samples_per_class = 40
test_samples_per_class = 10
input_dim = 5

[model]
hidden_dims = 8

[local]
learning_rate = 0.01
batch_size = 8

[partition]
mode = iid, dirichlet
alpha = 0.5

[strategy]
kind = fedavg, fedmedian
"""

MNIST = """
[experiment]
name = needs-data
dataset = mnist
rounds = 1
"""


@pytest.fixture
def config_file(tmp_path):
    def write(text: str = SMOKE) -> Path:
        path = tmp_path / "experiment.ini"
        path.write_text(text)
        return path

    return write


def _learning_columns(directory):
    with (directory / persistence.ROUNDS_FILE).open(newline="") as file:
        return sorted((row["run_id"], row["round"], row["acc"], row["loss"]) for row in csv.DictReader(file))


def test_validate_shipped_config(runner):
    result = runner.invoke(app, ["validate", "--config", str(CONFIGS / "synthetic.ini")])

    assert result.exit_code == 0
    assert "smoke-fedavg-synthetic-iid-n10-R10-r0" in result.output
    assert "smoke-fedmedian-synthetic-dirichlet-a0.5-n10-R10-r0" in result.output
    assert "4 runs OK" in result.output


def test_validate_with_replicas(runner, config_file):
    result = runner.invoke(app, ["validate", "--config", str(config_file()), "--replicas", "2"])

    assert result.exit_code == 0
    assert "cli-fedavg-synthetic-iid-n4-R2-r1" in result.output
    assert "8 runs OK" in result.output


def test_validate_invalid_config(runner, config_file):
    path = config_file(SMOKE.replace("alpha = 0.5", "alpha = -1"))

    result = runner.invoke(app, ["validate", "--config", str(path)])

    assert result.exit_code == 1
    assert "partition.alpha" in result.output


def test_validate_missing_config(runner, tmp_path):
    result = runner.invoke(app, ["validate", "--config", str(tmp_path / "missing.ini")])

    assert result.exit_code == 1
    assert "Cannot read config file" in " ".join(result.output.split())


def test_run_missing_config(runner, tmp_path):
    out = tmp_path / "results"

    result = runner.invoke(app, ["run", "--config", str(tmp_path / "missing.ini"), "--out", str(out)])

    assert result.exit_code == 1
    assert "Cannot read config file" in " ".join(result.output.split())
    assert not out.exists()


def test_validate_config_is_a_directory(runner, tmp_path):
    result = runner.invoke(app, ["validate", "--config", str(tmp_path)])

    assert result.exit_code == 1


def test_run_writes_results(runner, config_file, tmp_path):
    out = tmp_path / "results"

    result = runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(out)])

    assert result.exit_code == 0
    assert "Wrote 4 runs" in result.output
    for name in (persistence.ROUNDS_FILE, persistence.SUMMARY_FILE, persistence.TABLE_FILE):
        assert (out / name).exists()
    run_dir = out / "cli-fedavg-synthetic-dirichlet-a0.5-n4-R2-r0"
    assert (run_dir / persistence.RUN_FILE).exists()
    assert (run_dir / persistence.CHECKPOINT_FILE).exists()
    assert len(_learning_columns(out)) == 4 * 2


def test_run_with_replicas_adds_means(runner, config_file, tmp_path):
    out = tmp_path / "results"

    result = runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(out), "--replicas", "2"])

    assert result.exit_code == 0
    with (out / persistence.SUMMARY_FILE).open(newline="") as file:
        rows = list(csv.DictReader(file))
    assert len(rows) == 8 + 4
    assert sum(row["replicate"] == "mean" for row in rows) == 4


def test_run_is_reproducible_across_jobs(runner, config_file, tmp_path):
    path = config_file()

    sequential = runner.invoke(app, ["run", "--config", str(path), "--out", str(tmp_path / "one")])
    parallel = runner.invoke(app, ["run", "--config", str(path), "--out", str(tmp_path / "two"), "--jobs", "2"])

    assert sequential.exit_code == 0
    assert parallel.exit_code == 0
    assert _learning_columns(tmp_path / "one") == _learning_columns(tmp_path / "two")


def test_run_seed_override(runner, config_file, tmp_path):
    out = tmp_path / "results"

    result = runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(out), "--seed", "123"])

    assert result.exit_code == 0
    run = json.loads((out / "cli-fedavg-synthetic-iid-n4-R2-r0" / persistence.RUN_FILE).read_text())
    assert run["metadata"]["master_seed"] == 123
    assert run["metadata"]["partition_seed"] == 123


def test_run_invalid_config(runner, config_file, tmp_path):
    path = config_file(SMOKE.replace("kind = fedavg, fedmedian", "kind = fedsgd"))

    result = runner.invoke(app, ["run", "--config", str(path), "--out", str(tmp_path / "results")])

    assert result.exit_code == 1
    assert "strategy.kind" in result.output


def test_run_without_data_directory(runner, config_file, tmp_path):
    result = runner.invoke(
        app,
        ["run", "--config", str(config_file(MNIST)), "--out", str(tmp_path / "results")],
        env={"FEDBENCH_DATA_DIR": None},
    )

    assert result.exit_code == 1
    assert "needs a data" in result.output


def test_run_with_empty_data_directory(runner, config_file, tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()

    result = runner.invoke(
        app,
        ["run", "--config", str(config_file(MNIST)), "--out", str(tmp_path / "results"), "--data-dir", str(data_dir)],
    )

    assert result.exit_code == 1
    assert not (tmp_path / "results" / persistence.SUMMARY_FILE).exists()


def test_run_aborted_writes_partial_results(runner, config_file, tmp_path):
    out = tmp_path / "results"
    partial = make_result(rounds=1).model_copy(
        update={"status": "aborted", "error": "Client 1 sent non-finite parameters in round 2"}
    )

    with patch(
        "src.experiments.commands.run_experiment",
        side_effect=exceptions.RunAborted("Run aborted in round 2", partial=partial),
    ):
        result = runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(out)])

    assert result.exit_code == 2
    assert "Aborted runs" in result.output
    run = json.loads((out / partial.config.run_id / persistence.RUN_FILE).read_text())
    assert run["metadata"]["status"] == "aborted"
    assert (out / persistence.SUMMARY_FILE).exists()


def test_run_numeric_failure(runner, config_file, tmp_path):
    with patch(
        "src.experiments.commands.run_experiment",
        side_effect=exceptions.NumericError("Gradient is not finite"),
    ):
        result = runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(tmp_path / "results")])

    assert result.exit_code == 2
    assert "Run failed" in result.output


def test_summarize_rebuilds_files(runner, tmp_path):
    out = tmp_path / "results"
    manager = ResultsPersistenceManager(out)
    for seed in range(2):
        result = make_result(rounds=3, seed=seed, replicate=seed)
        manager.save_run(result, build_bundle(result, STARTED_AT, STARTED_AT))

    result = runner.invoke(app, ["summarize", str(out)])

    assert result.exit_code == 0
    assert "fedavg" in result.output
    with (out / persistence.SUMMARY_FILE).open(newline="") as file:
        assert [row["replicate"] for row in csv.DictReader(file)] == ["0", "1", "mean"]
    assert (out / persistence.TABLE_FILE).exists()


def test_summarize_empty_directory(runner, tmp_path):
    result = runner.invoke(app, ["summarize", str(tmp_path)])

    assert result.exit_code == 0
    assert "No runs found" in result.output


def test_run_resume_continues_interrupted_run(runner, config_file, tmp_path):
    path = config_file(SMOKE.replace("rounds = 2", "rounds = 3"))
    cfg = parse_config(path)[0]
    interrupted = tmp_path / "interrupted"
    real_run_round = simulation_runner.run_round

    def stop_in_third_round(*args, **kwargs):
        if args[3] == 3:
            raise RuntimeError("worker killed")
        return real_run_round(*args, **kwargs)

    with patch("src.simulation.runner.run_round", side_effect=stop_in_third_round):
        with pytest.raises(RuntimeError, match="worker killed"):
            execute_run(cfg, interrupted)
    stored = ResultsPersistenceManager(interrupted).load_result(cfg.run_id)
    assert (stored.status, stored.num_rounds) == ("running", 2)

    resumed = runner.invoke(app, ["run", "--config", str(path), "--out", str(interrupted), "--resume"])
    fresh = runner.invoke(app, ["run", "--config", str(path), "--out", str(tmp_path / "fresh")])

    assert resumed.exit_code == 0
    assert fresh.exit_code == 0
    assert _learning_columns(interrupted) == _learning_columns(tmp_path / "fresh")
    assert ResultsPersistenceManager(interrupted).load_result(cfg.run_id).is_finished is True


def test_run_resume_skips_finished_runs(runner, config_file, tmp_path):
    out = tmp_path / "results"
    path = config_file()
    assert runner.invoke(app, ["run", "--config", str(path), "--out", str(out)]).exit_code == 0

    with patch("src.experiments.commands.run_experiment") as run_experiment:
        result = runner.invoke(app, ["run", "--config", str(path), "--out", str(out), "--resume"])

    assert result.exit_code == 0
    assert "Wrote 4 runs" in result.output
    run_experiment.assert_not_called()


def test_run_without_resume_starts_over(runner, config_file, tmp_path):
    out = tmp_path / "results"
    path = config_file()
    assert runner.invoke(app, ["run", "--config", str(path), "--out", str(out)]).exit_code == 0

    with patch("src.experiments.commands.run_experiment", wraps=commands.run_experiment) as run_experiment:
        result = runner.invoke(app, ["run", "--config", str(path), "--out", str(out)])

    assert result.exit_code == 0
    assert run_experiment.call_count == 4
    assert all(call.kwargs["resume_from"] is None for call in run_experiment.call_args_list)


def test_run_resume_with_changed_config(runner, config_file, tmp_path):
    out = tmp_path / "results"
    assert runner.invoke(app, ["run", "--config", str(config_file()), "--out", str(out)]).exit_code == 0
    for run_dir in out.iterdir():
        if (run_dir / persistence.RUN_FILE).exists():
            run = json.loads((run_dir / persistence.RUN_FILE).read_text())
            run["metadata"]["status"] = "running"
            (run_dir / persistence.RUN_FILE).write_text(json.dumps(run))
    path = config_file(SMOKE.replace("learning_rate = 0.01", "learning_rate = 0.02"))

    result = runner.invoke(app, ["run", "--config", str(path), "--out", str(out), "--resume"])

    assert result.exit_code == 1
    assert "different configuration" in " ".join(result.output.split())
