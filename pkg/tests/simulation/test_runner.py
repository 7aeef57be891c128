from concurrent.futures import ThreadPoolExecutor
from unittest.mock import Mock, patch

import numpy as np
import pytest
from pydantic import ValidationError

from src.common import exceptions
from src.common.seeding import derive_rng
from src.data.loaders import load_dataset_splits
from src.model.network import init_model
from src.simulation import runner
from src.simulation.client import Client, FitResult
from src.simulation.codec import decode_parameters, encode_parameters
from src.simulation.evaluation import evaluate_centralized
from src.simulation.models import ExperimentConfig
from src.simulation.runner import run_experiment, run_round
from src.strategies.models import ClientInstruction, StrategyConfig, StrategyKind
from src.strategies.strategy import Strategy
from tests.simulation.factories import synthetic_config


@pytest.fixture
def cfg():
    return synthetic_config()


@pytest.fixture
def splits(cfg):
    return load_dataset_splits(cfg.dataset, synthetic=cfg.synthetic)


def _clients(cfg, dataset, count, local=None):
    shards = np.array_split(np.arange(len(dataset)), count)
    local = local or cfg.local
    return [Client(client_id, dataset.subset(shard), cfg.model, local) for client_id, shard in enumerate(shards)]


def test_run_round_single_client_is_its_trained_weights(cfg, splits):
    client = _clients(cfg, splits.train, 1)[0]
    params = init_model(cfg.model)

    new_params, metrics = run_round(params, [client], Strategy(StrategyConfig()), 1, splits.test, master_seed=9)

    trained = client.fit(encode_parameters(params), ClientInstruction(round_index=0), derive_rng(9, 1, 0))
    np.testing.assert_allclose(new_params, decode_parameters(trained.payload), rtol=0, atol=1e-12)
    assert metrics.round == 1


def test_run_round_zero_learning_rate_keeps_model(cfg, splits):
    frozen = cfg.local.model_copy(update={"learning_rate": 0.0})
    clients = _clients(cfg, splits.train, 4, local=frozen)
    params = init_model(cfg.model)

    new_params, metrics = run_round(params, clients, Strategy(StrategyConfig()), 1, splits.test)

    np.testing.assert_array_equal(new_params, params)
    accuracy, loss = evaluate_centralized(params, cfg.model, splits.test)
    assert metrics.centralized_accuracy == accuracy
    assert metrics.centralized_loss == loss


def test_run_round_fedprox_without_mu_matches_fedavg(cfg, splits):
    clients = _clients(cfg, splits.train, 5)
    params = init_model(cfg.model)

    fedavg, _ = run_round(params, clients, Strategy(StrategyConfig()), 1, splits.test, master_seed=2)
    fedprox, _ = run_round(
        params, clients, Strategy(StrategyConfig(kind=StrategyKind.FEDPROX, prox_mu=0.0)), 1, splits.test, master_seed=2
    )

    np.testing.assert_array_equal(fedprox, fedavg)


def test_run_round_concurrent_matches_sequential(cfg, splits):
    clients = _clients(cfg, splits.train, 6)
    params = init_model(cfg.model)

    sequential, _ = run_round(params, clients, Strategy(StrategyConfig()), 1, splits.test, master_seed=4)
    with ThreadPoolExecutor(max_workers=3) as executor:
        concurrent, _ = run_round(
            params, clients, Strategy(StrategyConfig()), 1, splits.test, master_seed=4, executor=executor
        )

    np.testing.assert_array_equal(concurrent, sequential)


def test_run_round_records_timings(cfg, splits):
    clients = _clients(cfg, splits.train, 3)

    _, metrics = run_round(init_model(cfg.model), clients, Strategy(StrategyConfig()), 1, splits.test)

    assert metrics.train_time_s > 0.0
    assert metrics.comm_time_s > 0.0
    assert metrics.agg_time_s >= 0.0
    assert metrics.clip_norm is None


def test_run_round_reports_dp_clip_norm(cfg, splits):
    clients = _clients(cfg, splits.train, 3)
    strategy = Strategy(StrategyConfig(kind=StrategyKind.DP, dp_initial_clip=0.25))

    _, metrics = run_round(init_model(cfg.model), clients, strategy, 1, splits.test)

    assert metrics.clip_norm == 0.25



@pytest.mark.parametrize("kind, measured", [(StrategyKind.DP, True), (StrategyKind.FEDAVG, False)])
def test_run_round_measures_update_norms_for_dp(cfg, splits, kind, measured):
    clients = _clients(cfg, splits.train, 3)
    params = init_model(cfg.model)
    strategy = Strategy(StrategyConfig(kind=kind))

    with patch.object(strategy, "aggregate", wraps=strategy.aggregate) as aggregate:
        run_round(params, clients, strategy, 1, splits.test)

    updates = aggregate.call_args.args[1]
    for update in updates:
        if measured:
            assert update.pre_clip_norm == pytest.approx(np.linalg.norm(update.new_params - params), abs=1e-12)
        else:
            assert update.pre_clip_norm is None


def test_run_round_without_clients(cfg, splits):
    with pytest.raises(exceptions.ProtocolError, match="at least one client"):
        run_round(init_model(cfg.model), [], Strategy(StrategyConfig()), 1, splits.test)


def test_run_round_non_finite_client(cfg, splits):
    params = init_model(cfg.model)
    broken = Mock(spec=Client)
    broken.client_id = 3
    broken.fit.return_value = FitResult(
        payload=encode_parameters(np.full(params.shape, np.nan)),
        num_samples=10,
        train_seconds=0.1,
        serialize_seconds=0.0,
        deserialize_seconds=0.0,
    )

    with pytest.raises(exceptions.NumericError, match="Client 3 sent non-finite parameters in round 2"):
        run_round(params, [broken], Strategy(StrategyConfig()), 2, splits.test)


@pytest.mark.smoke
def test_run_experiment_learns_separable_data(cfg, splits):
    result = run_experiment(cfg, splits)

    assert result.status == "completed"
    assert result.num_rounds == 10
    assert result.rounds[-1].centralized_accuracy > 0.9
    assert result.final_params.shape == (cfg.model.parameter_count,)
    assert result.strategy_state.round_index == 10


def test_run_experiment_deterministic(splits):
    cfg = synthetic_config(rounds=3, partition={"mode": "dirichlet", "alpha": 0.5})

    first = run_experiment(cfg, splits)
    second = run_experiment(cfg, splits)

    learning = [(m.centralized_accuracy, m.centralized_loss) for m in first.rounds]
    assert learning == [(m.centralized_accuracy, m.centralized_loss) for m in second.rounds]
    np.testing.assert_array_equal(first.final_params, second.final_params)
    assert first.class_counts == second.class_counts


def test_run_experiment_records_partition(cfg, splits):
    result = run_experiment(cfg.model_copy(update={"rounds": 1}), splits)

    counts = np.array(result.class_counts)
    assert counts.shape == (10, 4)
    assert counts.sum() == len(splits.train)
    assert 0.0 <= result.label_skew < 0.2


def test_run_experiment_calls_on_round(cfg, splits):
    seen = []

    def record(result):
        seen.append((result.status, result.num_rounds, result.strategy_state.round_index, result.final_params.shape))

    run_experiment(cfg.model_copy(update={"rounds": 2}), splits, on_round=record)

    shape = (cfg.model.parameter_count,)
    assert seen == [("running", 1, 1, shape), ("running", 2, 2, shape)]


def test_run_experiment_aborts_with_partial_result(cfg, splits):
    real_run_round = runner.run_round

    def fail_in_second_round(*args, **kwargs):
        if args[3] == 2:
            raise exceptions.NumericError("Client 0 produced non-finite parameters in round 2")
        return real_run_round(*args, **kwargs)

    with patch("src.simulation.runner.run_round", side_effect=fail_in_second_round):
        with pytest.raises(exceptions.RunAborted, match="round 2") as err:
            run_experiment(cfg.model_copy(update={"rounds": 3}), splits)

    partial = err.value.partial
    assert partial.status == "aborted"
    assert partial.num_rounds == 1
    assert "round 2" in partial.error
    assert partial.strategy_state.round_index == 1


def test_run_experiment_rejects_model_data_mismatch(splits):
    cfg = synthetic_config(model={"input_dim": 5, "hidden_dims": [4]})

    with pytest.raises(exceptions.ConfigurationError, match="model expects 5"):
        run_experiment(cfg, splits)


def test_experiment_config_run_id():
    cfg = synthetic_config(strategy={"kind": "fedmedian"}, partition={"mode": "dirichlet", "alpha": 0.1}, replicate=2)

    assert cfg.run_id == "test-fedmedian-synthetic-dirichlet-a0.1-n10-R10-r2"
    assert synthetic_config().run_id == "test-fedavg-synthetic-iid-n10-R10-r0"


def test_experiment_config_fills_derived_values():
    cfg = synthetic_config(num_clients=7, master_seed=13, strategy={"kind": "fedadam"})

    assert cfg.partition.num_clients == 7
    assert cfg.partition.seed == 13
    assert cfg.model.init_seed == 13
    assert cfg.model.input_dim == 8
    assert cfg.model.output_classes == 4
    assert cfg.strategy.server_lr == 0.1


def test_experiment_config_cifar10_adaptive_server_lr():
    cfg = ExperimentConfig.model_validate({"dataset": "cifar10", "strategy": {"kind": "fedadam"}})

    assert cfg.strategy.server_lr == 0.01
    assert cfg.strategy == StrategyConfig.for_dataset("cifar10", kind="fedadam")


def test_experiment_config_rejects_unknown_adversary_client():
    with pytest.raises(ValidationError, match="not among the 10 clients"):
        synthetic_config(adversary={"kind": "scale", "scale_factor": 10, "affected_clients": [12]})


class Interrupted(Exception):
    pass


def _interrupted_after(cfg, splits, rounds):
    """Run ``cfg`` and keep the running result as it stood after ``rounds`` rounds."""
    kept = []

    def stop(result):
        if result.num_rounds == rounds:
            kept.append(result.model_copy(update={"rounds": list(result.rounds)}))
            raise Interrupted

    with pytest.raises(Interrupted):
        run_experiment(cfg, splits, on_round=stop)
    return kept[0]


@pytest.mark.parametrize("kind", ["fedavg", "fedadam", "dp"])
def test_run_experiment_resume_matches_uninterrupted_run(splits, kind):
    cfg = synthetic_config(rounds=4, strategy={"kind": kind})
    uninterrupted = run_experiment(cfg, splits)
    stored = _interrupted_after(cfg, splits, 2)

    resumed = run_experiment(cfg, splits, resume_from=stored)

    assert stored.status == "running"
    assert resumed.status == "completed"
    assert [metrics.round for metrics in resumed.rounds] == [1, 2, 3, 4]
    learning = [(m.centralized_accuracy, m.centralized_loss, m.clip_norm) for m in resumed.rounds]
    assert learning == [(m.centralized_accuracy, m.centralized_loss, m.clip_norm) for m in uninterrupted.rounds]
    np.testing.assert_array_equal(resumed.final_params, uninterrupted.final_params)
    assert resumed.strategy_state.round_index == 4


def test_run_experiment_resume_rejects_other_config(cfg, splits):
    stored = _interrupted_after(cfg, splits, 1)

    with pytest.raises(exceptions.ConfigurationError, match="different configuration"):
        run_experiment(cfg.model_copy(update={"master_seed": 99}), splits, resume_from=stored)


def test_run_experiment_resume_needs_checkpoint(cfg, splits):
    stored = _interrupted_after(cfg, splits, 1).model_copy(update={"final_params": None})

    with pytest.raises(exceptions.ConfigurationError, match="no checkpoint"):
        run_experiment(cfg, splits, resume_from=stored)
