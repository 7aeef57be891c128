import time
from collections.abc import Callable
from concurrent.futures import Executor, ThreadPoolExecutor
from logging import getLogger

import numpy as np

from src.adversary.attacks import corrupt
from src.adversary.models import AdversarySpec
from src.common import exceptions
from src.common.schema import TimingRecord
from src.common.seeding import derive_rng, derive_seed
from src.data.loaders import load_dataset_splits, select_subset
from src.data.models import Dataset, DatasetSplits
from src.data.partition import class_counts, label_skew, partition
from src.model.models import ParameterVector
from src.model.network import init_model
from src.simulation.client import Client, FitResult
from src.simulation.codec import decode_parameters, encode_parameters
from src.simulation.evaluation import evaluate_centralized
from src.simulation.models import ExperimentConfig, ExperimentResult, RoundMetrics
from src.strategies.models import ClientUpdate, StrategyKind
from src.strategies.strategy import Strategy

logger = getLogger(__name__)

TRAIN_SUBSET_STREAM = 1
EVAL_SUBSET_STREAM = 2


def run_round(
    global_params: ParameterVector,
    clients: list[Client],
    strategy: Strategy,
    round_idx: int,
    test_set: Dataset,
    master_seed: int = 0,
    adversary: AdversarySpec | None = None,
    executor: Executor | None = None,
) -> tuple[ParameterVector, RoundMetrics]:
    """
    Broadcast, train every client, aggregate and evaluate one communication round.

    Clients may train concurrently on ``executor``; their updates are committed in client order
    before aggregation. ``round_idx`` is 1-based.
    """
    if not clients:
        raise exceptions.ProtocolError("A round needs at least one client")

    instruction = strategy.client_instruction()
    clip_norm = strategy.clip_norm

    def dispatch(client: Client) -> tuple[float, FitResult]:
        started = time.perf_counter()
        payload = encode_parameters(global_params)
        serialize_seconds = time.perf_counter() - started
        rng = derive_rng(master_seed, round_idx, client.client_id)
        return serialize_seconds, client.fit(payload, instruction, rng)

    started = time.perf_counter()
    if executor is None:
        outcomes = [dispatch(client) for client in clients]
    else:
        outcomes = list(executor.map(dispatch, clients))
    train_time = time.perf_counter() - started

    updates = []
    for client, (broadcast_seconds, result) in zip(clients, outcomes):
        started = time.perf_counter()
        new_params = decode_parameters(result.payload)
        receive_seconds = time.perf_counter() - started
        if not np.all(np.isfinite(new_params)):
            msg = f"Client {client.client_id} sent non-finite parameters in round {round_idx}"
            logger.error(msg)
            raise exceptions.NumericError(msg)

        update = ClientUpdate(
            client_id=client.client_id,
            new_params=new_params,
            num_samples=result.num_samples,
            timing=TimingRecord(
                train_seconds=result.train_seconds,
                serialize_seconds=broadcast_seconds + result.serialize_seconds,
                deserialize_seconds=result.deserialize_seconds + receive_seconds,
            ),
        )
        if adversary is not None:
            update = corrupt(update, adversary, global_params, round_idx)
        if strategy.kind == StrategyKind.DP:
            norm = float(np.linalg.norm(update.new_params - global_params))
            update = update.model_copy(update={"pre_clip_norm": norm})
        updates.append(update)

    started = time.perf_counter()
    new_global = strategy.aggregate(global_params, updates)
    agg_time = time.perf_counter() - started
    if not np.all(np.isfinite(new_global)):
        msg = f"Aggregation with {strategy.kind} produced non-finite parameters in round {round_idx}"
        logger.error(msg)
        raise exceptions.NumericError(msg)

    accuracy, loss = evaluate_centralized(new_global, clients[0].spec, test_set)
    metrics = RoundMetrics(
        round=round_idx,
        centralized_accuracy=accuracy,
        centralized_loss=loss,
        agg_time_s=agg_time,
        train_time_s=train_time,
        comm_time_s=sum(update.timing.communication_seconds for update in updates),
        clip_norm=clip_norm,
    )
    return new_global, metrics


def _prepare_data(cfg: ExperimentConfig, splits: DatasetSplits | None) -> tuple[Dataset, Dataset]:
    splits = splits or load_dataset_splits(cfg.dataset, cfg.data_dir, cfg.synthetic)
    train = select_subset(splits.train, cfg.train_subset, derive_seed(cfg.master_seed, TRAIN_SUBSET_STREAM))
    test = select_subset(splits.test, cfg.eval_subset, derive_seed(cfg.master_seed, EVAL_SUBSET_STREAM))

    for dataset in (train, test):
        if dataset.input_dim != cfg.model.input_dim:
            msg = f"Dataset {dataset.name!r} has {dataset.input_dim} features, model expects {cfg.model.input_dim}"
            logger.error(msg)
            raise exceptions.ConfigurationError(msg)
        if dataset.num_classes > cfg.model.output_classes:
            msg = f"Dataset {dataset.name!r} has {dataset.num_classes} classes, model has {cfg.model.output_classes}"
            logger.error(msg)
            raise exceptions.ConfigurationError(msg)
    return train, test


def _check_resumable(cfg: ExperimentConfig, previous: ExperimentResult) -> None:
    ignored = {"data_dir", "workers"}
    if previous.config.model_dump(exclude=ignored) != cfg.model_dump(exclude=ignored):
        msg = f"Stored run {previous.config.run_id} was produced by a different configuration"
        logger.error(msg)
        raise exceptions.ConfigurationError(msg)
    if previous.final_params is None or previous.strategy_state is None:
        msg = f"Stored run {cfg.run_id} has no checkpoint to resume from"
        logger.error(msg)
        raise exceptions.ConfigurationError(msg)
    if previous.strategy_state.round_index != previous.num_rounds:
        msg = (
            f"Checkpoint of {cfg.run_id} is at round {previous.strategy_state.round_index} "
            f"but {previous.num_rounds} rounds are recorded"
        )
        logger.error(msg)
        raise exceptions.ConfigurationError(msg)


def run_experiment(
    cfg: ExperimentConfig,
    splits: DatasetSplits | None = None,
    on_round: Callable[[ExperimentResult], None] | None = None,
    resume_from: ExperimentResult | None = None,
) -> ExperimentResult:
    """
    Execute ``cfg.rounds`` rounds and return the metric series with the final model and server state.

    ``on_round`` sees the running result after every round. With ``resume_from`` the run continues
    after the last round of that result, from its global model and server state; the learning
    metrics of the rounds it adds match those of an uninterrupted run.

    Configuration problems surface before the first round. A numeric failure mid-run raises
    ``RunAborted`` carrying the rounds completed so far.
    """
    if resume_from is not None:
        _check_resumable(cfg, resume_from)
    logger.info(f"Starting run {cfg.run_id}: {cfg.rounds} rounds, {cfg.num_clients} clients")
    train, test = _prepare_data(cfg, splits)
    part = partition(train, cfg.partition)
    clients = [
        Client(client_id, train.subset(indices), cfg.model, cfg.local)
        for client_id, indices in enumerate(part.assignments)
    ]

    result = ExperimentResult(
        config=cfg,
        class_counts=class_counts(part, train).tolist(),
        label_skew=label_skew(part, train),
        status="running",
    )
    if resume_from is None:
        strategy = Strategy(cfg.strategy, seed=cfg.master_seed)
        params = init_model(cfg.model)
    else:
        strategy = Strategy(cfg.strategy, seed=cfg.master_seed, state=resume_from.strategy_state)
        params = resume_from.final_params
        result.rounds = list(resume_from.rounds)
        logger.info(f"Resuming run {cfg.run_id} after round {resume_from.num_rounds}")

    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(clients))) as executor:
        for round_idx in range(result.num_rounds + 1, cfg.rounds + 1):
            state = strategy.state
            try:
                params, metrics = run_round(
                    params, clients, strategy, round_idx, test, cfg.master_seed, cfg.adversary, executor
                )
            except exceptions.NumericError as err:
                result.status = "aborted"
                result.error = str(err)
                result.final_params = params
                result.strategy_state = state
                logger.error(f"Run {cfg.run_id} aborted in round {round_idx}: {err}")
                raise exceptions.RunAborted(str(err), partial=result) from err

            result.rounds.append(metrics)
            result.final_params = params
            result.strategy_state = strategy.state
            logger.info(
                f"[{cfg.run_id}] round {round_idx}/{cfg.rounds}: acc={metrics.centralized_accuracy:.4f} "
                f"loss={metrics.centralized_loss:.4f} agg={metrics.agg_time_s:.4f}s "
                f"train={metrics.train_time_s:.3f}s comm={metrics.comm_time_s:.4f}s"
            )
            if on_round is not None:
                on_round(result)

    result.status = "completed"
    return result
