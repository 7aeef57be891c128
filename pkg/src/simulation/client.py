import time
from logging import getLogger

import numpy as np
from pydantic import Field

from src.common import exceptions
from src.common.schema import FrozenModel
from src.data.models import Dataset
from src.model.models import LocalOptimizerConfig, ModelSpec, ParameterVector
from src.model.network import forward_loss_grad
from src.model.optimizers import initial_state, optimizer_step
from src.simulation.codec import decode_parameters, encode_parameters
from src.strategies.models import ClientInstruction

logger = getLogger(__name__)


def train_local(
    global_params: ParameterVector,
    shard: Dataset,
    spec: ModelSpec,
    cfg: LocalOptimizerConfig,
    rng: np.random.Generator,
    prox_mu: float = 0.0,
) -> ParameterVector:
    """
    Run ``local_epochs`` passes of minibatch training over the shard, starting from the global model.

    Minibatch order comes from ``rng``; the last partial batch is kept. With ``prox_mu > 0`` the
    gradient of ``(mu / 2) * ||w - w_global||^2`` is added to every step.
    """
    params = global_params.copy()
    state = initial_state(cfg, params.shape[0])
    num_samples = len(shard)

    for _ in range(cfg.local_epochs):
        order = rng.permutation(num_samples)
        for start in range(0, num_samples, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad = forward_loss_grad(params, spec, shard.features[batch], shard.labels[batch])
            if prox_mu > 0.0:
                grad = grad + prox_mu * (params - global_params)
            params, state = optimizer_step(params, grad, state, cfg)

    return params


class FitResult(FrozenModel):
    """Encoded parameters a client returns after local training, with its own timings."""

    payload: bytes
    num_samples: int = Field(ge=1)
    train_seconds: float = Field(ge=0.0)
    serialize_seconds: float = Field(ge=0.0)
    deserialize_seconds: float = Field(ge=0.0)


class Client:
    """A simulated participant holding one disjoint shard of the training data."""

    def __init__(self, client_id: int, shard: Dataset, spec: ModelSpec, cfg: LocalOptimizerConfig):
        if len(shard) == 0:
            raise exceptions.ProtocolError(f"Client {client_id} has no training data")
        self.client_id = client_id
        self.shard = shard
        self.spec = spec
        self.cfg = cfg

    def __len__(self) -> int:
        return len(self.shard)

    def fit(self, payload: bytes, instruction: ClientInstruction, rng: np.random.Generator) -> FitResult:
        """Decode the broadcast model, train locally and encode the result for the server."""
        started = time.perf_counter()
        global_params = decode_parameters(payload)
        deserialize_seconds = time.perf_counter() - started

        started = time.perf_counter()
        try:
            params = train_local(global_params, self.shard, self.spec, self.cfg, rng, instruction.prox_mu)
        except exceptions.NumericError as err:
            msg = f"Client {self.client_id} failed in round {instruction.round_index + 1}: {err}"
            logger.error(msg)
            raise exceptions.NumericError(msg) from err
        train_seconds = time.perf_counter() - started

        if not np.all(np.isfinite(params)):
            msg = f"Client {self.client_id} produced non-finite parameters in round {instruction.round_index + 1}"
            logger.error(msg)
            raise exceptions.NumericError(msg)

        started = time.perf_counter()
        out = encode_parameters(params)
        serialize_seconds = time.perf_counter() - started

        logger.debug(f"Client {self.client_id} trained {len(self)} samples in {train_seconds:.3f}s")
        return FitResult(
            payload=out,
            num_samples=len(self),
            train_seconds=train_seconds,
            serialize_seconds=serialize_seconds,
            deserialize_seconds=deserialize_seconds,
        )
