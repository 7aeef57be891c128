"""
Server aggregation rules.

Every rule works on the pseudo-gradient, the sample-weighted mean client delta
``delta = sum_k (n_k / n) * (w_k - w_t)``, except FedMedian which takes the coordinate-wise
median of the client weights themselves. Updates are ordered by client id before any
arithmetic, so results do not depend on arrival order.
"""

from logging import getLogger

import numpy as np

from src.common import exceptions
from src.model.models import ParameterVector
from src.strategies.models import ClientUpdate, StrategyConfig, StrategyKind, StrategyState

logger = getLogger(__name__)


def _stack(global_params: ParameterVector, updates: list[ClientUpdate]) -> tuple[np.ndarray, np.ndarray]:
    """Client weights as a (clients, parameters) matrix in client-id order, plus the sample counts."""
    if not updates:
        msg = "Cannot aggregate an empty set of client updates"
        logger.error(msg)
        raise exceptions.ProtocolError(msg)

    ordered = sorted(updates, key=lambda update: update.client_id)
    for update in ordered:
        if update.new_params.shape != global_params.shape:
            msg = (
                f"Client {update.client_id} sent {update.new_params.shape[0]} parameters, "
                f"global model has {global_params.shape[0]}"
            )
            logger.error(msg)
            raise exceptions.ShapeError(msg)

    weights = np.stack([update.new_params for update in ordered])
    samples = np.array([update.num_samples for update in ordered], dtype=np.float64)
    return weights, samples


def weighted_mean(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Mean of ``rows`` with ``weights`` normalised to sum to one."""
    return (weights / weights.sum()) @ rows


def pseudo_gradient(global_params: ParameterVector, updates: list[ClientUpdate]) -> ParameterVector:
    weights, samples = _stack(global_params, updates)
    return weighted_mean(weights - global_params, samples)


def aggregate_fedavg(global_params: ParameterVector, updates: list[ClientUpdate]) -> ParameterVector:
    return global_params + pseudo_gradient(global_params, updates)


def _zeros_if_unset(buffer: np.ndarray | None, like: np.ndarray) -> np.ndarray:
    return np.zeros_like(like) if buffer is None else buffer


def aggregate_fedavgm(
    global_params: ParameterVector, updates: list[ClientUpdate], state: StrategyState, cfg: StrategyConfig
) -> tuple[ParameterVector, StrategyState]:
    """Server momentum: ``v' = momentum * v + delta``, ``w' = w + server_lr * v'``."""
    delta = pseudo_gradient(global_params, updates)
    velocity = cfg.momentum * _zeros_if_unset(state.momentum_buffer, delta) + delta
    new_state = state.model_copy(update={"momentum_buffer": velocity, "round_index": state.round_index + 1})
    return global_params + cfg.server_lr * velocity, new_state


def _adaptive_step(
    global_params: ParameterVector,
    first: np.ndarray,
    second: np.ndarray,
    state: StrategyState,
    cfg: StrategyConfig,
) -> tuple[ParameterVector, StrategyState]:
    new_state = state.model_copy(
        update={"first_moment": first, "second_moment": second, "round_index": state.round_index + 1}
    )
    return global_params + cfg.server_lr * first / (np.sqrt(second) + cfg.tau), new_state


def aggregate_fedadam(
    global_params: ParameterVector, updates: list[ClientUpdate], state: StrategyState, cfg: StrategyConfig
) -> tuple[ParameterVector, StrategyState]:
    """Adam on the pseudo-gradient, without bias correction."""
    delta = pseudo_gradient(global_params, updates)
    first = cfg.beta1 * _zeros_if_unset(state.first_moment, delta) + (1.0 - cfg.beta1) * delta
    second = cfg.beta2 * _zeros_if_unset(state.second_moment, delta) + (1.0 - cfg.beta2) * delta * delta
    return _adaptive_step(global_params, first, second, state, cfg)


def aggregate_fedadagrad(
    global_params: ParameterVector, updates: list[ClientUpdate], state: StrategyState, cfg: StrategyConfig
) -> tuple[ParameterVector, StrategyState]:
    """Adagrad on the pseudo-gradient; squared deltas accumulate without decay."""
    delta = pseudo_gradient(global_params, updates)
    first = cfg.beta1 * _zeros_if_unset(state.first_moment, delta) + (1.0 - cfg.beta1) * delta
    second = _zeros_if_unset(state.second_moment, delta) + delta * delta
    return _adaptive_step(global_params, first, second, state, cfg)


def aggregate_fedmedian(global_params: ParameterVector, updates: list[ClientUpdate]) -> ParameterVector:
    """Unweighted coordinate-wise median; even counts take the mean of the two middle values."""
    weights, _ = _stack(global_params, updates)
    return np.median(weights, axis=0)


def aggregate_fedprox(global_params: ParameterVector, updates: list[ClientUpdate]) -> ParameterVector:
    # The proximal term acts during local training; server side is plain FedAvg.
    return aggregate_fedavg(global_params, updates)


def dp_clip(
    update_delta: ParameterVector, clip_norm: float, norm: float | None = None
) -> tuple[ParameterVector, bool]:
    """
    Scale ``update_delta`` into the L2 ball of radius ``clip_norm``. ``norm`` is the delta's L2 norm
    when already measured.

    :return: tuple of the clipped delta and whether the original norm was already within the ball.
    """
    if norm is None:
        norm = float(np.linalg.norm(update_delta))
    if norm <= clip_norm:
        return update_delta.copy(), True
    return update_delta * (clip_norm / norm), False


def adapt_clip_norm(clip_norm: float, unclipped_fraction: float, cfg: StrategyConfig) -> float:
    """Geometric update moving the clip norm toward the target unclipped quantile."""
    return clip_norm * float(np.exp(-cfg.dp_clip_lr * (unclipped_fraction - cfg.dp_target_quantile)))


def aggregate_dp(
    global_params: ParameterVector,
    updates: list[ClientUpdate],
    state: StrategyState,
    cfg: StrategyConfig,
    rng: np.random.Generator,
) -> tuple[ParameterVector, StrategyState]:
    """
    FedAvg with server-side Gaussian noise and adaptive clipping.

    Client deltas are clipped to the current norm, averaged with uniform weights, and noised with
    standard deviation ``noise_multiplier * clip / K``. The clip norm then follows the fraction of
    clients that were under it. A ``pre_clip_norm`` measured on receipt stands in for the delta norm.
    """
    weights, _ = _stack(global_params, updates)
    num_clients = weights.shape[0]
    clip_norm = cfg.dp_initial_clip if state.clip_norm is None else state.clip_norm

    ordered = sorted(updates, key=lambda update: update.client_id)
    clipped_rows, below = [], []
    for update, row in zip(ordered, weights - global_params):
        clipped, was_below = dp_clip(row, clip_norm, update.pre_clip_norm)
        clipped_rows.append(clipped)
        below.append(was_below)

    mean_delta = weighted_mean(np.stack(clipped_rows), np.ones(num_clients))
    noise_std = cfg.dp_noise_multiplier * clip_norm / num_clients
    noise = rng.normal(0.0, noise_std, size=mean_delta.shape) if noise_std > 0.0 else np.zeros_like(mean_delta)

    unclipped_fraction = sum(below) / num_clients
    new_clip = adapt_clip_norm(clip_norm, unclipped_fraction, cfg)
    logger.debug(f"DP round: clip {clip_norm:.6g} -> {new_clip:.6g}, unclipped fraction {unclipped_fraction:.2f}")

    new_state = state.model_copy(
        update={
            "clip_norm": new_clip,
            "round_index": state.round_index + 1,
            "noise_rng_state": rng.bit_generator.state,
        }
    )
    return global_params + (mean_delta + noise), new_state


STATELESS_RULES = {
    StrategyKind.FEDAVG: aggregate_fedavg,
    StrategyKind.FEDMEDIAN: aggregate_fedmedian,
    StrategyKind.FEDPROX: aggregate_fedprox,
}

STATEFUL_RULES = {
    StrategyKind.FEDAVGM: aggregate_fedavgm,
    StrategyKind.FEDADAM: aggregate_fedadam,
    StrategyKind.FEDADAGRAD: aggregate_fedadagrad,
}
