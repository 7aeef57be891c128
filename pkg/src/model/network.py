from logging import getLogger

import numpy as np

from src.common import exceptions
from src.model.models import ModelSpec, ParameterVector

logger = getLogger(__name__)

Layer = tuple[np.ndarray, np.ndarray]


def _check_spec(spec: ModelSpec) -> None:
    """Re-check dims, specs built with ``model_construct`` skip pydantic validation."""
    if spec.input_dim < 1 or spec.output_classes < 2 or any(dim < 1 for dim in spec.hidden_dims):
        msg = (
            f"Invalid model dimensions: input_dim={spec.input_dim}, "
            f"hidden_dims={spec.hidden_dims}, output_classes={spec.output_classes}"
        )
        logger.error(msg)
        raise exceptions.ConfigurationError(msg)


def unflatten(params: ParameterVector, spec: ModelSpec) -> list[Layer]:
    """
    Split a flat parameter vector into per-layer (weights, bias) views.

    Weights of each layer are stored row-major as (fan_in, fan_out), followed by the bias.
    The returned arrays are views, writing into them writes into ``params``.
    """
    if params.ndim != 1 or params.shape[0] != spec.parameter_count:
        raise exceptions.ShapeError(
            f"Parameter vector has shape {params.shape}, model expects ({spec.parameter_count},)"
        )

    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        weights = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def init_model(spec: ModelSpec) -> ParameterVector:
    """He-uniform weights drawn from ``init_seed``, zero biases."""
    _check_spec(spec)
    rng = np.random.default_rng(spec.init_seed)
    params = np.zeros(spec.parameter_count, dtype=np.float64)
    for weights, _ in unflatten(params, spec):
        limit = np.sqrt(6.0 / weights.shape[0])
        weights[...] = rng.uniform(-limit, limit, size=weights.shape)
    logger.debug(f"Initialized model with {params.shape[0]} parameters (seed {spec.init_seed})")
    return params


def _check_batch(spec: ModelSpec, features: np.ndarray, labels: np.ndarray | None = None) -> None:
    if features.ndim != 2 or features.shape[0] == 0:
        raise exceptions.ShapeError(f"Expected a non-empty (samples, features) batch, got shape {features.shape}")
    if features.shape[1] != spec.input_dim:
        raise exceptions.ShapeError(f"Batch has {features.shape[1]} features, model expects {spec.input_dim}")
    if labels is None:
        return
    if labels.shape != (features.shape[0],):
        raise exceptions.ShapeError(f"Got {labels.shape} labels for {features.shape[0]} samples")
    if labels.min() < 0 or labels.max() >= spec.output_classes:
        raise exceptions.ShapeError(f"Labels must lie in [0, {spec.output_classes})")


def _forward(layers: list[Layer], features: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    activations = [features]
    pre_activations = []
    hidden = features
    for weights, bias in layers[:-1]:
        z = hidden @ weights + bias
        pre_activations.append(z)
        hidden = np.maximum(z, 0.0)
        activations.append(hidden)
    weights, bias = layers[-1]
    return hidden @ weights + bias, activations, pre_activations


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_logits(params: ParameterVector, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    _check_batch(spec, features)
    logits, _, _ = _forward(unflatten(params, spec), features)
    return logits


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, never negative."""
    log_probs = log_softmax(logits)
    return float(max(0.0, -log_probs[np.arange(labels.shape[0]), labels].mean()))


def forward_loss_grad(
    params: ParameterVector, spec: ModelSpec, features: np.ndarray, labels: np.ndarray
) -> tuple[float, ParameterVector]:
    """
    Mean cross-entropy loss of the batch and its exact gradient with respect to ``params``.

    :return: tuple of loss and a gradient vector laid out like ``params``.
    """
    _check_batch(spec, features, labels)
    layers = unflatten(params, spec)
    logits, activations, pre_activations = _forward(layers, features)

    batch_size = features.shape[0]
    log_probs = log_softmax(logits)
    loss = float(max(0.0, -log_probs[np.arange(batch_size), labels].mean()))

    delta = np.exp(log_probs)
    delta[np.arange(batch_size), labels] -= 1.0
    delta /= batch_size

    grad = np.zeros_like(params)
    grad_layers = unflatten(grad, spec)
    for index in range(len(layers) - 1, -1, -1):
        grad_weights, grad_bias = grad_layers[index]
        grad_weights[...] = activations[index].T @ delta
        grad_bias[...] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ layers[index][0].T) * (pre_activations[index - 1] > 0.0)

    return loss, grad
