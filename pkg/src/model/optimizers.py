import numpy as np
from pydantic import Field

from src.common import exceptions
from src.common.schema import ArrayModel, FloatVector
from src.model.models import LocalOptimizerConfig, OptimizerKind, ParameterVector


class AdamState(ArrayModel):
    """First/second moment estimates and the number of steps taken."""

    first_moment: FloatVector
    second_moment: FloatVector
    step: int = Field(default=0, ge=0)

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(first_moment=np.zeros(size), second_moment=np.zeros(size))


OptimizerState = AdamState | None


def _check_gradient(params: ParameterVector, grad: ParameterVector) -> None:
    if params.shape != grad.shape:
        raise exceptions.ShapeError(f"Gradient shape {grad.shape} does not match parameters {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise exceptions.NumericError("Gradient contains non-finite values")


def local_sgd_step(
    params: ParameterVector, grad: ParameterVector, state: OptimizerState, cfg: LocalOptimizerConfig
) -> tuple[ParameterVector, OptimizerState]:
    _check_gradient(params, grad)
    return params - cfg.effective_learning_rate * grad, state


def local_adam_step(
    params: ParameterVector, grad: ParameterVector, state: OptimizerState, cfg: LocalOptimizerConfig
) -> tuple[ParameterVector, AdamState]:
    """Bias-corrected Adam update."""
    _check_gradient(params, grad)
    if state is None:
        state = AdamState.zeros(params.shape[0])

    step = state.step + 1
    first = cfg.adam_beta1 * state.first_moment + (1.0 - cfg.adam_beta1) * grad
    second = cfg.adam_beta2 * state.second_moment + (1.0 - cfg.adam_beta2) * grad * grad
    first_hat = first / (1.0 - cfg.adam_beta1**step)
    second_hat = second / (1.0 - cfg.adam_beta2**step)

    updated = params - cfg.effective_learning_rate * first_hat / (np.sqrt(second_hat) + cfg.adam_epsilon)
    return updated, state.model_copy(update={"first_moment": first, "second_moment": second, "step": step})


def initial_state(cfg: LocalOptimizerConfig, size: int) -> OptimizerState:
    """Fresh optimizer state, clients start every round from this."""
    if cfg.kind == OptimizerKind.ADAM:
        return AdamState.zeros(size)
    return None


STEP_FUNCTIONS = {
    OptimizerKind.SGD: local_sgd_step,
    OptimizerKind.ADAM: local_adam_step,
}


def optimizer_step(
    params: ParameterVector, grad: ParameterVector, state: OptimizerState, cfg: LocalOptimizerConfig
) -> tuple[ParameterVector, OptimizerState]:
    return STEP_FUNCTIONS[cfg.kind](params, grad, state, cfg)
