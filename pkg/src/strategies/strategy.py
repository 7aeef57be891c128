from logging import getLogger

from src.common.seeding import derive_rng
from src.model.models import ParameterVector
from src.strategies import aggregation
from src.strategies.models import ClientInstruction, ClientUpdate, StrategyConfig, StrategyKind, StrategyState

logger = getLogger(__name__)

# Stream key separating the DP noise generator from client training streams.
DP_NOISE_STREAM = 0x44500000


class Strategy:
    """
    One aggregation strategy with its persistent server state.

    The orchestrator asks it for the instruction that goes out with the global model, then hands
    it the round's updates; ``state`` is what gets checkpointed between rounds.
    """

    def __init__(self, config: StrategyConfig, seed: int = 0, state: StrategyState | None = None):
        self.config = config
        self.state = state or StrategyState(kind=config.kind)
        self._rng = derive_rng(seed, DP_NOISE_STREAM)
        if self.state.noise_rng_state is not None:
            self._rng.bit_generator.state = self.state.noise_rng_state

    @property
    def kind(self) -> StrategyKind:
        return self.config.kind

    def client_instruction(self) -> ClientInstruction:
        return ClientInstruction(
            round_index=self.state.round_index,
            prox_mu=self.config.prox_mu if self.kind == StrategyKind.FEDPROX else 0.0,
        )

    @property
    def clip_norm(self) -> float | None:
        if self.kind != StrategyKind.DP:
            return None
        return self.config.dp_initial_clip if self.state.clip_norm is None else self.state.clip_norm

    def aggregate(self, global_params: ParameterVector, updates: list[ClientUpdate]) -> ParameterVector:
        """Produce the next global model and advance the server state by one round."""
        logger.debug(f"Aggregating {len(updates)} updates with {self.kind}")
        if self.kind in aggregation.STATELESS_RULES:
            new_params = aggregation.STATELESS_RULES[self.kind](global_params, updates)
            self.state = self.state.model_copy(update={"round_index": self.state.round_index + 1})
        elif self.kind in aggregation.STATEFUL_RULES:
            new_params, self.state = aggregation.STATEFUL_RULES[self.kind](
                global_params, updates, self.state, self.config
            )
        else:
            new_params, self.state = aggregation.aggregate_dp(
                global_params, updates, self.state, self.config, self._rng
            )
        return new_params
