from enum import StrEnum

from pydantic import Field, NonNegativeInt

from src.common.schema import FrozenModel


class AdversaryKind(StrEnum):
    NONE = "none"
    SCALE = "scale"
    RANDOM = "random"


class AdversarySpec(FrozenModel):
    """Which clients misbehave and how."""

    kind: AdversaryKind = AdversaryKind.NONE
    scale_factor: float = 1.0
    affected_clients: frozenset[NonNegativeInt] = Field(default_factory=frozenset)
    seed: int = Field(default=0, ge=0)

    def affects(self, client_id: int) -> bool:
        return self.kind != AdversaryKind.NONE and client_id in self.affected_clients
