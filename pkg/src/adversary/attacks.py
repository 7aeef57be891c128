from logging import getLogger

import numpy as np

from src.adversary.models import AdversaryKind, AdversarySpec
from src.common.seeding import derive_rng
from src.model.models import ParameterVector
from src.strategies.models import ClientUpdate

logger = getLogger(__name__)


def corrupt(
    update: ClientUpdate, spec: AdversarySpec, global_params: ParameterVector, round_index: int = 0
) -> ClientUpdate:
    """
    Apply the configured attack to one client's update.

    Scale attacks stretch the delta from the global model; random attacks replace the weights with a
    standard normal vector drawn from (seed, round, client). Unaffected clients are returned as-is.
    """
    if not spec.affects(update.client_id):
        return update
    if spec.kind == AdversaryKind.SCALE and spec.scale_factor == 1.0:
        return update

    if spec.kind == AdversaryKind.SCALE:
        new_params = global_params + spec.scale_factor * (update.new_params - global_params)
    else:
        rng = derive_rng(spec.seed, round_index, update.client_id)
        new_params = rng.standard_normal(update.new_params.shape[0])

    logger.debug(f"Client {update.client_id} update corrupted ({spec.kind}) in round {round_index}")
    return update.model_copy(update={"new_params": new_params})
