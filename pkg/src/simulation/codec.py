import io

import numpy as np

from src.model.models import ParameterVector


def encode_parameters(params: ParameterVector) -> bytes:
    """Serialize a parameter vector to ``.npy`` bytes, the payload sent between server and clients."""
    buffer = io.BytesIO()
    np.save(buffer, params, allow_pickle=False)
    return buffer.getvalue()


def decode_parameters(payload: bytes) -> ParameterVector:
    return np.load(io.BytesIO(payload), allow_pickle=False)
