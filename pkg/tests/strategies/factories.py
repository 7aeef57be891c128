import numpy as np

from src.strategies.models import ClientUpdate


def make_updates(rows, samples=None) -> list[ClientUpdate]:
    samples = samples or [1] * len(rows)
    return [
        ClientUpdate(client_id=client_id, new_params=np.asarray(row, dtype=np.float64), num_samples=count)
        for client_id, (row, count) in enumerate(zip(rows, samples))
    ]


def random_updates(rng: np.random.Generator, num_clients: int = 5, size: int = 7) -> list[ClientUpdate]:
    rows = rng.normal(size=(num_clients, size))
    samples = rng.integers(1, 500, size=num_clients).tolist()
    return make_updates(list(rows), samples)


def consensus_updates(global_params: np.ndarray, num_clients: int = 4) -> list[ClientUpdate]:
    return make_updates([global_params.copy() for _ in range(num_clients)], list(range(1, num_clients + 1)))


def delta_updates(global_params: np.ndarray, delta: np.ndarray) -> list[ClientUpdate]:
    """A single client whose update moves the model by exactly ``delta``."""
    return make_updates([global_params + delta])
