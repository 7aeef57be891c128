import pytest
from typer.testing import CliRunner

from src.data.loaders import generate_synthetic
from src.model.models import ModelSpec


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def blobs():
    return generate_synthetic(num_classes=4, samples_per_class=50, input_dim=8, seed=3)


@pytest.fixture
def tiny_spec():
    return ModelSpec(input_dim=4, hidden_dims=[5], output_classes=3, init_seed=11)
