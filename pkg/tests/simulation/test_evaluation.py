import numpy as np
import pytest

from src.common import exceptions
from src.data.models import Dataset
from src.model.models import ModelSpec
from src.model.network import unflatten
from src.simulation import evaluation
from src.simulation.evaluation import evaluate_centralized


@pytest.fixture
def one_hot_set():
    labels = np.tile(np.arange(10), 5)
    return Dataset(name="one-hot", features=np.eye(10)[labels], labels=labels, num_classes=10)


@pytest.fixture
def linear_spec():
    return ModelSpec(input_dim=10, hidden_dims=[], output_classes=10)


def test_evaluate_perfect_predictor(one_hot_set, linear_spec):
    params = np.zeros(linear_spec.parameter_count)
    weights, _ = unflatten(params, linear_spec)[0]
    weights[...] = 100.0 * np.eye(10)

    accuracy, loss = evaluate_centralized(params, linear_spec, one_hot_set)

    assert accuracy == 1.0
    assert loss < 1e-12


def test_evaluate_uniform_logits(one_hot_set, linear_spec):
    accuracy, loss = evaluate_centralized(np.zeros(linear_spec.parameter_count), linear_spec, one_hot_set)

    assert accuracy == pytest.approx(0.1)
    assert loss == pytest.approx(np.log(10.0), abs=1e-12)


def test_evaluate_in_chunks_matches_single_pass(one_hot_set, linear_spec, monkeypatch):
    params = np.random.default_rng(3).normal(size=linear_spec.parameter_count)
    expected = evaluate_centralized(params, linear_spec, one_hot_set)

    monkeypatch.setattr(evaluation, "EVAL_CHUNK", 7)
    accuracy, loss = evaluate_centralized(params, linear_spec, one_hot_set)

    assert accuracy == expected[0]
    assert loss == pytest.approx(expected[1], rel=1e-12)


def test_evaluate_empty_set(linear_spec):
    empty = Dataset(name="empty", features=np.zeros((0, 10)), labels=np.zeros(0, dtype=np.int64), num_classes=10)

    with pytest.raises(exceptions.ShapeError, match="is empty"):
        evaluate_centralized(np.zeros(linear_spec.parameter_count), linear_spec, empty)


def test_evaluate_feature_mismatch(one_hot_set):
    spec = ModelSpec(input_dim=3, hidden_dims=[], output_classes=10)

    with pytest.raises(exceptions.ShapeError):
        evaluate_centralized(np.zeros(spec.parameter_count), spec, one_hot_set)
