import numpy as np

from src.common import exceptions
from src.data.models import Dataset
from src.model.models import ModelSpec, ParameterVector
from src.model.network import log_softmax, predict_logits

EVAL_CHUNK = 8192


def evaluate_centralized(params: ParameterVector, spec: ModelSpec, test_set: Dataset) -> tuple[float, float]:
    """
    Accuracy and mean cross-entropy of the global model on the server-held test set.

    :return: tuple of (accuracy, loss).
    """
    if len(test_set) == 0:
        raise exceptions.ShapeError(f"Evaluation set {test_set.name!r} is empty")

    correct = 0
    loss_sum = 0.0
    for start in range(0, len(test_set), EVAL_CHUNK):
        features = test_set.features[start : start + EVAL_CHUNK]
        labels = test_set.labels[start : start + EVAL_CHUNK]
        logits = predict_logits(params, spec, features)
        if labels.max() >= spec.output_classes:
            raise exceptions.ShapeError(f"Test labels exceed the model's {spec.output_classes} classes")
        correct += int((logits.argmax(axis=1) == labels).sum())
        loss_sum -= float(log_softmax(logits)[np.arange(labels.shape[0]), labels].sum())

    return correct / len(test_set), max(0.0, loss_sum / len(test_set))
