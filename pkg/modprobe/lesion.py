"""Lesion experiments: accuracy drop and class-wise drop range under neuron masking."""

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import InvalidArgumentError
from .model import MaskedModel, NetworkModel, mask_neurons, predict
from .neurons import Subcluster

EVAL_BATCH = 1000


@dataclass(frozen=True, eq=False)
class LesionResult:
    subcluster: Subcluster
    acc_drop: float
    class_drops: np.ndarray  # per-class accuracy drop
    class_range: float


def _correct(model: NetworkModel | MaskedModel, dataset: LabeledDataset) -> np.ndarray:
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot evaluate accuracy on an empty dataset")
    probs = predict(model, dataset.images, EVAL_BATCH)
    return probs.argmax(axis=1) == dataset.labels


def accuracy(model: NetworkModel | MaskedModel, dataset: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    return float(_correct(model, dataset).mean())


def lesion_importance(model: NetworkModel, c: Subcluster, test: LabeledDataset) -> float:
    return accuracy(model, test) - accuracy(mask_neurons(model, c), test)


def lesion_class_range(model: NetworkModel, c: Subcluster, test: LabeledDataset) -> tuple[np.ndarray, float]:
    result = LesionEvaluator(model, test).evaluate(c)
    return result.class_drops, result.class_range


class LesionEvaluator:
    """Scores many lesions of one model against a cached unlesioned baseline."""

    def __init__(self, model: NetworkModel, test: LabeledDataset):
        self.model = model
        self.test = test
        self.baseline = _correct(model, test)
        self.class_indices = [np.flatnonzero(test.labels == i) for i in range(test.class_count)]
        missing = [i for i, idx in enumerate(self.class_indices) if idx.size == 0]
        if missing:
            raise InvalidArgumentError(f"classes {missing} are absent from the test set")
        self.baseline_accuracy = float(self.baseline.mean())

    def evaluate(self, c: Subcluster) -> LesionResult:
        lesioned = _correct(mask_neurons(self.model, c), self.test)
        acc_drop = self.baseline_accuracy - float(lesioned.mean())
        class_drops = np.array(
            [float(self.baseline[idx].mean()) - float(lesioned[idx].mean()) for idx in self.class_indices]
        )
        return LesionResult(
            subcluster=c,
            acc_drop=acc_drop,
            class_drops=class_drops,
            class_range=float(class_drops.max() - class_drops.min()),
        )
