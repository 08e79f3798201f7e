"""AUC and log loss."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .gradients import mean_loss
from .model import predict_batch


class UndefinedMetricError(ValueError):
    """AUC needs at least one positive and one negative example."""


@dataclass(frozen=True)
class EvalResult:
    auc: float
    logloss: float
    n_examples: int
    n_positive: int

    def format(self):
        return f"auc={self.auc:.6f} logloss={self.logloss:.6f} n={self.n_examples}"


def _class_counts(labels):
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be 0 or 1")
    pos = int(np.count_nonzero(labels == 1.0))
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError(f"AUC undefined with {pos} positives and {neg} negatives")
    return labels, pos, neg


def auc(scores, labels):
    """Area under the ROC curve from average ranks; tied pairs count one half.

    ``(sum of positive ranks - P(P+1)/2) / (P*N)``. The numerator is an
    exact half-integer, so the result is the same single rounding as the
    pairwise count.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels, pos, neg = _class_counts(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    ranks = rankdata(scores, method="average")
    u = float(np.sum(ranks[labels == 1.0])) - pos * (pos + 1) / 2.0
    return u / (pos * neg)


def evaluate(params, config, dataset, chunk=4096):
    """AUC and mean log loss of the model on an encoded dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict_batch(dataset.indices, params, config, chunk=chunk)
    n_pos = int(np.count_nonzero(dataset.labels == 1.0))
    return EvalResult(auc(preds, dataset.labels), mean_loss(dataset.labels, preds),
                      len(dataset), n_pos)
