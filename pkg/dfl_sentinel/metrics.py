"""Evaluation metrics computed from confusion matrices.

``counts[i][j]`` is the number of samples with true label ``i`` predicted
as ``j``."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, MetricsError

F1_AVERAGES = ('macro', 'micro')


class ConfusionMatrix(object):
    """Square matrix of non-negative prediction counts.

    :param counts: ``|L| x |L|`` array-like of non-negative integers.
    """

    __slots__ = ('counts',)

    def __init__(self, counts):
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise MetricsError("Confusion matrix must be square, got shape %s" % (counts.shape,))
        if (counts < 0).any():
            raise MetricsError("Confusion matrix counts must be non-negative")
        counts.setflags(write=False)
        self.counts = counts

    @classmethod
    def from_labels(cls, y_true, y_pred, num_classes):
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64),
                           np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts)

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return "ConfusionMatrix(%s)" % (self.counts.tolist(),)


@dataclass(frozen=True)
class MetricsConfig:
    f1_average: str = 'macro'

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        if self.f1_average not in F1_AVERAGES:
            return ["f1_average: must be one of %s, got %r" % (', '.join(F1_AVERAGES),
                                                                 self.f1_average)]
        return []


def _per_class_f1(cm):
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    support = counts.sum(axis=1)
    denom = predicted + support
    f1 = np.zeros_like(tp)
    nonzero = denom > 0
    # 2PR/(P+R) reduces to 2TP/(predicted + support)
    f1[nonzero] = 2.0 * tp[nonzero] / denom[nonzero]
    return f1


def macro_f1(cm):
    """Unweighted mean of per-class F1 scores.

    Classes with neither support nor predictions contribute 0."""
    if cm.total == 0:
        raise MetricsError("Cannot score an empty confusion matrix")
    return float(_per_class_f1(cm).mean())


def micro_f1(cm):
    """Micro-averaged F1, which equals accuracy for single-label data."""
    if cm.total == 0:
        raise MetricsError("Cannot score an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def f1_score(cm, average='macro'):
    if average == 'macro':
        return macro_f1(cm)
    if average == 'micro':
        return micro_f1(cm)
    raise MetricsError("Unknown F1 average %r" % (average,))


def asr_label_flip(cm, source, target):
    """Fraction of ``source``-labelled samples predicted as ``target``.

    :returns: The ratio, or ``None`` when there are no source samples."""
    row = cm.counts[source]
    support = int(row.sum())
    if support == 0:
        return None
    return float(row[target]) / support


def backdoor_accuracy(cm_b, target, b_size=None):
    """Fraction of triggered non-target samples classified as ``target``.

    ``cm_b`` is built from the triggered evaluation set with the original
    labels. ``b_size`` defaults to the matrix total.

    :returns: The ratio, or ``None`` when every sample is of the target
      class."""
    if b_size is None:
        b_size = cm_b.total
    c_tt = int(cm_b.counts[target, target])
    denom = b_size - c_tt
    if denom <= 0:
        return None
    return float(int(cm_b.counts[:, target].sum()) - c_tt) / denom


def summarize(values):
    """Mean, population standard deviation and count of the non-``None``
    values.

    :rtype: dict"""
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if present.size == 0:
        return {'mean': None, 'std': None, 'n': 0}
    return {'mean': float(present.mean()), 'std': float(present.std()),
            'n': int(present.size)}
