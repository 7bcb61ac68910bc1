import numpy as np

from dfl_sentinel.exceptions import ConfigError, MetricsError
from dfl_sentinel.metrics import ConfusionMatrix, MetricsConfig, macro_f1, micro_f1, \
    f1_score, asr_label_flip, backdoor_accuracy, summarize

from .base_test import DFLSentinelTestCase


def _samples(cm):
    """Expand a confusion matrix back into per-sample label pairs."""
    y_true = []
    y_pred = []
    for i, row in enumerate(cm.counts):
        for j, count in enumerate(row):
            y_true.extend([i] * int(count))
            y_pred.extend([j] * int(count))
    return y_true, y_pred


class ConfusionMatrixTest(DFLSentinelTestCase):

    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([0, 0, 1, 2], [0, 1, 1, 0], 3)
        self.assertEqual(cm.counts.tolist(), [[1, 1, 0], [0, 1, 0], [1, 0, 0]])
        self.assertEqual(cm.total, 4)
        self.assertEqual(cm.num_classes, 3)

    def test_invalid(self):
        self.assertRaises(MetricsError, ConfusionMatrix, [[1, 2]])
        self.assertRaises(MetricsError, ConfusionMatrix, [[1, -1], [0, 0]])


class F1Test(DFLSentinelTestCase):

    def test_perfect(self):
        self.assertEqual(macro_f1(ConfusionMatrix(np.diag([5, 3, 7]))), 1.0)

    def test_worked_example(self):
        cm = ConfusionMatrix([[50, 0], [50, 0]])
        self.assertAlmostEqual(macro_f1(cm), 1.0 / 3)
        self.assertAlmostEqual(micro_f1(cm), 0.5)

    def test_absent_class_scores_zero(self):
        cm = ConfusionMatrix([[4, 0, 0], [0, 4, 0], [0, 0, 0]])
        self.assertAlmostEqual(macro_f1(cm), 2.0 / 3)

    def test_empty(self):
        self.assertRaises(MetricsError, macro_f1, ConfusionMatrix(np.zeros((2, 2))))
        self.assertRaises(MetricsError, micro_f1, ConfusionMatrix(np.zeros((2, 2))))

    def test_average_switch(self):
        cm = ConfusionMatrix([[50, 0], [50, 0]])
        self.assertEqual(f1_score(cm), macro_f1(cm))
        self.assertEqual(f1_score(cm, 'micro'), micro_f1(cm))
        self.assertRaises(MetricsError, f1_score, cm, 'weighted')

    def test_permutation_invariance(self):
        for _ in range(200):
            size = int(self.rng.integers(2, 6))
            counts = self.rng.integers(0, 21, size=(size, size))
            counts[0, 0] += 1
            order = self.rng.permutation(size)
            permuted = counts[np.ix_(order, order)]
            self.assertAlmostEqual(macro_f1(ConfusionMatrix(counts)),
                                   macro_f1(ConfusionMatrix(permuted)))

    def test_matches_counting_oracle(self):
        for _ in range(200):
            size = int(self.rng.integers(2, 6))
            counts = self.rng.integers(0, 21, size=(size, size))
            counts[0, 0] += 1
            cm = ConfusionMatrix(counts)
            y_true, y_pred = _samples(cm)
            scores = []
            for c in range(size):
                tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
                fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
                fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
                precision = tp / (tp + fp) if tp + fp else 0.0
                recall = tp / (tp + fn) if tp + fn else 0.0
                scores.append(2 * precision * recall / (precision + recall)
                              if precision + recall else 0.0)
            self.assertAlmostEqual(macro_f1(cm), sum(scores) / size)
            self.assertGreaterEqual(macro_f1(cm), 0.0)
            self.assertLessEqual(macro_f1(cm), 1.0)


class AttackMetricsTest(DFLSentinelTestCase):

    def test_asr_worked_example(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[1] = [50, 10, 40]
        self.assertEqual(asr_label_flip(ConfusionMatrix(counts), 1, 2), 0.4)

    def test_asr_bounds(self):
        self.assertEqual(asr_label_flip(ConfusionMatrix([[5, 0], [0, 5]]), 0, 1), 0.0)
        self.assertEqual(asr_label_flip(ConfusionMatrix([[0, 5], [0, 5]]), 0, 1), 1.0)

    def test_asr_no_support(self):
        self.assertIsNone(asr_label_flip(ConfusionMatrix([[0, 0], [3, 2]]), 0, 1))

    def test_ba_worked_example(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[0] = [10, 0, 60]
        counts[1] = [0, 10, 20]
        counts[2] = [0, 0, 10]
        cm = ConfusionMatrix(counts)
        self.assertEqual(cm.total, 110)
        self.assertEqual(backdoor_accuracy(cm, 2), 0.8)
        self.assertEqual(backdoor_accuracy(cm, 2, 110), 0.8)

    def test_ba_bounds(self):
        self.assertEqual(backdoor_accuracy(ConfusionMatrix([[5, 0], [0, 5]]), 1), 0.0)
        self.assertEqual(backdoor_accuracy(ConfusionMatrix([[0, 5], [0, 5]]), 1), 1.0)

    def test_ba_only_target_samples(self):
        self.assertIsNone(backdoor_accuracy(ConfusionMatrix([[0, 0], [0, 4]]), 1))

    def test_match_counting_oracles(self):
        for _ in range(200):
            size = int(self.rng.integers(2, 6))
            counts = self.rng.integers(0, 21, size=(size, size))
            source, target = self.rng.choice(size, 2, replace=False)
            cm = ConfusionMatrix(counts)
            y_true, y_pred = _samples(cm)
            support = sum(1 for t in y_true if t == source)
            flipped = sum(1 for t, p in zip(y_true, y_pred) if t == source and p == target)
            asr = asr_label_flip(cm, source, target)
            if support:
                self.assertAlmostEqual(asr, flipped / support)
            else:
                self.assertIsNone(asr)
            kept = sum(1 for t, p in zip(y_true, y_pred) if t == target and p == target)
            hits = sum(1 for t, p in zip(y_true, y_pred) if t != target and p == target)
            ba = backdoor_accuracy(cm, target)
            if len(y_true) - kept:
                self.assertAlmostEqual(ba, hits / (len(y_true) - kept))
            else:
                self.assertIsNone(ba)


class SummarizeTest(DFLSentinelTestCase):

    def test_summarize(self):
        self.assertEqual(summarize([1.0, 3.0, None]), {'mean': 2.0, 'std': 1.0, 'n': 2})
        self.assertEqual(summarize([None]), {'mean': None, 'std': None, 'n': 0})

    def test_config(self):
        self.assertEqual(MetricsConfig().f1_average, 'macro')
        self.assertRaises(ConfigError, MetricsConfig, f1_average='weighted')
