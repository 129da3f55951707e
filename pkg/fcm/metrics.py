"""Evaluation metrics and statistical validation.

Accuracy, AUC-ROC computed as the normalized Mann-Whitney statistic, and the
Mann-Whitney U test with a tie-corrected, continuity-corrected normal
approximation for the p-value.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc
from scipy.stats import rankdata


SIGNIFICANCE_LEVEL = 0.05
ALTERNATIVES = ('greater', 'less', 'two_sided')

ScoredLabels = namedtuple('ScoredLabels', 'scores labels')


class MetricsException(Exception):
    pass


class EmptyInputException(MetricsException):
    pass


class LengthMismatchException(MetricsException):
    pass


class SingleClassInputException(MetricsException):
    pass


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    alternative: str

    @property
    def significant(self):
        return self.p_value < SIGNIFICANCE_LEVEL


def accuracy(predictions, labels):
    """Returns the proportion of predictions equal to the labels."""
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.size == 0:
        raise EmptyInputException('accuracy of no predictions')
    if predictions.shape != labels.shape:
        raise LengthMismatchException('%d predictions for %d labels' %
                                      (predictions.size, labels.size))
    return float(np.mean(predictions == labels))


def _u_statistic(sample_a, sample_b):
    """U of sample_a: pairs with a > b plus half the ties, via mid-ranks."""
    ranks = rankdata(np.concatenate([sample_a, sample_b]))
    n1 = len(sample_a)
    return float(np.sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0)


def auc_roc(data):
    """Returns the area under the ROC curve of scores against 0/1 labels.

    Equals the fraction of (positive, negative) pairs ranked correctly, ties
    counting one half.
    """
    scores = np.asarray(data.scores, dtype=float)
    labels = np.asarray(data.labels)
    if scores.shape != labels.shape:
        raise LengthMismatchException('%d scores for %d labels' %
                                      (scores.size, labels.size))
    positives, negatives = scores[labels == 1], scores[labels == 0]
    if len(positives) == 0 or len(negatives) == 0:
        raise SingleClassInputException('AUC needs both classes')
    return _u_statistic(positives, negatives) / (len(positives) *
                                                 len(negatives))


def standard_normal_sf(z):
    """Survival function of the standard normal, 0.5 * erfc(z / sqrt(2))."""
    return 0.5 * float(erfc(z / np.sqrt(2.0)))


def u_p_value(u, n1, n2, tie_counts=(), alternative='greater'):
    """Returns the normal-approximation p-value of a Mann-Whitney U.

    The variance is tie-corrected and a 0.5 continuity correction is applied
    toward the mean. A sample whose values are all tied has p = 1.

    Args:
        u (float): U statistic of the first sample
        n1, n2 (int): sample sizes
        tie_counts ([int]): sizes of the groups of tied values in the pooled
            sample
        alternative (string): 'greater', 'less' or 'two_sided'
    """
    if alternative not in ALTERNATIVES:
        raise MetricsException('unknown alternative %r' % alternative)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    ties = sum(t ** 3 - t for t in tie_counts)
    variance = n1 * n2 / 12.0 * ((n + 1) - (ties / (n * (n - 1)) if n > 1
                                             else 0.0))
    if variance <= 0:
        return 1.0
    sigma = np.sqrt(variance)
    if alternative == 'greater':
        p = standard_normal_sf((u - mu - 0.5) / sigma)
    elif alternative == 'less':
        p = standard_normal_sf((mu - u - 0.5) / sigma)
    else:
        p = 2.0 * standard_normal_sf((abs(u - mu) - 0.5) / sigma)
    return float(min(1.0, max(0.0, p)))


def mann_whitney_u(sample_a, sample_b, alternative='greater'):
    """Mann-Whitney U test of sample_a against sample_b.

    'greater' tests whether sample_a stochastically dominates sample_b.
    """
    sample_a = np.asarray(sample_a, dtype=float)
    sample_b = np.asarray(sample_b, dtype=float)
    if sample_a.size == 0 or sample_b.size == 0:
        raise EmptyInputException('Mann-Whitney U needs two nonempty samples')
    u = _u_statistic(sample_a, sample_b)
    _, counts = np.unique(np.concatenate([sample_a, sample_b]),
                          return_counts=True)
    p = u_p_value(u, sample_a.size, sample_b.size, counts[counts > 1],
                  alternative)
    return UTestResult(u, p, alternative)
