"""Component-level anomaly localization.

Attributes the SOM quantization error of each row to individual sensors via
the per-feature residual against the row's BMU, thresholds each sensor with
the baseline mean + 3 std rule, and ranks sensors by their cumulative count
of over-threshold rows.
"""

import csv

import numpy as np

from .my_logger import my_logger
from .som import (DimensionMismatchException, EmptyBaselineException,
                  check_rows, best_matching_units)


class SensorAnomalyReport:
    """Definition for SensorAnomalyReport class.

    Holds the cumulative anomaly count per sensor and the ranking of sensors
    by count, highest first, ties broken by ascending sensor index.
    """
    def __init__(self, sensor_names, counts, thresholds):
        counts = np.asarray(counts, dtype=int)
        if len(sensor_names) != len(counts) or len(thresholds) != len(counts):
            raise DimensionMismatchException('names, counts and thresholds '
                                             'must have equal length')
        self._sensor_names = tuple(sensor_names)
        self._counts = counts
        self._thresholds = np.asarray(thresholds, dtype=float)
        self._ranking = sorted(range(len(counts)),
                               key=lambda j: (-counts[j], j))

    @property
    def sensor_names(self):
        return self._sensor_names

    @property
    def per_sensor_counts(self):
        """Returns C_j, the number of over-threshold rows per sensor."""
        return self._counts

    @property
    def per_sensor_thresholds(self):
        return self._thresholds

    @property
    def ranking(self):
        """Returns sensor indices sorted by count, descending."""
        return list(self._ranking)

    @property
    def top_sensor(self):
        """Returns the name of the sensor with the highest count."""
        return self._sensor_names[self._ranking[0]]

    def to_csv(self, filename):
        """Writes sensor_name, cumulative_count, rank rows in rank order."""
        with open(filename, 'w', newline='') as csvfile:
            csv_writer = csv.writer(csvfile)
            csv_writer.writerow(['sensor_name', 'cumulative_count', 'rank'])
            for rank, j in enumerate(self._ranking, start=1):
                csv_writer.writerow([self._sensor_names[j],
                                     int(self._counts[j]), rank])

    def __repr__(self):
        return 'SensorAnomalyReport(%s)' % ', '.join(
            '%s=%d' % (self._sensor_names[j], self._counts[j])
            for j in self._ranking)


def sensor_anomaly_scores(grid, rows):
    """Returns A, the absolute residual of each row against its BMU.

    A[i, j] = |x_ij - w_BMU(i),j|; the Euclidean norm of row i of A is the
    quantization error of row i.
    """
    rows = check_rows(rows, grid.n_features)
    indices, _ = best_matching_units(grid, rows)
    return np.abs(rows - grid.weights[indices])


def per_sensor_thresholds(grid, baseline):
    """Returns mean + 3 population std of each baseline column of A."""
    baseline = check_rows(baseline, grid.n_features)
    if baseline.shape[0] == 0:
        raise EmptyBaselineException('cannot derive thresholds from no rows')
    scores = sensor_anomaly_scores(grid, baseline)
    return scores.mean(axis=0) + 3 * scores.std(axis=0)


def cumulative_counts(scores, thresholds, sensor_names=None):
    """Counts, per sensor, the rows whose score is strictly above threshold.

    Args:
        scores (array): (n_rows x n_sensors) matrix A
        thresholds (array): one threshold per sensor
        sensor_names ([string]): names for the report; defaults to indices
    Returns:
        SensorAnomalyReport: counts and ranking
    """
    scores = np.asarray(scores, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != len(thresholds):
        raise DimensionMismatchException(
            '%d thresholds for scores of shape %r' % (len(thresholds),
                                                     scores.shape))
    if sensor_names is None:
        sensor_names = [str(j) for j in range(len(thresholds))]
    counts = np.sum(scores > thresholds, axis=0)
    return SensorAnomalyReport(sensor_names, counts, thresholds)


def localize(grid, baseline, rows, sensor_names):
    """Runs the full localization: thresholds from baseline, counts on rows."""
    my_logger.info('Started: anomaly localization')
    thresholds = per_sensor_thresholds(grid, baseline)
    report = cumulative_counts(sensor_anomaly_scores(grid, rows), thresholds,
                               sensor_names)
    my_logger.info('Sensor ranking: %r' % report)
    return report
