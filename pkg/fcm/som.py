"""Self-Organizing Map anomaly detector.

The SOM is trained on normalized baseline data. Each new observation is mapped
to its best matching unit (BMU); the distance to the BMU codebook vector (the
quantization error) is the anomaly score, and the detection threshold is the
baseline mean error plus three standard deviations.
"""

import csv
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np
from cached_property import cached_property
from tqdm import tqdm

from .misc import rng
from .my_logger import my_logger


Bmu = namedtuple('Bmu', 'index quantization_error')
Detection = namedtuple('Detection', 'quantization_errors is_anomaly')


class SomException(Exception):
    pass


class EmptyBaselineException(SomException):
    pass


class NonFiniteInputException(SomException):
    pass


class DimensionMismatchException(SomException):
    pass


@dataclass(frozen=True)
class SomConfig:
    """SOM training parameters. initial_radius defaults to half the larger
    grid side."""
    grid_rows: int = 50
    grid_cols: int = 50
    iterations: int = 50
    initial_learning_rate: float = 0.5
    initial_radius: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1 or self.iterations < 1:
            raise SomException('grid size and iterations must be positive')
        if not 0.0 < self.initial_learning_rate <= 1.0:
            raise SomException('initial_learning_rate must be in (0, 1]')
        if self.initial_radius is None:
            object.__setattr__(self, 'initial_radius',
                               max(self.grid_rows, self.grid_cols) / 2.0)
        if not self.initial_radius > 0:
            raise SomException('initial_radius must be positive')

    def learning_rate(self, t):
        """Returns the learning rate for epoch t."""
        return self.initial_learning_rate * np.exp(-t / self.iterations)

    def radius(self, t):
        """Returns the neighborhood radius for epoch t."""
        return self.initial_radius * np.exp(-t / self.iterations)


@dataclass(frozen=True)
class AnomalyThreshold:
    """Quantization-error threshold: mean + 3 population std of baseline."""
    mean_error: float
    std_error: float
    threshold: float

    @classmethod
    def from_errors(cls, errors):
        errors = np.asarray(errors, dtype=float)
        mu, sigma = float(np.mean(errors)), float(np.std(errors))
        return cls(mu, sigma, mu + 3 * sigma)


class SomGrid:
    """Definition for SomGrid class.

    A trained codebook: one weight vector per neuron, neurons laid out on a
    rectangular grid in row-major order (index = row * grid_cols + col).
    """
    def __init__(self, weights, grid_rows, grid_cols):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != grid_rows * grid_cols:
            raise SomException('expected %d codebook vectors, got shape %r' %
                               (grid_rows * grid_cols, weights.shape))
        if not np.all(np.isfinite(weights)):
            raise NonFiniteInputException('codebook contains NaN or Inf')
        weights.setflags(write=False)
        self._weights = weights
        self._grid_rows = grid_rows
        self._grid_cols = grid_cols

    @property
    def weights(self):
        """Returns the (n_neurons x n_features) codebook."""
        return self._weights

    @property
    def grid_rows(self):
        return self._grid_rows

    @property
    def grid_cols(self):
        return self._grid_cols

    @cached_property
    def n_neurons(self):
        return self._weights.shape[0]

    @cached_property
    def n_features(self):
        return self._weights.shape[1]

    @cached_property
    def coordinates(self):
        """Returns the (row, col) grid position of every neuron."""
        return grid_coordinates(self.grid_rows, self.grid_cols)

    def __repr__(self):
        return 'SomGrid(%dx%d, %d features)' % (self.grid_rows,
                                                self.grid_cols,
                                                self.n_features)


def grid_coordinates(grid_rows, grid_cols):
    """Returns neuron grid positions in row-major order."""
    rows, cols = np.divmod(np.arange(grid_rows * grid_cols), grid_cols)
    return np.column_stack([rows, cols]).astype(float)


def check_rows(rows, n_features=None):
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if n_features is not None and rows.shape[1] != n_features:
        raise DimensionMismatchException('expected %d features, got %d' %
                                         (n_features, rows.shape[1]))
    return rows


def _distances(weights, x):
    return np.sqrt(np.sum((weights - x) ** 2, axis=1))


def train_som(baseline, config):
    """Trains a SOM on the baseline rows.

    The codebook is initialized uniformly within the per-feature range of the
    baseline. Each epoch visits every row in order; the BMU and its Gaussian
    grid neighborhood move toward the row, with learning rate and radius
    decaying exponentially per epoch.

    Args:
        baseline (array): normalized (n_rows x n_features) matrix
        config (SomConfig): training parameters
    Returns:
        SomGrid: the trained map
    """
    baseline = check_rows(baseline)
    if baseline.shape[0] == 0:
        raise EmptyBaselineException('cannot train a SOM on no rows')
    if not np.all(np.isfinite(baseline)):
        raise NonFiniteInputException('baseline contains NaN or Inf')

    my_logger.info('Started: SOM training (%dx%d grid, %d iterations, '
                   '%d rows)' % (config.grid_rows, config.grid_cols,
                                 config.iterations, baseline.shape[0]))
    generator = rng(config.seed)
    n_neurons = config.grid_rows * config.grid_cols
    weights = generator.uniform(baseline.min(axis=0), baseline.max(axis=0),
                                (n_neurons, baseline.shape[1]))
    coords = grid_coordinates(config.grid_rows, config.grid_cols)

    for t in tqdm(range(config.iterations), desc='SOM epochs', disable=None,
                  leave=False):
        rate = config.learning_rate(t)
        two_r2 = 2.0 * config.radius(t) ** 2
        for x in baseline:
            bmu = int(np.argmin(_distances(weights, x)))
            d2 = np.sum((coords - coords[bmu]) ** 2, axis=1)
            h = np.exp(-d2 / two_r2)
            weights += (rate * h)[:, None] * (x - weights)

    my_logger.info('Finished: SOM training')
    return SomGrid(weights, config.grid_rows, config.grid_cols)


def find_bmu(grid, x):
    """Returns the best matching unit of x and its quantization error.

    Ties are broken by the lowest neuron index.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n_features,):
        raise DimensionMismatchException('expected %d features, got %r' %
                                         (grid.n_features, x.shape))
    distances = _distances(grid.weights, x)
    index = int(np.argmin(distances))
    return Bmu(index, float(distances[index]))


def best_matching_units(grid, rows):
    """Returns BMU indices and quantization errors for every row."""
    rows = check_rows(rows, grid.n_features)
    indices = np.empty(rows.shape[0], dtype=int)
    errors = np.empty(rows.shape[0])
    for i, x in enumerate(rows):
        indices[i], errors[i] = find_bmu(grid, x)
    return indices, errors


def quantization_errors(grid, rows):
    """Returns the quantization error of every row."""
    return best_matching_units(grid, rows)[1]


def compute_threshold(grid, baseline):
    """Derives the anomaly threshold from the baseline quantization errors."""
    baseline = check_rows(baseline, grid.n_features)
    if baseline.shape[0] == 0:
        raise EmptyBaselineException('cannot derive a threshold from no rows')
    threshold = AnomalyThreshold.from_errors(quantization_errors(grid,
                                                                 baseline))
    my_logger.info('Anomaly threshold: %.6f (mean %.6f, std %.6f)' %
                   (threshold.threshold, threshold.mean_error,
                    threshold.std_error))
    return threshold


def detect(grid, threshold, rows):
    """Flags rows whose quantization error is strictly above the threshold."""
    errors = quantization_errors(grid, rows)
    return Detection(errors, errors > threshold.threshold)


def trace_to_csv(filename, timestamps, detection):
    """Writes the detection trace to a CSV file."""
    with open(filename, 'w', newline='') as csvfile:
        csv_writer = csv.writer(csvfile)
        csv_writer.writerow(['row_index', 'timestamp', 'quantization_error',
                             'is_anomaly'])
        for i, (t, e, flag) in enumerate(zip(timestamps,
                                             detection.quantization_errors,
                                             detection.is_anomaly)):
            csv_writer.writerow([i, repr(float(t)), repr(float(e)),
                                 int(bool(flag))])
