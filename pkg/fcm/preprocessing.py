"""Preprocessing of sensor frames.

Normalization to [0, 1] with an epsilon offset, moving-average low-pass and
difference-of-moving-averages band-pass filters, and permutation-importance
feature selection.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .client import hold_out_test
from .frame import FrameException, EmptyFrameException, split_baseline
from .misc import rng
from .my_logger import my_logger


DEFAULT_EPSILON = 1e-10


class InvalidWindowException(FrameException):
    pass


class MissingLabelsException(FrameException):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    """Preprocessing options; filters run before normalization."""
    normalize: bool = True
    epsilon: float = DEFAULT_EPSILON
    lowpass_window: Optional[int] = None
    bandpass_windows: Optional[Tuple[int, int]] = None
    drop_invalid_rows: bool = False
    keep_features: Optional[int] = None
    min_importance: Optional[float] = None
    importance_repeats: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise FrameException('epsilon must be positive')
        if self.keep_features is not None and self.keep_features < 1:
            raise FrameException('keep_features must be >= 1')
        if self.importance_repeats < 1:
            raise FrameException('importance_repeats must be >= 1')
        if self.lowpass_window is not None and self.lowpass_window < 1:
            raise InvalidWindowException('lowpass window must be >= 1')
        if self.bandpass_windows is not None:
            short, long = self.bandpass_windows
            if not 1 <= short < long:
                raise InvalidWindowException(
                    'band-pass windows need 1 <= short < long, got %r' %
                    (self.bandpass_windows,))


def apply_min_max(frame, ranges, epsilon=DEFAULT_EPSILON):
    """Applies fitted per-sensor (min, max) ranges to a frame.

    Constant sensors (max == min) map to 0 before the epsilon is added.
    """
    ranges = np.asarray(ranges, dtype=float)
    lo, hi = ranges[:, 0], ranges[:, 1]
    span = hi - lo
    constant = span == 0
    scaled = (frame.values - lo) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0
    return frame.with_values(scaled + epsilon)


def min_max_normalize(frame, epsilon=DEFAULT_EPSILON):
    """Maps each sensor column to [0, 1] and adds epsilon.

    Returns:
        (TimeSeriesFrame, numpy.ndarray): the normalized frame and the
            (n_sensors x 2) array of fitted (min, max) pairs
    """
    if frame.n_rows == 0:
        raise EmptyFrameException('cannot normalize an empty frame')
    ranges = np.column_stack([frame.values.min(axis=0),
                              frame.values.max(axis=0)])
    constant = [name for name, (lo, hi) in zip(frame.sensor_names, ranges)
                if lo == hi]
    if constant:
        my_logger.warning('Constant sensors normalized to epsilon: %s' %
                          ', '.join(constant))
    return apply_min_max(frame, ranges, epsilon), ranges


def _moving_average(values, window):
    """Trailing moving average; the first window-1 rows use the prefix."""
    n = values.shape[0]
    out = np.empty_like(values, dtype=float)
    prefix = min(window - 1, n)
    if prefix:
        out[:prefix] = (np.cumsum(values[:prefix], axis=0) /
                        np.arange(1, prefix + 1)[:, None])
    if n >= window:
        out[window - 1:] = sliding_window_view(values, window,
                                               axis=0).mean(axis=-1)
    return out


def low_pass_filter(frame, window):
    """Replaces each column with its trailing moving average over `window`."""
    if window < 1:
        raise InvalidWindowException('window must be >= 1')
    if window > frame.n_rows:
        raise InvalidWindowException('window %d exceeds %d rows' %
                                     (window, frame.n_rows))
    return frame.with_values(_moving_average(frame.values, window))


def band_pass_filter(frame, short, long):
    """Difference of the short and long moving averages, column-wise."""
    if not 1 <= short < long:
        raise InvalidWindowException('band-pass needs 1 <= short < long, got '
                                     '(%d, %d)' % (short, long))
    low_short = low_pass_filter(frame, short)
    low_long = low_pass_filter(frame, long)
    return frame.with_values(low_short.values - low_long.values)


def permutation_importance(frame, model_eval, seed, repeats=1):
    """Estimates the accuracy drop caused by shuffling each sensor.

    Args:
        frame (TimeSeriesFrame): labeled frame
        model_eval (callable): maps a frame to an accuracy
        seed (int): seed of the generator producing the shuffles
        repeats (int): shuffles per column; drops are averaged
    Returns:
        numpy.ndarray: importance per sensor, baseline minus shuffled accuracy
    """
    if not frame.has_labels:
        raise MissingLabelsException('permutation importance needs labels')
    generator = rng(seed)
    baseline = model_eval(frame)
    importance = np.zeros(frame.n_sensors)
    for j in range(frame.n_sensors):
        drops = []
        for _ in range(repeats):
            shuffled = np.array(frame.values)
            shuffled[:, j] = generator.permutation(shuffled[:, j])
            drops.append(baseline - model_eval(frame.with_values(shuffled)))
        importance[j] = np.mean(drops)
    return importance


def select_features(frame, importances, keep=None, min_importance=None):
    """Keeps the most important sensors.

    Sensors are ranked by importance (ties by column order). The `keep` best
    are retained, then any below `min_importance` are dropped; at least one
    sensor always survives. Column order is preserved.
    """
    order = sorted(range(frame.n_sensors), key=lambda j: (-importances[j], j))
    if keep is not None:
        order = order[:max(1, keep)]
    if min_importance is not None:
        order = [j for j in order if importances[j] >= min_importance] \
            or order[:1]
    kept = sorted(order)
    dropped = [frame.sensor_names[j] for j in range(frame.n_sensors)
               if j not in kept]
    if dropped:
        my_logger.info('Feature selection dropped: %s' % ', '.join(dropped))
    return frame.select_sensors(kept)


def preprocess(frame, config, baseline_fraction):
    """Runs filtering, the baseline split and normalization.

    The normalization range is fitted on the baseline only and reused for the
    evaluation part.

    Returns:
        (TimeSeriesFrame, TimeSeriesFrame, numpy.ndarray): the baseline and
            evaluation frames and the fitted ranges (None if not normalized)
    """
    my_logger.info('Started: preprocessing')
    frame = apply_filters(frame, config)
    baseline, evaluation = split_baseline(frame, baseline_fraction)
    ranges = None
    if config.normalize:
        baseline, ranges = min_max_normalize(baseline, config.epsilon)
        evaluation = apply_min_max(evaluation, ranges, config.epsilon)
    my_logger.info('Finished: preprocessing (%d baseline, %d evaluation rows)'
                   % (baseline.n_rows, evaluation.n_rows))
    return baseline, evaluation, ranges


def apply_filters(frame, config):
    """Applies the configured low-pass and band-pass filters, in that order."""
    if config.lowpass_window is not None:
        frame = low_pass_filter(frame, config.lowpass_window)
    if config.bandpass_windows is not None:
        frame = band_pass_filter(frame, *config.bandpass_windows)
    return frame


def preprocess_labeled(frame, config, test_fraction):
    """Prepares a labeled recording for classifier training.

    Filters run over the whole recording in time order. The global test rows
    are then held out, and the normalization range is fitted on the client
    pool only and reused for the test rows.

    Returns:
        (TimeSeriesFrame, TimeSeriesFrame, numpy.ndarray): the client pool,
            the test set and the fitted ranges (None if not normalized)
    """
    if not frame.has_labels:
        raise MissingLabelsException('classifier training needs labels')
    pool, test = hold_out_test(apply_filters(frame, config), test_fraction)
    ranges = None
    if config.normalize:
        pool, ranges = min_max_normalize(pool, config.epsilon)
        test = apply_min_max(test, ranges, config.epsilon)
    return pool, test, ranges
