"""The time-series frame module.

A TimeSeriesFrame holds the raw (or preprocessed) observations of a monitored
machine: one row per sampling instant, one column per sensor. The module also
provides CSV ingestion and the time-ordered baseline/evaluation split.
"""

import csv
import math
import os

import numpy as np
from cached_property import cached_property

from .my_logger import my_logger


TIME_COLUMN_NAMES = ('t', 'time', 'timestamp')


class FrameException(Exception):
    pass


class EmptyFileException(FrameException):
    pass


class EmptyFrameException(FrameException):
    pass


class EmptySplitException(FrameException):
    pass


class MalformedRowException(FrameException):
    """Raised for a row that does not parse into finite floats."""
    def __init__(self, line_number, reason):
        super().__init__('line %d: %s' % (line_number, reason))
        self.line_number = line_number


class TimeSeriesFrame:
    """Definition for TimeSeriesFrame class.

    The frame holds timestamps, a (n_rows x n_sensors) matrix of readings, the
    sensor names and, optionally, per-row binary anomaly labels. All arrays are
    copied and made read-only at construction, so a frame can be shared across
    threads; transformations return new frames.
    """
    def __init__(self, timestamps, values, sensor_names, labels=None):
        timestamps = np.array(timestamps, dtype=float)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise FrameException('values must be a 2-D matrix')
        if len(timestamps) != values.shape[0]:
            raise FrameException('%d timestamps for %d rows' %
                                 (len(timestamps), values.shape[0]))
        if len(sensor_names) != values.shape[1]:
            raise FrameException('%d sensor names for %d columns' %
                                 (len(sensor_names), values.shape[1]))
        if not np.all(np.isfinite(values)):
            raise FrameException('values contain NaN or Inf')
        if np.any(np.diff(timestamps) < 0):
            raise FrameException('timestamps are not nondecreasing')
        if labels is not None:
            labels = np.array(labels, dtype=int)
            if len(labels) != values.shape[0]:
                raise FrameException('%d labels for %d rows' %
                                     (len(labels), values.shape[0]))
            if not np.all((labels == 0) | (labels == 1)):
                raise FrameException('labels must be 0 or 1')
            labels.setflags(write=False)
        timestamps.setflags(write=False)
        values.setflags(write=False)
        self._timestamps = timestamps
        self._values = values
        self._sensor_names = tuple(str(name) for name in sensor_names)
        self._labels = labels

    @property
    def timestamps(self):
        """Returns the timestamps (seconds)."""
        return self._timestamps

    @property
    def values(self):
        """Returns the read-only matrix of sensor readings."""
        return self._values

    @property
    def sensor_names(self):
        """Returns the sensor identifiers."""
        return self._sensor_names

    @property
    def labels(self):
        """Returns the per-row anomaly labels, or None."""
        return self._labels

    @property
    def has_labels(self):
        return self._labels is not None

    @cached_property
    def n_rows(self):
        return self._values.shape[0]

    @cached_property
    def n_sensors(self):
        return self._values.shape[1]

    def __len__(self):
        return self.n_rows

    def with_values(self, values):
        """Returns a frame with the same timestamps, names and labels."""
        return TimeSeriesFrame(self.timestamps, values, self.sensor_names,
                               self.labels)

    def with_labels(self, labels):
        """Returns a frame with the same readings and the given labels."""
        return TimeSeriesFrame(self.timestamps, self.values,
                               self.sensor_names, labels)

    def take(self, rows):
        """Returns the frame restricted to the given row indices."""
        rows = np.asarray(rows, dtype=int)
        labels = self.labels[rows] if self.has_labels else None
        return TimeSeriesFrame(self.timestamps[rows], self.values[rows],
                               self.sensor_names, labels)

    def select_sensors(self, columns):
        """Returns the frame restricted to the given sensor columns."""
        columns = list(columns)
        return TimeSeriesFrame(self.timestamps, self.values[:, columns],
                               [self.sensor_names[j] for j in columns],
                               self.labels)

    @staticmethod
    def concatenate(frames):
        """Stacks frames with identical sensors row-wise."""
        first = frames[0]
        labels = (np.concatenate([f.labels for f in frames])
                  if all(f.has_labels for f in frames) else None)
        return TimeSeriesFrame(np.concatenate([f.timestamps for f in frames]),
                               np.vstack([f.values for f in frames]),
                               first.sensor_names, labels)

    def __repr__(self):
        return 'TimeSeriesFrame(%d rows x %d sensors%s)' % (
            self.n_rows, self.n_sensors, ', labeled' if self.has_labels else '')


def _parse_float(cell):
    value = float(cell)
    if not math.isfinite(value):
        raise ValueError('non-finite value %r' % cell)
    return value


def ingest_csv(path, has_header=True, label_column=None,
               drop_invalid_rows=False):
    """Reads a sensor CSV file into a TimeSeriesFrame.

    The first column is read as timestamps when its header is one of
    TIME_COLUMN_NAMES; otherwise the row index is used as time. The label
    column, when named, is removed from the sensor columns.

    Args:
        path (string): the CSV file
        has_header (bool): whether the first line names the columns
        label_column (string): the name of the column holding 0/1 labels
        drop_invalid_rows (bool): skip rows that do not parse instead of
            raising MalformedRowException
    Returns:
        TimeSeriesFrame: the ingested frame
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, newline='') as f:
        rows = [(i, row) for i, row in enumerate(csv.reader(f), start=1)
                if row and any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyFileException(path)

    if has_header:
        _, header = rows[0]
        header = [name.strip() for name in header]
        rows = rows[1:]
    else:
        if label_column is not None:
            raise FrameException('label column requires a header')
        header = ['s%d' % j for j in range(len(rows[0][1]))]
    if not rows:
        raise EmptyFileException(path)

    has_time = has_header and header[0].lower() in TIME_COLUMN_NAMES
    label_index = None
    if label_column is not None:
        if label_column not in header:
            raise FrameException('label column %r not in header' %
                                 label_column)
        label_index = header.index(label_column)
    sensor_columns = [j for j in range(len(header))
                      if j != label_index and not (has_time and j == 0)]

    timestamps, values, labels = [], [], []
    for line_number, row in rows:
        try:
            if len(row) != len(header):
                raise ValueError('expected %d cells, found %d' %
                                 (len(header), len(row)))
            reading = [_parse_float(row[j]) for j in sensor_columns]
            t = _parse_float(row[0]) if has_time else None
            label = None
            if label_index is not None:
                label = int(_parse_float(row[label_index]))
                if label not in (0, 1):
                    raise ValueError('label %r is not 0/1' % row[label_index])
        except ValueError as e:
            if drop_invalid_rows:
                my_logger.warning('Dropping row at line %d of %s: %s' %
                                  (line_number, path, e))
                continue
            raise MalformedRowException(line_number, str(e))
        timestamps.append(t)
        values.append(reading)
        labels.append(label)

    if not values:
        raise EmptyFileException('%s has no valid rows' % path)
    if not has_time:
        timestamps = list(range(len(values)))
    my_logger.info('Read %d rows x %d sensors from %s' %
                   (len(values), len(sensor_columns), path))
    return TimeSeriesFrame(timestamps, values,
                           [header[j] for j in sensor_columns],
                           labels if label_index is not None else None)


def split_baseline(frame, fraction):
    """Splits the frame in time order into baseline and evaluation parts.

    The baseline is the first floor(fraction * n_rows) rows; nothing is
    shuffled.

    Returns:
        (TimeSeriesFrame, TimeSeriesFrame): baseline and evaluation frames
    """
    if not 0.0 < fraction < 1.0:
        raise EmptySplitException('fraction %r outside (0, 1)' % fraction)
    cut = int(math.floor(fraction * frame.n_rows))
    if cut == 0 or cut == frame.n_rows:
        raise EmptySplitException('fraction %r of %d rows leaves an empty '
                                  'side' % (fraction, frame.n_rows))
    return frame.take(np.arange(cut)), frame.take(np.arange(cut, frame.n_rows))
