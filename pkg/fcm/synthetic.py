"""Synthetic degradation data.

Desk-scale stand-in for run-to-failure recordings: stationary Gaussian sensor
noise until a fault onset, after which a chosen set of sensors drifts
linearly away from its baseline mean.
"""

import math
from dataclasses import dataclass, field
from typing import FrozenSet

import numpy as np

from .frame import FrameException, TimeSeriesFrame
from .misc import rng


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic run-to-failure recording.

    drift_magnitude is expressed in units of noise_sigma and is reached at the
    final row.
    """
    n_rows: int = 1000
    n_sensors: int = 6
    seed: int = 0
    fault_onset_fraction: float = 0.6
    faulty_sensors: FrozenSet[int] = field(default_factory=lambda: frozenset([2]))
    drift_magnitude: float = 8.0
    noise_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'faulty_sensors',
                           frozenset(int(j) for j in self.faulty_sensors))
        if self.n_rows < 1 or self.n_sensors < 1:
            raise FrameException('n_rows and n_sensors must be positive')
        if not 0.0 < self.fault_onset_fraction < 1.0:
            raise FrameException('fault_onset_fraction must be in (0, 1)')
        if any(j < 0 or j >= self.n_sensors for j in self.faulty_sensors):
            raise FrameException('faulty sensor index out of range')
        if self.drift_magnitude < 0:
            raise FrameException('drift_magnitude must be >= 0')
        if not self.noise_sigma > 0:
            raise FrameException('noise_sigma must be positive')
        if not 0 <= self.seed < 2 ** 64:
            raise FrameException('seed must be an unsigned 64-bit integer')

    @property
    def onset_row(self):
        """Returns the first faulty row."""
        return int(math.floor(self.fault_onset_fraction * self.n_rows))


def drift_ramp(spec):
    """Returns the per-row drift (engineering units) of a faulty sensor.

    Zero before onset, then linear up to drift_magnitude * noise_sigma at the
    last row.
    """
    ramp = np.zeros(spec.n_rows)
    onset = spec.onset_row
    span = spec.n_rows - onset
    if span > 0:
        ramp[onset:] = (np.arange(1, span + 1) / span *
                        spec.drift_magnitude * spec.noise_sigma)
    return ramp


def generate_synthetic(spec):
    """Generates a labeled frame; a pure function of its SyntheticSpec."""
    generator = rng(spec.seed)
    means = generator.uniform(1.0, 10.0, spec.n_sensors)
    values = means + generator.normal(0.0, spec.noise_sigma,
                                      (spec.n_rows, spec.n_sensors))
    ramp = drift_ramp(spec)
    for j in sorted(spec.faulty_sensors):
        values[:, j] += ramp
    labels = np.zeros(spec.n_rows, dtype=int)
    labels[spec.onset_row:] = 1
    names = ['sensor_%d' % j for j in range(spec.n_sensors)]
    return TimeSeriesFrame(np.arange(spec.n_rows, dtype=float), values, names,
                           labels)
