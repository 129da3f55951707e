"""Checkpointing: interval optimization and durable training-state records.

The checkpoint interval t_c minimizes the cost

    literal:        C(t_c) = t_c / T + F(t_c) * t_r / T
    overhead_rate:  C(t_c) = c_s / t_c + F(t_c) * t_r / T

over a grid of candidate intervals, with F the Weibull failure CDF.

Records hold a client's model parameters, Adam state and progress. The binary
layout is: schema version byte, little-endian uint32 header length, JSON
header, little-endian float64 parameters, first and second moments, and a
SHA-256 footer over everything before it. Files are written to a temporary
name and renamed into place.
"""

import glob
import hashlib
import json
import os
import re
import struct
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .misc import directory
from .my_logger import my_logger
from .weibull import FaultException, weibull_cdf


SCHEMA_VERSION = 1
COST_MODES = ('literal', 'overhead_rate')
CHECKSUM_SIZE = 32
RECORD_NAME = re.compile(r'^ckpt_r(\d+)_e(\d+)$')


class OutOfRangeIntervalException(FaultException):
    pass


class EmptyGridException(FaultException):
    pass


class NoCheckpointFoundException(FaultException):
    pass


class ChecksumMismatchException(FaultException):
    pass


@dataclass(frozen=True)
class CheckpointPolicy:
    """Inputs of the checkpoint cost function.

    total_time is the per-round local-training time budget T and
    recovery_time is t_r, both in simulated time units.
    """
    total_time: float = 100.0
    recovery_time: float = 10.0
    candidate_intervals: Tuple[float, ...] = (5.0, 10.0, 20.0, 40.0, 100.0)
    cost_mode: str = 'literal'
    checkpoint_cost: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'candidate_intervals',
                           tuple(float(c) for c in self.candidate_intervals))
        if not self.total_time > 0:
            raise FaultException('total_time must be positive')
        if self.recovery_time < 0:
            raise FaultException('recovery_time must be >= 0')
        if self.cost_mode not in COST_MODES:
            raise FaultException('cost_mode must be one of %s' %
                                 ', '.join(COST_MODES))
        grid = self.candidate_intervals
        if any(not 0 < c <= self.total_time for c in grid):
            raise OutOfRangeIntervalException('candidate intervals must lie '
                                              'in (0, T]')
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise FaultException('candidate intervals must be ascending')


def checkpoint_cost(policy, model, t_c):
    """Returns the cost of checkpointing every t_c time units."""
    if not 0 < t_c <= policy.total_time:
        raise OutOfRangeIntervalException('t_c=%r outside (0, %r]' %
                                          (t_c, policy.total_time))
    failure_term = weibull_cdf(model, t_c) * policy.recovery_time \
        / policy.total_time
    if policy.cost_mode == 'literal':
        return t_c / policy.total_time + failure_term
    return policy.checkpoint_cost / t_c + failure_term


def optimal_interval(policy, model):
    """Returns the grid interval of least cost; ties go to the smaller one.

    Returns:
        (float, float): the interval and its cost
    """
    if not policy.candidate_intervals:
        raise EmptyGridException('no candidate intervals')
    best, best_cost = None, None
    for t_c in policy.candidate_intervals:
        cost = checkpoint_cost(policy, model, t_c)
        if best_cost is None or cost < best_cost:
            best, best_cost = t_c, cost
    return best, best_cost


@dataclass
class CheckpointRecord:
    """A client's training state after `epoch` local epochs of `round`."""
    client_id: int
    round: int
    epoch: int
    layer_dims: List[int]
    params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_step: int
    schema_version: int = field(default=SCHEMA_VERSION)

    @property
    def name(self):
        return 'ckpt_r%d_e%d' % (self.round, self.epoch)

    def to_bytes(self):
        """Serializes the record including the checksum footer."""
        header = json.dumps({'client_id': int(self.client_id),
                             'round': int(self.round),
                             'epoch': int(self.epoch),
                             'layer_dims': [int(d) for d in self.layer_dims],
                             'n_params': int(self.params.size),
                             'adam_step': int(self.adam_step)},
                            sort_keys=True).encode('utf-8')
        body = b''.join([
            struct.pack('<BI', self.schema_version, len(header)), header,
            np.asarray(self.params, dtype='<f8').tobytes(),
            np.asarray(self.adam_m, dtype='<f8').tobytes(),
            np.asarray(self.adam_v, dtype='<f8').tobytes()])
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data):
        """Parses a serialized record, verifying its checksum."""
        if len(data) < CHECKSUM_SIZE + 5:
            raise ChecksumMismatchException('record truncated')
        body, footer = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]
        if hashlib.sha256(body).digest() != footer:
            raise ChecksumMismatchException('checksum does not match')
        version, header_len = struct.unpack_from('<BI', body)
        if version != SCHEMA_VERSION:
            raise ChecksumMismatchException('unknown schema version %d' %
                                            version)
        header = json.loads(body[5:5 + header_len].decode('utf-8'))
        arrays = np.frombuffer(body[5 + header_len:], dtype='<f8')
        n = header['n_params']
        if arrays.size != 3 * n:
            raise ChecksumMismatchException('payload length mismatch')
        return cls(header['client_id'], header['round'], header['epoch'],
                   header['layer_dims'], arrays[:n].astype(float),
                   arrays[n:2 * n].astype(float),
                   arrays[2 * n:].astype(float), header['adam_step'],
                   version)


class CheckpointStore:
    """Definition for CheckpointStore class.

    Stores records under one directory per client. Each client is written by
    at most one thread at a time; readers never observe partial records.
    """
    def __init__(self, root):
        self._root = directory(root)
        self._skipped = {}

    @property
    def root(self):
        return self._root

    def skipped(self, client_id):
        """Returns the paths skipped as corrupt by the client's last
        restore."""
        return list(self._skipped.get(client_id, []))

    def client_directory(self, client_id):
        return directory(self._root, 'client_%d' % client_id)

    def save(self, record):
        """Atomically writes the record; returns its path."""
        folder = self.client_directory(record.client_id)
        path = os.path.join(folder, record.name)
        tmp_path = os.path.join(folder, '.%s.tmp' % record.name)
        with open(tmp_path, 'wb') as f:
            f.write(record.to_bytes())
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
        my_logger.debug('Saved checkpoint %s' % path)
        return path

    def records(self, client_id):
        """Returns (round, epoch, path) of stored records, newest first."""
        found = []
        pattern = os.path.join(self.client_directory(client_id), 'ckpt_r*_e*')
        for path in glob.glob(pattern):
            match = RECORD_NAME.match(os.path.basename(path))
            if match:
                found.append((int(match.group(1)), int(match.group(2)), path))
        return sorted(found, reverse=True)

    def restore(self, client_id):
        """Returns the newest record of the client whose checksum validates.

        Corrupt records are skipped and logged.
        """
        skipped = self._skipped[client_id] = []
        for _, _, path in self.records(client_id):
            with open(path, 'rb') as f:
                data = f.read()
            try:
                return CheckpointRecord.from_bytes(data)
            except ChecksumMismatchException as e:
                my_logger.warning('Skipping corrupt checkpoint %s: %s' %
                                  (path, e))
                skipped.append(path)
        raise NoCheckpointFoundException('no valid checkpoint for client %d'
                                         % client_id)

    def clear(self, client_id):
        """Removes all records of the client."""
        for _, _, path in self.records(client_id):
            os.remove(path)
