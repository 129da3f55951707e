"""Simulated federated clients.

Partitions a labeled frame into client shards, holds out the global test
set, injects sensor and label degradation, and keeps the per-client state
carried across rounds (reliability reference, prediction history, failure
and recovery bookkeeping).
"""

from collections import deque, namedtuple

import numpy as np

from .frame import FrameException
from .misc import rng
from .mlp import Dataset
from .my_logger import my_logger


PARTITION_STRATEGIES = ('contiguous', 'strided', 'shuffled')
VALIDATION_STRIDE = 5

Shard = namedtuple('Shard', 'client_id train validation')


class TooManyClientsException(FrameException):
    pass


def hold_out_test(frame, fraction=0.2):
    """Splits off a strided global test set.

    Every round(1/fraction)-th row goes to the test set, so it spans the
    whole recording; both parts stay in time order.

    Returns:
        (TimeSeriesFrame, TimeSeriesFrame): the client pool and the test set
    """
    if not 0.0 < fraction < 1.0:
        raise FrameException('test fraction must be in (0, 1)')
    stride = max(2, int(round(1.0 / fraction)))
    rows = np.arange(frame.n_rows)
    is_test = rows % stride == stride - 1
    return frame.take(rows[~is_test]), frame.take(rows[is_test])


def split_train_validation(frame):
    """Sends every fifth row to validation; both parts keep time order."""
    rows = np.arange(frame.n_rows)
    is_val = rows % VALIDATION_STRIDE == VALIDATION_STRIDE - 1
    if frame.n_rows < VALIDATION_STRIDE:
        is_val = rows == frame.n_rows - 1
    return frame.take(rows[~is_val]), frame.take(rows[is_val])


def partition_shards(frame, n_clients, strategy='strided', seed=0):
    """Partitions the frame into disjoint shards covering every row.

    contiguous: consecutive blocks; strided: client k gets rows k, k+n, ...;
    shuffled: a seeded permutation cut into blocks. Each shard is then split
    80/20 into training and validation rows.

    Returns:
        [Shard]: one shard per client, ordered by client id
    """
    if strategy not in PARTITION_STRATEGIES:
        raise FrameException('unknown partition strategy %r' % strategy)
    if n_clients < 1 or n_clients > frame.n_rows / 4.0:
        raise TooManyClientsException('%d clients for %d rows (at most '
                                      'n_rows / 4)' % (n_clients,
                                                       frame.n_rows))
    rows = np.arange(frame.n_rows)
    if strategy == 'contiguous':
        groups = np.array_split(rows, n_clients)
    elif strategy == 'strided':
        groups = [rows[k::n_clients] for k in range(n_clients)]
    else:
        groups = [np.sort(g) for g in
                  np.array_split(rng(seed).permutation(rows), n_clients)]
    shards = []
    for client_id, group in enumerate(groups):
        train, validation = split_train_validation(frame.take(group))
        shards.append(Shard(client_id, train, validation))
    return shards


def degrade_frame(frame, label_noise, variance_multiplier, generator):
    """Flips labels and adds sensor noise to a frame.

    Noise with variance (multiplier - 1) * var_j is added to sensor j, so its
    variance grows by the multiplier.
    """
    values = np.array(frame.values)
    if variance_multiplier > 1.0:
        extra = np.sqrt((variance_multiplier - 1.0) * values.var(axis=0))
        values = values + generator.normal(0.0, 1.0, values.shape) * extra
    labels = np.array(frame.labels)
    flips = generator.random(len(labels)) < label_noise
    labels[flips] = 1 - labels[flips]
    return frame.with_values(values).with_labels(labels)


def degrade_shard(shard, label_noise, variance_multiplier, seed):
    """Returns the shard with degraded training and validation rows."""
    if not 0.0 <= label_noise <= 1.0 or variance_multiplier < 1.0:
        raise FrameException('label_noise must be in [0, 1] and '
                             'variance_multiplier >= 1')
    generator = rng(seed)
    return Shard(shard.client_id,
                 degrade_frame(shard.train, label_noise, variance_multiplier,
                               generator),
                 degrade_frame(shard.validation, label_noise,
                               variance_multiplier, generator))


def sensor_variance(frame):
    """Returns the mean over sensors of the per-sensor variance."""
    return float(np.mean(np.var(frame.values, axis=0)))


def as_dataset(frame):
    return Dataset(np.asarray(frame.values), np.asarray(frame.labels))


class ClientState:
    """Definition for ClientState class.

    One simulated node: its training and validation data, the reference
    sensor variance fitted at calibration, a sliding window of the mean
    validation prediction of recent rounds, and failure bookkeeping.
    """
    def __init__(self, shard, sigma_ref, window=5):
        if not sigma_ref > 0:
            raise FrameException('client %d: sigma_ref must be positive' %
                                 shard.client_id)
        self._shard = shard
        self._sigma_ref = float(sigma_ref)
        self._sigma = sensor_variance(shard.train)
        self._train = as_dataset(shard.train)
        self._validation = as_dataset(shard.validation)
        self.prediction_window = deque(maxlen=window)
        self.model = None
        self.unavailable_until = 0
        self.last_checkpoint = None
        self.last_score = None

    @classmethod
    def calibrate(cls, shard, window=5):
        """Creates a client whose reference variance is that of its shard."""
        return cls(shard, sensor_variance(shard.train), window)

    def with_shard(self, shard):
        """Swaps in new (e.g. degraded) data, keeping the calibration."""
        client = ClientState(shard, self._sigma_ref,
                             self.prediction_window.maxlen)
        my_logger.debug('Client %d: sigma %.5f vs reference %.5f' %
                        (client.client_id, client.sigma, client.sigma_ref))
        return client

    @property
    def client_id(self):
        return self._shard.client_id

    @property
    def shard(self):
        return self._shard

    @property
    def train(self):
        """Returns the training Dataset."""
        return self._train

    @property
    def validation(self):
        """Returns the validation Dataset."""
        return self._validation

    @property
    def n_train(self):
        return len(self._train.labels)

    @property
    def sigma_ref(self):
        """Returns the reference sensor variance fitted at calibration."""
        return self._sigma_ref

    @property
    def sigma(self):
        """Returns the current sensor variance of the training shard."""
        return self._sigma

    def is_alive(self, round_index):
        return round_index >= self.unavailable_until

    def __repr__(self):
        return 'ClientState(%d, %d train / %d validation rows)' % (
            self.client_id, self.n_train, len(self._validation.labels))
