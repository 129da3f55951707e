"""Failure injection plans.

A plan fixes, for every (round, client), whether a failure strikes the client
in that round and when during local training it strikes. Failure times are
Weibull draws conditioned on falling inside the round's training window.
"""

import csv
import math
from collections import namedtuple

import numpy as np

from .misc import rng
from .weibull import FaultException, weibull_cdf, weibull_ppf


FaultEntry = namedtuple('FaultEntry', 'dropped failure_time')


class FaultPlan:
    """Definition for FaultPlan class.

    Rounds are numbered from 1. A dropped entry is a client-round struck by a
    failure at its failure time; the failure time of other entries is
    infinite.
    """
    def __init__(self, dropped, failure_times, seed):
        dropped = np.array(dropped, dtype=bool)
        failure_times = np.array(failure_times, dtype=float)
        if dropped.shape != failure_times.shape or dropped.ndim != 2:
            raise FaultException('dropout flags and failure times must be '
                                 'matching (rounds x clients) matrices')
        if np.any(failure_times < 0):
            raise FaultException('failure times must be >= 0')
        dropped.setflags(write=False)
        failure_times.setflags(write=False)
        self._dropped = dropped
        self._failure_times = failure_times
        self._seed = seed

    @property
    def n_rounds(self):
        return self._dropped.shape[0]

    @property
    def n_clients(self):
        return self._dropped.shape[1]

    @property
    def seed(self):
        return self._seed

    @property
    def dropped(self):
        """Returns the (rounds x clients) dropout flags."""
        return self._dropped

    def entry(self, round_index, client_id):
        """Returns the FaultEntry of the client in the round."""
        dropped = bool(self._dropped[round_index - 1, client_id])
        time = (float(self._failure_times[round_index - 1, client_id])
                if dropped else math.inf)
        return FaultEntry(dropped, time)

    def dropout_count(self):
        return int(self._dropped.sum())

    def to_csv(self, filename):
        """Writes round, client_id, dropped, failure_time rows."""
        with open(filename, 'w', newline='') as csvfile:
            csv_writer = csv.writer(csvfile)
            csv_writer.writerow(['round', 'client_id', 'dropped',
                                 'failure_time'])
            for r in range(1, self.n_rounds + 1):
                for c in range(self.n_clients):
                    e = self.entry(r, c)
                    csv_writer.writerow([r, c, int(e.dropped),
                                         repr(e.failure_time)])


def build_fault_plan(n_clients, n_rounds, dropout_rate, model, seed,
                     window=None):
    """Draws dropout flags and failure times for every (round, client).

    Args:
        n_clients (int): number of clients
        n_rounds (int): number of rounds
        dropout_rate (float): per-round Bernoulli dropout probability
        model (WeibullModel): failure-time distribution
        seed (int): seed of the plan
        window (float): training window length; failure times are drawn
            from the Weibull conditioned on t < window (unbounded if None)
    Returns:
        FaultPlan: the plan
    """
    if not 0.0 <= dropout_rate <= 1.0:
        raise FaultException('dropout_rate must be in [0, 1]')
    generator = rng(seed)
    shape = (n_rounds, n_clients)
    dropped = generator.random(shape) < dropout_rate
    u = generator.random(shape)
    if window is not None:
        u = u * weibull_cdf(model, window)
    return FaultPlan(dropped, weibull_ppf(model, u), seed)
