"""Adaptive weighted aggregation of client models.

Each contributing client i receives the weight

    alpha_i = beta_i * gamma_i * delta_i / sum_j(beta_j * gamma_j * delta_j)

where beta is its validation detection accuracy, gamma = exp(-|s_i - s_ref| /
s_ref) its sensor reliability, and delta = 1 / (1 + var(p_t - p_t-1)) the
stability of its recent predictions. The global parameters are the
alpha-weighted sum of the client parameter vectors. Federated averaging
(weights proportional to shard sizes) is the baseline.
"""

import math
from collections import namedtuple

import numpy as np

from .metrics import accuracy
from .mlp import predict
from .my_logger import my_logger


ALPHA_SUM_TOLERANCE = 1e-9

WeightFactors = namedtuple('WeightFactors', 'beta gamma delta alpha')


class FederationException(Exception):
    pass


class EmptyValidationException(FederationException):
    pass


class NonPositiveSigmaRefException(FederationException):
    pass


class NoParticipantsException(FederationException):
    pass


class NoAliveClientsException(FederationException):
    pass


class LengthMismatchException(FederationException):
    pass


class AlphaSumException(FederationException):
    pass


def compute_beta(model, validation):
    """Returns the validation accuracy of the client's model at 0.5."""
    if len(validation.labels) == 0:
        raise EmptyValidationException('validation split is empty')
    return accuracy(predict(model, validation.features), validation.labels)


def compute_gamma(sigma_i, sigma_ref):
    """Returns the sensor reliability exp(-|sigma_i - sigma_ref| / sigma_ref).
    """
    if not sigma_ref > 0:
        raise NonPositiveSigmaRefException('sigma_ref must be positive, got '
                                           '%r' % sigma_ref)
    return math.exp(-abs(sigma_i - sigma_ref) / sigma_ref)


def compute_delta(prediction_window):
    """Returns 1 / (1 + population variance of consecutive differences).

    Windows with fewer than two entries give 1.0.
    """
    window = np.asarray(list(prediction_window), dtype=float)
    if window.size < 2:
        return 1.0
    return 1.0 / (1.0 + float(np.var(np.diff(window))))


def compute_alpha(products):
    """Normalizes the per-client products beta * gamma * delta.

    If every product is 0 the weights fall back to uniform.
    """
    products = np.asarray(products, dtype=float)
    if products.size == 0:
        raise NoParticipantsException('no participating clients')
    if np.any(products < 0):
        raise FederationException('weight products must be >= 0')
    total = products.sum()
    if total <= 0:
        my_logger.warning('All weight products are 0; using uniform weights')
        return np.full(products.size, 1.0 / products.size)
    return products / total


def _stack(params):
    if len(params) == 0:
        raise NoParticipantsException('no parameter vectors to aggregate')
    sizes = {np.asarray(p).shape for p in params}
    if len(sizes) != 1:
        raise LengthMismatchException('parameter vectors differ in length: %s'
                                      % sorted(sizes))
    return np.vstack([np.asarray(p, dtype=float) for p in params])


def aggregate(params, alphas):
    """Returns the alpha-weighted sum of the parameter vectors."""
    stacked = _stack(params)
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (stacked.shape[0],):
        raise LengthMismatchException('%d weights for %d vectors' %
                                      (alphas.size, stacked.shape[0]))
    if np.any(alphas < 0) or abs(alphas.sum() - 1.0) > ALPHA_SUM_TOLERANCE:
        raise AlphaSumException('weights must be >= 0 and sum to 1, got sum '
                                '%r' % float(alphas.sum()))
    return alphas @ stacked


def fedavg_aggregate(params, shard_sizes):
    """Federated averaging: weights proportional to shard sizes."""
    sizes = np.asarray(shard_sizes, dtype=float)
    if np.any(sizes <= 0):
        raise FederationException('shard sizes must be positive')
    return aggregate(params, sizes / sizes.sum())


def select_nodes(scores, k, generator=None):
    """Selects up to k clients for the round.

    Args:
        scores (dict): alive client id -> last-round score beta*gamma*delta,
            or None for clients that have not been scored yet
        k (int): number of clients to select
        generator: random generator of the round, used for the random order
            of the first round (when no client has a score)
    Returns:
        [int]: the selected ids in ranking order
    """
    if k < 1:
        raise FederationException('k must be >= 1')
    if not scores:
        raise NoAliveClientsException('no alive clients to select from')
    ids = sorted(scores)
    if all(s is None for s in scores.values()):
        if generator is None:
            raise FederationException('round-1 selection needs a generator')
        ranked = [ids[i] for i in generator.permutation(len(ids))]
    else:
        # unscored clients rank as if perfect so they get a chance
        ranked = sorted(ids, key=lambda c: (-(1.0 if scores[c] is None
                                              else scores[c]), c))
    return ranked[:k]


def weight_factors(betas, gammas, deltas):
    """Returns one WeightFactors per client with normalized alphas."""
    products = [b * g * d for b, g, d in zip(betas, gammas, deltas)]
    alphas = compute_alpha(products)
    return [WeightFactors(float(b), float(g), float(d), float(a))
            for b, g, d, a in zip(betas, gammas, deltas, alphas)]
