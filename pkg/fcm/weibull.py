"""Two-parameter Weibull failure model.

Used to model client failure times: the CDF gives the probability of failing
within a checkpoint interval, inverse-CDF sampling drives failure injection,
and maximum-likelihood fitting derives the parameters from observed failure
times.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .misc import rng
from .my_logger import my_logger


SHAPE_BRACKET = (1e-3, 1e3)


class FaultException(Exception):
    pass


class NegativeTimeException(FaultException):
    pass


class InsufficientDataException(FaultException):
    pass


class DegenerateDataException(FaultException):
    pass


@dataclass(frozen=True)
class WeibullModel:
    """Weibull distribution with scale `lam` (lambda) and shape `k`."""
    lam: float
    k: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.k)
                and self.lam > 0 and self.k > 0):
            raise FaultException('Weibull scale and shape must be positive '
                                 'and finite, got (%r, %r)' % (self.lam,
                                                               self.k))


def weibull_cdf(model, t):
    """Returns F(t) = 1 - exp(-(t / lambda)^k)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NegativeTimeException('failure time must be >= 0')
    value = -np.expm1(-(t / model.lam) ** model.k)
    return float(value) if value.ndim == 0 else value


def weibull_ppf(model, u):
    """Returns the time t with F(t) = u, for u in [0, 1)."""
    u = np.asarray(u, dtype=float)
    value = model.lam * (-np.log1p(-u)) ** (1.0 / model.k)
    return float(value) if value.ndim == 0 else value


def weibull_sample(model, seed, size=None):
    """Draws failure times by inverse-CDF sampling from a seeded generator."""
    return weibull_ppf(model, rng(seed).random(size))


def _shape_equation(k, scaled, mean_log):
    """MLE condition for the shape on times scaled so max(scaled) == 1."""
    powers = scaled ** k
    return (np.sum(powers * np.log(scaled)) / np.sum(powers) - 1.0 / k
            - mean_log)


def fit_weibull(failure_times):
    """Fits a Weibull model to failure times by maximum likelihood.

    The shape solves the one-dimensional likelihood equation by bracketed
    root finding on SHAPE_BRACKET; the scale follows in closed form as
    (mean of t^k)^(1/k). Times are scaled by their maximum first so powers
    stay finite for large shapes.
    """
    times = np.asarray(failure_times, dtype=float)
    if times.size < 2:
        raise InsufficientDataException('need at least two failure times')
    if np.any(times <= 0) or not np.all(np.isfinite(times)):
        raise InsufficientDataException('failure times must be positive')
    if np.unique(times).size < 2:
        raise DegenerateDataException('all failure times are equal')
    peak = times.max()
    scaled = times / peak
    mean_log = float(np.mean(np.log(scaled)))
    lo, hi = SHAPE_BRACKET
    f_lo = _shape_equation(lo, scaled, mean_log)
    f_hi = _shape_equation(hi, scaled, mean_log)
    if np.sign(f_lo) == np.sign(f_hi):
        raise DegenerateDataException('shape estimate outside [%g, %g]' %
                                      SHAPE_BRACKET)
    k = brentq(_shape_equation, lo, hi, args=(scaled, mean_log),
               xtol=1e-12, rtol=1e-12)
    lam = peak * float(np.mean(scaled ** k)) ** (1.0 / k)
    my_logger.info('Fitted Weibull: lambda=%.4f, k=%.4f from %d failures' %
                   (lam, k, times.size))
    return WeibullModel(lam, k)
