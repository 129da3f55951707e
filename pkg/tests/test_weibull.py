import math

import numpy as np
import pytest

from fcm.weibull import (DegenerateDataException, FaultException,
                         InsufficientDataException, NegativeTimeException,
                         WeibullModel, fit_weibull, weibull_cdf, weibull_ppf,
                         weibull_sample)


def test_cdf_examples():
    assert weibull_cdf(WeibullModel(50, 2), 0) == 0.0
    for k in (0.5, 1.0, 3.0):
        assert weibull_cdf(WeibullModel(50, k), 50) == \
            pytest.approx(1 - math.exp(-1))
    assert weibull_cdf(WeibullModel(50, 2), 25) == pytest.approx(0.221199,
                                                                 abs=1e-6)


def test_cdf_monotone():
    values = weibull_cdf(WeibullModel(10, 1.5), np.linspace(0, 100, 500))
    assert np.all(np.diff(values) >= 0)
    assert values[-1] == pytest.approx(1.0)


def test_negative_time():
    with pytest.raises(NegativeTimeException):
        weibull_cdf(WeibullModel(1, 1), -0.1)


@pytest.mark.parametrize('lam, k', [(0, 1), (1, -2), (math.inf, 1)])
def test_invalid_model(lam, k):
    with pytest.raises(FaultException):
        WeibullModel(lam, k)


def test_ppf_inverts_cdf():
    model = WeibullModel(50, 1.5)
    assert weibull_ppf(model, 0.0) == 0.0
    assert weibull_ppf(model, 1 - math.exp(-1)) == pytest.approx(50)
    u = np.random.default_rng(0).random(1000)
    np.testing.assert_allclose(weibull_cdf(model, weibull_ppf(model, u)), u,
                               rtol=0, atol=1e-12)


def test_samples_follow_cdf():
    model = WeibullModel(50, 1.5)
    samples = np.sort(weibull_sample(model, seed=1, size=10000))
    empirical_hi = np.arange(1, samples.size + 1) / samples.size
    empirical_lo = np.arange(samples.size) / samples.size
    cdf = weibull_cdf(model, samples)
    distance = max(np.max(empirical_hi - cdf), np.max(cdf - empirical_lo))
    assert distance < 0.02


def test_sampling_is_seeded():
    model = WeibullModel(5, 2)
    np.testing.assert_array_equal(weibull_sample(model, 3, 10),
                                  weibull_sample(model, 3, 10))


@pytest.mark.parametrize('lam, k', [(50.0, 1.0), (50.0, 1.5), (3.0, 4.0)])
def test_fit_recovers_parameters(lam, k):
    fitted = fit_weibull(weibull_sample(WeibullModel(lam, k), seed=7,
                                        size=10000))
    assert fitted.lam == pytest.approx(lam, rel=0.05)
    assert fitted.k == pytest.approx(k, rel=0.05)


def test_fit_rejects_bad_data():
    with pytest.raises(DegenerateDataException):
        fit_weibull([4.0, 4.0])
    with pytest.raises(InsufficientDataException):
        fit_weibull([4.0])
    with pytest.raises(InsufficientDataException):
        fit_weibull([4.0, 0.0, 2.0])
