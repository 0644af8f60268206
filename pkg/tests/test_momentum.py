import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.errors import InvalidArgumentError
from core.flow.momentum import MomentumKind, MomentumModel

LAPLACE = MomentumModel('laplace', 1)
GAUSSIAN = MomentumModel('gaussian', 1)


@pytest.mark.parametrize('model, v, expected', [
    (LAPLACE, 0.0, 0.5),
    (LAPLACE, 1.0, 1.0 - 0.5 * math.exp(-1.0)),
    (LAPLACE, -1.0, 0.5 * math.exp(-1.0)),
    (GAUSSIAN, 0.0, 0.5),
])
def test_cdf_values(model, v, expected):
    assert_allclose(model.cdf(v), expected, rtol=1e-12)


@pytest.mark.parametrize('model, p, expected', [
    (LAPLACE, 0.5, 0.0),
    (LAPLACE, 0.9, math.log(5.0)),
    (LAPLACE, 0.1, -math.log(5.0)),
    (GAUSSIAN, 0.5, 0.0),
])
def test_quantile_values(model, p, expected):
    assert_allclose(model.quantile(p), expected, rtol=1e-12, atol=1e-15)


def test_cdf_rejects_nan():
    with pytest.raises(InvalidArgumentError):
        LAPLACE.cdf([0.0, np.nan])


@pytest.mark.parametrize('p', [0.0, 1.0, -0.2, 1.5, np.nan])
def test_quantile_rejects_outside_unit_interval(p):
    with pytest.raises(InvalidArgumentError):
        GAUSSIAN.quantile(p)


def test_cdf_is_clamped_in_the_tails():
    p = GAUSSIAN.cdf([-60.0, 60.0])
    assert 0.0 < p[0] < 1e-14
    assert 1.0 - 1e-14 < p[1] < 1.0
    # the clamped value is still a valid quantile input
    assert np.all(np.isfinite(GAUSSIAN.quantile(p)))


# Above the median R(v) carries an absolute rounding error of about 1e-16, which moves
# the recovered v by 1e-16 / r(v). That passes 1e-10 near v = 13 (Laplace) and v = 4.9
# (Gaussian), so the upper ends stay below those. The lower tail keeps R(v) at full
# relative precision down to the CDF clamp.
def test_laplace_round_trip():
    v = np.linspace(-20.0, 8.0, 2001)
    assert_allclose(LAPLACE.quantile(LAPLACE.cdf(v)), v, atol=1e-10)


def test_gaussian_round_trip():
    v = np.linspace(-7.0, 4.0, 2001)
    assert_allclose(GAUSSIAN.quantile(GAUSSIAN.cdf(v)), v, atol=1e-10)


def test_laplace_logpdf_grad_at_zero():
    logp, grad = LAPLACE.logpdf_grad([0.0])
    assert_allclose(logp, math.log(0.5))
    assert_allclose(grad, [0.0])


def test_laplace_logpdf_grad_product():
    model = MomentumModel('laplace', 2)
    logp, grad = model.logpdf_grad([2.0, -3.0])
    assert_allclose(logp, -6.3862944, atol=1e-7)
    assert_allclose(grad, [-1.0, 1.0])


def test_gaussian_logpdf_grad_at_zero():
    logp, grad = GAUSSIAN.logpdf_grad([0.0])
    assert_allclose(logp, -0.9189385, atol=1e-7)
    assert_allclose(grad, [0.0])


def test_logpdf_grad_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        LAPLACE.logpdf_grad([np.inf])


@pytest.mark.parametrize('kind', ['laplace', 'gaussian'])
def test_gradient_matches_finite_differences(kind, rng):
    model = MomentumModel(kind, 3)
    rho = rng.uniform(0.5, 2.0, size=3) * rng.choice([-1.0, 1.0], size=3)
    h = 1e-6
    numeric = np.array([
        (model.logpdf(rho + h * e) - model.logpdf(rho - h * e)) / (2 * h) for e in np.eye(3)
    ])
    assert_allclose(model.grad_logpdf(rho), numeric, atol=1e-6)


def test_batched_logpdf_sums_last_axis():
    model = MomentumModel('gaussian', 2)
    rho = np.array([[0.0, 0.0], [1.0, -1.0]])
    assert_allclose(model.logpdf(rho), [-2 * 0.9189385, -2 * 0.9189385 - 1.0], atol=1e-7)


def test_sample_shape(rng):
    model = MomentumModel(MomentumKind.LAPLACE, 4)
    assert model.sample(rng, (7,)).shape == (7, 4)
    assert model.sample(rng).shape == (4,)


def test_parse_rejects_unknown_kind():
    with pytest.raises(InvalidArgumentError):
        MomentumModel('uniform', 1)
