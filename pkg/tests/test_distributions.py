import math

import numpy as np
import pytest
import torch

from distributions import (StableParams, affine, cauchy_nll, central_interval, combine_scales, family_alpha,
                           gaussian_nll, label_gradient, noisy_empirical_risk, robustness_ratio, stable_quantile)
from utils import DomainError


@pytest.mark.parametrize("args, expected", [
    ((0.0, 0.0, 1.0), 0.0),
    ((1.0, 0.0, 1.0), math.log(2.0)),
    ((3.0, 1.0, 2.0), math.log(4.0)),
])
def test_cauchy_nll_values(args, expected):
    assert float(cauchy_nll(*args)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("args, expected", [
    ((0.0, 0.0, 1.0), 0.0),
    ((1.0, 0.0, 1.0), 0.5),
    ((3.0, 1.0, 2.0), math.log(2.0) + 0.5),
])
def test_gaussian_nll_values(args, expected):
    assert float(gaussian_nll(*args)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("nll", [cauchy_nll, gaussian_nll])
@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_nll_rejects_non_positive_scale(nll, scale):
    with pytest.raises(DomainError):
        nll(1.0, 0.0, scale)


def test_nll_is_elementwise_and_keeps_dtype():
    y = torch.tensor([0.0, 1.0], dtype=torch.float32)
    out = cauchy_nll(y, torch.zeros(2), torch.ones(2))
    assert out.dtype == torch.float32
    assert out.shape == (2,)


def test_cauchy_nll_is_minimized_at_the_label():
    locs = torch.linspace(-3.0, 3.0, 601, dtype=torch.float64)
    values = cauchy_nll(torch.full_like(locs, 0.5), locs, torch.ones_like(locs))
    assert float(locs[int(torch.argmin(values))]) == pytest.approx(0.5, abs=1e-9)


def test_stable_params_validation():
    with pytest.raises(DomainError):
        StableParams(alpha=1, loc=0.0, scale=0.0)
    with pytest.raises(DomainError):
        StableParams(alpha=3, loc=0.0, scale=1.0)
    with pytest.raises(DomainError):
        family_alpha('student')


@pytest.mark.parametrize("p, params, expected", [
    (0.5, StableParams(1, 3.0, 2.0), 3.0),
    (0.5, StableParams(2, -1.0, 4.0), -1.0),
    (0.75, StableParams(1, 0.0, 1.0), 1.0),
    (0.9, StableParams(1, 0.0, 2.0), 6.155367),
    (0.975, StableParams(2, 0.0, 1.0), 1.959964),
])
def test_stable_quantile_values(p, params, expected):
    assert float(stable_quantile(p, params)) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_stable_quantile_rejects_levels_outside_unit_interval(p):
    with pytest.raises(DomainError):
        stable_quantile(p, StableParams(1, 0.0, 1.0))


@pytest.mark.parametrize("alpha", [1, 2])
def test_stable_quantile_is_monotone_and_symmetric(alpha):
    params = StableParams(alpha, 2.0, 1.5)
    p = np.linspace(0.01, 0.99, 99)
    q = stable_quantile(p, params)
    assert np.all(np.diff(q) > 0)
    np.testing.assert_allclose(q - 2.0, -(q[::-1] - 2.0), atol=1e-9)


def test_central_interval_for_standard_cauchy():
    lower, upper = central_interval(StableParams(1, 0.0, 1.0), 0.5)
    assert lower == pytest.approx(-1.0)
    assert upper == pytest.approx(1.0)
    with pytest.raises(DomainError):
        central_interval(StableParams(1, 0.0, 1.0), 1.0)


@pytest.mark.parametrize("alpha, s1, s2, expected", [
    (1, 1.0, 2.0, 3.0),
    (2, 3.0, 4.0, 5.0),
    (1, 2.5, 0.0, 2.5),
    (2, 2.5, 0.0, 2.5),
])
def test_combine_scales(alpha, s1, s2, expected):
    assert combine_scales(alpha, s1, s2) == pytest.approx(expected)


def test_combine_scales_general_alpha_and_arrays():
    assert combine_scales(1.5, 1.0, 1.0) == pytest.approx(2.0 ** (1 / 1.5))
    np.testing.assert_allclose(combine_scales(2, np.array([3.0, 6.0]), np.array([4.0, 8.0])), [5.0, 10.0])


def test_combine_scales_rejects_negative_scale():
    with pytest.raises(DomainError):
        combine_scales(1, -1.0, 2.0)


@pytest.mark.parametrize("loc, scale, a, b, expected_loc, expected_scale", [
    (0.0, 1.0, 1.0, 5.0, 5.0, 1.0),
    (2.0, 3.0, -2.0, 0.0, -4.0, 6.0),
    (1.0, 2.0, 0.5, 1.0, 1.5, 1.0),
])
def test_affine(loc, scale, a, b, expected_loc, expected_scale):
    out = affine(StableParams(1, loc, scale), a, b)
    assert out.loc == pytest.approx(expected_loc)
    assert out.scale == pytest.approx(expected_scale)
    assert out.alpha == 1


def test_affine_with_zero_factor_is_rejected():
    with pytest.raises(DomainError):
        affine(StableParams(1, 0.0, 1.0), 0.0, 1.0)


def test_affine_matches_monte_carlo_quartiles():
    rng = np.random.default_rng(0)
    draws = -2.0 * (2.0 + 3.0 * rng.standard_cauchy(200_000))
    expected = affine(StableParams(1, 2.0, 3.0), -2.0, 0.0)
    quartiles = np.quantile(draws, [0.25, 0.5, 0.75])
    np.testing.assert_allclose(quartiles, [expected.loc - expected.scale, expected.loc, expected.loc + expected.scale],
                               atol=0.15)


def test_robustness_ratio_values():
    assert robustness_ratio(1.0, 1.0) == pytest.approx(1.0)
    assert robustness_ratio(3.0, 1.0) == pytest.approx(0.2)
    assert robustness_ratio(0.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        robustness_ratio(1.0, 0.0)


def test_robustness_ratio_bounded_beyond_the_scale():
    scales = np.logspace(-2, 2, 50)
    for factor in np.logspace(0, 3, 50):
        assert np.all(robustness_ratio(scales * factor, scales) <= 1.0 + 1e-12)


def test_robustness_ratio_is_the_ratio_of_label_gradients():
    residual, scale = np.array([0.5, 2.0, 10.0]), np.array([1.0, 1.0, 3.0])
    ratio = label_gradient(residual, scale, 'cauchy') / label_gradient(residual, scale, 'gaussian')
    np.testing.assert_allclose(ratio, robustness_ratio(residual, scale))


def test_noisy_empirical_risk():
    assert noisy_empirical_risk([1.0, 1.0], [3.0, 3.0], 0.25) == pytest.approx(1.5)
    assert noisy_empirical_risk([1.0, 3.0], [9.0, 9.0], 0.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        noisy_empirical_risk([1.0], [2.0], 0.5)
