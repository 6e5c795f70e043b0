import numpy as np
import pandas as pd
import pytest

from distributions import StableParams
from harness import oracle_gaussian_crps
from metrics import (REPORT_COVERAGES, IntervalForecast, QuantileGrid, coverage, crps_quantile, join_actuals, mae,
                     mape, pinball, relative_degradation, rmse, score_forecast, winkler)
from utils import DataError, DomainError


@pytest.mark.parametrize("y, yhat, expected", [
    ([100.0, 200.0], [110.0, 180.0], 10.0),
    ([100.0, 200.0], [100.0, 200.0], 0.0),
    ([50.0], [60.0], 20.0),
])
def test_mape(y, yhat, expected):
    assert mape(y, yhat) == pytest.approx(expected)


def test_mape_rejects_zero_actuals():
    with pytest.raises(DataError, match="zero actual"):
        mape([1.0, 0.0], [1.0, 1.0])


@pytest.mark.parametrize("y, yhat, expected", [([1.0, 2.0], [1.0, 2.0], 0.0), ([0.0, 2.0], [1.0, 1.0], 1.0),
                                               ([-1.0], [2.0], 3.0)])
def test_mae(y, yhat, expected):
    assert mae(y, yhat) == pytest.approx(expected)


def test_rmse():
    assert rmse([-1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)
    assert rmse([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_point_metrics_reject_mismatched_or_empty_input():
    with pytest.raises(DataError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        rmse([], [])


@pytest.mark.parametrize("y, q, p, expected", [(2.0, 2.0, 0.3, 0.0), (1.0, 0.0, 0.9, 0.9), (0.0, 1.0, 0.9, 0.1)])
def test_pinball(y, q, p, expected):
    assert pinball(y, q, p) == pytest.approx(expected)


def test_crps_on_a_degenerate_grid():
    grid = QuantileGrid((0.5,))
    assert crps_quantile(3.0, StableParams(1, 3.0, 2.0), grid) == pytest.approx(0.0)


@pytest.mark.parametrize("y", [0.0, 0.5, 1.0])
def test_crps_matches_gaussian_closed_form(y):
    estimate = crps_quantile(y, StableParams(2, 0.0, 1.0))
    assert estimate == pytest.approx(oracle_gaussian_crps(y, 0.0, 1.0), rel=0.01)


def test_closed_form_gaussian_crps_reference_values():
    assert oracle_gaussian_crps(0.0, 0.0, 1.0) == pytest.approx(0.233695, abs=1e-6)
    assert oracle_gaussian_crps(0.0, 0.0, 2.0) == pytest.approx(2 * oracle_gaussian_crps(0.0, 0.0, 1.0))


def test_crps_is_finite_for_cauchy_and_vectorized():
    y = np.array([0.0, 10.0, -1e6])
    scores = crps_quantile(y, StableParams(1, np.zeros(3), np.ones(3)))
    assert scores.shape == (3,)
    assert np.all(np.isfinite(scores)) and np.all(scores >= 0)


def test_crps_improves_as_the_location_approaches_the_outcome():
    scores = [crps_quantile(0.0, StableParams(1, loc, 1.0)) for loc in (3.0, 2.0, 1.0, 0.5, 0.0)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_crps_propriety_under_gaussian_draws():
    y = np.random.default_rng(0).standard_normal(10_000)
    truth = np.mean(crps_quantile(y, StableParams(2, 0.0, 1.0)))
    assert truth < np.mean(crps_quantile(y, StableParams(2, 0.5, 1.0)))
    assert truth < np.mean(crps_quantile(y, StableParams(2, 0.0, 2.0)))


def test_quantile_grid_validation():
    assert len(QuantileGrid().probabilities) == 99
    with pytest.raises(DomainError):
        QuantileGrid((0.5, 0.4))
    with pytest.raises(DomainError):
        QuantileGrid((0.0, 0.5))


def test_winkler_rules():
    interval = IntervalForecast(1.0, 3.0, 0.75)
    assert winkler(2.0, interval) == pytest.approx(2.0)
    assert winkler(1.5, interval) == pytest.approx(2.0)
    assert winkler(0.0, interval) == pytest.approx(10.0)
    assert winkler(4.0, interval) == pytest.approx(10.0)
    assert winkler(5.0, IntervalForecast(5.0, 5.0, 0.5)) == 0.0


def test_interval_validation():
    with pytest.raises(DomainError):
        IntervalForecast(2.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        IntervalForecast(0.0, 1.0, 1.0)


@pytest.mark.parametrize("y, expected", [([1.0, 2.0, 3.0, 4.0], 1.0), ([10.0, 20.0, 30.0, 40.0], 0.0),
                                         ([1.0, 2.0, 3.0, 40.0], 0.75)])
def test_coverage(y, expected):
    interval = IntervalForecast(np.zeros(4), np.full(4, 5.0), 0.5)
    assert coverage(y, interval) == pytest.approx(expected)


def test_coverage_length_mismatch():
    with pytest.raises(DataError):
        coverage([1.0, 2.0], IntervalForecast(np.zeros(3), np.ones(3), 0.5))


def test_relative_degradation():
    assert relative_degradation(12.0, 10.0) == pytest.approx(0.2)
    with pytest.raises(DomainError):
        relative_degradation(1.0, 0.0)


def forecast_rows(timestamps, loc, half_width=1.0):
    rows = {'timestamp': timestamps, 'loc': loc, 'sigma_aleatoric': 1.0, 'sigma_epistemic': 0.0, 'sigma_bar': 1.0}
    for c in REPORT_COVERAGES:
        label = int(round(c * 100))
        rows[f'lo{label}'] = np.asarray(loc) - half_width
        rows[f'hi{label}'] = np.asarray(loc) + half_width
    return pd.DataFrame(rows)


def test_score_forecast_on_a_perfect_forecast():
    stamps = ['2022-01-01T00:00:00', '2022-01-01T01:00:00']
    actuals = pd.DataFrame({'timestamp': stamps, 'load': [100.0, 120.0]})
    scores = score_forecast(forecast_rows(stamps, [100.0, 120.0]), actuals, alpha=1)
    assert scores['mape'] == 0.0
    assert scores['mae'] == 0.0
    assert {'winkler25', 'winkler50', 'winkler75', 'coverage25', 'coverage50', 'coverage75', 'crps'} <= set(scores)
    assert scores['winkler75'] == pytest.approx(2.0)
    assert scores['coverage75'] == 1.0


def test_join_rejects_unmatched_or_duplicated_timestamps():
    actuals = pd.DataFrame({'timestamp': ['2022-01-01T00:00:00'], 'load': [1.0]})
    with pytest.raises(DataError, match="no actual"):
        join_actuals(forecast_rows(['2022-01-01T05:00:00'], [1.0]), actuals)
    with pytest.raises(DataError, match="duplicated"):
        join_actuals(forecast_rows(['2022-01-01T00:00:00'] * 2, [1.0, 1.0]), actuals)


@pytest.mark.parametrize("y", [0.0, 0.5, 1.0, 2.0])
def test_grid_crps_slightly_overestimates_the_gaussian_closed_form(y):
    exact = oracle_gaussian_crps(y, 0.0, 1.0)
    excess = float(crps_quantile(y, StableParams(2, 0.0, 1.0))) / exact - 1.0
    assert 0.009 < excess < 0.0102
