import math

import pandas as pd
import pytest

import distributions
import harness
from config import RunConfig
from harness import (REPORT_COLUMNS, OracleImpls, OracleReport, oracle_gaussian_crps, oracle_stable_sum,
                     registered_checks, reports_frame, run_all_oracles, worst_error)
from utils import DomainError


@pytest.fixture(scope='module')
def fast_reports():
    return run_all_oracles(seed=0)


def test_fast_checks_pass(fast_reports):
    failed = [(r.name, r.max_error, r.tolerance) for r in fast_reports if not r.passed]
    assert failed == []


def test_one_report_per_fast_check(fast_reports):
    assert [r.name for r in fast_reports] == registered_checks()
    assert set(registered_checks()) < set(registered_checks(include_slow=True))


def test_injected_nll_fault_is_caught():
    def shifted_nll(y, loc, scale):
        return distributions.cauchy_nll(y, loc, scale) + math.log(math.pi)

    reports = {r.name: r for r in run_all_oracles(seed=0, impls=OracleImpls(cauchy_nll=shifted_nll))}
    assert not reports['nll_reference_values'].passed
    assert reports['nll_reference_values'].max_error == pytest.approx(math.log(math.pi))
    assert reports['quantile_reference_values'].passed


def test_raising_implementation_is_reported_as_failed():
    def broken_denoise(*args, **kwargs):
        raise RuntimeError("broken")

    reports = {r.name: r for r in run_all_oracles(seed=0, impls=OracleImpls(denoise=broken_denoise))}
    assert reports['denoise_round_trip'].max_error == math.inf
    assert not reports['denoise_round_trip'].passed


def test_wrong_scale_combination_fails_the_stable_sum():
    def additive(alpha, a, b):
        return a + b

    reports = {r.name: r for r in run_all_oracles(seed=0, impls=OracleImpls(combine_scales=additive))}
    assert reports['stable_sum_cauchy'].passed
    assert not reports['stable_sum_gaussian'].passed
    assert not reports['scale_combination'].passed


def test_stable_sum_oracle_is_reproducible():
    first = oracle_stable_sum(distributions.StableParams(1, 0.0, 1.0), distributions.StableParams(1, 0.0, 2.0),
                              seed=3)
    second = oracle_stable_sum(distributions.StableParams(1, 0.0, 1.0), distributions.StableParams(1, 0.0, 2.0),
                               seed=3)
    assert first == second


def test_stable_sum_oracle_validation():
    with pytest.raises(DomainError):
        oracle_stable_sum(distributions.StableParams(1, 0.0, 1.0), distributions.StableParams(2, 0.0, 1.0))
    with pytest.raises(DomainError):
        oracle_stable_sum(distributions.StableParams(2, 0.0, 1.0), distributions.StableParams(2, 0.0, 1.0),
                          draws=1_000)


def test_gaussian_crps_oracle_domain():
    with pytest.raises(DomainError):
        oracle_gaussian_crps(0.0, 0.0, 0.0)


def test_reports_frame_columns():
    frame = reports_frame([OracleReport('demo', 0.5, 1.0, 10, 3), OracleReport('other', 2.0, 1.0, 1, 3)])
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame['passed'].tolist() == [True, False]


@pytest.mark.slow
def test_parallel_determinism_on_a_tiny_run(tiny_config):
    reports = {r.name: r for r in run_all_oracles(seed=0, include_slow=True, run_config=tiny_config)}
    assert reports['parallel_determinism'].passed


@pytest.mark.parametrize("values, expected", [((0.0, 0.5), 0.5), ((0.0, -2.0), 0.0), ((1.0, math.nan), math.inf),
                                              ((math.nan, 0.0), math.inf), ((0.0, math.inf), math.inf)])
def test_worst_error_treats_non_finite_values_as_unbounded(values, expected):
    assert worst_error(*values) == expected


@pytest.mark.parametrize("rho, passed", [(math.nan, False), (-0.9, True), (-0.5, False)])
def test_epistemic_trend_needs_a_finite_decreasing_correlation(monkeypatch, rho, passed):
    monkeypatch.setattr(harness.pipeline, 'run_epistemic_curve', lambda cfg: (pd.DataFrame(), rho))
    report = harness.check_epistemic_trend(0, OracleImpls(), RunConfig())
    assert report.passed is passed
    if math.isnan(rho):
        assert report.max_error == math.inf
