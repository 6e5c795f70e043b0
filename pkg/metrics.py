# metrics.py
"""
Point and probabilistic scores. All functions accept scalars or arrays and
work in whatever units they are given (load units for reports).
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from distributions import StableParams, stable_quantile
from utils import DataError, DomainError

logger = logging.getLogger(__name__)

REPORT_COVERAGES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class IntervalForecast:
    lower: float | np.ndarray
    upper: float | np.ndarray
    coverage: float

    def __post_init__(self):
        if not 0 < self.coverage < 1:
            raise DomainError(f"Nominal coverage must lie in (0, 1), got {self.coverage}.")
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise DomainError("Interval lower bound exceeds upper bound.")


@dataclass(frozen=True)
class QuantileGrid:
    probabilities: tuple[float, ...] = tuple(np.round(np.arange(1, 100) / 100.0, 2))

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.size == 0 or np.any((p <= 0) | (p >= 1)) or np.any(np.diff(p) <= 0):
            raise DomainError("Quantile grid must be strictly ascending inside (0, 1).")


def _paired(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DataError(f"Length mismatch between actuals {y.shape} and forecasts {yhat.shape}.")
    if y.size == 0:
        raise DataError("Cannot score an empty series.")
    return y, yhat


def mape(y, yhat) -> float:
    """Mean absolute percentage error in percent; zero actuals are rejected."""
    y, yhat = _paired(y, yhat)
    zeros = np.flatnonzero(y == 0)
    if zeros.size:
        raise DataError(f"MAPE is undefined: {zeros.size} zero actual(s), first at index {int(zeros[0])}.")
    return float(100.0 * np.mean(np.abs(y - yhat) / np.abs(y)))


def mae(y, yhat) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def pinball(y, q, p):
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    loss = np.where(y >= q, (y - q) * p, (q - y) * (1 - p))
    return loss if loss.ndim else float(loss)


def crps_quantile(y, predictive: StableParams, grid: QuantileGrid = QuantileGrid()):
    """
    CRPS estimated as twice the mean pinball loss over the quantile grid. Finite
    for Cauchy predictives, whose exact CRPS diverges.
    """
    y = np.asarray(y, dtype=float)
    probabilities = np.asarray(grid.probabilities, dtype=float)
    shape = np.broadcast_shapes(y.shape, np.shape(predictive.loc), np.shape(predictive.scale))
    p = probabilities.reshape((-1,) + (1,) * len(shape))
    quantiles = stable_quantile(p, predictive)
    losses = pinball(np.broadcast_to(y, shape), quantiles, p)
    score = 2.0 * np.mean(losses, axis=0)
    return score if np.ndim(score) else float(score)


def winkler(y, interval: IntervalForecast):
    """Interval width plus 2/(1 - c) times the distance by which y falls outside."""
    y = np.asarray(y, dtype=float)
    lower = np.asarray(interval.lower, dtype=float)
    upper = np.asarray(interval.upper, dtype=float)
    penalty = 2.0 / (1.0 - interval.coverage)
    score = (upper - lower
             + penalty * np.clip(lower - y, 0.0, None)
             + penalty * np.clip(y - upper, 0.0, None))
    return score if score.ndim else float(score)


def coverage(y, intervals: IntervalForecast) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DataError("Cannot compute coverage of an empty series.")
    if np.shape(intervals.lower) not in ((), y.shape):
        raise DataError(f"Length mismatch between actuals {y.shape} and intervals {np.shape(intervals.lower)}.")
    lower = np.broadcast_to(np.asarray(intervals.lower, dtype=float), y.shape)
    upper = np.broadcast_to(np.asarray(intervals.upper, dtype=float), y.shape)
    return float(np.mean((y >= lower) & (y <= upper)))


def relative_degradation(noisy: float, clean: float) -> float:
    """Relative performance loss of a score against its clean-label baseline."""
    if clean == 0:
        raise DomainError("Clean baseline score is zero; relative degradation is undefined.")
    return (noisy - clean) / clean


# --- Forecast Frames ---

def join_actuals(forecast: pd.DataFrame, actuals: pd.DataFrame) -> pd.DataFrame:
    """Inner-joins forecast rows with actual loads on `timestamp`; every forecast row must match."""
    if forecast.empty:
        raise DataError("Forecast contains no rows.")
    if forecast['timestamp'].duplicated().any():
        raise DataError("Forecast contains duplicated timestamps.")
    merged = forecast.merge(actuals[['timestamp', 'load']], on='timestamp', how='left', validate='one_to_one')
    unmatched = merged['load'].isna()
    if unmatched.any():
        first = merged.loc[unmatched, 'timestamp'].iloc[0]
        raise DataError(f"{int(unmatched.sum())} forecast timestamp(s) have no actual, first: {first}.")
    return merged


def score_forecast(forecast: pd.DataFrame, actuals: pd.DataFrame, alpha: int) -> dict[str, float]:
    """MAPE, MAE, CRPS, Winkler and empirical coverage at the reported interval coverages."""
    merged = join_actuals(forecast, actuals)
    y = merged['load'].to_numpy(dtype=float)
    loc = merged['loc'].to_numpy(dtype=float)
    predictive = StableParams(alpha=alpha, loc=loc, scale=merged['sigma_bar'].to_numpy(dtype=float))

    scores = {
        'mape': mape(y, loc),
        'mae': mae(y, loc),
        'crps': float(np.mean(crps_quantile(y, predictive))),
    }
    for c in REPORT_COVERAGES:
        label = int(round(c * 100))
        interval = IntervalForecast(merged[f'lo{label}'].to_numpy(dtype=float),
                                    merged[f'hi{label}'].to_numpy(dtype=float), c)
        scores[f'winkler{label}'] = float(np.mean(winkler(y, interval)))
        scores[f'coverage{label}'] = coverage(y, interval)
    logger.info("Scores: " + ", ".join(f"{k}={v:.4f}" for k, v in scores.items()))
    return scores
