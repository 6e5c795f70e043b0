# inference.py
import concurrent.futures
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from data import WindowBatch, WindowSplits, format_timestamps
from distributions import StableParams, central_interval, combine_scales, family_alpha
from metrics import REPORT_COVERAGES, crps_quantile
from model import DiffLoadModel, EmissionParams, ModelConfig
from utils import ConfigError, DataError, derive_seed, make_generator

logger = logging.getLogger(__name__)

FORECAST_COLUMNS = ['timestamp', 'loc', 'sigma_aleatoric', 'sigma_epistemic', 'sigma_bar',
                    'lo25', 'hi25', 'lo50', 'hi50', 'lo75', 'hi75']
QUANTILE_CANDIDATES = (0.1, 0.3, 0.5, 0.7)
EPISTEMIC_MODES = ('quantile', 'std')


@dataclass(frozen=True)
class InferenceConfig:
    samples: int = 100
    candidates: tuple[float, ...] = QUANTILE_CANDIDATES
    coverage: float | None = None
    report_coverages: tuple[float, ...] = REPORT_COVERAGES
    epistemic_mode: str = 'quantile'
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError(f"samples (M) must be >= 1, got {self.samples}.")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}.")
        if self.epistemic_mode not in EPISTEMIC_MODES:
            raise ConfigError(f"epistemic_mode must be one of {EPISTEMIC_MODES}, got '{self.epistemic_mode}'.")
        levels = list(self.candidates) + list(self.report_coverages)
        if self.coverage is not None:
            levels.append(self.coverage)
        if not self.candidates or any(not 0 < c < 1 for c in levels):
            raise ConfigError(f"Coverages must lie in (0, 1), got {levels}.")


@dataclass
class ForecastResult:
    """Per-window, per-step forecast arrays of shape (B, H)."""
    loc_bar: np.ndarray
    sigma_aleatoric: np.ndarray
    sigma_epistemic: np.ndarray
    sigma_bar: np.ndarray
    intervals: dict[float, tuple[np.ndarray, np.ndarray]]
    family: str
    coverage: float
    timestamps: np.ndarray | None = field(default=None)

    @property
    def alpha(self) -> int:
        return family_alpha(self.family)

    def destandardize(self, mean: float, std: float) -> 'ForecastResult':
        """Maps every field back to load units: locations by y -> std*y + mean, scales by std."""
        if not std > 0:
            raise ConfigError(f"De-standardization needs a positive scale, got {std}.")
        return ForecastResult(
            loc_bar=self.loc_bar * std + mean,
            sigma_aleatoric=self.sigma_aleatoric * std,
            sigma_epistemic=self.sigma_epistemic * std,
            sigma_bar=self.sigma_bar * std,
            intervals={c: (lo * std + mean, hi * std + mean) for c, (lo, hi) in self.intervals.items()},
            family=self.family,
            coverage=self.coverage,
            timestamps=self.timestamps,
        )

    def to_frame(self) -> pd.DataFrame:
        if self.timestamps is None:
            raise DataError("Forecast has no timestamps to export.")
        columns = {
            'timestamp': format_timestamps(self.timestamps.reshape(-1)),
            'loc': self.loc_bar.reshape(-1),
            'sigma_aleatoric': self.sigma_aleatoric.reshape(-1),
            'sigma_epistemic': self.sigma_epistemic.reshape(-1),
            'sigma_bar': self.sigma_bar.reshape(-1),
        }
        for c in REPORT_COVERAGES:
            label = int(round(c * 100))
            lower, upper = self.intervals[c]
            columns[f'lo{label}'] = lower.reshape(-1)
            columns[f'hi{label}'] = upper.reshape(-1)
        return pd.DataFrame(columns, columns=FORECAST_COLUMNS)


# --- Sampling ---

def sample_forecasts(model: DiffLoadModel, batch: WindowBatch, samples: int, seed: int,
                     workers: int = 1) -> list[EmissionParams]:
    """
    Runs `samples` independent inference passes. Pass m draws from its own
    stream derived from (seed, m), so results do not depend on `workers`.
    """
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}.")
    model.eval()

    def one_pass(m: int) -> EmissionParams:
        return model.forecast_pass(batch.inputs, batch.decoder_covariates, make_generator(seed, m))

    results: list[EmissionParams | None] = [None] * samples
    if workers == 1:
        for m in range(samples):
            results[m] = one_pass(m)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_pass = {executor.submit(one_pass, m): m for m in range(samples)}
            for future in concurrent.futures.as_completed(future_to_pass):
                results[future_to_pass[future]] = future.result()
    logger.debug(f"Collected {samples} inference passes over {len(batch)} windows")
    return results


def aggregate(samples: list[EmissionParams], family: str, coverage: float,
              epistemic_mode: str = 'quantile',
              report_coverages=REPORT_COVERAGES) -> ForecastResult:
    """
    Mean location, mean emission scale (aleatoric), spread of sampled locations
    (epistemic), their stable-law combination and central intervals.
    """
    if not samples:
        raise DataError("Cannot aggregate an empty sample list.")
    alpha = family_alpha(family)
    locs = np.stack([np.asarray(s.loc, dtype=float) for s in samples])
    scales = np.stack([np.asarray(s.scale, dtype=float) for s in samples])

    loc_bar = locs.mean(axis=0)
    sigma_aleatoric = scales.mean(axis=0)
    if epistemic_mode == 'quantile':
        upper = np.quantile(locs, (1 + coverage) / 2, axis=0)
        lower = np.quantile(locs, (1 - coverage) / 2, axis=0)
        sigma_epistemic = upper - lower
    elif epistemic_mode == 'std':
        sigma_epistemic = locs.std(axis=0)
    else:
        raise ConfigError(f"Unknown epistemic_mode '{epistemic_mode}'.")
    sigma_bar = combine_scales(alpha, sigma_aleatoric, sigma_epistemic)

    predictive = StableParams(alpha=alpha, loc=loc_bar, scale=sigma_bar)
    intervals = {c: central_interval(predictive, c) for c in report_coverages}
    return ForecastResult(loc_bar, sigma_aleatoric, sigma_epistemic, np.asarray(sigma_bar),
                          intervals, family, coverage)


def forecast(model: DiffLoadModel, batch: WindowBatch, config: InferenceConfig,
             coverage: float | None = None) -> ForecastResult:
    """Full M-sample forecast in standardized units, stamped with the target timestamps."""
    coverage = coverage if coverage is not None else config.coverage
    if coverage is None:
        raise ConfigError("No quantile-distance coverage chosen; run select_quantile_distance first.")
    samples = sample_forecasts(model, batch, config.samples, config.seed, config.workers)
    result = aggregate(samples, model.config.family, coverage, config.epistemic_mode, config.report_coverages)
    result.timestamps = batch.target_timestamps
    return result


# --- Quantile-Distance Selection ---

def select_from_samples(samples: list[EmissionParams], targets: np.ndarray, family: str,
                        candidates=QUANTILE_CANDIDATES, epistemic_mode: str = 'quantile') -> float:
    """Candidate coverage with the lowest mean CRPS; ties go to the smallest coverage."""
    alpha = family_alpha(family)
    best_coverage, best_crps = None, np.inf
    for c in sorted(candidates):
        result = aggregate(samples, family, c, epistemic_mode)
        predictive = StableParams(alpha=alpha, loc=result.loc_bar, scale=result.sigma_bar)
        score = float(np.mean(crps_quantile(targets, predictive)))
        logger.debug(f"Quantile distance {c:.0%}: validation CRPS {score:.6f}")
        if score < best_crps:
            best_coverage, best_crps = c, score
    return best_coverage


def select_quantile_distance(model: DiffLoadModel, split: WindowBatch, config: InferenceConfig) -> float:
    if len(split) == 0:
        raise DataError("Validation split contains no windows.")
    samples = sample_forecasts(model, split, config.samples, derive_seed(config.seed, 1), config.workers)
    chosen = select_from_samples(samples, split.targets.numpy().astype(float), model.config.family,
                                 config.candidates, config.epistemic_mode)
    logger.info(f"Selected quantile distance {chosen:.0%} from candidates {list(config.candidates)}")
    return chosen


# --- Baselines and Studies ---

def seasonal_naive(batch: WindowBatch, season: int = 24) -> np.ndarray:
    """Repeats the last observed season of the load column over the horizon, shape (B, H)."""
    lookback = batch.inputs.shape[1]
    if lookback < season:
        raise ConfigError(f"Seasonal-naive baseline needs lookback >= {season}, got {lookback}.")
    steps = np.arange(batch.horizon) % season
    history = batch.inputs[:, lookback - season:, 0].numpy()
    return history[:, steps]


def epistemic_curve(splits: WindowSplits, fractions, model_config: ModelConfig, train_config,
                    config: InferenceConfig, coverage: float = 0.5) -> list[tuple[float, float]]:
    """
    Trains one model per chronological prefix of the training windows and
    reports the mean epistemic scale (load units) on the test windows.
    """
    from training import train

    fractions = [float(f) for f in fractions]
    if any(not 0 < f <= 1 for f in fractions) or fractions != sorted(fractions):
        raise ConfigError(f"Fractions must be ascending within (0, 1], got {fractions}.")
    load_std = splits.scaler.stds['load']
    curve = []
    for fraction in fractions:
        count = int(round(fraction * len(splits.train)))
        if count < 1:
            raise DataError(f"Training fraction {fraction} leaves no training windows.")
        prefix = WindowSplits(
            train=splits.train.select(np.arange(count)),
            val=splits.val, test=splits.test, scaler=splits.scaler,
            test_frame=splits.test_frame, val_frame=splits.val_frame,
        )
        model, _ = train(prefix, model_config, train_config)
        result = forecast(model, splits.test, config, coverage=coverage)
        mean_sigma = float(np.mean(result.sigma_epistemic) * load_std)
        logger.info(f"Epistemic curve: fraction {fraction:.2f} ({count} windows) -> mean sigma_epistemic {mean_sigma:.6f}")
        curve.append((fraction, mean_sigma))
    return curve
