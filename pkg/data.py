# data.py
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from dateutil.parser import isoparse

from utils import ConfigError, DataError

logger = logging.getLogger(__name__)

CALENDAR_COLUMNS = ('hour_sin', 'hour_cos', 'weekday_sin', 'weekday_cos', 'weekend')
NOISE_KINDS = ('constant', 'missing', 'gaussian')
DEFAULT_SPLIT = (0.7, 0.1, 0.2)


# --- Frames ---

@dataclass(frozen=True)
class TimeSeriesFrame:
    """Regularly spaced load series with named real covariates. Never mutated in place."""
    timestamps: pd.DatetimeIndex
    load: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    unit: str = 'kW'

    def __post_init__(self):
        n = len(self.timestamps)
        if len(self.load) != n or any(len(v) != n for v in self.covariates.values()):
            raise DataError("All frame columns must have the same length as the timestamps.")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def covariate_names(self) -> list[str]:
        return list(self.covariates)

    def slice(self, start: int, stop: int) -> 'TimeSeriesFrame':
        return TimeSeriesFrame(
            timestamps=self.timestamps[start:stop],
            load=self.load[start:stop].copy(),
            covariates={k: v[start:stop].copy() for k, v in self.covariates.items()},
            unit=self.unit,
        )

    def with_load(self, load: np.ndarray) -> 'TimeSeriesFrame':
        return replace(self, load=np.asarray(load, dtype=float).copy())

    def to_frame(self) -> pd.DataFrame:
        columns = {'timestamp': format_timestamps(self.timestamps), 'load': self.load}
        columns.update(self.covariates)
        return pd.DataFrame(columns)


def format_timestamps(timestamps) -> list[str]:
    return [ts.strftime('%Y-%m-%dT%H:%M:%S') for ts in pd.DatetimeIndex(timestamps)]


def _parse_timestamp(raw: str, line_no: int):
    try:
        parsed = isoparse(str(raw).strip())
    except (ValueError, OverflowError):
        raise DataError(f"Line {line_no}: unparseable timestamp '{raw}'.") from None
    if parsed.tzinfo is not None:
        parsed = pd.Timestamp(parsed).tz_convert('UTC').tz_localize(None)
    return pd.Timestamp(parsed)


def _check_regular(timestamps: pd.DatetimeIndex):
    if len(timestamps) < 2:
        return
    deltas = timestamps[1:] - timestamps[:-1]
    step = deltas[0]
    for i, delta in enumerate(deltas):
        line_no = i + 3
        if delta == pd.Timedelta(0):
            raise DataError(f"Line {line_no}: duplicated timestamp {timestamps[i + 1]}.")
        if delta < pd.Timedelta(0):
            raise DataError(f"Line {line_no}: timestamp {timestamps[i + 1]} goes backwards.")
        if delta != step:
            if delta > step and delta % step == pd.Timedelta(0):
                raise DataError(
                    f"Line {line_no}: gap of {delta // step - 1} missing step(s) between "
                    f"{timestamps[i]} and {timestamps[i + 1]}."
                )
            raise DataError(
                f"Line {line_no}: irregular step {delta} between {timestamps[i]} and "
                f"{timestamps[i + 1]} (expected {step})."
            )


def load_csv(path, unit: str = 'kW') -> TimeSeriesFrame:
    """
    Reads a comma-separated file with a header row. `timestamp` (ISO-8601) and
    `load` are required; every other column is read as a real covariate.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise DataError(f"Data file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"Could not parse {path} as CSV: {e}") from e

    missing = [c for c in ('timestamp', 'load') if c not in raw.columns]
    if missing:
        raise DataError(f"{path} is missing required column(s): {', '.join(missing)}.")
    if raw.empty:
        raise DataError(f"{path} contains no data rows.")

    timestamps = pd.DatetimeIndex([_parse_timestamp(v, i + 2) for i, v in enumerate(raw['timestamp'])])
    _check_regular(timestamps)

    numeric = {}
    for column in raw.columns:
        if column == 'timestamp':
            continue
        values = pd.to_numeric(raw[column], errors='coerce').to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            line_no = int(bad[0]) + 2
            raise DataError(f"Line {line_no}: non-numeric value '{raw[column].iloc[bad[0]]}' in column '{column}'.")
        numeric[column] = values

    load = numeric.pop('load')
    frame = TimeSeriesFrame(timestamps=timestamps, load=load, covariates=numeric, unit=unit)
    logger.info(f"Loaded {len(frame)} rows from {path} (covariates: {frame.covariate_names or 'none'})")
    return frame


def calendar_features(timestamps: pd.DatetimeIndex) -> np.ndarray:
    """Hour-of-day and day-of-week sine/cosine pairs plus a weekend flag, shape (T, 5)."""
    timestamps = pd.DatetimeIndex(timestamps)
    hour = timestamps.hour.to_numpy() + timestamps.minute.to_numpy() / 60.0
    weekday = timestamps.dayofweek.to_numpy()
    return np.column_stack([
        np.sin(2 * np.pi * hour / 24.0),
        np.cos(2 * np.pi * hour / 24.0),
        np.sin(2 * np.pi * weekday / 7.0),
        np.cos(2 * np.pi * weekday / 7.0),
        (weekday >= 5).astype(float),
    ])


# --- Splits and Standardization ---

def chrono_split(frame: TimeSeriesFrame, ratios=DEFAULT_SPLIT):
    """Contiguous train/validation/test segments in chronological order."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise ConfigError(f"Split ratios must be three non-negative numbers summing to 1, got {ratios}.")
    total = len(frame)
    n_train = int(round(total * ratios[0]))
    n_val = int(round(total * ratios[1]))
    n_test = total - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise DataError(f"Split {ratios} of {total} rows leaves an empty segment ({n_train}/{n_val}/{n_test}).")
    return (frame.slice(0, n_train),
            frame.slice(n_train, n_train + n_val),
            frame.slice(n_train + n_val, total))


@dataclass(frozen=True)
class Scaler:
    """Per-column mean and population standard deviation from the training range."""
    means: dict[str, float]
    stds: dict[str, float]

    def transform(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        return TimeSeriesFrame(
            timestamps=frame.timestamps,
            load=(frame.load - self.means['load']) / self.stds['load'],
            covariates={k: (v - self.means[k]) / self.stds[k] for k, v in frame.covariates.items()},
            unit=frame.unit,
        )

    def inverse(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        return TimeSeriesFrame(
            timestamps=frame.timestamps,
            load=self.destandardize_load(frame.load),
            covariates={k: v * self.stds[k] + self.means[k] for k, v in frame.covariates.items()},
            unit=frame.unit,
        )

    def destandardize_load(self, values):
        return np.asarray(values) * self.stds['load'] + self.means['load']

    def to_dict(self) -> dict:
        return {'means': dict(self.means), 'stds': dict(self.stds)}

    @classmethod
    def from_dict(cls, payload: dict) -> 'Scaler':
        return cls(means=dict(payload['means']), stds=dict(payload['stds']))


def fit_scaler(reference: TimeSeriesFrame) -> Scaler:
    if len(reference) == 0:
        raise ConfigError("Cannot fit standardization on an empty training range.")
    columns = {'load': reference.load, **reference.covariates}
    means, stds = {}, {}
    for name, values in columns.items():
        spread = float(np.std(values))
        if not spread > 0:
            raise ConfigError(f"Column '{name}' has zero spread over the training range; cannot standardize.")
        means[name] = float(np.mean(values))
        stds[name] = spread
    return Scaler(means=means, stds=stds)


def standardize(frame: TimeSeriesFrame, reference: TimeSeriesFrame | None = None):
    """
    Standardizes load and covariates with statistics of `reference` (the
    training range; defaults to the frame itself). Returns (frame, scaler).
    """
    scaler = fit_scaler(frame if reference is None else reference)
    return scaler.transform(frame), scaler


# --- Windows ---

@dataclass
class WindowBatch:
    """
    inputs: (B, L_in, F) with the load in column 0; decoder_covariates: (B, H, F - 1);
    targets: (B, H). All standardized.
    """
    inputs: torch.Tensor
    decoder_covariates: torch.Tensor
    targets: torch.Tensor
    target_timestamps: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    def select(self, index) -> 'WindowBatch':
        index = torch.as_tensor(index, dtype=torch.long)
        return WindowBatch(
            inputs=self.inputs[index],
            decoder_covariates=self.decoder_covariates[index],
            targets=self.targets[index],
            target_timestamps=self.target_timestamps[index.numpy()],
        )

    def to(self, dtype: torch.dtype) -> 'WindowBatch':
        return WindowBatch(self.inputs.to(dtype), self.decoder_covariates.to(dtype),
                           self.targets.to(dtype), self.target_timestamps)


def feature_matrix(frame: TimeSeriesFrame) -> np.ndarray:
    columns = [frame.load] + [frame.covariates[k] for k in frame.covariate_names]
    return np.column_stack(columns + [calendar_features(frame.timestamps)])


def make_windows(frame: TimeSeriesFrame, lookback: int, horizon: int, stride: int = 1,
                 dtype: torch.dtype = torch.float32) -> WindowBatch:
    """All windows [t - lookback, t) -> [t, t + horizon) with t advancing by `stride`."""
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ConfigError(f"lookback, horizon and stride must be >= 1, got {lookback}, {horizon}, {stride}.")
    total = len(frame)
    if total < lookback + horizon:
        raise DataError(f"Frame of {total} rows is shorter than lookback + horizon = {lookback + horizon}.")

    features = feature_matrix(frame)
    origins = np.arange(lookback, total - horizon + 1, stride)
    inputs = np.stack([features[t - lookback:t] for t in origins])
    decoder_covariates = np.stack([features[t:t + horizon, 1:] for t in origins])
    targets = np.stack([frame.load[t:t + horizon] for t in origins])
    stamps = frame.timestamps.to_numpy()
    target_timestamps = np.stack([stamps[t:t + horizon] for t in origins])

    logger.debug(f"Built {len(origins)} windows (lookback={lookback}, horizon={horizon}, stride={stride})")
    return WindowBatch(
        inputs=torch.as_tensor(inputs, dtype=dtype),
        decoder_covariates=torch.as_tensor(decoder_covariates, dtype=dtype),
        targets=torch.as_tensor(targets, dtype=dtype),
        target_timestamps=target_timestamps,
    )


# --- Synthetic Series ---

@dataclass(frozen=True)
class SynthProfile:
    base: float = 100.0
    daily_amplitude: float = 20.0
    weekly_amplitude: float = 8.0
    noise_std: float = 3.0
    temperature: bool = True
    temperature_coupling: float = 0.8
    level_shift: float | None = None
    start: str = '2021-01-04T00:00:00'


SYNTH_PROFILES = {
    'stationary': SynthProfile(),
    'level_shift': SynthProfile(level_shift=0.8),
    'clean': SynthProfile(noise_std=0.0),
}


def synth_profile(name: str) -> SynthProfile:
    try:
        return SYNTH_PROFILES[name]
    except KeyError:
        raise ConfigError(f"Unknown synthetic profile '{name}'; choose one of {', '.join(SYNTH_PROFILES)}.") from None


def synth_generate(days: int, profile: SynthProfile = SynthProfile(), seed: int = 0) -> TimeSeriesFrame:
    """
    Hourly load: base + daily and weekly sinusoids + temperature response +
    Gaussian observation noise. With `level_shift` set, the final 30% of the
    series is multiplied by that factor.
    """
    if days < 14:
        raise ConfigError(f"Synthetic series need at least 14 days, got {days}.")
    rng = np.random.default_rng(seed)
    hours = days * 24
    t = np.arange(hours, dtype=float)
    timestamps = pd.date_range(start=pd.Timestamp(profile.start), periods=hours, freq='h')

    temperature_noise = rng.standard_normal(hours)
    load_noise = rng.standard_normal(hours)

    temperature = 15.0 + 8.0 * np.sin(2 * np.pi * (t - 9.0) / 24.0) + 0.5 * profile.noise_std * temperature_noise
    load = (profile.base
            + profile.daily_amplitude * np.sin(2 * np.pi * (t - 6.0) / 24.0)
            + profile.weekly_amplitude * np.sin(2 * np.pi * t / 168.0)
            + profile.noise_std * load_noise)
    if profile.temperature:
        load = load + profile.temperature_coupling * (temperature - 15.0)
    if profile.level_shift is not None:
        cut = int(round(0.7 * hours))
        load[cut:] = load[cut:] * profile.level_shift

    covariates = {'temperature': temperature} if profile.temperature else {}
    logger.info(f"Generated {days} days of synthetic load (seed={seed}, level_shift={profile.level_shift})")
    return TimeSeriesFrame(timestamps=timestamps, load=load, covariates=covariates)


# --- Label Noise ---

@dataclass(frozen=True)
class NoiseSpec:
    kind: str = 'constant'
    rate: float = 0.0
    seed: int = 0
    gaussian_scale: str = 'variance'

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"Unknown noise kind '{self.kind}'; choose one of {', '.join(NOISE_KINDS)}.")
        if not 0 <= self.rate < 0.5:
            raise ConfigError(f"Noise rate must satisfy 0 <= rate < 0.5, got {self.rate}.")
        if self.gaussian_scale not in ('variance', 'std'):
            raise ConfigError(f"gaussian_scale must be 'variance' or 'std', got '{self.gaussian_scale}'.")


def noise_inject(labels, spec: NoiseSpec, train_label_mean: float | None = None):
    """
    Corrupts each label independently with probability `spec.rate`.

    constant: y + 0.2 * mean;  missing: mean;  gaussian: y + N(0, 0.5 * mean)
    where 0.5 * mean is the variance (or the standard deviation when
    `gaussian_scale` is 'std'). Returns (corrupted labels, boolean mask).
    """
    labels = np.asarray(labels, dtype=float)
    mean = float(np.mean(labels)) if train_label_mean is None else float(train_label_mean)
    if spec.kind == 'gaussian' and mean <= 0:
        raise ConfigError(f"Gaussian label noise needs a positive label mean, got {mean}.")

    rng = np.random.default_rng(spec.seed)
    mask = rng.random(labels.shape) < spec.rate
    corrupted = labels.copy()
    if spec.kind == 'constant':
        corrupted[mask] += 0.2 * mean
    elif spec.kind == 'missing':
        corrupted[mask] = mean
    else:
        spread = np.sqrt(0.5 * mean) if spec.gaussian_scale == 'variance' else 0.5 * mean
        corrupted[mask] += rng.normal(0.0, spread, size=int(mask.sum()))

    logger.info(f"Injected {spec.kind} label noise into {int(mask.sum())}/{labels.size} labels (rate={spec.rate})")
    return corrupted, mask


# --- Dataset Assembly ---

@dataclass
class WindowSplits:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    scaler: Scaler
    test_frame: TimeSeriesFrame
    val_frame: TimeSeriesFrame
    noise_mask: np.ndarray | None = None


def prepare_dataset(frame: TimeSeriesFrame, lookback: int = 168, horizon: int = 24, stride: int = 1,
                    eval_stride: int | None = None, ratios=DEFAULT_SPLIT,
                    noise: NoiseSpec | None = None, scaler: Scaler | None = None) -> WindowSplits:
    """
    Splits chronologically, optionally corrupts the raw training load, fits the
    scaler on the training range (unless a fitted `scaler` is supplied) and
    windows every split without crossing a split boundary.
    """
    eval_stride = horizon if eval_stride is None else eval_stride
    train_frame, val_frame, test_frame = chrono_split(frame, ratios)

    noise_mask = None
    if noise is not None and noise.rate > 0:
        corrupted, noise_mask = noise_inject(train_frame.load, noise)
        train_frame = train_frame.with_load(corrupted)

    if scaler is None:
        scaler = fit_scaler(train_frame)
    elif set(scaler.means) != {'load', *train_frame.covariate_names}:
        raise DataError(f"Scaler columns {sorted(scaler.means)} do not match the data columns.")
    splits = WindowSplits(
        train=make_windows(scaler.transform(train_frame), lookback, horizon, stride),
        val=make_windows(scaler.transform(val_frame), lookback, horizon, eval_stride),
        test=make_windows(scaler.transform(test_frame), lookback, horizon, eval_stride),
        scaler=scaler,
        test_frame=test_frame,
        val_frame=val_frame,
        noise_mask=noise_mask,
    )
    logger.info(
        f"Prepared windows: train={len(splits.train)}, val={len(splits.val)}, test={len(splits.test)} "
        f"(lookback={lookback}, horizon={horizon})"
    )
    return splits
