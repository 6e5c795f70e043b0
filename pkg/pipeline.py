# pipeline.py
"""
Experiment stages shared by the command line and the oracle harness: dataset
assembly from a RunConfig, single train/forecast/evaluate runs, and the
ablation, perturbation and epistemic-curve studies.
"""
import concurrent.futures
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from config import RunConfig
from data import (NoiseSpec, Scaler, TimeSeriesFrame, WindowSplits, load_csv, prepare_dataset,
                  synth_generate)
from inference import ForecastResult, epistemic_curve, forecast, seasonal_naive, select_quantile_distance
from metrics import mape, relative_degradation, score_forecast
from model import DiffLoadModel
from training import TrainReport, train

logger = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    model: DiffLoadModel
    report: TrainReport
    splits: WindowSplits


# --- Single Run Stages ---

def dataset_name(cfg: RunConfig) -> str:
    return Path(cfg.data_path).stem if cfg.data_path else f"synthetic:{cfg.profile}"


def load_frame(cfg: RunConfig) -> TimeSeriesFrame:
    if cfg.data_path:
        return load_csv(cfg.data_path, unit=cfg.unit)
    return synth_generate(cfg.days, cfg.synth_profile(), seed=cfg.seed)


def build_dataset(cfg: RunConfig, noise: NoiseSpec | None = None, scaler: Scaler | None = None) -> WindowSplits:
    if noise is None and cfg.noise_rate > 0:
        noise = cfg.noise_spec()
    return prepare_dataset(load_frame(cfg), lookback=cfg.lookback, horizon=cfg.horizon, stride=cfg.stride,
                           eval_stride=cfg.eval_stride, ratios=cfg.split, noise=noise, scaler=scaler)


def input_dim(splits: WindowSplits) -> int:
    return splits.train.inputs.shape[-1]


def train_run(cfg: RunConfig, splits: WindowSplits | None = None, variant: str | None = None) -> RunOutcome:
    splits = splits if splits is not None else build_dataset(cfg)
    model_config = cfg.model_config_for(input_dim(splits), variant)
    model, report = train(splits, model_config, cfg.train_config())
    return RunOutcome(model=model, report=report, splits=splits)


def forecast_frame(model: DiffLoadModel, splits: WindowSplits, cfg: RunConfig, split: str = 'test',
                   workers: int | None = None) -> tuple[ForecastResult, pd.DataFrame]:
    """
    Forecasts one split and returns the de-standardized result with its CSV
    frame. Without a configured coverage the quantile distance is chosen on
    the validation windows first.
    """
    inference_cfg = cfg.inference_config(workers)
    coverage = cfg.coverage
    if coverage is None:
        coverage = select_quantile_distance(model, splits.val, inference_cfg)
    batch = getattr(splits, split)
    result = forecast(model, batch, inference_cfg, coverage=coverage)
    result = result.destandardize(splits.scaler.means['load'], splits.scaler.stds['load'])
    return result, result.to_frame()


def actuals_frame(splits: WindowSplits, split: str = 'test') -> pd.DataFrame:
    frame = splits.test_frame if split == 'test' else splits.val_frame
    return frame.to_frame()[['timestamp', 'load']]


def evaluate_run(outcome: RunOutcome, cfg: RunConfig, workers: int | None = None) -> dict[str, float]:
    _, frame = forecast_frame(outcome.model, outcome.splits, cfg, workers=workers)
    return score_forecast(frame, actuals_frame(outcome.splits), outcome.model.config.alpha)


def seasonal_naive_mape(splits: WindowSplits, season: int = 24) -> float:
    """Test MAPE of repeating the last observed season, in load units."""
    predicted = splits.scaler.destandardize_load(seasonal_naive(splits.test, season))
    actual = splits.scaler.destandardize_load(splits.test.targets.numpy().astype(float))
    return mape(actual.reshape(-1), predicted.reshape(-1))


def repeat_configs(cfg: RunConfig) -> list[RunConfig]:
    return [cfg.replace(seed=cfg.seed + k) for k in range(cfg.repeats)]


def _fan_out(jobs: dict, workers: int) -> dict:
    """Runs zero-argument callables keyed by name; results come back under the same keys."""
    results = {}
    if workers == 1:
        for key, job in jobs.items():
            results[key] = job()
        return results
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_key = {executor.submit(job): key for key, job in jobs.items()}
        for future in concurrent.futures.as_completed(future_to_key):
            key = future_to_key[future]
            try:
                results[key] = future.result()
            except Exception:
                logger.error(f"Run {key} failed.", exc_info=True)
                raise
    return results


# --- Studies ---

def run_ablation(cfg: RunConfig) -> pd.DataFrame:
    """
    Trains and scores every configured variant on shared data and seeds.
    Returns long-format `metric, dataset, variant, value` rows holding the
    median over repeats.
    """
    logger.info("=========================================================")
    logger.info(f">>> ABLATION: variants {list(cfg.variants)}, {cfg.repeats} repeat(s) <<<")
    logger.info("=========================================================")
    repeats = repeat_configs(cfg)
    datasets = {k: build_dataset(run_cfg) for k, run_cfg in enumerate(repeats)}

    def job(variant: str, k: int):
        return lambda: evaluate_run(train_run(repeats[k], datasets[k], variant), repeats[k], workers=1)

    jobs = {(variant, k): job(variant, k) for variant in cfg.variants for k in range(len(repeats))}
    scores = _fan_out(jobs, cfg.workers)

    rows = []
    name = dataset_name(cfg)
    for variant in cfg.variants:
        per_repeat = [scores[(variant, k)] for k in range(len(repeats))]
        for metric in per_repeat[0]:
            value = float(np.median([s[metric] for s in per_repeat]))
            rows.append({'metric': metric, 'dataset': name, 'variant': variant, 'value': value})
    logger.info(">>> ABLATION COMPLETE <<<")
    return pd.DataFrame(rows, columns=['metric', 'dataset', 'variant', 'value'])


def run_perturbation(cfg: RunConfig, variant: str | None = None) -> pd.DataFrame:
    """
    Clean-label baseline plus one row per (noise kind, rate) cell. Training
    labels are corrupted; validation and test labels stay clean. Degradations
    are relative to the baseline of the same repeat, then medians are taken.
    """
    variant = variant or cfg.variant
    logger.info("=========================================================")
    logger.info(f">>> PERTURBATION: variant {variant}, kinds {list(cfg.noise_kinds)}, "
                f"rates {list(cfg.noise_rates)} <<<")
    logger.info("=========================================================")
    repeats = repeat_configs(cfg.replace(noise_rate=0.0))
    cells = [('none', 0.0)] + [(kind, rate) for kind in cfg.noise_kinds for rate in cfg.noise_rates]

    def job(kind: str, rate: float, k: int):
        run_cfg = repeats[k]
        noise = None if rate == 0 else run_cfg.noise_spec(kind, rate)
        return lambda: evaluate_run(train_run(run_cfg, build_dataset(run_cfg, noise), variant), run_cfg, workers=1)

    jobs = {(kind, rate, k): job(kind, rate, k) for kind, rate in cells for k in range(len(repeats))}
    scores = _fan_out(jobs, cfg.workers)

    rows = []
    for kind, rate in cells:
        mape_loss, winkler_loss = [], []
        for k in range(len(repeats)):
            clean, noisy = scores[('none', 0.0, k)], scores[(kind, rate, k)]
            mape_loss.append(relative_degradation(noisy['mape'], clean['mape']))
            winkler_loss.append(relative_degradation(noisy['winkler75'], clean['winkler75']))
        rows.append({
            'variant': variant,
            'noise_kind': kind,
            'noise_rate': rate,
            'mape': float(np.median([scores[(kind, rate, k)]['mape'] for k in range(len(repeats))])),
            'winkler75': float(np.median([scores[(kind, rate, k)]['winkler75'] for k in range(len(repeats))])),
            'mape_degradation': float(np.median(mape_loss)),
            'winkler75_degradation': float(np.median(winkler_loss)),
        })
    logger.info(">>> PERTURBATION COMPLETE <<<")
    return pd.DataFrame(rows)


def run_epistemic_curve(cfg: RunConfig) -> tuple[pd.DataFrame, float]:
    """
    Mean test sigma_epistemic per training fraction (median over repeats) and
    the median per-repeat Spearman correlation between fraction and sigma.
    """
    logger.info("=========================================================")
    logger.info(f">>> EPISTEMIC CURVE: fractions {list(cfg.fractions)}, {cfg.repeats} repeat(s) <<<")
    logger.info("=========================================================")
    coverage = cfg.coverage if cfg.coverage is not None else 0.5
    curves = []
    for run_cfg in repeat_configs(cfg):
        splits = build_dataset(run_cfg)
        model_config = run_cfg.model_config_for(input_dim(splits))
        curves.append(epistemic_curve(splits, run_cfg.fractions, model_config, run_cfg.train_config(),
                                      run_cfg.inference_config(), coverage=coverage))

    sigmas = np.array([[sigma for _, sigma in curve] for curve in curves])
    if len(cfg.fractions) > 1:
        correlations = [spearmanr(cfg.fractions, row).statistic for row in sigmas]
        rho = float(np.median(correlations))
    else:
        rho = float('nan')
    frame = pd.DataFrame({'fraction': list(cfg.fractions), 'sigma_epistemic': np.median(sigmas, axis=0)})
    logger.info(f">>> EPISTEMIC CURVE COMPLETE: median Spearman rho = {rho:.3f} <<<")
    return frame, rho
