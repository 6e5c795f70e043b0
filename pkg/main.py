# main.py
import functools
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np
import pandas as pd
from dotenv import load_dotenv

import config
import harness
import pipeline
from config import RunConfig
from data import Scaler, load_csv
from metrics import score_forecast
from model import VARIANTS, ModelConfig, load_checkpoint, save_checkpoint
from plotting import render_forecast_svg
from utils import (ConfigError, DataError, DiffLoadError, TrainingAborted, atomic_write_text,
                   parse_override_args, read_flat_config)

logger = logging.getLogger(__name__)

EXIT_CODES = ((TrainingAborted, 4), (DataError, 3), (ConfigError, 2))
CSV_FLOAT_FORMAT = '%.10g'
CHECKPOINT_NAME = 'model.ckpt'
OVERRIDE_SETTINGS = {'ignore_unknown_options': True, 'allow_extra_args': True}

# --- Helper Functions ---

def setup_logging(log_file=None, level=config.LOG_LEVEL):
    """Configures the root logger: stderr always, plus `log_file` when given."""
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    if root_logger.hasHandlers():
        for handler in root_logger.handlers:
            handler.close()
        root_logger.handlers.clear()

    formatter = logging.Formatter(config.LOG_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(level)
    stream_handler.setFormatter(formatter)
    root_logger.addHandler(stream_handler)

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode='a', encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)


def write_csv(path: Path, frame: pd.DataFrame):
    atomic_write_text(path, frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n'))
    logger.info(f"Wrote {len(frame)} rows to {path}")


def read_forecast_csv(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={'timestamp': str}, encoding='utf-8')
    except FileNotFoundError:
        raise DataError(f"Forecast file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not parse forecast {path}: {e}") from e
    missing = [c for c in ('timestamp', 'loc', 'sigma_bar', 'lo75', 'hi75') if c not in frame.columns]
    if missing:
        raise DataError(f"Forecast {path} is missing column(s): {', '.join(missing)}.")
    if frame.empty:
        raise DataError(f"Forecast {path} contains no rows.")
    return frame


def forecast_meta_path(forecast_path) -> Path:
    return Path(forecast_path).with_suffix('.meta')


def forecast_variant(forecast_path, fallback: str) -> str:
    """Model variant `predict` recorded beside the forecast, else `fallback`."""
    meta_path = forecast_meta_path(forecast_path)
    if not meta_path.is_file():
        logger.warning(f"No {meta_path.name} beside {forecast_path}; "
                       f"scoring with the configured variant {fallback}.")
        return fallback
    try:
        variant = read_flat_config(meta_path).get('variant')
    except ConfigError as e:
        raise DataError(f"Unreadable forecast metadata: {e}") from e
    if variant not in VARIANTS:
        raise DataError(f"{meta_path} records unknown variant '{variant}'.")
    if variant != fallback:
        logger.info(f"Scoring {forecast_path} as {variant} (recorded by predict), not the configured {fallback}.")
    return variant


def resolve_config(ctx: click.Context) -> RunConfig:
    """Defaults < --config file < trailing --key value overrides < --seed / DIFFLOAD_SEED."""
    options = ctx.obj
    file_values = read_flat_config(options['config_path']) if options['config_path'] else {}
    cfg = RunConfig.from_sources(file_values, parse_override_args(ctx.args), options['seed'])
    output_dir = Path(cfg.output_dir)
    setup_logging(output_dir / config.LOG_FILE, cfg.log_level)
    atomic_write_text(output_dir / 'config.txt', cfg.to_flat_text())
    logger.info(f"Effective configuration written to {output_dir / 'config.txt'} (seed {cfg.seed})")
    return cfg


def command(fn):
    """Maps package errors to exit codes and logs total run time, one summary line on stdout."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        logger.info(f"=== STARTING {fn.__name__.upper()} ===")
        try:
            summary = fn(*args, **kwargs)
        except DiffLoadError as e:
            code = next((c for kind, c in EXIT_CODES if isinstance(e, kind)), 1)
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"error: {e}", err=True)
            sys.exit(code)
        except Exception:
            logger.critical("A critical unhandled exception occurred. Shutting down.", exc_info=True)
            sys.exit(1)
        logger.info(f"Total process took {((time.time() - start_time) / 60):.2f} minutes.")
        logger.info("=== RUN FINISHED ===")
        click.echo(summary)
    return wrapper


# --- Command Line ---

@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help="Flat `key = value` configuration file.")
@click.option('--seed', type=int, default=None, envvar=config.SEED_ENV_VAR,
              help=f"Root seed for every random stream (falls back to ${config.SEED_ENV_VAR}).")
@click.pass_context
def cli(ctx, config_path, seed):
    """Diffusion-based probabilistic load forecasting."""
    setup_logging()
    ctx.obj = {'config_path': config_path, 'seed': seed}


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.pass_context
@command
def train(ctx):
    """Train a model and write its checkpoint and metrics log."""
    cfg = resolve_config(ctx)
    output_dir = Path(cfg.output_dir)
    outcome = pipeline.train_run(cfg)
    report = outcome.report
    meta = {
        'scaler': outcome.splits.scaler.to_dict(),
        'best_epoch': report.best_epoch,
        'stop_reason': report.stop_reason,
        'best_val_rmse': report.best_val_rmse,
        'seed': cfg.seed,
    }
    save_checkpoint(output_dir / CHECKPOINT_NAME, outcome.model, meta)
    atomic_write_text(output_dir / 'metrics.log', report.metrics_log())
    return (f"trained {cfg.variant}: {len(report.val_rmse)} epochs, best epoch {report.best_epoch}, "
            f"val_rmse {report.best_val_rmse:.6f}, stop {report.stop_reason} -> {output_dir / CHECKPOINT_NAME}")


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.option('--checkpoint', type=click.Path(dir_okay=False), required=True)
@click.option('--split', type=click.Choice(['test', 'val']), default='test', show_default=True)
@click.pass_context
@command
def predict(ctx, checkpoint, split):
    """Forecast a split with a trained checkpoint; writes forecast.csv and actuals.csv."""
    cfg = resolve_config(ctx)
    output_dir = Path(cfg.output_dir)
    model, meta = load_checkpoint(checkpoint)
    horizon = model.config.horizon
    cfg = cfg.replace(variant=model.config.variant, horizon=horizon, eval_stride=max(cfg.eval_stride, horizon))
    atomic_write_text(output_dir / 'config.txt', cfg.to_flat_text())
    splits = pipeline.build_dataset(cfg, scaler=Scaler.from_dict(meta['scaler']))
    if pipeline.input_dim(splits) != model.config.input_dim:
        raise DataError(f"Data provides {pipeline.input_dim(splits)} features; checkpoint expects "
                        f"{model.config.input_dim}.")
    result, frame = pipeline.forecast_frame(model, splits, cfg, split=split)
    write_csv(output_dir / 'forecast.csv', frame)
    atomic_write_text(forecast_meta_path(output_dir / 'forecast.csv'),
                      f"variant = {model.config.variant}\nalpha = {model.config.alpha}\ncheckpoint = {checkpoint}\n")
    write_csv(output_dir / 'actuals.csv', pipeline.actuals_frame(splits, split))
    return (f"predicted {len(frame)} rows with {model.config.variant} (M={cfg.samples}, "
            f"quantile distance {result.coverage:.0%}) -> {output_dir / 'forecast.csv'}")


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.option('--forecast', 'forecast_path', type=click.Path(dir_okay=False), required=True)
@click.option('--actuals', 'actuals_path', type=click.Path(dir_okay=False), required=True)
@click.pass_context
@command
def evaluate(ctx, forecast_path, actuals_path):
    """Score a forecast CSV against actual loads; writes evaluation.csv."""
    cfg = resolve_config(ctx)
    forecast = read_forecast_csv(forecast_path)
    actuals = load_csv(actuals_path, unit=cfg.unit).to_frame()
    variant = forecast_variant(forecast_path, cfg.variant)
    scores = score_forecast(forecast, actuals, ModelConfig(variant=variant).alpha)
    rows = pd.DataFrame([{'metric': k, 'dataset': Path(actuals_path).stem, 'variant': variant, 'value': v}
                         for k, v in scores.items()])
    write_csv(Path(cfg.output_dir) / 'evaluation.csv', rows)
    return (f"evaluated {len(forecast)} rows: MAPE {scores['mape']:.4f}%, MAE {scores['mae']:.4f}, "
            f"CRPS {scores['crps']:.4f}, Winkler75 {scores['winkler75']:.4f}, coverage75 {scores['coverage75']:.3f}")


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.pass_context
@command
def ablate(ctx):
    """Train and score every variant under shared seeds; writes ablation.csv."""
    cfg = resolve_config(ctx)
    table = pipeline.run_ablation(cfg)
    write_csv(Path(cfg.output_dir) / 'ablation.csv', table)
    mape = table[table['metric'] == 'mape'].set_index('variant')['value']
    return "ablation MAPE: " + ", ".join(f"{v} {mape[v]:.4f}%" for v in cfg.variants)


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.pass_context
@command
def perturb(ctx):
    """Train on corrupted labels and report degradation against a clean baseline; writes perturbation.csv."""
    cfg = resolve_config(ctx)
    table = pipeline.run_perturbation(cfg)
    write_csv(Path(cfg.output_dir) / 'perturbation.csv', table)
    worst = table.loc[table['mape_degradation'].idxmax()]
    return (f"perturbation {cfg.variant}: {len(table)} rows, worst MAPE degradation "
            f"{worst['mape_degradation']:+.2%} ({worst['noise_kind']} @ {worst['noise_rate']})")


@cli.command('epistemic-curve', context_settings=OVERRIDE_SETTINGS)
@click.pass_context
@command
def epistemic_curve(ctx):
    """Mean epistemic scale against training-set fraction; writes epistemic_curve.csv."""
    cfg = resolve_config(ctx)
    table, rho = pipeline.run_epistemic_curve(cfg)
    write_csv(Path(cfg.output_dir) / 'epistemic_curve.csv', table)
    points = ", ".join(f"{f:g}:{s:.4f}" for f, s in zip(table['fraction'], table['sigma_epistemic']))
    rho_text = 'n/a' if np.isnan(rho) else f"{rho:.3f}"
    return f"epistemic curve {points} (Spearman {rho_text})"


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.option('--forecast', 'forecast_path', type=click.Path(dir_okay=False), required=True)
@click.option('--actuals', 'actuals_path', type=click.Path(dir_okay=False), required=True)
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), default=None,
              help="SVG path; defaults to forecast.svg in the output directory.")
@click.pass_context
@command
def plot(ctx, forecast_path, actuals_path, output_path):
    """Render actual and forecast load with the 75% band as SVG."""
    cfg = resolve_config(ctx)
    output_path = Path(output_path) if output_path else Path(cfg.output_dir) / 'forecast.svg'
    forecast = read_forecast_csv(forecast_path)
    actuals = load_csv(actuals_path, unit=cfg.unit).to_frame()
    payload = render_forecast_svg(forecast, actuals, output_path)
    return f"plotted {len(forecast)} rows -> {output_path} ({len(payload)} bytes)"


@cli.command(context_settings=OVERRIDE_SETTINGS)
@click.option('--slow', is_flag=True, help="Also run the end-to-end training checks.")
@click.pass_context
@command
def oracles(ctx, slow):
    """Run the oracle checks; writes oracle_report.csv."""
    cfg = resolve_config(ctx)
    reports = harness.run_all_oracles(cfg.seed, include_slow=slow, run_config=cfg)
    write_csv(Path(cfg.output_dir) / 'oracle_report.csv', harness.reports_frame(reports))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise DiffLoadError(f"{len(failed)} of {len(reports)} oracle checks failed: {', '.join(failed)}")
    return f"oracles: {len(reports)} of {len(reports)} checks passed"


def main():
    load_dotenv()
    cli()


# --- Main Script Execution ---

if __name__ == "__main__":
    main()
