# harness.py
"""
Reference oracles and the registered property checks built on them.

The oracles below are written against elementary math only (scalar loops,
math.erf, scipy reference laws) and share no code with the implementations
they check. Each check returns an OracleReport; `run_all_oracles` runs every
registered check, optionally against substitute implementations so that a
deliberately broken function can be shown to fail its check.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd
import torch
from scipy import stats
from torch import nn

import diffusion
import distributions
import metrics
import neural_primitives
import pipeline
from config import RunConfig
from utils import DomainError, derive_seed

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['check', 'max_error', 'tolerance', 'passed', 'samples', 'seed']
KS_DRAWS = 200_000


@dataclass(frozen=True)
class OracleReport:
    name: str
    max_error: float
    tolerance: float
    samples: int
    seed: int

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def to_row(self) -> dict:
        return {'check': self.name, 'max_error': self.max_error, 'tolerance': self.tolerance,
                'passed': self.passed, 'samples': self.samples, 'seed': self.seed}


@dataclass(frozen=True)
class OracleImpls:
    """Implementations under test; swap a field to inject a fault."""
    cauchy_nll: Callable = distributions.cauchy_nll
    gaussian_nll: Callable = distributions.gaussian_nll
    stable_quantile: Callable = distributions.stable_quantile
    central_interval: Callable = distributions.central_interval
    combine_scales: Callable = distributions.combine_scales
    robustness_ratio: Callable = distributions.robustness_ratio
    crps_quantile: Callable = metrics.crps_quantile
    gru_cell: Callable = neural_primitives.gru_cell
    denoise: Callable = diffusion.denoise


# --- Oracles ---

def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def oracle_gru_scalar(x: list[float], h: list[float], params: dict) -> list[float]:
    """
    Scalar-loop GRU cell. `params` holds nested lists `weight_ih` (3H x I),
    `weight_hh` (3H x H) and optional `bias_ih`, `bias_hh` (3H), gate rows
    ordered reset, update, candidate.
    """
    hidden = len(h)
    w_ih, w_hh = params['weight_ih'], params['weight_hh']
    b_ih = params.get('bias_ih') or [0.0] * (3 * hidden)
    b_hh = params.get('bias_hh') or [0.0] * (3 * hidden)

    def dot(weights, vector, row):
        total = 0.0
        for j, value in enumerate(vector):
            total += weights[row][j] * value
        return total

    updated = []
    for i in range(hidden):
        r_i, z_i, n_i = i, hidden + i, 2 * hidden + i
        r = _sigmoid(dot(w_ih, x, r_i) + b_ih[r_i] + dot(w_hh, h, r_i) + b_hh[r_i])
        z = _sigmoid(dot(w_ih, x, z_i) + b_ih[z_i] + dot(w_hh, h, z_i) + b_hh[z_i])
        candidate = math.tanh(dot(w_ih, x, n_i) + b_ih[n_i] + r * (dot(w_hh, h, n_i) + b_hh[n_i]))
        updated.append((1.0 - z) * candidate + z * h[i])
    return updated


def oracle_gaussian_crps(y: float, loc: float, scale: float) -> float:
    """Closed-form CRPS of N(loc, scale^2) at y."""
    if not scale > 0:
        raise DomainError(f"scale must be strictly positive, got {scale}")
    z = (y - loc) / scale
    cdf = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return scale * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))


def oracle_stable_sum(params1: distributions.StableParams, params2: distributions.StableParams,
                      draws: int = KS_DRAWS, seed: int = 0,
                      combine: Callable = distributions.combine_scales) -> float:
    """
    Kolmogorov-Smirnov distance between the empirical law of X1 + X2 and the
    law predicted by adding locations and combining scales.
    """
    if params1.alpha != params2.alpha:
        raise DomainError("Both summands must share the stability index.")
    if draws < 100_000:
        raise DomainError(f"The stable-sum oracle needs at least 1e5 draws, got {draws}.")
    rng = np.random.default_rng(seed)
    if params1.alpha == distributions.ALPHA_CAUCHY:
        first = params1.loc + params1.scale * rng.standard_cauchy(draws)
        second = params2.loc + params2.scale * rng.standard_cauchy(draws)
        law = stats.cauchy
    else:
        first = rng.normal(params1.loc, params1.scale, draws)
        second = rng.normal(params2.loc, params2.scale, draws)
        law = stats.norm
    predicted = law(loc=params1.loc + params2.loc, scale=combine(params1.alpha, params1.scale, params2.scale))
    return float(stats.kstest(first + second, predicted.cdf).statistic)


# --- Check Registry ---

Check = Callable[[int, OracleImpls, RunConfig], OracleReport]


@dataclass(frozen=True)
class RegisteredCheck:
    name: str
    run: Check
    slow: bool = False


CHECKS: dict[str, RegisteredCheck] = {}


def register(name: str, slow: bool = False):
    def decorator(fn: Check) -> Check:
        if name in CHECKS:
            raise ValueError(f"Duplicate oracle check '{name}'")
        CHECKS[name] = RegisteredCheck(name, fn, slow)
        return fn
    return decorator


def registered_checks(include_slow: bool = False) -> list[str]:
    return [name for name, check in CHECKS.items() if include_slow or not check.slow]


def worst_error(*values) -> float:
    """Largest of `values`; a NaN or infinite entry counts as an unbounded error."""
    values = [float(v) for v in values]
    if not all(math.isfinite(v) for v in values):
        return math.inf
    return max(values)


def _float64_cell(input_size: int, hidden_size: int, generator: torch.Generator) -> nn.GRUCell:
    cell = nn.GRUCell(input_size, hidden_size).double()
    with torch.no_grad():
        for param in cell.parameters():
            param.uniform_(-1.0, 1.0, generator=generator)
    return cell


@register('nll_reference_values')
def check_nll_values(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cases = [
        (impls.cauchy_nll, (0.0, 0.0, 1.0), 0.0),
        (impls.cauchy_nll, (1.0, 0.0, 1.0), math.log(2.0)),
        (impls.cauchy_nll, (3.0, 1.0, 2.0), math.log(4.0)),
        (impls.gaussian_nll, (0.0, 0.0, 1.0), 0.0),
        (impls.gaussian_nll, (1.0, 0.0, 1.0), 0.5),
        (impls.gaussian_nll, (3.0, 1.0, 2.0), math.log(2.0) + 0.5),
    ]
    error = worst_error(*(abs(float(fn(*args)) - expected) for fn, args, expected in cases))
    return OracleReport('nll_reference_values', error, 1e-12, len(cases), seed)


@register('quantile_reference_values')
def check_quantiles(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cauchy = distributions.ALPHA_CAUCHY
    gaussian = distributions.ALPHA_GAUSSIAN
    cases = [
        (0.5, distributions.StableParams(cauchy, 3.0, 2.0), 3.0),
        (0.75, distributions.StableParams(cauchy, 0.0, 1.0), 1.0),
        (0.9, distributions.StableParams(cauchy, 0.0, 2.0), 2.0 * math.tan(0.4 * math.pi)),
        (0.975, distributions.StableParams(gaussian, 0.0, 1.0), 1.959963984540054),
        (0.5, distributions.StableParams(gaussian, -1.0, 4.0), -1.0),
    ]
    error = worst_error(*(abs(float(impls.stable_quantile(p, params)) - expected)
                          for p, params, expected in cases))
    return OracleReport('quantile_reference_values', error, 1e-8, len(cases), seed)


@register('scale_combination')
def check_combine_scales(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    error = worst_error(abs(impls.combine_scales(1, 1.0, 2.0) - 3.0),
                        abs(impls.combine_scales(2, 3.0, 4.0) - 5.0),
                        abs(impls.combine_scales(1, 2.5, 0.0) - 2.5),
                        abs(impls.combine_scales(2, 2.5, 0.0) - 2.5))
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.01, 10.0, size=(3, 200))
    for alpha in (1, 2):
        ab_c = impls.combine_scales(alpha, impls.combine_scales(alpha, a, b), c)
        a_bc = impls.combine_scales(alpha, a, impls.combine_scales(alpha, b, c))
        ba = impls.combine_scales(alpha, b, a)
        ab = impls.combine_scales(alpha, a, b)
        error = worst_error(error,
                            float(np.max(np.abs(ab_c - a_bc) / np.abs(a_bc))),
                            float(np.max(np.abs(ab - ba) / np.abs(ab))))
    return OracleReport('scale_combination', float(error), 1e-12, 404, seed)


@register('stable_sum_cauchy')
def check_stable_sum_cauchy(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    ks = oracle_stable_sum(distributions.StableParams(1, 0.0, 1.0), distributions.StableParams(1, 0.0, 2.0),
                           KS_DRAWS, seed, impls.combine_scales)
    return OracleReport('stable_sum_cauchy', ks, 0.01, KS_DRAWS, seed)


@register('stable_sum_gaussian')
def check_stable_sum_gaussian(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    ks = oracle_stable_sum(distributions.StableParams(2, 0.0, 3.0), distributions.StableParams(2, 0.0, 4.0),
                           KS_DRAWS, seed, impls.combine_scales)
    return OracleReport('stable_sum_gaussian', ks, 0.01, KS_DRAWS, seed)


@register('robustness_bound')
def check_robustness_bound(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    scales = np.logspace(-2, 2, 100)
    factors = np.logspace(0, 3, 100)
    scale_grid, factor_grid = np.meshgrid(scales, factors)
    ratio = np.asarray(impls.robustness_ratio(scale_grid * factor_grid, scale_grid))
    violation = worst_error(0.0, float(np.max(ratio)) - 1.0)
    boundary = float(np.max(np.abs(np.asarray(impls.robustness_ratio(scales, scales)) - 1.0)))
    return OracleReport('robustness_bound', worst_error(violation, boundary), 1e-12, ratio.size, seed)


@register('gru_scalar_reference')
def check_gru_scalar(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    generator = torch.Generator().manual_seed(seed)
    error = 0.0
    cases = 100
    for _ in range(cases):
        cell = _float64_cell(3, 4, generator)
        x = torch.randn(3, generator=generator, dtype=torch.float64)
        h = torch.randn(4, generator=generator, dtype=torch.float64)
        with torch.no_grad():
            actual = impls.gru_cell(x, h, cell).tolist()
        params = {name: p.detach().tolist() for name, p in cell.named_parameters()}
        expected = oracle_gru_scalar(x.tolist(), h.tolist(), params)
        error = worst_error(error, *(abs(a - e) for a, e in zip(actual, expected)))
    return OracleReport('gru_scalar_reference', error, 1e-10, cases, seed)


@register('gradient_check')
def check_gradients(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    generator = torch.Generator().manual_seed(seed)
    points = 10
    error = 0.0
    for k in range(points):
        affine = nn.Linear(3, 2).double()
        cell = _float64_cell(3, 4, generator)
        net = neural_primitives.NoisePredictionNet(4, steps=10, embed_dim=8, width=6).double()
        neural_primitives.init_parameters(net, generator)
        x = torch.randn(2, 3, generator=generator, dtype=torch.float64)
        h = torch.randn(2, 4, generator=generator, dtype=torch.float64)
        y = torch.randn(5, generator=generator, dtype=torch.float64)
        loc = torch.randn(5, generator=generator, dtype=torch.float64)
        scale = torch.rand(5, generator=generator, dtype=torch.float64) + 0.5
        step = torch.full((2,), k % 10 + 1, dtype=torch.long)
        error = worst_error(
            error,
            neural_primitives.grad_check(affine, [x], list(affine.parameters()), seed=k),
            neural_primitives.grad_check(lambda a, b: neural_primitives.gru_cell(a, b, cell), [x, h],
                                         list(cell.parameters()), seed=k),
            neural_primitives.grad_check(neural_primitives.softplus, [x], seed=k),
            neural_primitives.grad_check(lambda s: net(s, step), [h], list(net.parameters()), seed=k),
            neural_primitives.grad_check(distributions.cauchy_nll, [y, loc, scale], seed=k),
            neural_primitives.grad_check(distributions.gaussian_nll, [y, loc, scale], seed=k),
        )
    return OracleReport('gradient_check', error, 1e-4, points * 6, seed)


@register('denoise_round_trip')
def check_denoise_round_trip(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    sched = diffusion.make_schedule(100)
    h0 = torch.randn(16, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)

    def exact_noise(state, n):
        alpha_bar = sched.alpha_bar[n].unsqueeze(-1)
        return (state - alpha_bar.sqrt() * h0) / (1.0 - alpha_bar).sqrt()

    start = sched.alpha_bar[sched.steps].sqrt() * h0
    recovered = impls.denoise(start, exact_noise, sched, stochastic=False)
    error = float(torch.linalg.vector_norm(recovered - h0) / torch.linalg.vector_norm(h0))
    return OracleReport('denoise_round_trip', error, 1e-5, sched.steps, seed)


@register('crps_gaussian_fidelity')
def check_crps_fidelity(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    error = 0.0
    standard = distributions.StableParams(distributions.ALPHA_GAUSSIAN, 0.0, 1.0)
    for z in (0.0, 0.5, 1.0):
        expected = oracle_gaussian_crps(z, 0.0, 1.0)
        error = worst_error(error, abs(float(impls.crps_quantile(z, standard)) - expected) / expected)
    return OracleReport('crps_gaussian_fidelity', error, 0.01, 3, seed)


@register('cauchy_calibration')
def check_cauchy_calibration(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    draws = 10_000
    loc, scale = 1.0, 2.0
    outcomes = loc + scale * np.random.default_rng(seed).standard_cauchy(draws)
    truth = distributions.StableParams(distributions.ALPHA_CAUCHY, loc, scale)
    lower, upper = impls.central_interval(truth, 0.75)
    observed = metrics.coverage(outcomes, metrics.IntervalForecast(lower, upper, 0.75))
    return OracleReport('cauchy_calibration', abs(observed - 0.75), 0.03, draws, seed)


@register('cauchy_crps_propriety')
def check_cauchy_propriety(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    draws = 10_000
    loc, scale = 1.0, 2.0
    outcomes = loc + scale * np.random.default_rng(seed).standard_cauchy(draws)
    alpha = distributions.ALPHA_CAUCHY
    true_crps = np.mean(impls.crps_quantile(outcomes, distributions.StableParams(alpha, loc, scale)))
    shifted = np.mean(impls.crps_quantile(outcomes, distributions.StableParams(alpha, loc + 0.5 * scale, scale)))
    doubled = np.mean(impls.crps_quantile(outcomes, distributions.StableParams(alpha, loc, 2 * scale)))
    violation = worst_error(0.0, true_crps - shifted, true_crps - doubled)
    return OracleReport('cauchy_crps_propriety', violation, 0.0, draws, seed)


# --- End-to-End Checks (slow) ---

@register('forecast_beats_seasonal_naive', slow=True)
def check_beats_naive(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cfg = cfg.replace(variant='d/c', repeats=3, seed=seed)
    model_mape, naive_mape = [], []
    for run_cfg in pipeline.repeat_configs(cfg):
        outcome = pipeline.train_run(run_cfg)
        model_mape.append(pipeline.evaluate_run(outcome, run_cfg)['mape'])
        naive_mape.append(pipeline.seasonal_naive_mape(outcome.splits))
    gap = float(np.median(model_mape) - np.median(naive_mape))
    logger.info(f"Median test MAPE: d/c {np.median(model_mape):.3f}, seasonal naive {np.median(naive_mape):.3f}")
    return OracleReport('forecast_beats_seasonal_naive', worst_error(0.0, gap), 0.0, cfg.repeats, seed)


@register('label_noise_robustness', slow=True)
def check_noise_robustness(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cfg = cfg.replace(noise_kinds='constant', noise_rates='0.2', repeats=3, seed=seed)
    degradation = {}
    for variant in ('d/o', 'd/c'):
        table = pipeline.run_perturbation(cfg, variant)
        degradation[variant] = float(table.loc[table['noise_kind'] == 'constant', 'mape_degradation'].iloc[0])
    logger.info(f"Constant-noise MAPE degradation: d/c {degradation['d/c']:.4f}, d/o {degradation['d/o']:.4f}")
    return OracleReport('label_noise_robustness', worst_error(0.0, degradation['d/c'] - degradation['d/o']), 0.0,
                        cfg.repeats, seed)


@register('ablation_ordering', slow=True)
def check_ablation(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cfg = cfg.replace(variants='o/o,d/o,d/c', repeats=3, seed=seed)
    table = pipeline.run_ablation(cfg)
    mape = table[table['metric'] == 'mape'].set_index('variant')['value']
    if not mape['d/c'] <= mape['d/o'] <= mape['o/o']:
        logger.warning(f"Soft ablation ordering d/c <= d/o <= o/o not met: {mape.to_dict()}")
    return OracleReport('ablation_ordering', worst_error(0.0, mape['d/c'] - mape['o/o']), 0.0, cfg.repeats, seed)


@register('epistemic_trend', slow=True)
def check_epistemic_trend(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cfg = cfg.replace(profile='stationary', fractions='0.25,0.5,0.75,1.0', repeats=5, seed=seed)
    _, rho = pipeline.run_epistemic_curve(cfg)
    return OracleReport('epistemic_trend', worst_error(0.0, rho + 0.8), 0.0, cfg.repeats, seed)


@register('parallel_determinism', slow=True)
def check_determinism(seed: int, impls: OracleImpls, cfg: RunConfig) -> OracleReport:
    cfg = cfg.replace(seed=seed, max_epochs=min(cfg.max_epochs, 3), samples=min(cfg.samples, 16))
    outcome = pipeline.train_run(cfg)
    texts = []
    for workers in (1, 1, 4):
        _, frame = pipeline.forecast_frame(outcome.model, outcome.splits, cfg, workers=workers)
        texts.append(frame.to_csv(index=False, float_format='%.10g'))
    mismatches = sum(text != texts[0] for text in texts[1:])
    return OracleReport('parallel_determinism', float(mismatches), 0.0, len(texts), seed)


def run_all_oracles(seed: int = 0, impls: OracleImpls | None = None, include_slow: bool = False,
                    run_config: RunConfig | None = None) -> list[OracleReport]:
    """Runs every registered check with its own derived seed; a raising check is reported as failed."""
    impls = impls or OracleImpls()
    run_config = run_config or RunConfig()
    reports = []
    for index, name in enumerate(CHECKS):
        check = CHECKS[name]
        if check.slow and not include_slow:
            continue
        check_seed = derive_seed(seed, index) % (2 ** 31)
        logger.info(f"--- Oracle check: {name} (seed {check_seed}) ---")
        try:
            report = check.run(check_seed, impls, run_config)
        except Exception:
            logger.error(f"Oracle check '{name}' raised.", exc_info=True)
            report = OracleReport(name, math.inf, 0.0, 0, check_seed)
        level = logging.INFO if report.passed else logging.WARNING
        logger.log(level, f"{name}: max_error={report.max_error:.3e} tolerance={report.tolerance:.1e} "
                          f"{'PASS' if report.passed else 'FAIL'}")
        reports.append(report)
    return reports


def reports_frame(reports: list[OracleReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)
