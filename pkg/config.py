import logging

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from data import DEFAULT_SPLIT, NOISE_KINDS, NoiseSpec, SynthProfile, synth_profile
from inference import QUANTILE_CANDIDATES, InferenceConfig
from model import VARIANTS, ModelConfig
from training import TrainConfig
from utils import ConfigError, derive_seed

# --- Logging Configuration ---
LOG_LEVEL = logging.INFO
LOG_FILE = 'diffload.log'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# --- Experiment Configuration ---
DEFAULT_OUTPUT_DIR = 'runs'
SEED_ENV_VAR = 'DIFFLOAD_SEED'
NOISE_RATES = (0.1, 0.2)
CURVE_FRACTIONS = (0.25, 0.5, 0.75, 1.0)

# Counters for seeds derived from the run seed.
NOISE_STREAM = 11

_LIST_FIELDS = ('split', 'quantile_candidates', 'variants', 'noise_kinds', 'noise_rates', 'fractions')
_OPTIONAL_FIELDS = ('data_path', 'coverage')


class RunConfig(BaseModel):
    """Every tunable of a run. Unknown keys are rejected."""
    model_config = ConfigDict(extra='forbid', frozen=True)

    # Data
    data_path: str | None = None
    profile: str = 'stationary'
    days: int = 120
    unit: str = 'kW'
    lookback: int = 168
    horizon: int = 24
    stride: int = 1
    eval_stride: int = 24
    split: tuple[float, float, float] = DEFAULT_SPLIT

    # Model
    variant: str = 'd/c'
    hidden_size: int = 64
    layers: int = 2
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    elbo_weight: float = 1.0
    embed_dim: int = 32
    reverse_width: int = 64
    nll_through_denoiser: bool = False

    # Training
    batch_size: int = 256
    learning_rate: float = 5e-3
    patience: int = 15
    max_epochs: int = 300

    # Inference
    samples: int = 100
    quantile_candidates: tuple[float, ...] = QUANTILE_CANDIDATES
    coverage: float | None = None
    epistemic_mode: str = 'quantile'
    workers: int = 1

    # Label noise and studies
    noise_kind: str = 'constant'
    noise_rate: float = 0.0
    gaussian_noise_scale: str = 'variance'
    variants: tuple[str, ...] = VARIANTS
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    noise_rates: tuple[float, ...] = NOISE_RATES
    fractions: tuple[float, ...] = CURVE_FRACTIONS
    repeats: int = 1

    # Run
    output_dir: str = DEFAULT_OUTPUT_DIR
    seed: int = 0
    log_level: str = 'INFO'

    @field_validator(*_LIST_FIELDS, mode='before')
    @classmethod
    def _split_commas(cls, value):
        if isinstance(value, str):
            return tuple(item.strip() for item in value.split(',') if item.strip())
        return value

    @field_validator(*_OPTIONAL_FIELDS, mode='before')
    @classmethod
    def _blank_is_none(cls, value):
        if isinstance(value, str) and value.strip().lower() in ('', 'none'):
            return None
        return value

    @field_validator('variant')
    @classmethod
    def _known_variant(cls, value):
        if value not in VARIANTS:
            raise ValueError(f"must be one of {', '.join(VARIANTS)}")
        return value

    @field_validator('variants')
    @classmethod
    def _known_variants(cls, value):
        unknown = [v for v in value if v not in VARIANTS]
        if unknown or not value:
            raise ValueError(f"entries must be drawn from {', '.join(VARIANTS)}, got {list(value)}")
        return value

    @field_validator('log_level')
    @classmethod
    def _known_level(cls, value):
        level = value.upper()
        if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"unknown log level '{value}'")
        return level

    @field_validator('days', 'repeats', 'workers', 'samples')
    @classmethod
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @model_validator(mode='after')
    def _non_overlapping_evaluation(self):
        # Overlapping evaluation windows would repeat forecast timestamps.
        if self.eval_stride < self.horizon:
            raise ValueError(f"eval_stride ({self.eval_stride}) must be >= horizon ({self.horizon})")
        return self

    # --- Builders ---

    @classmethod
    def from_sources(cls, file_values: dict | None = None, overrides: dict | None = None,
                     seed: int | None = None) -> 'RunConfig':
        """Defaults < config file < command-line overrides < explicit seed."""
        values = {**(file_values or {}), **(overrides or {})}
        if seed is not None:
            values['seed'] = seed
        try:
            return cls(**values)
        except ValidationError as e:
            problems = '; '.join(
                f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from None

    def replace(self, **changes) -> 'RunConfig':
        return RunConfig.from_sources(self.model_dump(), changes)

    def synth_profile(self) -> SynthProfile:
        return synth_profile(self.profile)

    def model_config_for(self, input_dim: int, variant: str | None = None) -> ModelConfig:
        return ModelConfig(
            variant=variant or self.variant,
            input_dim=input_dim,
            horizon=self.horizon,
            hidden_size=self.hidden_size,
            layers=self.layers,
            diffusion_steps=self.diffusion_steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            elbo_weight=self.elbo_weight,
            embed_dim=self.embed_dim,
            reverse_width=self.reverse_width,
            nll_through_denoiser=self.nll_through_denoiser,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                           patience=self.patience, max_epochs=self.max_epochs, seed=self.seed)

    def inference_config(self, workers: int | None = None) -> InferenceConfig:
        return InferenceConfig(
            samples=self.samples,
            candidates=tuple(self.quantile_candidates),
            coverage=self.coverage,
            epistemic_mode=self.epistemic_mode,
            workers=self.workers if workers is None else workers,
            seed=self.seed,
        )

    def noise_spec(self, kind: str | None = None, rate: float | None = None) -> NoiseSpec:
        return NoiseSpec(
            kind=kind or self.noise_kind,
            rate=self.noise_rate if rate is None else rate,
            seed=derive_seed(self.seed, NOISE_STREAM),
            gaussian_scale=self.gaussian_noise_scale,
        )

    def to_flat_text(self) -> str:
        """Effective config as a flat `key = value` file that `--config` reads back."""
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                text = ''
            elif isinstance(value, (tuple, list)):
                text = ','.join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return '\n'.join(lines) + '\n'
