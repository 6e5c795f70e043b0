# model.py
"""
Sequence-to-sequence load forecaster: GRU encoder, hidden-state diffusion,
GRU decoder and a location/scale emission head.

Variants:
    o/o  encoder state decoded directly, Gaussian head
    d/o  diffused and denoised encoder state, Gaussian head
    d/c  diffused and denoised encoder state, Cauchy head
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from diffusion import NoiseSchedule, denoise, elbo_loss, make_schedule, q_sample
from distributions import NLL_BY_FAMILY, family_alpha
from neural_primitives import NoisePredictionNet, RecurrentStack, gru_forward, init_parameters, softplus
from utils import ConfigError, DataError, ShapeError, atomic_write_bytes

logger = logging.getLogger(__name__)

VARIANTS = ('o/o', 'd/o', 'd/c')
CHECKPOINT_MAGIC = 'diffload-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = 'd/c'
    input_dim: int = 7
    horizon: int = 24
    hidden_size: int = 64
    layers: int = 2
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    elbo_weight: float = 1.0
    embed_dim: int = 32
    reverse_width: int = 64
    nll_through_denoiser: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown model variant '{self.variant}'; choose one of {', '.join(VARIANTS)}.")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be at least 1 (the load column), got {self.input_dim}.")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}.")
        if self.hidden_size < 1 or self.layers < 1:
            raise ConfigError(f"hidden_size and layers must be positive, got {self.hidden_size} x {self.layers}.")
        if self.elbo_weight < 0:
            raise ConfigError(f"elbo_weight must be non-negative, got {self.elbo_weight}.")
        if self.uses_diffusion:
            # Validates the schedule bounds eagerly.
            make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)

    @property
    def uses_diffusion(self) -> bool:
        return self.variant.startswith('d/')

    @property
    def family(self) -> str:
        return 'cauchy' if self.variant == 'd/c' else 'gaussian'

    @property
    def alpha(self) -> int:
        return family_alpha(self.family)

    @property
    def state_dim(self) -> int:
        return self.hidden_size * self.layers

    def digest(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class EmissionParams:
    loc: torch.Tensor
    scale: torch.Tensor
    family: str = field(default='cauchy')


class DiffLoadModel(nn.Module):

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.encoder = RecurrentStack(config.input_dim, config.hidden_size, config.layers)
        self.decoder = RecurrentStack(config.input_dim, config.hidden_size, config.layers)
        self.head_loc = nn.Linear(config.hidden_size, 1)
        self.head_scale = nn.Linear(config.hidden_size, 1)
        if config.uses_diffusion:
            self.schedule: NoiseSchedule | None = make_schedule(
                config.diffusion_steps, config.beta_start, config.beta_end
            )
            self.reverse_net: NoisePredictionNet | None = NoisePredictionNet(
                config.state_dim, config.diffusion_steps, config.embed_dim, config.reverse_width
            )
        else:
            self.schedule = None
            self.reverse_net = None
        init_parameters(self, torch.Generator().manual_seed(seed))

    # --- Building blocks ---

    def encode(self, inputs: torch.Tensor) -> torch.Tensor:
        """Final hidden of every encoder layer, flattened to (batch, layers * hidden)."""
        final_hidden, _ = gru_forward(inputs, None, self.encoder)
        return final_hidden.transpose(0, 1).reshape(inputs.shape[0], -1)

    def decode(self, h_star: torch.Tensor, decoder_covariates: torch.Tensor, last_load: torch.Tensor,
               forced_targets: torch.Tensor | None = None) -> EmissionParams:
        """
        Unrolls the decoder over the horizon from h_star. Each step consumes the
        known covariates of that step and the previous load: the true value when
        `forced_targets` is given, otherwise the previous forecast location.
        """
        batch, horizon, _ = decoder_covariates.shape
        if decoder_covariates.shape[-1] + 1 != self.config.input_dim:
            raise ShapeError(
                f"Decoder covariates must have {self.config.input_dim - 1} columns, got {decoder_covariates.shape[-1]}."
            )
        if h_star.shape != (batch, self.config.state_dim):
            raise ShapeError(f"Decoder state must have shape {(batch, self.config.state_dim)}, got {tuple(h_star.shape)}.")

        hidden = h_star.reshape(batch, self.config.layers, self.config.hidden_size).transpose(0, 1).contiguous()
        previous = last_load
        locs, scales = [], []
        for t in range(horizon):
            step_input = torch.cat([previous.unsqueeze(-1), decoder_covariates[:, t]], dim=-1).unsqueeze(1)
            hidden, outputs = gru_forward(step_input, hidden, self.decoder)
            top = outputs[:, 0]
            loc = self.head_loc(top).squeeze(-1)
            scale = softplus(self.head_scale(top)).squeeze(-1)
            locs.append(loc)
            scales.append(scale)
            previous = forced_targets[:, t] if forced_targets is not None else loc
        return EmissionParams(torch.stack(locs, dim=1), torch.stack(scales, dim=1), self.config.family)

    def noise_predictor(self, detached: bool):
        """eps_theta as a callable; `detached` blocks gradients into its parameters only."""
        if not detached:
            return self.reverse_net
        # functional_call swaps the module's parameters while it runs; training only, never threaded inference.
        frozen = {name: p.detach() for name, p in self.reverse_net.named_parameters()}
        net = self.reverse_net
        return lambda state, n: torch.func.functional_call(net, frozen, (state, n))

    def reconstruct(self, h0: torch.Tensor, generator: torch.Generator, detached: bool = True) -> torch.Tensor:
        """Corrupts h0 to level N with fresh noise, then runs the reverse chain back to h*."""
        eps = torch.randn(h0.shape, generator=generator, dtype=h0.dtype)
        h_n = q_sample(h0, self.schedule.steps, eps, self.schedule)
        return denoise(h_n, self.noise_predictor(detached), self.schedule, generator)

    # --- Training and inference passes ---

    def forward_train(self, inputs: torch.Tensor, decoder_covariates: torch.Tensor, targets: torch.Tensor,
                      generator: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Returns (elbo_term, nll_term); the training loss is
        elbo_weight * elbo_term + nll_term.
        """
        if targets.shape != decoder_covariates.shape[:2]:
            raise ShapeError(f"Targets {tuple(targets.shape)} do not match horizon {tuple(decoder_covariates.shape[:2])}.")
        h0 = self.encode(inputs)
        if self.config.uses_diffusion:
            elbo_term = elbo_loss(h0, self.reverse_net, self.schedule, generator)
            h_star = self.reconstruct(h0, generator, detached=not self.config.nll_through_denoiser)
        else:
            elbo_term = torch.zeros((), dtype=h0.dtype)
            h_star = h0
        emission = self.decode(h_star, decoder_covariates, inputs[:, -1, 0], forced_targets=targets)
        nll = NLL_BY_FAMILY[self.config.family](targets, emission.loc, emission.scale)
        nll_term = nll.sum(dim=1).mean()
        return elbo_term, nll_term

    def loss(self, elbo_term: torch.Tensor, nll_term: torch.Tensor) -> torch.Tensor:
        return self.config.elbo_weight * elbo_term + nll_term

    @torch.no_grad()
    def forecast_pass(self, inputs: torch.Tensor, decoder_covariates: torch.Tensor,
                      generator: torch.Generator | None) -> EmissionParams:
        """One inference pass: encode, corrupt and denoise (d/* only), decode autoregressively."""
        h0 = self.encode(inputs)
        h_star = self.reconstruct(h0, generator, detached=False) if self.config.uses_diffusion else h0
        return self.decode(h_star, decoder_covariates, inputs[:, -1, 0])


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --- Checkpoint Codec ---
# Text manifest followed by raw little-endian float32 arrays in row-major order:
#
#   diffload-checkpoint <version> <config sha256>
#   config <json>
#   meta <json>
#   param <name> <d1,d2,...> float32 <byte offset into the data section>
#   ...
#   end
#   <data section>

def save_checkpoint(path, model: DiffLoadModel, meta: dict | None = None):
    config_json = json.dumps(asdict(model.config), sort_keys=True, separators=(',', ':'))
    meta_json = json.dumps(meta or {}, sort_keys=True, separators=(',', ':'))
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {model.config.digest()}",
        f"config {config_json}",
        f"meta {meta_json}",
    ]
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy().astype('<f4', copy=False)
        shape = ','.join(str(d) for d in array.shape)
        lines.append(f"param {name} {shape} float32 {offset}")
        blob = np.ascontiguousarray(array).tobytes(order='C')
        blobs.append(blob)
        offset += len(blob)
    lines.append('end')
    header = ('\n'.join(lines) + '\n').encode('utf-8')
    atomic_write_bytes(path, header + b''.join(blobs))
    logger.info(f"Saved checkpoint with {len(blobs)} arrays ({offset} data bytes) to {path}")


def load_checkpoint(path) -> tuple[DiffLoadModel, dict]:
    try:
        with open(path, 'rb') as handle:
            payload = handle.read()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}") from e

    marker = b'\nend\n'
    cut = payload.find(marker)
    if cut < 0:
        raise DataError(f"Checkpoint {path} has no manifest terminator.")
    manifest = payload[:cut].decode('utf-8').split('\n')
    data = payload[cut + len(marker):]

    try:
        magic, version, digest = manifest[0].split(' ')
        if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
            raise DataError(f"Checkpoint {path} has unsupported header '{manifest[0]}'.")
        config = ModelConfig(**json.loads(manifest[1].removeprefix('config ')))
        meta = json.loads(manifest[2].removeprefix('meta '))
    except (ValueError, TypeError) as e:
        raise DataError(f"Checkpoint {path} has a malformed header: {e}") from e
    if config.digest() != digest:
        raise DataError(f"Checkpoint {path} config digest mismatch.")

    model = DiffLoadModel(config)
    state = {}
    for line in manifest[3:]:
        try:
            kind, name, shape, dtype, offset = line.split(' ')
            if kind != 'param' or dtype != 'float32':
                raise ValueError('not a float32 param entry')
            dims = tuple(int(d) for d in shape.split(',')) if shape else ()
            count = int(np.prod(dims)) if dims else 1
            array = np.frombuffer(data, dtype='<f4', count=count, offset=int(offset)).reshape(dims)
        except ValueError as e:
            raise DataError(f"Checkpoint {path}: bad manifest line '{line}': {e}") from e
        state[name] = torch.from_numpy(array.astype(np.float32))
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise DataError(f"Checkpoint {path} does not match its config: {e}") from e
    logger.info(f"Loaded checkpoint {path} (variant {config.variant}, {count_parameters(model)} parameters)")
    return model, meta
