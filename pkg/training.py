# training.py
import copy
import logging
import math
import time
from dataclasses import dataclass, field

import torch

from data import WindowBatch, WindowSplits
from metrics import rmse
from model import DiffLoadModel, ModelConfig
from utils import ConfigError, DataError, TrainingAborted, derive_seed, make_generator

logger = logging.getLogger(__name__)

EVAL_STREAM = 7919


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 5e-3
    patience: int = 15
    max_epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError(
                f"batch_size, max_epochs and patience must be >= 1, got "
                f"{self.batch_size}, {self.max_epochs}, {self.patience}."
            )
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}.")

    @property
    def eval_seed(self) -> int:
        return derive_seed(self.seed, EVAL_STREAM)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    stop_reason: str = ''
    best_epoch: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best_val_rmse(self) -> float:
        return min(self.val_rmse) if self.val_rmse else math.inf

    def metrics_log(self) -> str:
        """One `epoch train_loss val_rmse` line per epoch."""
        return ''.join(
            f"{epoch} {loss:.8f} {score:.8f}\n"
            for epoch, (loss, score) in enumerate(zip(self.train_loss, self.val_rmse), start=1)
        )


# --- Optimizer ---

@dataclass
class AdamState:
    step: int
    first_moment: list[torch.Tensor]
    second_moment: list[torch.Tensor]

    @classmethod
    def zeros_like(cls, params) -> 'AdamState':
        params = list(params)
        return cls(step=0,
                   first_moment=[torch.zeros_like(p) for p in params],
                   second_moment=[torch.zeros_like(p) for p in params])


@torch.no_grad()
def adam_update(params, grads, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """
    Bias-corrected Adam step, applied in place to `params`. A None gradient
    leaves its parameter and moments untouched.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ConfigError("Adam update received mismatched parameter, gradient and state lists.")
    state.step += 1
    correction1 = 1 - beta1 ** state.step
    correction2 = 1 - beta2 ** state.step
    for param, grad, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ConfigError(f"Gradient shape {tuple(grad.shape)} does not match parameter {tuple(param.shape)}.")
        m.mul_(beta1).add_(grad, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
        denominator = (v / correction2).sqrt_().add_(eps)
        param.addcdiv_(m / correction1, denominator, value=-lr)
    return state


# --- Early Stopping ---

class EarlyStopping:
    """Stops after `patience` consecutive evaluations that fail to beat the best score."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_checks = 0

    def update(self, score: float) -> bool:
        """Records one evaluation; returns True when it is a new best."""
        self.epoch += 1
        if score < self.best:
            self.best = score
            self.best_epoch = self.epoch
            self.bad_checks = 0
            return True
        self.bad_checks += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_checks >= self.patience


# --- Validation ---

def validation_rmse(model: DiffLoadModel, split: WindowBatch, seed: int) -> float:
    """RMSE of single-pass location forecasts over all windows, in standardized units."""
    if len(split) == 0:
        raise DataError("Validation split contains no windows.")
    was_training = model.training
    model.eval()
    emission = model.forecast_pass(split.inputs, split.decoder_covariates, make_generator(seed))
    model.train(was_training)
    return rmse(split.targets.numpy(), emission.loc.numpy())


# --- Training Loop ---

def train(splits: WindowSplits, model_config: ModelConfig,
          train_config: TrainConfig) -> tuple[DiffLoadModel, TrainReport]:
    """
    Mini-batch training on the combined ELBO + NLL loss with per-epoch
    validation RMSE early stopping. Returns the best-epoch parameters.
    """
    if len(splits.train) == 0 or len(splits.val) == 0:
        raise ConfigError("Training and validation splits must both contain windows.")

    started = time.time()
    model = DiffLoadModel(model_config, seed=train_config.seed).to(splits.train.inputs.dtype)
    params = list(model.parameters())
    adam = AdamState.zeros_like(params)
    stopper = EarlyStopping(train_config.patience)
    report = TrainReport()
    best_state = copy.deepcopy(model.state_dict())
    batch_generator = make_generator(train_config.seed, 1)

    logger.info(f">>> TRAINING variant {model_config.variant}: {len(splits.train)} windows, "
                f"batch {train_config.batch_size}, lr {train_config.learning_rate}, "
                f"max {train_config.max_epochs} epochs <<<")

    for epoch in range(1, train_config.max_epochs + 1):
        model.train()
        order = torch.randperm(len(splits.train), generator=make_generator(train_config.seed, 2, epoch))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), train_config.batch_size):
            batch = splits.train.select(order[start:start + train_config.batch_size])
            elbo_term, nll_term = model.forward_train(batch.inputs, batch.decoder_covariates,
                                                      batch.targets, batch_generator)
            loss = model.loss(elbo_term, nll_term)
            if not torch.isfinite(loss):
                raise TrainingAborted(
                    f"Non-finite loss at epoch {epoch}, batch {n_batches + 1}: "
                    f"elbo={elbo_term.item():.4g}, nll={nll_term.item():.4g}."
                )
            model.zero_grad(set_to_none=True)
            loss.backward()
            adam_update(params, [p.grad for p in params], adam, train_config.learning_rate)
            epoch_loss += loss.item()
            n_batches += 1
            logger.debug(f"Epoch {epoch} batch {n_batches}: loss={loss.item():.6f}")

        mean_loss = epoch_loss / n_batches
        score = validation_rmse(model, splits.val, train_config.eval_seed)
        report.train_loss.append(mean_loss)
        report.val_rmse.append(score)
        if stopper.update(score):
            best_state = copy.deepcopy(model.state_dict())
        logger.info(f"Epoch {epoch}/{train_config.max_epochs}: train_loss={mean_loss:.6f} "
                    f"val_rmse={score:.6f} (best {stopper.best:.6f} @ {stopper.best_epoch})")
        if stopper.should_stop:
            report.stop_reason = 'patience'
            break
    else:
        report.stop_reason = 'max_epochs'

    model.load_state_dict(best_state)
    model.eval()
    report.best_epoch = stopper.best_epoch
    report.wall_time = time.time() - started
    logger.info(f">>> TRAINING COMPLETE: stop={report.stop_reason}, best epoch {report.best_epoch}, "
                f"val_rmse={report.best_val_rmse:.6f}, {report.wall_time:.1f}s <<<")
    return model, report
