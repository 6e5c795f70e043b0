# neural_primitives.py
"""
Differentiable building blocks of the forecaster and the finite-difference
gradient check used to validate them.

Recurrent cells follow torch's GRU convention: gates ordered (reset, update,
candidate) in the stacked weight matrices, reset gate applied to the
recurrent candidate term including its bias:

    r  = sigmoid(W_r x + b_ir + U_r h + b_hr)
    z  = sigmoid(W_z x + b_iz + U_z h + b_hz)
    n~ = tanh(W_n x + b_in + r * (U_n h + b_hn))
    h' = (1 - z) * n~ + z * h
"""
import logging
import math

import torch
import torch.nn.functional as F
from torch import nn

from utils import DomainError, ShapeError

logger = logging.getLogger(__name__)

SOFTPLUS_THRESHOLD = 30.0


def softplus(x):
    """log(1 + exp(x)); returns x itself above the overflow threshold."""
    x = torch.as_tensor(x, dtype=x.dtype if isinstance(x, torch.Tensor) else torch.float64)
    return F.softplus(x, beta=1.0, threshold=SOFTPLUS_THRESHOLD)


def init_parameters(module: nn.Module, generator: torch.Generator):
    """
    Uniform(+-1/sqrt(fan_in)) for every weight matrix, zeros for every bias.
    Parameters are visited in registration order, so a seed fixes the result.
    """
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.dim() >= 2:
                bound = 1.0 / math.sqrt(param.shape[1])
                param.uniform_(-bound, bound, generator=generator)
            else:
                param.zero_()


class RecurrentStack(nn.Module):
    """Stacked GRU with batch-first tensors; the per-layer final hidden is the state."""

    def __init__(self, input_size: int, hidden_size: int = 64, layers: int = 2, bias: bool = True):
        super().__init__()
        if layers < 1 or hidden_size < 1 or input_size < 1:
            raise DomainError(
                f"Recurrent stack needs positive sizes, got input={input_size}, hidden={hidden_size}, layers={layers}."
            )
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.layers = layers
        self.gru = nn.GRU(input_size, hidden_size, num_layers=layers, bias=bias, batch_first=True)

    def forward(self, sequence: torch.Tensor, hidden: torch.Tensor | None = None):
        return self.gru(sequence, hidden)


def gru_cell(x: torch.Tensor, h: torch.Tensor, cell: nn.GRUCell) -> torch.Tensor:
    if x.shape[-1] != cell.input_size or h.shape[-1] != cell.hidden_size:
        raise ShapeError(
            f"GRU cell expects input {cell.input_size} / hidden {cell.hidden_size}, "
            f"got {x.shape[-1]} / {h.shape[-1]}."
        )
    return cell(x, h)


def gru_forward(sequence: torch.Tensor, initial_hidden: torch.Tensor | None, stack: RecurrentStack):
    """
    Runs a (batch, T, input) sequence through the stack.

    Returns (final hidden of shape (layers, batch, hidden), top-layer outputs
    of shape (batch, T, hidden)).
    """
    if sequence.dim() != 3 or sequence.shape[-1] != stack.input_size:
        raise ShapeError(
            f"Expected a (batch, T, {stack.input_size}) sequence, got {tuple(sequence.shape)}."
        )
    if sequence.shape[1] < 1:
        raise ShapeError("Sequence must contain at least one step.")
    if initial_hidden is not None:
        expected = (stack.layers, sequence.shape[0], stack.hidden_size)
        if tuple(initial_hidden.shape) != expected:
            raise ShapeError(f"Initial hidden must have shape {expected}, got {tuple(initial_hidden.shape)}.")
    outputs, final_hidden = stack(sequence, initial_hidden)
    return final_hidden, outputs


class NoisePredictionNet(nn.Module):
    """
    Step-conditioned noise predictor eps_theta(h^n, n): a sinusoidal step
    embedding concatenated to the state, two softplus hidden layers and a
    linear output of the state's dimension.
    """

    def __init__(self, state_dim: int, steps: int, embed_dim: int = 32, width: int = 64):
        super().__init__()
        if embed_dim % 2:
            raise DomainError(f"Step embedding dimension must be even, got {embed_dim}.")
        self.state_dim = state_dim
        self.steps = steps
        self.embed_dim = embed_dim
        half = embed_dim // 2
        frequencies = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
        # Plain attribute: module dtype moves must not round the frequencies.
        self.frequencies = frequencies
        self.hidden1 = nn.Linear(state_dim + embed_dim, width)
        self.hidden2 = nn.Linear(width, width)
        self.output = nn.Linear(width, state_dim)

    def step_embedding(self, n: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
        angles = n.to(torch.float64).unsqueeze(-1) * self.frequencies
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1).to(dtype)

    def forward(self, state: torch.Tensor, n: torch.Tensor) -> torch.Tensor:
        n = torch.as_tensor(n, dtype=torch.long).expand(state.shape[:-1])
        features = torch.cat([state, self.step_embedding(n, state.dtype)], dim=-1)
        hidden = F.softplus(self.hidden1(features))
        hidden = F.softplus(self.hidden2(hidden))
        return self.output(hidden)


def noise_net_forward(state: torch.Tensor, n, net: NoisePredictionNet) -> torch.Tensor:
    if state.shape[-1] != net.state_dim:
        raise ShapeError(f"Noise net expects state dimension {net.state_dim}, got {state.shape[-1]}.")
    n = torch.as_tensor(n, dtype=torch.long)
    if bool(((n < 1) | (n > net.steps)).any()):
        raise DomainError(f"Diffusion step must lie in [1, {net.steps}].")
    return net(state, n)


# --- Gradient Check ---

def grad_check(fn, inputs, params=(), eps: float = 1e-5, seed: int = 0) -> float:
    """
    Compares autograd gradients of a random projection of fn(*inputs) with
    central finite differences, for every element of `inputs` and `params`.

    All tensors must be float64. Returns the maximum relative error, taken
    against max(|analytic|, |numeric|, 1).
    """
    inputs = [t.detach().clone().contiguous().requires_grad_(True) for t in inputs]
    params = list(params)
    targets = inputs + params
    for tensor in targets:
        if tensor.dtype != torch.float64:
            raise DomainError("grad_check requires float64 tensors.")

    with torch.no_grad():
        reference = fn(*inputs)
    projection_gen = torch.Generator().manual_seed(seed)
    projection = torch.randn(reference.shape, generator=projection_gen, dtype=torch.float64)

    def objective():
        return (fn(*inputs) * projection).sum()

    analytic = torch.autograd.grad(objective(), targets, allow_unused=True)

    max_error = 0.0
    with torch.no_grad():
        for tensor, grad in zip(targets, analytic):
            grad = torch.zeros_like(tensor) if grad is None else grad
            flat = tensor.view(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                upper = objective().item()
                flat[i] = original - eps
                lower = objective().item()
                flat[i] = original
                numeric = (upper - lower) / (2 * eps)
                a = flat_grad[i].item()
                error = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
                max_error = max(max_error, error)
    logger.debug(f"grad_check over {sum(t.numel() for t in targets)} elements: max relative error {max_error:.3e}")
    return max_error
