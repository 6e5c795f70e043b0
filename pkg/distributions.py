# distributions.py
"""
Symmetric alpha-stable emission laws used by the forecaster.

Only the two members with closed forms are supported: the Cauchy law
(alpha = 1) and the Gaussian law (alpha = 2). Skewness is fixed to zero.
Negative log-likelihoods drop their additive constants (log pi and
0.5 log 2pi), so values from different families must not be compared directly.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import ndtri

from utils import DomainError

logger = logging.getLogger(__name__)

ALPHA_CAUCHY = 1
ALPHA_GAUSSIAN = 2
FAMILY_ALPHA = {'cauchy': ALPHA_CAUCHY, 'gaussian': ALPHA_GAUSSIAN}


@dataclass(frozen=True)
class StableParams:
    """Location/scale parameters of a symmetric stable law; fields may be arrays."""
    alpha: int
    loc: float | np.ndarray
    scale: float | np.ndarray

    def __post_init__(self):
        if self.alpha not in (ALPHA_CAUCHY, ALPHA_GAUSSIAN):
            raise DomainError(f"Unsupported stability index alpha={self.alpha}; expected 1 or 2.")
        if not np.all(np.asarray(self.scale) > 0):
            raise DomainError("Stable law scale must be strictly positive.")


def family_alpha(family: str) -> int:
    try:
        return FAMILY_ALPHA[family]
    except KeyError:
        raise DomainError(f"Unknown emission family '{family}'.") from None


# --- Likelihoods (torch, differentiable) ---

def _as_tensors(*values):
    dtype = next((v.dtype for v in values if isinstance(v, torch.Tensor)), torch.float64)
    return [torch.as_tensor(v, dtype=dtype) for v in values]


def _require_positive_scale(scale: torch.Tensor):
    if bool((scale <= 0).any()):
        raise DomainError("scale must be strictly positive")


def cauchy_nll(y, loc, scale) -> torch.Tensor:
    """Elementwise Cauchy NLL without the log(pi) constant: -log s + log((y - loc)^2 + s^2)."""
    y, loc, scale = _as_tensors(y, loc, scale)
    _require_positive_scale(scale)
    return -torch.log(scale) + torch.log((y - loc) ** 2 + scale ** 2)


def gaussian_nll(y, loc, scale) -> torch.Tensor:
    """Elementwise Gaussian NLL without the 0.5 log(2 pi) constant."""
    y, loc, scale = _as_tensors(y, loc, scale)
    _require_positive_scale(scale)
    return torch.log(scale) + (y - loc) ** 2 / (2 * scale ** 2)


NLL_BY_FAMILY = {'cauchy': cauchy_nll, 'gaussian': gaussian_nll}


# --- Quantiles and Stable-Law Algebra (numpy) ---

def stable_quantile(p, params: StableParams):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("Quantile level p must lie strictly inside (0, 1).")
    if params.alpha == ALPHA_CAUCHY:
        standard = np.tan(np.pi * (p - 0.5))
    else:
        # scipy's ndtri is a rational approximation accurate well below 1e-8.
        standard = ndtri(p)
    return params.loc + params.scale * standard


def central_interval(params: StableParams, coverage: float):
    """Returns the (lower, upper) bounds of the central interval with the given coverage."""
    if not 0 < coverage < 1:
        raise DomainError(f"Interval coverage must lie in (0, 1), got {coverage}.")
    return (stable_quantile((1 - coverage) / 2, params),
            stable_quantile((1 + coverage) / 2, params))


def combine_scales(alpha, scale1, scale2):
    """
    Scale of the sum of two independent stable variables with a shared alpha:
    (s1^alpha + s2^alpha)^(1/alpha).
    """
    scale1 = np.asarray(scale1, dtype=float)
    scale2 = np.asarray(scale2, dtype=float)
    if np.any(scale1 < 0) or np.any(scale2 < 0):
        raise DomainError("Scales to combine must be non-negative.")
    if alpha <= 0:
        raise DomainError(f"Stability index must be positive, got {alpha}.")
    if alpha == ALPHA_CAUCHY:
        combined = scale1 + scale2
    elif alpha == ALPHA_GAUSSIAN:
        combined = np.hypot(scale1, scale2)
    else:
        combined = (scale1 ** alpha + scale2 ** alpha) ** (1.0 / alpha)
    return combined if combined.ndim else float(combined)


def affine(params: StableParams, a: float, b: float) -> StableParams:
    """
    Law of a*X + b for X ~ params. Scale maps to |a|*scale; a = 0 has no proper
    stable law and is rejected by StableParams.
    """
    return StableParams(alpha=params.alpha, loc=a * params.loc + b, scale=abs(a) * params.scale)


# --- Robustness to Label Noise ---

def label_gradient(residual, scale, family: str):
    """Magnitude of d(NLL)/d(label) at the given residual, for either family."""
    residual = np.asarray(residual, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise DomainError("scale must be strictly positive")
    if family == 'cauchy':
        return 2 * np.abs(residual) / (residual ** 2 + scale ** 2)
    if family == 'gaussian':
        return np.abs(residual) / scale ** 2
    raise DomainError(f"Unknown emission family '{family}'.")


def robustness_ratio(residual, scale):
    """
    Ratio of Cauchy to Gaussian label-gradient magnitudes, 2 s^2 / (r^2 + s^2).

    Bounded by 1 whenever |residual| >= scale, i.e. a Cauchy head is pulled
    less by outlying labels than a Gaussian head with the same scale.
    """
    residual = np.asarray(residual, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise DomainError("scale must be strictly positive")
    ratio = 2 * scale ** 2 / (residual ** 2 + scale ** 2)
    return ratio if ratio.ndim else float(ratio)


def noisy_empirical_risk(clean_losses, anomaly_losses, eta: float) -> float:
    """
    Expected empirical loss when each label is replaced by its anomalous version
    with probability eta: (1 - 2 eta) R + eta E[l(y) + l(y^A)].
    """
    if not 0 <= eta < 0.5:
        raise DomainError(f"Anomaly rate must satisfy 0 <= eta < 0.5, got {eta}.")
    clean_losses = np.asarray(clean_losses, dtype=float)
    anomaly_losses = np.asarray(anomaly_losses, dtype=float)
    if clean_losses.shape != anomaly_losses.shape:
        raise DomainError("clean and anomaly losses must have the same shape")
    clean_risk = float(np.mean(clean_losses))
    return (1 - 2 * eta) * clean_risk + eta * float(np.mean(clean_losses + anomaly_losses))
