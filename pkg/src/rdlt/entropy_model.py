"""Per-position coefficient probability model used by the rate term.

Each coefficient position i has a Gaussian N(mu_i, sigma_i^2); a value
quantized (or perturbed by uniform noise) to v is assigned the mass of the
unit interval around it, p(v) = Phi((v + 0.5 - mu)/sigma) - Phi((v - 0.5 -
mu)/sigma).  The implementation folds the evaluation around the mean and
works with erfc so the difference stays accurate far in the tails, where the
naive CDF difference cancels to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

# Probability floor applied before taking logs; keeps the rate finite for
# values the model considers impossible.
P_FLOOR = 1e-12
_P_CEIL = float(np.nextafter(1.0, 0.0))
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class EntropyModelParams:
    """Mean and log standard deviation per coefficient position."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
        if self.mu.shape != self.log_sigma.shape or self.mu.ndim != 1:
            raise ValueError(
                f"mu and log_sigma must be equal 1-D arrays, got {self.mu.shape} and {self.log_sigma.shape}"
            )
        if not (np.isfinite(self.mu).all() and np.isfinite(self.log_sigma).all()):
            raise ValueError("entropy model parameters must be finite")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


def gauss_cdf(z: np.ndarray) -> np.ndarray:
    """Standard normal CDF via erfc, accurate in both tails."""
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) * _INV_SQRT2)


def gauss_pdf(z: np.ndarray) -> np.ndarray:
    return _INV_SQRT2PI * np.exp(-0.5 * np.square(z))


def _interval_terms(mu, sigma, values):
    """Unclamped interval mass and its folded edge arguments.

    Returns (p_raw, a, b) with a = (0.5 - d)/sigma, b = (-0.5 - d)/sigma for
    d = |v - mu|.  Folding makes both CDF arguments <= 0.5/sigma, so the
    subtraction below never cancels catastrophically.
    """
    d = np.abs(values - mu)
    a = (0.5 - d) / sigma
    b = (-0.5 - d) / sigma
    return gauss_cdf(a) - gauss_cdf(b), a, b


def likelihood(params: EntropyModelParams, values: np.ndarray) -> np.ndarray:
    """Per-coefficient probability mass, clamped to [1e-12, 1).

    values has shape (n^2,) or (count, n^2) and may be integer symbols or
    real (noise-perturbed) coefficients; broadcasting pairs position i with
    mu_i, sigma_i.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] != params.mu.shape[0]:
        raise ValueError(
            f"values last axis {v.shape[-1]} does not match model size {params.mu.shape[0]}"
        )
    p, _, _ = _interval_terms(params.mu, params.sigma, v)
    return np.clip(p, P_FLOOR, _P_CEIL)


def rate_bits(params: EntropyModelParams, values: np.ndarray) -> np.ndarray:
    """Total bits per block: sum over positions of -log2(likelihood)."""
    bits = -np.log2(likelihood(params, values))
    return bits.sum(axis=-1)


def scale_for_step(params: EntropyModelParams, step: float) -> EntropyModelParams:
    """Model for coefficients divided by a quantization step.

    If y has mean mu and variance sigma^2 then y/step has mean mu/step and
    variance (sigma/step)^2; this is how one trained model is reused across
    the whole step range.
    """
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    return EntropyModelParams(params.mu / step, params.log_sigma - np.log(step))
