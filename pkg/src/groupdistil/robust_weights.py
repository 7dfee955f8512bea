"""Simplex weights over domains, driven by multiplicative updates.

One update multiplies the sampled domain's weight by exp(step * loss)
and renormalizes, which keeps the vector on the probability simplex and
lets domains with persistently high loss accumulate mass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

logger = logging.getLogger(__name__)

# exp(700) is near the float64 ceiling; larger exponents are clamped.
EXP_CLAMP = 700.0


@dataclass(frozen=True)
class EgConfig:
    """Step size for the multiplicative group-weight update."""

    eta_w: float = 0.01

    def __post_init__(self):
        if not (self.eta_w > 0.0 and np.isfinite(self.eta_w)):
            raise ConfigError(f"eta_w must be positive and finite, got {self.eta_w}")


def init_uniform(num_domains: int) -> np.ndarray:
    """Uniform weights 1/|D| over num_domains domains."""
    if num_domains < 1:
        raise ConfigError(f"num_domains must be >= 1, got {num_domains}")
    w = np.full(num_domains, 1.0 / num_domains)
    return w / w.sum()


def eg_update(w: np.ndarray, d: int, loss: float, cfg: EgConfig) -> np.ndarray:
    """Multiply w[d] by exp(eta_w * loss) and renormalize.

    Returns a new vector; the input is not mutated. A non-finite loss
    aborts rather than corrupting the weights, and an exponent argument
    above EXP_CLAMP is clamped with a warning instead of overflowing.
    """
    w = np.asarray(w, dtype=np.float64)
    if not (0 <= d < w.size):
        raise ConfigError(f"domain {d} out of range for {w.size} weights")
    if not np.isfinite(loss):
        raise NumericError(f"group loss for domain {d} is non-finite: {loss}")
    exponent = cfg.eta_w * loss
    if exponent > EXP_CLAMP:
        logger.warning(
            "clamping weight-update exponent %.3g to %.0f for domain %d",
            exponent,
            EXP_CLAMP,
            d,
        )
        exponent = EXP_CLAMP
    updated = w.copy()
    updated[d] *= np.exp(exponent)
    return updated / updated.sum()


def snapshot(w: np.ndarray) -> list[float]:
    """Plain-float copy of the weights, safe to log; never aliases w."""
    return [float(v) for v in np.asarray(w, dtype=np.float64)]
