"""Isotropic Gaussian kernels and the two identities the score machinery rests on.

The kernel g_sigma(x) = (2 pi sigma^2)^(-d/2) exp(-||x||^2 / (2 sigma^2)) shows
up in three roles: as the KDE smoother of paired samples, as the pseudo-time
smoothing applied by the forward diffusion, and (through the convolution
identity) as the combined bandwidth sqrt(sigma_a^2 + sigma_b^2) used by the
score.  Everything that feeds weight computations goes through the log form;
the linear-domain density exists mostly so that tests can cross-check it.

>>> k = IsotropicGaussian(sigma=1.0, dim=1)
>>> round(k.pdf([0.0]), 6)
0.398942
>>> convolved_sigma(3.0, 4.0)
5.0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["IsotropicGaussian", "convolved_sigma", "squared_norm"]


def squared_norm(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean norm along the last axis.

    ``np.sum`` uses pairwise (blocked) accumulation, so the result does not
    depend on how callers happened to lay out higher dimensions.
    """
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class IsotropicGaussian:
    """Zero-mean isotropic Gaussian density on R^d.

    Args:
        sigma: bandwidth (standard deviation along every coordinate), > 0.
        dim: ambient dimension d, >= 1.
    """

    sigma: float
    dim: int

    def __post_init__(self):
        if not (self.sigma > 0.0) or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(
                f"expected vectors of length {self.dim}, got shape {x.shape}"
            )
        return x

    def log_pdf(self, x) -> np.ndarray:
        """log g_sigma(x); finite wherever x is, even when pdf underflows.

        Accepts a single vector of length d or an array stacking them along
        leading axes; the last axis is the coordinate axis.
        """
        x = self._check(x)
        log_norm = -0.5 * self.dim * math.log(2.0 * math.pi * self.sigma**2)
        return log_norm - squared_norm(x) / (2.0 * self.sigma**2)

    def pdf(self, x) -> np.ndarray:
        """g_sigma(x), evaluated through the log form."""
        return np.exp(self.log_pdf(x))

    def grad(self, x) -> np.ndarray:
        """Gradient of the density: g_sigma(x) * (-x / sigma^2)."""
        x = self._check(x)
        return np.exp(self.log_pdf(x))[..., None] * (-x / self.sigma**2)


def convolved_sigma(sigma_a: float, sigma_b: float) -> float:
    """Bandwidth of the convolution of two isotropic Gaussian kernels.

    g_{sigma_a} * g_{sigma_b} is again Gaussian with bandwidth
    sqrt(sigma_a^2 + sigma_b^2).  Both bandwidths must be strictly positive;
    degenerate (point-mass) factors are the caller's limit to take.
    """
    if not (sigma_a > 0.0 and sigma_b > 0.0):
        raise ValueError(f"bandwidths must be > 0, got ({sigma_a}, {sigma_b})")
    return math.hypot(sigma_a, sigma_b)
