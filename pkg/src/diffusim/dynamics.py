"""Benchmark dynamics: the two Lorenz systems, fixed-step propagators, sensors.

The chaotic test beds live here: the three-variable Lorenz-63 convection
model and the cyclic Lorenz-96 model, each integrated with a fixed-step
scheme over one assimilation interval, plus the observation operators used
in the experiments (partial third-coordinate reading for Lorenz-63,
element-wise arctan for Lorenz-96).

Right-hand sides operate on the last axis, so a single state ``(d,)`` and a
stacked batch ``(N, d)`` both work; the batch form is what the large-particle
reference runner leans on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BlowUpError
from .ssm import RngStream, gaussian_vector

__all__ = [
    "Lorenz63Params",
    "Lorenz96Params",
    "PropagatorConfig",
    "lorenz63_rhs",
    "lorenz96_rhs",
    "integrate",
    "integrate_members",
    "NoisyIntegrator",
    "l63_observe",
    "l96_observe",
    "ThirdCoordinateObservation",
    "ArctanObservation",
]


@dataclass(frozen=True)
class Lorenz63Params:
    """Classic convection-roll parameters; defaults give the chaotic regime."""

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0


@dataclass(frozen=True)
class Lorenz96Params:
    """Cyclic atmospheric toy model; d >= 4 so all coupling indices differ."""

    forcing: float = 8.0
    dim: int = 10

    def __post_init__(self):
        if self.dim < 4:
            raise ValueError(f"cyclic coupling needs dim >= 4, got {self.dim}")


@dataclass(frozen=True)
class PropagatorConfig:
    """Fixed-step integration of one assimilation interval.

    ``assimilation_interval`` is covered by an exact integer number of
    ``inner_step`` substeps of the chosen scheme ("forward_euler" or "rk4").
    """

    scheme: str = "forward_euler"
    assimilation_interval: float = 0.1
    inner_step: float = 0.01

    def __post_init__(self):
        if self.scheme not in ("forward_euler", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}; use 'forward_euler' or 'rk4'")
        if self.assimilation_interval <= 0 or self.inner_step <= 0:
            raise ValueError("assimilation_interval and inner_step must be positive")
        ratio = self.assimilation_interval / self.inner_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"assimilation_interval/inner_step must be a positive integer, got {ratio}"
            )

    @property
    def n_substeps(self) -> int:
        return int(round(self.assimilation_interval / self.inner_step))


def lorenz63_rhs(u: np.ndarray, params: Lorenz63Params = Lorenz63Params()) -> np.ndarray:
    """(sigma (u2-u1), rho u1 - u2 - u1 u3, u1 u2 - beta u3), batched over rows."""
    u = np.asarray(u, dtype=float)
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    return np.stack(
        [
            params.sigma * (u2 - u1),
            params.rho * u1 - u2 - u1 * u3,
            u1 * u2 - params.beta * u3,
        ],
        axis=-1,
    )


def lorenz96_rhs(u: np.ndarray, params: Lorenz96Params = Lorenz96Params()) -> np.ndarray:
    """f_i = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F with indices wrapped cyclically."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 4:
        raise ValueError(f"need at least 4 components, got {u.shape[-1]}")
    up1 = np.roll(u, -1, axis=-1)
    um2 = np.roll(u, 2, axis=-1)
    um1 = np.roll(u, 1, axis=-1)
    return (up1 - um2) * um1 - u + params.forcing


def integrate(rhs: Callable[[np.ndarray], np.ndarray], u0: np.ndarray, config: PropagatorConfig) -> np.ndarray:
    """Advance ``u0`` over one assimilation interval with fixed substeps.

    Raises:
        BlowUpError: a substep produced a non-finite state (reports which).
    """
    u = np.asarray(u0, dtype=float)
    dt = config.inner_step
    for step in range(config.n_substeps):
        if config.scheme == "forward_euler":
            u = u + dt * rhs(u)
        else:  # rk4
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * dt * k1)
            k3 = rhs(u + 0.5 * dt * k2)
            k4 = rhs(u + dt * k3)
            u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise BlowUpError(f"state became non-finite at inner step {step + 1} of {config.n_substeps}")
    return u


# Batch alias: the scalar path already handles stacked rows, but spelling the
# intent at call sites keeps the reference runner readable.
integrate_members = integrate


class NoisyIntegrator:
    """Process model wrapping a deterministic flow map plus additive noise.

    One assimilation step is: integrate the previous state over the interval,
    then add a single N(0, noise_std^2 I) perturbation.  Noise is applied once
    per assimilation step (not once per inner substep), matching the map-plus-
    perturbation form x_k = Psi(x_{k-1}) + eps_k.
    """

    def __init__(self, rhs: Callable[[np.ndarray], np.ndarray], dim: int,
                 propagator: PropagatorConfig, noise_std: float = 0.01):
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std}")
        self.rhs = rhs
        self.dim = dim
        self.propagator = propagator
        self.noise_std = noise_std

    def flow(self, x: np.ndarray) -> np.ndarray:
        """The deterministic part Psi(x); accepts batches of rows."""
        return integrate(self.rhs, x, self.propagator)

    def sample(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        return self.flow(x) + gaussian_vector(rng, self.dim, self.noise_std)

    def sample_members(self, members: np.ndarray, rng: RngStream) -> np.ndarray:
        """Vectorized batch propagation with one noise block drawn from ``rng``.

        Used by the large-particle reference runner, where constructing one
        stream per member would dominate the runtime.  The draws come from a
        single (step-scoped) stream rather than per-member substreams, so
        this path is deterministic but not member-permutation-stable; the
        public per-member path is ``ssm.propagate_ensemble``.
        """
        out = self.flow(members)
        if self.noise_std > 0.0:
            out = out + rng.generator().normal(0.0, self.noise_std, size=out.shape)
        if not np.all(np.isfinite(out)):
            raise BlowUpError("batch propagation produced non-finite members")
        return out


def lorenz63_process(params: Lorenz63Params = Lorenz63Params(),
                     propagator: PropagatorConfig = PropagatorConfig("forward_euler", 0.1, 0.01),
                     noise_std: float = 0.01) -> NoisyIntegrator:
    """Three-variable benchmark process model with its table defaults."""
    return NoisyIntegrator(lambda u: lorenz63_rhs(u, params), 3, propagator, noise_std)


def lorenz96_process(params: Lorenz96Params = Lorenz96Params(),
                     propagator: PropagatorConfig = PropagatorConfig("rk4", 0.1, 0.01),
                     noise_std: float = 0.01) -> NoisyIntegrator:
    """Cyclic benchmark process model with its table defaults."""
    return NoisyIntegrator(lambda u: lorenz96_rhs(u, params), params.dim, propagator, noise_std)


def l63_observe(x: np.ndarray, rng: RngStream, noise_sigma: float) -> np.ndarray:
    """Observe the third coordinate plus Gaussian noise: y = x_3 + eta."""
    x = np.asarray(x, dtype=float)
    return x[..., 2:3] + gaussian_vector(rng, 1, noise_sigma)


def l96_observe(x: np.ndarray, rng: RngStream, noise_sigma: float) -> np.ndarray:
    """Element-wise nonlinear reading: y = arctan(x) + eta, eta i.i.d. Gaussian."""
    x = np.asarray(x, dtype=float)
    return np.arctan(x) + gaussian_vector(rng, x.shape[-1], noise_sigma)


class ThirdCoordinateObservation:
    """Scalar sensor y = x_3 + eta with eta ~ N(0, variance)."""

    obs_dim = 1

    def __init__(self, variance: float = 0.25):
        if variance < 0:
            raise ValueError(f"variance must be >= 0, got {variance}")
        self.variance = variance
        self.noise_sigma = float(np.sqrt(variance))

    def sample(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        return l63_observe(x, rng, self.noise_sigma)

    def log_likelihood(self, y: np.ndarray, x: np.ndarray) -> float:
        return float(self.log_likelihood_members(y, np.asarray(x, dtype=float)[None, :])[0])

    def log_likelihood_members(self, y: np.ndarray, members: np.ndarray) -> np.ndarray:
        """log p(y | x) for every row of ``members`` at once."""
        if self.variance == 0.0:
            raise ZeroDivisionError("log_likelihood undefined for a noiseless sensor")
        resid = float(np.asarray(y).reshape(-1)[0]) - members[:, 2]
        return -0.5 * resid**2 / self.variance - 0.5 * np.log(2.0 * np.pi * self.variance)


class ArctanObservation:
    """Full-state sensor y = arctan(x) + eta, eta ~ N(0, variance I_d)."""

    def __init__(self, dim: int, variance: float = 0.5):
        if variance < 0:
            raise ValueError(f"variance must be >= 0, got {variance}")
        self.obs_dim = dim
        self.variance = variance
        self.noise_sigma = float(np.sqrt(variance))

    def sample(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        return l96_observe(x, rng, self.noise_sigma)

    def log_likelihood(self, y: np.ndarray, x: np.ndarray) -> float:
        return float(self.log_likelihood_members(y, np.asarray(x, dtype=float)[None, :])[0])

    def log_likelihood_members(self, y: np.ndarray, members: np.ndarray) -> np.ndarray:
        if self.variance == 0.0:
            raise ZeroDivisionError("log_likelihood undefined for a noiseless sensor")
        resid = np.asarray(y, dtype=float).reshape(1, -1) - np.arctan(members)
        d = self.obs_dim
        return (
            -0.5 * np.sum(resid * resid, axis=1) / self.variance
            - 0.5 * d * np.log(2.0 * np.pi * self.variance)
        )
