"""Training-free conditional diffusion update built on a closed-form score.

One assimilation update runs entirely on samples: the predicted ensemble is
paired with synthetic observations drawn from the sensor model, the pairs are
shifted/scaled into a normalized frame, and the conditional filtering density
is represented by a Gaussian kernel density estimate over the pairs.  Because
the KDE is a finite Gaussian mixture, smoothing it along a pseudo-time
schedule keeps it a Gaussian mixture, and the score (gradient of the log
density) has a closed form: a softmax-weighted convex combination of
directions toward the sample points.  Posterior samples are produced by
integrating the deterministic reverse-time ODE

    dx/dtau = (gamma(t)/2) * score(x, t | y_hat),   t = 1 - tau,

from x(0) ~ N(0, sigma_max^2 I) with an adaptive Dormand-Prince 5(4) pair,
then mapping back out of the normalized frame.  No likelihood evaluations and
no training are involved anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Tuple

import numpy as np
from scipy.integrate import RK45

from .errors import SolverError
from .kernels import IsotropicGaussian, convolved_sigma
from .ssm import ObservationModel, PairedEnsemble, RngStream, StateEnsemble, synthesize_observations

__all__ = [
    "DiffusionConfig",
    "AffineNormalizer",
    "fit_normalizer",
    "transform_observation",
    "sigma_schedule",
    "ScoreField",
    "reverse_sample",
    "diffusion_update",
]

# Child-stream ids used inside one diffusion update.
_SYNTH_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class DiffusionConfig:
    """Complete hyperparameterization of one diffusion update.

    Args:
        sigma_x: state-kernel bandwidth in the normalized frame (> 0).
        sigma_y: observation-kernel bandwidth in the normalized frame (> 0).
        sigma_max: terminal smoothing scale; must be >= 1 so the smoothed
            density at t=1 is effectively the Gaussian the sampler starts from.
        ode_rtol / ode_atol: adaptive step control tolerances.
        max_steps: accepted-step budget per reverse integration.
        controller: "shared" integrates the whole ensemble as one ODE system
            under a single step-size controller; "per_member" gives every
            member its own adaptive integration (and its own step count).
    """

    sigma_x: float
    sigma_y: float
    sigma_max: float = 5.0
    ode_rtol: float = 1e-3
    ode_atol: float = 1e-6
    max_steps: int = 1000
    controller: str = "shared"

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError(f"bandwidths must be positive, got ({self.sigma_x}, {self.sigma_y})")
        if self.sigma_max < 1.0:
            raise ValueError(f"sigma_max must be >= 1 (terminal noise must dominate), got {self.sigma_max}")
        if not (self.ode_rtol > 0 and self.ode_atol > 0):
            raise ValueError("ODE tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.controller not in ("shared", "per_member"):
            raise ValueError(f"controller must be 'shared' or 'per_member', got {self.controller!r}")


@dataclass(frozen=True)
class AffineNormalizer:
    """Per-dimension shift/scale transform and its inverse."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if self.shift.shape != self.scale.shape or self.shift.ndim != 1:
            raise ValueError("shift and scale must be matching 1-D vectors")
        if not np.all(self.scale > 0):
            raise ValueError("scale entries must be positive")

    @classmethod
    def fit(cls, data: np.ndarray) -> "AffineNormalizer":
        """Center columns on their mean and scale by the max absolute deviation.

        The fitting data lands in [-1, 1] per dimension.  A constant column
        (zero deviation) gets scale 1 so the transform stays invertible.
        """
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ValueError(f"need at least 2 rows to fit a normalizer, got shape {data.shape}")
        shift = data.mean(axis=0)
        scale = np.max(np.abs(data - shift), axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(shift, scale)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.shift


def fit_normalizer(paired: PairedEnsemble) -> Tuple[AffineNormalizer, AffineNormalizer]:
    """Fit separate normalizers for the state block and the observation block."""
    return AffineNormalizer.fit(paired.states), AffineNormalizer.fit(paired.observations)


def transform_observation(normalizer_y: AffineNormalizer, y_hat: np.ndarray) -> np.ndarray:
    """Map the realized observation into the normalized frame of the pairs.

    The result can land outside [-1, 1]; only the fitting data is bounded.
    """
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y_hat.shape != normalizer_y.shift.shape:
        raise ValueError(
            f"observation dimension {y_hat.shape[0]} does not match normalizer dimension {normalizer_y.shift.shape[0]}"
        )
    return normalizer_y.apply(y_hat)


def sigma_schedule(t: float, sigma_max: float) -> Tuple[float, float]:
    """Smoothing scale and half drift rate at pseudo-time t.

    sigma(t) = t * sigma_max, and since sigma^2(t) is the integral of the
    rate gamma, gamma(t)/2 = t * sigma_max^2.
    """
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"pseudo-time must lie in [0, 1], got {t}")
    return t * sigma_max, t * sigma_max * sigma_max


class ScoreField:
    """Closed-form conditional score of the smoothed KDE, in normalized units.

    Built once per update from normalized paired samples and the normalized
    realized observation; immutable afterwards and safe to share.  The
    observation kernel weights do not depend on pseudo-time, so their logs
    are precomputed; each score evaluation only adds the state-kernel terms
    at the current smoothing scale sigma_bar(t) = sqrt(sigma(t)^2 + sigma_x^2).
    """

    def __init__(self, states: np.ndarray, observations: np.ndarray,
                 y_hat: np.ndarray, config: DiffusionConfig):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
        if states.shape[0] != observations.shape[0]:
            raise ValueError("states and observations must have equal row counts")
        if y_hat.shape[0] != observations.shape[1]:
            raise ValueError(
                f"conditioning observation has dimension {y_hat.shape[0]}, pairs have {observations.shape[1]}"
            )
        self.states = states
        self.observations = observations
        self.y_hat = y_hat
        self.config = config
        obs_kernel = IsotropicGaussian(config.sigma_y, observations.shape[1])
        self.obs_log_weights = obs_kernel.log_pdf(y_hat[None, :] - observations)
        self._state_sq = np.sum(states * states, axis=1)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def sigma_bar(self, t: float) -> float:
        """Combined smoothing scale at pseudo-time t; equals sigma_x at t=0."""
        sigma, _ = sigma_schedule(t, self.config.sigma_max)
        if sigma == 0.0:
            return self.config.sigma_x
        return convolved_sigma(sigma, self.config.sigma_x)

    def _sigma_bar_sq(self, t: float) -> float:
        sigma, _ = sigma_schedule(t, self.config.sigma_max)
        return sigma * sigma + self.config.sigma_x * self.config.sigma_x

    def _log_weights_unnorm(self, queries: np.ndarray, sbar_sq: float) -> np.ndarray:
        # Shared additive constants (the state-kernel normalizer and the
        # observation-weight normalizer) cancel in the softmax and are omitted.
        q_sq = np.sum(queries * queries, axis=1)
        cross = queries @ self.states.T
        dist_sq = np.maximum(q_sq[:, None] + self._state_sq[None, :] - 2.0 * cross, 0.0)
        return self.obs_log_weights[None, :] - dist_sq / (2.0 * sbar_sq)

    def weights(self, x: np.ndarray, t: float) -> np.ndarray:
        """Normalized mixture weights at a query point; they sum to one."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        logw = self._log_weights_unnorm(x, self._sigma_bar_sq(t))[0]
        logw -= logw.max()
        w = np.exp(logw)
        return w / w.sum()

    def score_batch(self, queries: np.ndarray, t: float) -> np.ndarray:
        """Conditional score at each query row; shape matches ``queries``.

        Softmax weights are formed in the log domain, so the result is finite
        for any finite query even when every kernel term underflows linearly.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        sbar_sq = self._sigma_bar_sq(t)
        out = np.empty_like(queries)
        # Chunk the query rows so the (chunk x N) work buffers stay modest.
        chunk = max(1, int(4_000_000 // max(self.n, 1)))
        for lo in range(0, queries.shape[0], chunk):
            q = queries[lo:lo + chunk]
            logw = self._log_weights_unnorm(q, sbar_sq)
            logw -= logw.max(axis=1, keepdims=True)
            w = np.exp(logw)
            w /= w.sum(axis=1, keepdims=True)
            out[lo:lo + chunk] = (w @ self.states - q) / sbar_sq
        return out

    def score(self, x: np.ndarray, t: float) -> np.ndarray:
        """Conditional score at a single point."""
        x = np.asarray(x, dtype=float)
        return self.score_batch(x.reshape(1, -1), t)[0]


def _reverse_rhs(field: ScoreField, n_members: int):
    """Right-hand side of the reverse ODE on the flattened member block."""
    d = field.dim

    def rhs(tau: float, z: np.ndarray) -> np.ndarray:
        t = min(max(1.0 - tau, 0.0), 1.0)
        _, half_gamma = sigma_schedule(t, field.config.sigma_max)
        if half_gamma == 0.0:
            return np.zeros_like(z)
        q = z.reshape(n_members, d)
        return (half_gamma * field.score_batch(q, t)).ravel()

    return rhs


def _integrate_block(field: ScoreField, z0: np.ndarray, member_label: str) -> Tuple[np.ndarray, int]:
    """Drive one adaptive integration from tau=0 to 1; returns (terminal, steps)."""
    cfg = field.config
    n_members = z0.shape[0]
    solver = RK45(
        _reverse_rhs(field, n_members),
        0.0,
        z0.ravel(),
        t_bound=1.0,
        rtol=cfg.ode_rtol,
        atol=cfg.ode_atol,
    )
    steps = 0
    while solver.status == "running":
        solver.step()
        steps += 1
        if steps > cfg.max_steps:
            raise SolverError(
                f"reverse sampler exceeded max_steps={cfg.max_steps} for {member_label} at tau={solver.t:.4f}"
            )
    if solver.status != "finished":
        raise SolverError(f"reverse sampler failed for {member_label} at tau={solver.t:.4f}")
    return solver.y.reshape(n_members, field.dim), steps


def reverse_sample(field: ScoreField, n_out: int, rng: RngStream) -> Tuple[StateEnsemble, np.ndarray]:
    """Draw ``n_out`` posterior samples (normalized frame) via the reverse ODE.

    Initial conditions are i.i.d. N(0, sigma_max^2 I).  Returns the terminal
    ensemble and the per-member accepted-step counts; under the shared
    controller all members report the common count.

    Raises:
        SolverError: the accepted-step budget was exhausted or the
            underlying stepper gave up.
    """
    if n_out < 1:
        raise ValueError(f"n_out must be >= 1, got {n_out}")
    z0 = rng.generator().normal(0.0, field.config.sigma_max, size=(n_out, field.dim))
    counts = np.zeros(n_out, dtype=int)
    if field.config.controller == "shared":
        terminal, steps = _integrate_block(field, z0, f"batch of {n_out} members")
        counts[:] = steps
    else:
        terminal = np.empty_like(z0)
        for i in range(n_out):
            terminal[i], counts[i] = _integrate_block(field, z0[i:i + 1], f"member {i}")
    return StateEnsemble(terminal), counts


def diffusion_update(prior: StateEnsemble, obs_model: ObservationModel, y_hat: np.ndarray,
                     config: DiffusionConfig, rng: RngStream) -> Tuple[StateEnsemble, np.ndarray]:
    """One full conditional-diffusion analysis step.

    Pipeline: draw synthetic observations for the predicted members, fit the
    per-step normalizers on the pairs, move everything (including the realized
    observation) into the normalized frame, build the closed-form score, run
    the reverse-time sampler, and map the samples back.  The output ensemble
    has the same size and step index as the prior; the second return value is
    the per-member accepted-step count of the sampler.
    """
    paired = synthesize_observations(obs_model, prior, rng.child(_SYNTH_STREAM))
    norm_x, norm_y = fit_normalizer(paired)
    field = ScoreField(
        norm_x.apply(paired.states),
        norm_y.apply(paired.observations),
        transform_observation(norm_y, y_hat),
        config,
    )
    sampled, counts = reverse_sample(field, prior.n, rng.child(_NOISE_STREAM))
    posterior = StateEnsemble(norm_x.invert(sampled.members), step_index=prior.step_index)
    return posterior, counts
