"""Baseline analysis steps: stochastic ensemble Kalman and particle filters.

Both operate on the same predicted ensembles as the diffusion update and use
the same stream discipline, so three-way comparisons are apples-to-apples.
The Kalman variant is the stochastic (perturbed-observation) form: synthetic
observations are sampled per member through the sensor model, which handles
nonlinear operators without any linearization.  The particle variant weights
members by observation likelihood and resamples multinomially every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import CapabilityError, DegeneracyError
from .ssm import ObservationModel, PairedEnsemble, RngStream, StateEnsemble, synthesize_observations

__all__ = [
    "EnKFConfig",
    "SIRConfig",
    "kalman_gain",
    "enkf_update",
    "sir_update",
    "multinomial_resample",
    "effective_sample_size",
]

_SYNTH_STREAM = 0
_RESAMPLE_STREAM = 0


@dataclass(frozen=True)
class EnKFConfig:
    """jitter: ridge added to the observation covariance before the solve."""

    jitter: float = 1e-8

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")


@dataclass(frozen=True)
class SIRConfig:
    """resampling: scheme name; only 'multinomial' is implemented."""

    resampling: str = "multinomial"

    def __post_init__(self):
        if self.resampling != "multinomial":
            raise ValueError(f"unsupported resampling scheme {self.resampling!r}")


def kalman_gain(paired: PairedEnsemble, jitter: float = 0.0) -> np.ndarray:
    """Empirical gain K = C_xy (C_yy + jitter I)^{-1} from paired samples.

    Covariances use the unbiased 1/(N-1) estimator.  The observation-space
    system is solved through a symmetric positive-definite factorization.

    Raises:
        numpy.linalg.LinAlgError: C_yy (plus jitter) is not positive
            definite; the message suggests raising the jitter.
    """
    if paired.n < 2:
        raise ValueError(f"need at least 2 members to estimate covariances, got {paired.n}")
    xc = paired.states - paired.states.mean(axis=0)
    yc = paired.observations - paired.observations.mean(axis=0)
    c_xy = xc.T @ yc / (paired.n - 1)
    c_yy = yc.T @ yc / (paired.n - 1)
    c_yy[np.diag_indices_from(c_yy)] += jitter
    try:
        factor = cho_factor(c_yy, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"observation covariance is singular ({exc}); increase the jitter to regularize"
        ) from None
    return cho_solve(factor, c_xy.T).T


def enkf_update(prior: StateEnsemble, obs_model: ObservationModel, y_hat: np.ndarray,
                config: EnKFConfig, rng: RngStream) -> StateEnsemble:
    """Perturbed-observation Kalman analysis step.

    Every member gets its own synthetic observation draw y_i; the update
    shifts members by K (y_hat - y_i), which injects exactly the observation
    noise the textbook covariance update calls for.
    """
    if prior.n < 2:
        raise ValueError(f"ensemble Kalman update needs N >= 2, got {prior.n}")
    paired = synthesize_observations(obs_model, prior, rng.child(_SYNTH_STREAM))
    gain = kalman_gain(paired, config.jitter)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    innovations = y_hat[None, :] - paired.observations
    return StateEnsemble(prior.members + innovations @ gain.T, step_index=prior.step_index)


def multinomial_resample(weights: np.ndarray, n_draws: int, rng: RngStream) -> np.ndarray:
    """Sample ``n_draws`` indices i.i.d. from the given probability vector."""
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0  # guard the last bin against cumulative rounding
    u = rng.generator().random(n_draws)
    return np.searchsorted(cdf, u, side="right")


def sir_update(prior: StateEnsemble, obs_model: ObservationModel, y_hat: np.ndarray,
               config: SIRConfig, rng: RngStream) -> StateEnsemble:
    """Importance-weight the members by p(y_hat | x_i) and resample.

    Weights are normalized in the log domain, so likelihood underflow cannot
    produce NaNs — but if *every* member has zero likelihood the step is
    genuinely lost and a DegeneracyError is raised.

    Raises:
        CapabilityError: the sensor model exposes no ``log_likelihood``.
        DegeneracyError: all log-weights are -inf.
    """
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if hasattr(obs_model, "log_likelihood_members"):
        logw = np.asarray(obs_model.log_likelihood_members(y_hat, prior.members), dtype=float)
    elif hasattr(obs_model, "log_likelihood"):
        logw = np.array(
            [obs_model.log_likelihood(y_hat, prior.members[i]) for i in range(prior.n)], dtype=float
        )
    else:
        raise CapabilityError(
            f"{type(obs_model).__name__} exposes no log_likelihood; the particle filter needs an "
            "observation density (the diffusion filter does not)"
        )
    weights = _normalize_log_weights(logw)
    idx = multinomial_resample(weights, prior.n, rng.child(_RESAMPLE_STREAM))
    return StateEnsemble(prior.members[idx], step_index=prior.step_index)


def _normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    if np.all(np.isneginf(logw)):
        raise DegeneracyError("all particle weights vanished (every log-likelihood is -inf)")
    if np.any(np.isnan(logw)):
        raise ValueError("log-weights contain NaN")
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def effective_sample_size(log_weights: np.ndarray) -> float:
    """1 / sum of squared normalized weights; ranges from 1 to N.

    Computed in the log domain as exp(2 lse(w) - lse(2w)) so that extreme
    weight spreads do not underflow.

    Raises:
        DegeneracyError: all entries are -inf.
    """
    logw = np.asarray(log_weights, dtype=float)
    if logw.size == 0:
        raise ValueError("need at least one weight")
    if np.all(np.isneginf(logw)):
        raise DegeneracyError("all particle weights vanished (every log-weight is -inf)")
    return float(np.exp(2.0 * logsumexp(logw) - logsumexp(2.0 * logw)))
