"""State-space model plumbing: ensembles, model interfaces, and seeded streams.

The filters in this package treat the dynamics and the sensor as black boxes:
anything with a ``sample`` method and a dimension attribute can be filtered.
All randomness is routed through :class:`RngStream`, a cheap immutable handle
that derives statistically independent child streams from integer paths, so
that a simulation is a pure function of (config, seed) no matter how the work
is scheduled across threads.

Stream discipline
-----------------
A caller that owns a stream for, say, (simulation 3, step 17, propagation)
derives the per-member stream for member i as ``stream.child(i)``.  Member
draws therefore never depend on iteration order, which is what makes
"parallel equals serial, bit for bit" hold throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .errors import ObservationError, PropagationError

__all__ = [
    "RngStream",
    "StateEnsemble",
    "PairedEnsemble",
    "ProcessModel",
    "ObservationModel",
    "gaussian_vector",
    "propagate_ensemble",
    "synthesize_observations",
]


@dataclass(frozen=True)
class RngStream:
    """Immutable handle for a seeded, hierarchically derivable random stream.

    A stream is identified by a 64-bit ``seed`` plus a tuple ``path`` of
    nonnegative integers (simulation index, step index, member index, role
    tag, ...).  Distinct (seed, path) pairs give statistically independent
    streams; the same pair always reproduces the same draws.  Generators are
    counter-based (Philox), so derivation is cheap and collision-free.
    """

    seed: int
    path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed!r}")
        for p in self.path:
            if not isinstance(p, (int, np.integer)) or p < 0:
                raise ValueError(f"stream path entries must be nonnegative integers, got {p!r}")

    def child(self, *ids: int) -> "RngStream":
        """Derive a sub-stream by appending integer ids to the path."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class StateEnsemble:
    """N state particles of dimension d plus the assimilation step they sit at.

    Args:
        members: (N, d) array, one particle per row.
        step_index: number of prediction steps applied so far (k).
    """

    members: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))
        if self.members.ndim != 2 or self.members.shape[0] < 1:
            raise ValueError(f"members must be a nonempty (N, d) matrix, got shape {self.members.shape}")
        if not np.all(np.isfinite(self.members)):
            raise ValueError("ensemble members must be finite")
        if self.step_index < 0:
            raise ValueError(f"step_index must be >= 0, got {self.step_index}")

    @property
    def n(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    def std(self) -> np.ndarray:
        """Per-dimension spread about the mean (ddof=1 when N > 1)."""
        if self.n == 1:
            return np.zeros(self.dim)
        return self.members.std(axis=0, ddof=1)


@dataclass
class PairedEnsemble:
    """Index-aligned state / synthetic-observation pairs (x_i, y_i)."""

    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.states.shape[0] != self.observations.shape[0]:
            raise ValueError(
                f"states and observations must pair up: {self.states.shape[0]} vs "
                f"{self.observations.shape[0]} rows"
            )
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.observations))):
            raise ValueError("paired samples must be finite")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]


class ProcessModel(Protocol):
    """Black-box Markov transition kernel: x_k ~ p(. | x_{k-1})."""

    dim: int

    def sample(self, x: np.ndarray, rng: RngStream) -> np.ndarray: ...


class ObservationModel(Protocol):
    """Black-box sensor model: y ~ p(. | x).

    ``log_likelihood(y, x)`` is optional.  Sampling-only models are fully
    supported by the diffusion filter; weight-based filters need the density
    and refuse models that lack it.
    """

    obs_dim: int

    def sample(self, x: np.ndarray, rng: RngStream) -> np.ndarray: ...

    def log_likelihood(self, y: np.ndarray, x: np.ndarray) -> float: ...


def gaussian_vector(rng: RngStream, dim: int, sigma: float) -> np.ndarray:
    """Draw a vector of i.i.d. N(0, sigma^2) entries from the given stream.

    ``sigma=0`` returns an exact zero vector without consuming any draws.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return np.zeros(dim)
    return rng.generator().normal(0.0, sigma, size=dim)


def propagate_ensemble(model: ProcessModel, ensemble: StateEnsemble, rng: RngStream) -> StateEnsemble:
    """Push every member through the process model (the prediction step).

    Member i is advanced with its own child stream ``rng.child(i)``, so the
    result is independent of evaluation order.  The returned ensemble has
    ``step_index`` incremented by one.

    Raises:
        ValueError: ensemble/model dimension mismatch.
        PropagationError: the model returned a non-finite state (reports the
            member index).
    """
    if ensemble.dim != model.dim:
        raise ValueError(f"ensemble dimension {ensemble.dim} does not match model dimension {model.dim}")
    out = np.empty_like(ensemble.members)
    for i in range(ensemble.n):
        try:
            xi = model.sample(ensemble.members[i], rng.child(i))
        except PropagationError:
            raise
        except Exception as exc:
            raise PropagationError(f"process model failed for member {i}: {exc}") from exc
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (model.dim,):
            raise ValueError(f"process model returned shape {xi.shape} for member {i}, expected ({model.dim},)")
        if not np.all(np.isfinite(xi)):
            raise PropagationError(f"process model produced non-finite state for member {i}")
        out[i] = xi
    return StateEnsemble(out, step_index=ensemble.step_index + 1)


def synthesize_observations(model: ObservationModel, ensemble: StateEnsemble, rng: RngStream) -> PairedEnsemble:
    """Attach a synthetic observation y_i ~ p(. | x_i) to every member.

    Index alignment is what downstream kernel density estimates rely on:
    pair i is exactly (member i, its own observation draw from
    ``rng.child(i)``).

    Raises:
        ObservationError: the model returned a non-finite observation.
    """
    obs = np.empty((ensemble.n, model.obs_dim))
    for i in range(ensemble.n):
        try:
            yi = model.sample(ensemble.members[i], rng.child(i))
        except ObservationError:
            raise
        except Exception as exc:
            raise ObservationError(f"observation model failed for member {i}: {exc}") from exc
        yi = np.asarray(yi, dtype=float).reshape(-1)
        if yi.shape != (model.obs_dim,):
            raise ValueError(f"observation model returned shape {yi.shape} for member {i}, expected ({model.obs_dim},)")
        if not np.all(np.isfinite(yi)):
            raise ObservationError(f"observation model produced non-finite observation for member {i}")
        obs[i] = yi
    return PairedEnsemble(states=ensemble.members.copy(), observations=obs)
