"""Evaluation metrics: Wasserstein-2 between empirical measures, mean RMSE.

The Wasserstein-2 distance is computed as an exact discrete optimal-transport
problem on the squared-Euclidean cost between support points.  Before calling
the solver, both supports are sorted along the dominant principal axis of the
pooled cloud — a pure relabeling that leaves the optimum untouched but hands
the network simplex a near-sorted problem, which is measurably cheaper in the
low-dimensional settings this package targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .ssm import RngStream, StateEnsemble
from .transport import solve_transport

__all__ = [
    "EmpiricalMeasure",
    "TransportPlan",
    "wasserstein2",
    "transport_plan",
    "averaged_w2",
    "averaged_rmse",
    "subsample_reference",
    "density_grid",
]


@dataclass
class EmpiricalMeasure:
    """Weighted point cloud representing a probability measure on R^d."""

    support: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=float))
        m = self.support.shape[0]
        if self.weights is None:
            self.weights = np.full(m, 1.0 / m)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (m,):
            raise ValueError(f"weights shape {self.weights.shape} does not match {m} support points")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")
        if not np.all(np.isfinite(self.support)):
            raise ValueError("support points must be finite")

    @classmethod
    def from_ensemble(cls, ensemble: StateEnsemble) -> "EmpiricalMeasure":
        return cls(ensemble.members)

    @property
    def n_points(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling: row sums match the source, column sums the target."""

    coupling: np.ndarray


def _projection_orders(x: np.ndarray, y: np.ndarray):
    """Stable sort orders of both clouds along their pooled principal axis."""
    pooled = np.vstack([x, y])
    centered = pooled - pooled.mean(axis=0)
    v = np.ones(pooled.shape[1])
    for _ in range(20):
        v = centered.T @ (centered @ v)
        norm = np.linalg.norm(v)
        if norm <= 1e-300:
            return np.arange(x.shape[0]), np.arange(y.shape[0])
        v /= norm
    return (
        np.argsort(x @ v, kind="stable"),
        np.argsort(y @ v, kind="stable"),
    )


def _solve_sorted(a: EmpiricalMeasure, b: EmpiricalMeasure, method: str):
    if a.dim != b.dim:
        raise ValueError(f"measures live in different dimensions: {a.dim} vs {b.dim}")
    pi, pj = _projection_orders(a.support, b.support)
    cost = cdist(a.support[pi], b.support[pj], "sqeuclidean")
    result = solve_transport(cost, a.weights[pi], b.weights[pj], method=method)
    return result, pi, pj


def wasserstein2(a: EmpiricalMeasure, b: EmpiricalMeasure, method: str = "auto") -> float:
    """Exact Wasserstein-2 distance between two empirical measures.

    Symmetric, nonnegative, and zero exactly when the measures coincide
    (up to solver tolerance).
    """
    result, _, _ = _solve_sorted(a, b, method)
    return float(np.sqrt(max(result.objective, 0.0)))


def transport_plan(a: EmpiricalMeasure, b: EmpiricalMeasure, method: str = "auto") -> TransportPlan:
    """The optimal coupling realizing ``wasserstein2(a, b)``."""
    result, pi, pj = _solve_sorted(a, b, method)
    coupling = np.empty_like(result.plan)
    coupling[np.ix_(pi, pj)] = result.plan
    return TransportPlan(coupling=coupling)


def averaged_w2(run: Sequence[StateEnsemble], reference: Sequence[EmpiricalMeasure]) -> float:
    """Mean over steps of W2(run ensemble, reference measure)."""
    if len(run) != len(reference):
        raise ValueError(f"run has {len(run)} steps but reference has {len(reference)}")
    if len(run) == 0:
        raise ValueError("need at least one step")
    total = 0.0
    for ens, ref in zip(run, reference):
        total += wasserstein2(EmpiricalMeasure.from_ensemble(ens), ref)
    return total / len(run)


def averaged_rmse(run: Sequence[StateEnsemble], truth: Sequence[np.ndarray]) -> float:
    """Mean over steps of ||truth - ensemble mean||_2 / sqrt(d)."""
    if len(run) != len(truth):
        raise ValueError(f"run has {len(run)} steps but truth has {len(truth)}")
    if len(run) == 0:
        raise ValueError("need at least one step")
    total = 0.0
    for ens, x_true in zip(run, truth):
        err = np.asarray(x_true, dtype=float) - ens.mean()
        total += float(np.linalg.norm(err)) / np.sqrt(ens.dim)
    return total / len(run)


def subsample_reference(reference: EmpiricalMeasure, m: int, rng: RngStream) -> EmpiricalMeasure:
    """Uniform without-replacement draw of m support points, equal weights.

    Exact transport against a 100k-point reference is not affordable per
    step, so distances are evaluated against a subsample; the subsampling
    stream should be step-indexed so all filters face the same draw.
    """
    if not (1 <= m <= reference.n_points):
        raise ValueError(f"subsample size must lie in [1, {reference.n_points}], got {m}")
    idx = rng.generator().choice(reference.n_points, size=m, replace=False)
    return EmpiricalMeasure(reference.support[idx])


def density_grid(values_over_steps: np.ndarray, grid: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Per-step 1-D kernel density of one coordinate, evaluated on bin centers.

    Args:
        values_over_steps: (K, N) matrix, one row of member values per step.
        grid: strictly increasing bin edges (B+1 of them).
        normalize: rescale every row to unit maximum (the display convention
            for heatmaps); pass False for actual densities, which integrate
            to one up to grid truncation.

    Returns:
        (K, B) matrix of density values; bandwidth per row by Silverman's rule.
    """
    values = np.atleast_2d(np.asarray(values_over_steps, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid must contain at least two bin edges")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid edges must be strictly increasing")
    centers = 0.5 * (grid[:-1] + grid[1:])
    mean_width = float(np.mean(np.diff(grid)))
    k_steps, n = values.shape
    out = np.empty((k_steps, centers.size))
    for k in range(k_steps):
        row = values[k]
        std = row.std(ddof=1) if n > 1 else 0.0
        iqr = float(np.subtract(*np.percentile(row, [75, 25])))
        spread = min(std, iqr / 1.34) if iqr > 0 else std
        h = 0.9 * spread * n ** (-0.2)
        if not h > 0:
            h = 0.5 * mean_width  # degenerate row: resolve as one sharp bin
        z = (centers[:, None] - row[None, :]) / h
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * h * np.sqrt(2.0 * np.pi))
        if normalize:
            peak = dens.max()
            if peak > 0:
                dens = dens / peak
        out[k] = dens
    return out
