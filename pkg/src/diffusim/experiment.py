"""Twin-experiment orchestration: truth, observations, filters, metrics, seeds.

One *simulation* is: draw a true initial state, roll the noise-free truth
trajectory, realize noisy observations from it, then run each configured
filter against those same observations from a shared initial ensemble.  A
full experiment repeats this for S independent simulations and every
requested ensemble size, then aggregates metrics per (filter, N).

Stream layout (all derived from the base seed; see ssm.RngStream):

    root.child(SIM, s)                       per-simulation root
      .child(TRUTH)                          true initial state
      .child(OBS, k)                         observation noise at step k
      .child(INIT, n)                        initial ensemble of size n
      .child(FILTER, fid, n, k, role)        filter-specific randomness
      .child(REFERENCE, ...)                 large-particle reference run
      .child(SUBSAMPLE, k)                   reference subsample at step k

Truth, observations, the initial ensemble, and the per-step reference
subsample are independent of the filter id, which is what makes three-way
filter comparisons fair; everything downstream of FILTER is private to one
(filter, ensemble size) cell.  The deliberate model mismatch of the
benchmark protocol — a noise-free truth filtered under an assumed process
noise of 0.01 — is configured here, not a bug to fix.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, List, Optional, Sequence

import numpy as np

from .baselines import EnKFConfig, SIRConfig, enkf_update, multinomial_resample, sir_update
from .diffusion import DiffusionConfig, diffusion_update
from .dynamics import (
    ArctanObservation,
    Lorenz63Params,
    Lorenz96Params,
    NoisyIntegrator,
    PropagatorConfig,
    ThirdCoordinateObservation,
    lorenz63_process,
    lorenz96_process,
)
from .errors import CapabilityError, DegeneracyError, DiffusimError
from .metrics import EmpiricalMeasure, averaged_rmse, averaged_w2, subsample_reference
from .records import RunRecord, StepRecord
from .ssm import RngStream, StateEnsemble, propagate_ensemble

__all__ = [
    "FilterSpec",
    "ExperimentConfig",
    "default_config",
    "config_from_dict",
    "config_to_dict",
    "build_process",
    "build_observation",
    "generate_truth",
    "realize_observations",
    "initialize_ensemble",
    "run_filter",
    "build_reference",
    "run_experiment",
    "grid_search",
    "ExperimentResult",
    "GridSearchResult",
    "worker_count",
]

SCHEMA_VERSION = 1

# Stream-path role tags (first id under a simulation root).
SIM = 0
TRUTH = 1
OBS = 2
INIT = 3
FILTER = 4
REFERENCE = 5
SUBSAMPLE = 6

# Sub-roles inside one filter step.
PROPAGATE = 0
UPDATE = 1

FILTER_IDS = {"diffusion": 0, "enkf": 1, "sir": 2}


@dataclass
class FilterSpec:
    """One filter to run, with its hyperparameters.

    ``sigma_x``/``sigma_y`` (and the other ode fields) only matter for the
    diffusion filter, ``jitter`` only for the ensemble Kalman filter.
    """

    kind: str
    sigma_x: Optional[float] = None
    sigma_y: Optional[float] = None
    sigma_max: float = 5.0
    ode_rtol: float = 1e-3
    ode_atol: float = 1e-6
    max_steps: int = 1000
    controller: str = "shared"
    jitter: float = 1e-8

    def __post_init__(self):
        if self.kind not in FILTER_IDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {sorted(FILTER_IDS)}")
        if self.kind == "diffusion" and (self.sigma_x is None or self.sigma_y is None):
            raise ValueError("diffusion filter requires sigma_x and sigma_y")

    def diffusion_config(self) -> DiffusionConfig:
        return DiffusionConfig(
            sigma_x=self.sigma_x,
            sigma_y=self.sigma_y,
            sigma_max=self.sigma_max,
            ode_rtol=self.ode_rtol,
            ode_atol=self.ode_atol,
            max_steps=self.max_steps,
            controller=self.controller,
        )

    def with_bandwidths(self, sigma_x: float, sigma_y: float) -> "FilterSpec":
        return FilterSpec(
            kind=self.kind,
            sigma_x=sigma_x,
            sigma_y=sigma_y,
            sigma_max=self.sigma_max,
            ode_rtol=self.ode_rtol,
            ode_atol=self.ode_atol,
            max_steps=self.max_steps,
            controller=self.controller,
            jitter=self.jitter,
        )


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; see ``default_config`` for presets."""

    system: str = "l63"
    dim: int = 3
    steps: int = 100
    sims: int = 10
    base_seed: int = 1
    ensemble_sizes: List[int] = field(default_factory=lambda: [100])
    filters: List[FilterSpec] = field(default_factory=list)
    metric: str = "w2"
    # "truth": members are unit perturbations of the realized true start;
    # "prior": members are drawn from the initial-state law itself (standard
    # normal), i.e. the filter knows the distribution but not the realization.
    # The three-variable preset uses "prior": its metric compares whole
    # posteriors against a reference filter, and the reference can only be
    # the exact Bayes posterior if every ensemble (filters and reference
    # alike) starts from the initial-state law rather than from a start no
    # filter would know.  The cyclic preset scores mean tracking of the
    # realized trajectory and uses "truth".
    ensemble_init: str = "truth"
    # dynamics
    scheme: str = "forward_euler"
    assimilation_interval: float = 0.1
    inner_step: float = 0.01
    process_noise_std: float = 0.01
    observation_variance: float = 0.25
    l63_sigma: float = 10.0
    l63_rho: float = 28.0
    l63_beta: float = 8.0 / 3.0
    l96_forcing: float = 8.0
    # evaluation
    reference_n: int = 20_000
    reference_subsample: int = 2000
    # bandwidth grid-search defaults: supersets of every reported optimum
    sigma_x_grid: List[float] = field(default_factory=lambda: [0.025, 0.05, 0.1, 0.15, 0.2])
    sigma_y_grid: List[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.5])
    store_ensembles: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.system not in ("l63", "l96"):
            raise ValueError(f"system must be 'l63' or 'l96', got {self.system!r}")
        if self.system == "l63" and self.dim != 3:
            raise ValueError("the three-variable system has dim 3")
        if self.system == "l96" and self.dim < 4:
            raise ValueError(f"the cyclic system needs dim >= 4, got {self.dim}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.sims < 1:
            raise ValueError(f"sims must be >= 1, got {self.sims}")
        if any(n < 2 for n in self.ensemble_sizes):
            raise ValueError("ensemble sizes must be >= 2")
        if self.metric not in ("w2", "rmse"):
            raise ValueError(f"metric must be 'w2' or 'rmse', got {self.metric!r}")
        if self.ensemble_init not in ("truth", "prior"):
            raise ValueError(f"ensemble_init must be 'truth' or 'prior', got {self.ensemble_init!r}")
        if not (1 <= self.reference_subsample <= self.reference_n):
            raise ValueError("reference_subsample must lie in [1, reference_n]")


def default_config(system: str, dim: Optional[int] = None) -> ExperimentConfig:
    """Benchmark-table presets for either system."""
    if system == "l63":
        return ExperimentConfig(
            system="l63", dim=3, steps=100, metric="w2",
            scheme="forward_euler", observation_variance=0.25,
            ensemble_init="prior",
        )
    if system == "l96":
        return ExperimentConfig(
            system="l96", dim=dim or 10, steps=500, metric="rmse",
            scheme="rk4", observation_variance=0.5,
            ensemble_init="truth",
        )
    raise ValueError(f"unknown system {system!r}")


def config_to_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["schema_version"] = SCHEMA_VERSION
    return d


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a parsed mapping, rejecting unknown keys."""
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}")
    filters = [
        spec if isinstance(spec, FilterSpec) else FilterSpec(**spec)
        for spec in data.pop("filters", [])
    ]
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(filters=filters, **data)


def build_process(config: ExperimentConfig) -> NoisyIntegrator:
    propagator = PropagatorConfig(config.scheme, config.assimilation_interval, config.inner_step)
    if config.system == "l63":
        params = Lorenz63Params(config.l63_sigma, config.l63_rho, config.l63_beta)
        return lorenz63_process(params, propagator, config.process_noise_std)
    params = Lorenz96Params(config.l96_forcing, config.dim)
    return lorenz96_process(params, propagator, config.process_noise_std)


def build_observation(config: ExperimentConfig):
    if config.system == "l63":
        return ThirdCoordinateObservation(config.observation_variance)
    return ArctanObservation(config.dim, config.observation_variance)


def generate_truth(config: ExperimentConfig, rng: RngStream) -> np.ndarray:
    """(K+1, d) noise-free truth trajectory from a standard-normal start."""
    process = build_process(config)
    x = rng.child(0).generator().standard_normal(config.dim)
    out = np.empty((config.steps + 1, config.dim))
    out[0] = x
    for k in range(1, config.steps + 1):
        try:
            x = process.flow(x)
        except DiffusimError as exc:
            raise type(exc)(f"truth trajectory failed at step {k}: {exc}") from None
        out[k] = x
    return out


def realize_observations(truth: np.ndarray, obs_model, rng: RngStream) -> np.ndarray:
    """(K, D) observations of truth steps 1..K, one noise stream per step."""
    k_steps = truth.shape[0] - 1
    out = np.empty((k_steps, obs_model.obs_dim))
    for k in range(1, k_steps + 1):
        out[k - 1] = obs_model.sample(truth[k], rng.child(k))
    return out


def initialize_ensemble(truth0: np.ndarray, n: int, rng: RngStream) -> StateEnsemble:
    """N unit-variance Gaussian perturbations of the true initial state."""
    if n < 2:
        raise ValueError(f"ensemble size must be >= 2, got {n}")
    truth0 = np.asarray(truth0, dtype=float)
    members = truth0[None, :] + rng.generator().standard_normal((n, truth0.size))
    return StateEnsemble(members, step_index=0)


def run_filter(filter_spec: FilterSpec, config: ExperimentConfig, truth: np.ndarray,
               observations: np.ndarray, n: int, rng: RngStream,
               keep_predictions: bool = False) -> RunRecord:
    """Run one filter for K steps against realized observations.

    ``rng`` is the simulation root; the initial ensemble comes from the
    filter-independent INIT stream so every filter starts identically.
    Failures (solver blow-ups, degeneracy, singular covariances) mark the
    record failed at the offending step instead of raising.
    """
    process = build_process(config)
    obs_model = build_observation(config)
    fid = FILTER_IDS[filter_spec.kind]
    record = RunRecord(
        filter_kind=filter_spec.kind,
        n=n,
        sim_index=int(rng.path[-1]) if rng.path else 0,
        seed=rng.seed,
        stream_path=rng.path,
        config_snapshot=config_to_dict(config),
    )
    t_start = time.perf_counter()
    init_center = truth[0] if config.ensemble_init == "truth" else np.zeros(config.dim)
    ensemble = initialize_ensemble(init_center, n, rng.child(INIT, n))
    fstream = rng.child(FILTER, fid, n)
    diff_config = filter_spec.diffusion_config() if filter_spec.kind == "diffusion" else None
    enkf_config = EnKFConfig(jitter=filter_spec.jitter)
    sir_config = SIRConfig()

    for k in range(1, observations.shape[0] + 1):
        y_hat = observations[k - 1]
        try:
            prior = propagate_ensemble(process, ensemble, fstream.child(k, PROPAGATE))
            update_rng = fstream.child(k, UPDATE)
            step_count = 0
            if filter_spec.kind == "diffusion":
                ensemble, counts = diffusion_update(prior, obs_model, y_hat, diff_config, update_rng)
                step_count = int(np.max(counts))
            elif filter_spec.kind == "enkf":
                ensemble = enkf_update(prior, obs_model, y_hat, enkf_config, update_rng)
            else:
                ensemble = sir_update(prior, obs_model, y_hat, sir_config, update_rng)
        except (DiffusimError, np.linalg.LinAlgError) as exc:
            record.failed = True
            record.failure = f"step {k}: {type(exc).__name__}: {exc}"
            break
        record.steps.append(
            StepRecord(
                k=k,
                observation=np.array(y_hat, dtype=float),
                pred_mean=prior.mean(),
                pred_std=prior.std(),
                post_mean=ensemble.mean(),
                post_std=ensemble.std(),
                step_count=step_count,
            )
        )
        record.posteriors.append(ensemble.members.copy())
        if keep_predictions:
            record.predictions.append(prior.members.copy())

    k_done = len(record.steps)
    if not record.failed and k_done > 0:
        record.metrics["rmse"] = averaged_rmse(
            [StateEnsemble(m, step_index=i + 1) for i, m in enumerate(record.posteriors)],
            [truth[i] for i in range(1, k_done + 1)],
        )
    record.runtime_seconds = time.perf_counter() - t_start
    return record


def build_reference(config: ExperimentConfig, observations: np.ndarray, n_true: int,
                    rng: RngStream) -> List[EmpiricalMeasure]:
    """Large-particle SIR reference run on the same observations.

    ``rng`` is the simulation root: the reference particles start from the
    same initial distribution the filters use (re-deriving the truth start
    from the TRUTH stream when the ensembles are truth-centered).  Refuses
    high-dimensional systems, where a particle-filter reference of any
    affordable size is meaningless — use the RMSE metric.
    """
    if config.dim > 6:
        raise CapabilityError(
            f"particle-filter reference refused for dim {config.dim} > 6; evaluate with metric='rmse'"
        )
    process = build_process(config)
    obs_model = build_observation(config)
    if config.ensemble_init == "truth":
        center = rng.child(TRUTH).child(0).generator().standard_normal(config.dim)
    else:
        center = np.zeros(config.dim)
    ref_rng = rng.child(REFERENCE)
    members = center[None, :] + ref_rng.child(0).generator().standard_normal((n_true, config.dim))
    measures: List[EmpiricalMeasure] = []
    for k in range(1, observations.shape[0] + 1):
        members = process.sample_members(members, ref_rng.child(k, PROPAGATE))
        logw = obs_model.log_likelihood_members(observations[k - 1], members)
        logw = np.asarray(logw, dtype=float)
        finite = np.isfinite(logw)
        if not np.any(finite):
            raise DegeneracyError(f"reference run degenerated at step {k}")
        w = np.zeros_like(logw)
        shifted = logw[finite] - logw[finite].max()
        w[finite] = np.exp(shifted)
        w /= w.sum()
        idx = multinomial_resample(w, n_true, ref_rng.child(k, UPDATE))
        members = members[idx]
        measures.append(EmpiricalMeasure(members.copy()))
    return measures


def attach_w2(record: RunRecord, reference: Sequence[EmpiricalMeasure],
              sim_rng: RngStream, subsample: int) -> None:
    """Compute the time-averaged transport metric for a completed record.

    The per-step subsample stream depends only on (simulation, step), so all
    filters and ensemble sizes are scored against identical reference draws.
    """
    if record.failed:
        return
    k_done = len(record.posteriors)
    if k_done == 0:
        return
    targets = []
    for k in range(1, k_done + 1):
        ref = reference[k - 1]
        m = min(subsample, ref.n_points)
        targets.append(subsample_reference(ref, m, sim_rng.child(SUBSAMPLE, k)))
    record.metrics["w2"] = averaged_w2(
        [StateEnsemble(mem, step_index=i + 1) for i, mem in enumerate(record.posteriors)],
        targets,
    )


@dataclass
class CellResult:
    sim_index: int
    record: RunRecord


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[RunRecord]
    summary: dict


def worker_count() -> int:
    """Worker cap from DIFFUSIM_THREADS (default 1: strictly serial)."""
    raw = os.environ.get("DIFFUSIM_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"DIFFUSIM_THREADS must be an integer, got {raw!r}")
    return max(1, value)


def _simulation_root(config: ExperimentConfig, sim: int) -> RngStream:
    return RngStream(config.base_seed).child(SIM, sim)


def _run_one_simulation(config: ExperimentConfig, sim: int,
                        progress: Optional[Callable[[str], None]] = None) -> List[RunRecord]:
    sim_rng = _simulation_root(config, sim)
    truth = generate_truth(config, sim_rng.child(TRUTH))
    obs_model = build_observation(config)
    observations = realize_observations(truth, obs_model, sim_rng.child(OBS))
    reference = None
    if config.metric == "w2":
        reference = build_reference(config, observations, config.reference_n, sim_rng)
    records = []
    for n in config.ensemble_sizes:
        for spec in config.filters:
            record = run_filter(spec, config, truth, observations, n, sim_rng,
                                keep_predictions=config.store_ensembles)
            if reference is not None:
                attach_w2(record, reference, sim_rng, config.reference_subsample)
            records.append(record)
            if progress is not None:
                status = "failed" if record.failed else ", ".join(
                    f"{k}={v:.4f}" for k, v in sorted(record.metrics.items()))
                progress(f"sim {sim} {record.label}: {status}")
    return records


def summarize(config: ExperimentConfig, records: Sequence[RunRecord]) -> dict:
    """Aggregate per-(filter, N) metrics over simulations."""
    cells: dict = {}
    for record in records:
        key = (record.filter_kind, record.n)
        cells.setdefault(key, []).append(record)
    table = []
    for (kind, n), recs in sorted(cells.items(), key=lambda kv: (kv[0][1], FILTER_IDS[kv[0][0]])):
        recs = sorted(recs, key=lambda r: r.sim_index)
        entry = {
            "filter": kind,
            "n": n,
            "sims": len(recs),
            "failed": sum(r.failed for r in recs),
        }
        values = [r.metrics.get(config.metric) for r in recs]
        ok = [v for v in values if v is not None]
        entry["per_sim"] = {str(r.sim_index): (None if r.failed else r.metrics.get(config.metric))
                            for r in recs}
        if ok:
            entry["mean"] = float(np.mean(ok))
            entry["median"] = float(np.median(ok))
        ranges = [r.step_count_range() for r in recs]
        ranges = [r for r in ranges if r is not None]
        if ranges:
            entry["step_count_range"] = [int(min(r[0] for r in ranges)),
                                         int(max(r[1] for r in ranges))]
        table.append(entry)
    return {
        "metric": config.metric,
        "base_seed": config.base_seed,
        "sims": config.sims,
        "steps": config.steps,
        "system": config.system,
        "dim": config.dim,
        "cells": table,
    }


def run_experiment(config: ExperimentConfig,
                   progress: Optional[Callable[[str], None]] = None) -> ExperimentResult:
    """Run all (simulation, ensemble size, filter) cells of a config.

    Simulations fan out over a worker pool capped by DIFFUSIM_THREADS; each
    simulation owns disjoint streams and the results are assembled in
    simulation order, so summaries are identical at any worker count.
    """
    if not config.filters:
        raise ValueError("config lists no filters to run")
    sims = list(range(config.sims))
    workers = min(worker_count(), len(sims))
    if workers == 1:
        per_sim = [_run_one_simulation(config, s, progress) for s in sims]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sim = list(pool.map(lambda s: _run_one_simulation(config, s, progress), sims))
    records = [rec for chunk in per_sim for rec in chunk]
    return ExperimentResult(config=config, records=records, summary=summarize(config, records))


@dataclass
class GridSearchResult:
    table: List[dict]
    best: tuple
    metric: str


def grid_search(config: ExperimentConfig, n: int, system: Optional[str] = None,
                rng: Optional[RngStream] = None,
                progress: Optional[Callable[[str], None]] = None) -> GridSearchResult:
    """Mean metric over S simulations for every bandwidth pair in the grid.

    Only the diffusion filter is swept.  Truth, observations, and (for the
    transport metric) the reference run are computed once per simulation and
    shared across all grid cells.  Ties break toward larger sigma_x, then
    larger sigma_y — prefer the smoother score field.
    """
    if system is not None and system != config.system:
        raise ValueError(f"grid_search invoked for system {system!r} on a {config.system!r} config")
    if not config.sigma_x_grid or not config.sigma_y_grid:
        raise ValueError("bandwidth grids must be non-empty")
    base = next((f for f in config.filters if f.kind == "diffusion"),
                FilterSpec(kind="diffusion", sigma_x=0.1, sigma_y=0.25))

    sims = list(range(config.sims))
    contexts = []
    for s in sims:
        sim_rng = rng.child(SIM, s) if rng is not None else _simulation_root(config, s)
        truth = generate_truth(config, sim_rng.child(TRUTH))
        observations = realize_observations(truth, build_observation(config), sim_rng.child(OBS))
        reference = None
        if config.metric == "w2":
            reference = build_reference(config, observations, config.reference_n, sim_rng)
        contexts.append((sim_rng, truth, observations, reference))

    table = []
    for sigma_x in config.sigma_x_grid:
        for sigma_y in config.sigma_y_grid:
            spec = base.with_bandwidths(sigma_x, sigma_y)
            values = []
            failures = 0
            for sim_rng, truth, observations, reference in contexts:
                record = run_filter(spec, config, truth, observations, n, sim_rng)
                if reference is not None:
                    attach_w2(record, reference, sim_rng, config.reference_subsample)
                value = record.metrics.get(config.metric)
                if record.failed or value is None:
                    failures += 1
                else:
                    values.append(value)
            cell = {
                "sigma_x": sigma_x,
                "sigma_y": sigma_y,
                "metric": float(np.mean(values)) if values and not failures else float("inf"),
                "failed_sims": failures,
            }
            table.append(cell)
            if progress is not None:
                progress(f"grid ({sigma_x}, {sigma_y}): {cell['metric']:.4f}")

    best_cell = min(table, key=lambda c: (c["metric"], -c["sigma_x"], -c["sigma_y"]))
    return GridSearchResult(table=table, best=(best_cell["sigma_x"], best_cell["sigma_y"]),
                            metric=config.metric)
