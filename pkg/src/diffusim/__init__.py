"""diffusim: ensemble data assimilation with a training-free diffusion filter.

The analysis step samples from the conditional density implied by a kernel
density estimate over paired (state, synthetic observation) draws, by
integrating a reverse-time diffusion ODE whose score is available in closed
form.  Stochastic ensemble Kalman and sequential importance resampling
baselines, chaotic benchmark systems, and Wasserstein-2/RMSE evaluation
tooling round out the package.
"""

from .baselines import (
    EnKFConfig,
    SIRConfig,
    effective_sample_size,
    enkf_update,
    kalman_gain,
    multinomial_resample,
    sir_update,
)
from .diffusion import (
    AffineNormalizer,
    DiffusionConfig,
    ScoreField,
    diffusion_update,
    fit_normalizer,
    reverse_sample,
    sigma_schedule,
    transform_observation,
)
from .dynamics import (
    ArctanObservation,
    Lorenz63Params,
    Lorenz96Params,
    NoisyIntegrator,
    PropagatorConfig,
    ThirdCoordinateObservation,
    integrate,
    lorenz63_process,
    lorenz63_rhs,
    lorenz96_process,
    lorenz96_rhs,
)
from .errors import (
    BlowUpError,
    CapabilityError,
    DegeneracyError,
    DiffusimError,
    ObservationError,
    PropagationError,
    SolverError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    FilterSpec,
    build_reference,
    config_from_dict,
    config_to_dict,
    default_config,
    generate_truth,
    grid_search,
    initialize_ensemble,
    realize_observations,
    run_experiment,
    run_filter,
)
from .kernels import IsotropicGaussian, convolved_sigma
from .metrics import (
    EmpiricalMeasure,
    TransportPlan,
    averaged_rmse,
    averaged_w2,
    density_grid,
    subsample_reference,
    transport_plan,
    wasserstein2,
)
from .records import (
    RunRecord,
    StepRecord,
    load_run_summary,
    load_steps_csv,
    read_ensemble,
    write_ensemble,
    write_run_record,
)
from .ssm import (
    PairedEnsemble,
    RngStream,
    StateEnsemble,
    gaussian_vector,
    propagate_ensemble,
    synthesize_observations,
)
from .transport import TransportResult, solve_transport

__version__ = "0.1.0"

__all__ = [
    "AffineNormalizer",
    "ArctanObservation",
    "BlowUpError",
    "CapabilityError",
    "DegeneracyError",
    "DiffusimError",
    "DiffusionConfig",
    "EmpiricalMeasure",
    "EnKFConfig",
    "ExperimentConfig",
    "ExperimentResult",
    "FilterSpec",
    "IsotropicGaussian",
    "Lorenz63Params",
    "Lorenz96Params",
    "NoisyIntegrator",
    "ObservationError",
    "PairedEnsemble",
    "PropagationError",
    "PropagatorConfig",
    "RngStream",
    "RunRecord",
    "SIRConfig",
    "ScoreField",
    "SolverError",
    "StateEnsemble",
    "StepRecord",
    "ThirdCoordinateObservation",
    "TransportPlan",
    "TransportResult",
    "averaged_rmse",
    "averaged_w2",
    "build_reference",
    "config_from_dict",
    "config_to_dict",
    "convolved_sigma",
    "default_config",
    "density_grid",
    "diffusion_update",
    "effective_sample_size",
    "enkf_update",
    "fit_normalizer",
    "gaussian_vector",
    "generate_truth",
    "grid_search",
    "initialize_ensemble",
    "integrate",
    "kalman_gain",
    "load_run_summary",
    "load_steps_csv",
    "lorenz63_process",
    "lorenz63_rhs",
    "lorenz96_process",
    "lorenz96_rhs",
    "multinomial_resample",
    "propagate_ensemble",
    "read_ensemble",
    "realize_observations",
    "reverse_sample",
    "run_experiment",
    "run_filter",
    "sigma_schedule",
    "sir_update",
    "solve_transport",
    "subsample_reference",
    "synthesize_observations",
    "transform_observation",
    "transport_plan",
    "wasserstein2",
    "write_ensemble",
    "write_run_record",
]
