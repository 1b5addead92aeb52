//! Few-photon reconstruction of second-order photon correlation signals.
//!
//! A short, photon-starved coincidence histogram is fitted with a closed-form
//! ansatz by maximizing a Poisson likelihood (optionally with an L1 prior on
//! the amplitudes). The fitted noiseless curve can then be scaled by an
//! integration-time factor and resampled to predict longer acquisitions.

pub mod bench;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod optim;
pub mod sampler;

pub use error::{Error, Result};
pub use grid::DelayGrid;
pub use models::{
    default_truncation, eval_pulsed, eval_thermal, evaluate, BackgroundMode, ModelSpec, ModelVariant, ParamDef,
    PulsedEmitterParams, PulsedEmitterSpec, ThermalSumParams, ThermalSumSpec,
};
pub use objective::{
    laplace_logprior, loglik_grad_y, lsq_objective, map_objective, poisson_loglik, FitProblem, Histogram, Lambda,
    Objective, ObjectiveConfig, ObjectiveKind,
};
pub use optim::{
    brent_line_min, levenberg_marquardt, multistart_least_squares, multistart_maximize, powell_minimize, FitResult,
    GuessStrategy, MultiStartPlan, OptimizerSettings,
};
pub use sampler::{generate_synthetic, sample_poisson, scale_signal, SamplerConfig, SyntheticHistogram};
pub use metrics::{nrmse, MetricsReport};
