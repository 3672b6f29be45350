//! Noisy Stein variational gradient descent.
//!
//! Interacting-particle sampler for `π ∝ exp(−F)`: each iteration applies the
//! kernelized SVGD drift plus a Langevin step (`−λγ∇F + √(2λγ)ξ`). With
//! `λ = 0` it is plain deterministic SVGD. Alongside the sampler the crate
//! provides the diagnostics used to study it: DAMV, kernel Stein
//! discrepancy, Wasserstein-2 estimators, Gaussian-proxy KL/Fisher, and a
//! large-population reference simulation of the mean-field flow.

pub mod config;
pub mod contracts;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod oracle;
pub mod plot;
pub mod pool;
pub mod rng;
pub mod schedule;
mod notation;
pub mod targets;
pub mod transport;

pub use config::{validate_config, InitSpec, Retention, RunConfig, ValidatedConfig};
pub use dynamics::{
    averaged_measure, drift, interpolate, noisy_svgd_step, run, RunOutput, Snapshot, Trajectory,
};
pub use ensemble::Ensemble;
pub use error::{Error, Result};
pub use kernels::{imq_kernel, median_heuristic_bandwidth, rbf_kernel, Kernel, KernelSpec};
pub use metrics::{damv, gaussian_proxy_kl, ksd_squared, MetricRecord};
pub use oracle::{contraction_check, lyapunov_check, mv_reference_flow, FlowConfig};
pub use pool::WeightedPool;
pub use rng::RngStream;
pub use schedule::StepSchedule;
pub use targets::{anisotropic_gaussian, gaussian_mixture, standard_gaussian, Target, TargetSpec};
pub use transport::{sliced_w2, w2_exact, w2_to_target};
