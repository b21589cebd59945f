//! Adaptive independent Metropolis-Hastings with a Gaussian-mixture
//! proposal learned online from the chain, a fixed-proposal baseline, and
//! the diagnostics and experiment harness around them.

pub mod baseline;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gaussmix;
pub mod sampler;
pub mod targets;

pub use baseline::{baseline_step, BaselineSampler};
pub use error::{Error, Result};
pub use gaussmix::{Covariance, GaussianComponent, MixtureProposal};
pub use sampler::{
    acceptance_probability, assign_component, blackbox_init, AdaptiveState, AgmSampler, BoxRegion,
    ChainRecord, InitMeans, InitialState, SamplerConfig,
};
pub use targets::{Target, TargetSpec};
pub use experiment::{run_experiment, ExperimentConfig, SamplerKind};
