//! Denoising diffusion over per-residue latent codes: noise schedule, forward
//! process, hybrid training objective and the strided reverse sampler.

mod loss;
mod sampler;
mod schedule;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_nn::{Tensor, TensorError};

pub use loss::{diffusion_loss, DiffusionLoss};
pub use sampler::{p_sample_step, sample, sample_full, standard_normal, Denoise, DenoiserOutput};
pub use schedule::{iterated_forward, linear_schedule, posterior_mean, q_sample, true_posterior_mean, NoiseSchedule};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("cannot sample with {steps} steps from a {total}-step schedule")]
    InvalidStride { steps: usize, total: usize },
    #[error("timestep {t} outside 1..={total}")]
    InvalidTimestep { t: usize, total: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("denoiser failed: {0}")]
    Model(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sample_steps: usize,
    pub learned_variance: bool,
    pub lambda_vlb: f64,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            sample_steps: 100,
            learned_variance: true,
            lambda_vlb: 0.001,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        linear_schedule(self.steps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.schedule()?;
        if self.sample_steps == 0 || self.sample_steps > self.steps {
            return Err(DiffusionError::InvalidStride {
                steps: self.sample_steps,
                total: self.steps,
            });
        }
        if !(self.lambda_vlb >= 0.0 && self.lambda_vlb.is_finite()) {
            return Err(DiffusionError::InvalidRange(format!("lambda_vlb {}", self.lambda_vlb)));
        }
        Ok(())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<(), DiffusionError> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
