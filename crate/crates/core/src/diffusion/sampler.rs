use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::mean_from_eps;
use super::{check_same_shape, DiffusionError, NoiseSchedule};
use crate::tensor_nn::Tensor;

/// Noise prediction and variance interpolation coefficient in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps_hat: Tensor,
    pub v: Tensor,
}

/// A noise-prediction model evaluated at the original-schedule timestep `t`.
/// Conditioning is held by the implementor.
pub trait Denoise {
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<DenoiserOutput, DiffusionError>;
}

impl<F> Denoise for F
where
    F: FnMut(&Tensor, usize) -> Result<DenoiserOutput, DiffusionError>,
{
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<DenoiserOutput, DiffusionError> {
        self(z_t, t)
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One reverse step `z_t → z_{t−1}`. No noise is added at `t = 1`; the
/// variance is `β_t` when `learned_variance` is false.
pub fn p_sample_step<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: usize,
    output: &DenoiserOutput,
    learned_variance: bool,
    rng: &mut R,
) -> Result<Tensor, DiffusionError> {
    schedule.check_t(t)?;
    check_same_shape(z_t, &output.eps_hat, "eps_hat")?;
    check_same_shape(z_t, &output.v, "v")?;
    let data = z_t
        .data()
        .iter()
        .zip(output.eps_hat.data())
        .zip(output.v.data())
        .map(|((&z, &e), &v)| {
            let mean = mean_from_eps(schedule, t, z, e);
            if t == 1 {
                return mean;
            }
            let sigma = if learned_variance {
                (0.5 * schedule.log_variance(t, v)).exp()
            } else {
                schedule.beta(t).sqrt()
            };
            mean + sigma * standard_normal(rng)
        })
        .collect();
    Ok(Tensor::new(z_t.shape().to_vec(), data)?)
}

fn run_chain<R: Rng + ?Sized>(
    denoiser: &mut dyn Denoise,
    schedule: &NoiseSchedule,
    timesteps: &[usize],
    shape: &[usize],
    learned_variance: bool,
    rng: &mut R,
) -> Result<Tensor, DiffusionError> {
    let n = shape.iter().product();
    let mut z = Tensor::new(shape.to_vec(), (0..n).map(|_| standard_normal(rng)).collect())?;
    for i in (1..=timesteps.len()).rev() {
        let output = denoiser.denoise(&z, timesteps[i - 1])?;
        z = p_sample_step(schedule, &z, i, &output, learned_variance, rng)?;
    }
    Ok(z)
}

/// Reverse process from `z_T ~ N(0, I)` over `num_steps` evenly strided
/// timesteps, calling the denoiser once per step.
pub fn sample<R: Rng + ?Sized>(
    denoiser: &mut dyn Denoise,
    schedule: &NoiseSchedule,
    shape: &[usize],
    num_steps: usize,
    learned_variance: bool,
    rng: &mut R,
) -> Result<Tensor, DiffusionError> {
    let (timesteps, strided) = schedule.strided(num_steps)?;
    run_chain(denoiser, &strided, &timesteps, shape, learned_variance, rng)
}

/// Reverse process over every timestep of the original schedule.
pub fn sample_full<R: Rng + ?Sized>(
    denoiser: &mut dyn Denoise,
    schedule: &NoiseSchedule,
    shape: &[usize],
    learned_variance: bool,
    rng: &mut R,
) -> Result<Tensor, DiffusionError> {
    let timesteps: Vec<usize> = (1..=schedule.len()).collect();
    run_chain(denoiser, schedule, &timesteps, shape, learned_variance, rng)
}
