use rand::Rng;

use super::{check_same_shape, sampler::standard_normal, DiffusionError};
use crate::tensor_nn::Tensor;

/// Per-step noise schedule. Arrays are indexed by `t - 1` for `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variance β̃; zero at `t = 1`.
    pub posterior_variance: Vec<f64>,
}

/// Linear β from `beta_1` to `beta_t`, endpoints included.
pub fn linear_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidRange("zero steps".into()));
    }
    if !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
        return Err(DiffusionError::InvalidRange(format!(
            "need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_t}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_1]
    } else {
        (0..steps)
            .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() {
            return Err(DiffusionError::InvalidRange("empty schedule".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::InvalidRange(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_variance = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            posterior_variance,
        })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.len() {
            return Err(DiffusionError::InvalidTimestep { t, total: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variance[t - 1]
    }

    /// log β̃_t, using β̃_2 at `t = 1` where β̃ vanishes.
    pub fn posterior_log_variance_clipped(&self, t: usize) -> f64 {
        if t == 1 && self.len() > 1 {
            self.posterior_variance[1].ln()
        } else if t == 1 {
            self.beta[0].ln()
        } else {
            self.posterior_variance[t - 1].ln()
        }
    }

    /// log σ² for a variance interpolation coefficient `v`.
    pub fn log_variance(&self, t: usize, v: f64) -> f64 {
        v * self.beta(t).ln() + (1.0 - v) * self.posterior_log_variance_clipped(t)
    }

    /// Evenly spaced timesteps `1 = τ_1 < … < τ_S = T` (just `[T]` for one
    /// step) and the schedule re-expressed on them through ᾱ ratios. Steps one
    /// apart keep their original β so a full-length stride is bit-exact.
    pub fn strided(&self, steps: usize) -> Result<(Vec<usize>, NoiseSchedule), DiffusionError> {
        let total = self.len();
        if steps == 0 || steps > total {
            return Err(DiffusionError::InvalidStride { steps, total });
        }
        let timesteps: Vec<usize> = if steps == 1 {
            vec![total]
        } else {
            (0..steps)
                .map(|i| (1.0 + (total - 1) as f64 * i as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        let mut prev = 0;
        let betas = timesteps
            .iter()
            .map(|&t| {
                let b = if t - prev == 1 {
                    self.beta(t)
                } else {
                    1.0 - self.alpha_bar(t) / self.alpha_bar(prev)
                };
                prev = t;
                b
            })
            .collect();
        Ok((timesteps, NoiseSchedule::from_betas(betas)?))
    }
}

/// `√ᾱ_t z0 + √(1 − ᾱ_t) ε`.
pub fn q_sample(schedule: &NoiseSchedule, z0: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor, DiffusionError> {
    schedule.check_t(t)?;
    check_same_shape(z0, noise, "q_sample")?;
    let a = schedule.alpha_bar(t);
    let (s0, s1) = (a.sqrt(), (1.0 - a).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(z, e)| s0 * z + s1 * e)
        .collect();
    Ok(Tensor::new(z0.shape().to_vec(), data)?)
}

/// Applies the one-step kernel `t` times.
pub fn iterated_forward<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    z0: &Tensor,
    t: usize,
    rng: &mut R,
) -> Result<Tensor, DiffusionError> {
    schedule.check_t(t)?;
    let mut z = z0.clone();
    for s in 1..=t {
        let (a, b) = (schedule.alpha(s).sqrt(), schedule.beta(s).sqrt());
        for x in z.data_mut() {
            *x = a * *x + b * standard_normal(rng);
        }
    }
    Ok(z)
}

/// Reverse-process mean from a noise prediction.
pub fn posterior_mean(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
) -> Result<Tensor, DiffusionError> {
    schedule.check_t(t)?;
    check_same_shape(z_t, eps_hat, "posterior_mean")?;
    let data = z_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&z, &e)| mean_from_eps(schedule, t, z, e))
        .collect();
    Ok(Tensor::new(z_t.shape().to_vec(), data)?)
}

pub(super) fn mean_from_eps(schedule: &NoiseSchedule, t: usize, z: f64, eps: f64) -> f64 {
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    (z - coef * eps) / schedule.alpha(t).sqrt()
}

/// Mean of q(z_{t−1} | z_t, z0).
pub fn true_posterior_mean(
    schedule: &NoiseSchedule,
    z0: &Tensor,
    z_t: &Tensor,
    t: usize,
) -> Result<Tensor, DiffusionError> {
    schedule.check_t(t)?;
    check_same_shape(z0, z_t, "true_posterior_mean")?;
    let data = z0
        .data()
        .iter()
        .zip(z_t.data())
        .map(|(&x0, &xt)| posterior_mean_from_z0(schedule, t, x0, xt))
        .collect();
    Ok(Tensor::new(z0.shape().to_vec(), data)?)
}

pub(super) fn posterior_mean_from_z0(schedule: &NoiseSchedule, t: usize, x0: f64, xt: f64) -> f64 {
    let prev = schedule.alpha_bar(t - 1);
    let denom = 1.0 - schedule.alpha_bar(t);
    let c0 = prev.sqrt() * schedule.beta(t) / denom;
    let ct = schedule.alpha(t).sqrt() * (1.0 - prev) / denom;
    c0 * x0 + ct * xt
}
