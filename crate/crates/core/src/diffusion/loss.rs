use super::schedule::{mean_from_eps, posterior_mean_from_z0};
use super::{check_same_shape, DiffusionError, NoiseSchedule};
use crate::tensor_nn::{Tape, Tensor, Var};

/// Loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionLoss {
    pub total: Var,
    pub simple: Var,
    /// Present only with a learned variance.
    pub vlb: Option<Var>,
}

/// Hybrid objective `mean‖ε − ε̂‖² + λ·L_vlb`.
///
/// Rows of `z0` may carry different timesteps (`timesteps[row]`). The
/// variational term is the mean per-element KL between the true posterior and
/// the reverse Gaussian with log-variance `v·log β_t + (1−v)·log β̃_t`; it sees
/// `ε̂` only as a constant. With `learned_variance == false` the loss is the
/// simple term alone and `v` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    tape: &mut Tape,
    schedule: &NoiseSchedule,
    timesteps: &[usize],
    z0: &Tensor,
    noise: &Tensor,
    eps_hat: Var,
    v: Var,
    learned_variance: bool,
    lambda_vlb: f64,
) -> Result<DiffusionLoss, DiffusionError> {
    check_same_shape(z0, noise, "diffusion_loss noise")?;
    if tape.shape(eps_hat) != z0.shape() || tape.shape(v) != z0.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "model output {:?}/{:?} vs latents {:?}",
            tape.shape(eps_hat),
            tape.shape(v),
            z0.shape()
        )));
    }
    let rows = z0.shape()[0];
    if timesteps.len() != rows {
        return Err(DiffusionError::ShapeMismatch(format!(
            "{} timesteps for {rows} rows",
            timesteps.len()
        )));
    }
    for &t in timesteps {
        schedule.check_t(t)?;
    }
    let target = tape.constant(noise.clone());
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.square(diff);
    let simple = tape.mean(sq);
    if !learned_variance {
        return Ok(DiffusionLoss {
            total: simple,
            simple,
            vlb: None,
        });
    }

    let cols = if rows == 0 { 0 } else { z0.numel() / rows };
    let eps_value = tape.value(eps_hat).clone();
    let n = z0.numel();
    let (mut span, mut log_tilde, mut tilde, mut mean_sq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (k, ((&x0, &e), &e_hat)) in z0.data().iter().zip(noise.data()).zip(eps_value.data()).enumerate() {
        let t = timesteps[k / cols];
        let a = schedule.alpha_bar(t);
        let xt = a.sqrt() * x0 + (1.0 - a).sqrt() * e;
        let lt = schedule.posterior_log_variance_clipped(t);
        span[k] = schedule.beta(t).ln() - lt;
        log_tilde[k] = lt;
        tilde[k] = lt.exp();
        let diff = posterior_mean_from_z0(schedule, t, x0, xt) - mean_from_eps(schedule, t, xt, e_hat);
        mean_sq[k] = diff * diff;
    }
    let shape = z0.shape().to_vec();
    let mut constant = |data: Vec<f64>| tape.constant(Tensor::new(shape.clone(), data).expect("matching shape"));
    let (span, log_tilde, tilde, mean_sq) = (constant(span), constant(log_tilde), constant(tilde), constant(mean_sq));
    // KL(N(μ̃, β̃) ‖ N(μ, σ²)) = ½(log σ² − log β̃ − 1 + (β̃ + (μ̃ − μ)²)/σ²).
    let offset = tape.mul(v, span)?;
    let log_sigma = tape.add(offset, log_tilde)?;
    let neg = tape.scale(log_sigma, -1.0);
    let inv_sigma = tape.exp(neg);
    let numer = tape.add(tilde, mean_sq)?;
    let ratio = tape.mul(numer, inv_sigma)?;
    let kl = tape.sub(log_sigma, log_tilde)?;
    let kl = tape.add(kl, ratio)?;
    let kl = tape.add_scalar(kl, -1.0);
    let kl = tape.scale(kl, 0.5);
    let vlb = tape.mean(kl);
    let weighted = tape.scale(vlb, lambda_vlb);
    let total = tape.add(simple, weighted)?;
    Ok(DiffusionLoss {
        total,
        simple,
        vlb: Some(vlb),
    })
}
