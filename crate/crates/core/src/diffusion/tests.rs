use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor_nn::Tape;

fn paper_schedule() -> NoiseSchedule {
    DiffusionConfig::default().schedule().unwrap()
}

fn scalar(x: f64) -> Tensor {
    Tensor::new(vec![1, 1], vec![x]).unwrap()
}

/// Sample mean and variance.
fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Asserts sample moments match a normal distribution within 3 standard errors.
fn assert_normal_moments(xs: &[f64], mean: f64, var: f64) {
    let n = xs.len() as f64;
    let (m, v) = moments(xs);
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    assert!((m - mean).abs() < 3.0 * se_mean, "mean {m} vs {mean} (se {se_mean})");
    assert!((v - var).abs() < 3.0 * se_var, "var {v} vs {var} (se {se_var})");
}

#[test]
fn linear_schedule_endpoints() {
    let s = paper_schedule();
    assert_eq!(s.len(), 1000);
    assert_eq!(s.beta(1), 1e-4);
    assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
    assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
    assert_eq!(s.posterior_variance(1), 0.0);
    for t in 2..=1000 {
        assert!(s.beta(t) > s.beta(t - 1));
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1) && s.alpha_bar(t) > 0.0);
        assert!((s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)).abs() < 1e-12);
        assert!(s.posterior_variance(t) <= s.beta(t));
    }
}

#[test]
fn linear_schedule_rejects_bad_ranges() {
    for (t, b1, bt) in [
        (0, 1e-4, 2e-2),
        (10, 0.0, 0.1),
        (10, 0.2, 0.1),
        (10, 0.1, 1.0),
        (10, 0.1, 0.1),
    ] {
        assert!(matches!(
            linear_schedule(t, b1, bt),
            Err(DiffusionError::InvalidRange(_))
        ));
    }
}

#[test]
fn config_json_uses_capital_t() {
    let c: DiffusionConfig = serde_json::from_str(r#"{"T": 50, "sample_steps": 10}"#).unwrap();
    assert_eq!((c.steps, c.sample_steps, c.lambda_vlb), (50, 10, 0.001));
    assert!(c.learned_variance);
    let bad = DiffusionConfig { sample_steps: 60, ..c };
    assert!(matches!(bad.validate(), Err(DiffusionError::InvalidStride { .. })));
}

#[test]
fn q_sample_special_cases() {
    let s = paper_schedule();
    let noise = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
    let zero = Tensor::zeros(&[1, 3]);
    let z = q_sample(&s, &zero, 17, &noise).unwrap();
    let k = (1.0 - s.alpha_bar(17)).sqrt();
    assert_eq!(z.data(), &noise.data().iter().map(|e| k * e).collect::<Vec<_>>()[..]);
    assert!(matches!(
        q_sample(&s, &zero, 0, &noise),
        Err(DiffusionError::InvalidTimestep { .. })
    ));
    assert!(matches!(
        q_sample(&s, &zero, 1001, &noise),
        Err(DiffusionError::InvalidTimestep { .. })
    ));
}

#[test]
fn q_sample_marginal_moments() {
    let s = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = 1.7;
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            q_sample(&s, &scalar(z0), 500, &scalar(standard_normal(&mut rng)))
                .unwrap()
                .item()
        })
        .collect();
    let a = s.alpha_bar(500);
    assert_normal_moments(&draws, a.sqrt() * z0, 1.0 - a);
}

#[test]
fn iterated_forward_matches_closed_form() {
    let s = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [1, 3, 10, 1000] {
        let z0 = -0.8;
        let draws: Vec<f64> = (0..10_000)
            .map(|_| iterated_forward(&s, &scalar(z0), t, &mut rng).unwrap().item())
            .collect();
        let a = s.alpha_bar(t);
        assert_normal_moments(&draws, a.sqrt() * z0, 1.0 - a);
    }
}

#[test]
fn posterior_mean_identities() {
    let s = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.random_range(1..=1000);
        let z0 = scalar(standard_normal(&mut rng) * 2.0);
        let eps = scalar(standard_normal(&mut rng));
        let zt = q_sample(&s, &z0, t, &eps).unwrap();
        let from_eps = posterior_mean(&s, &zt, &eps, t).unwrap().item();
        // Independent oracle: μ̃ written with the posterior coefficients.
        let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let oracle = ab_prev.sqrt() * s.beta(t) / (1.0 - ab) * z0.item()
            + s.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab) * zt.item();
        assert!((from_eps - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "t={t}");
        assert!((true_posterior_mean(&s, &z0, &zt, t).unwrap().item() - oracle).abs() < 1e-12);
    }
    let zt = scalar(0.9);
    let mu = posterior_mean(&s, &zt, &scalar(0.0), 40).unwrap().item();
    assert_eq!(mu, 0.9 / s.alpha(40).sqrt());
    // At t = 1 a perfect prediction recovers z0.
    let z0 = scalar(0.25);
    let eps = scalar(-1.1);
    let z1 = q_sample(&s, &z0, 1, &eps).unwrap();
    assert!((posterior_mean(&s, &z1, &eps, 1).unwrap().item() - 0.25).abs() < 1e-12);
}

use rand::Rng;

fn loss_value(
    s: &NoiseSchedule,
    ts: &[usize],
    z0: &Tensor,
    noise: &Tensor,
    eps_hat: &Tensor,
    v: &Tensor,
    learned: bool,
) -> (f64, f64, Option<f64>) {
    let mut tape = Tape::new();
    let e = tape.variable(eps_hat.clone());
    let vv = tape.variable(v.clone());
    let l = diffusion_loss(&mut tape, s, ts, z0, noise, e, vv, learned, 0.001).unwrap();
    (
        tape.value(l.total).item(),
        tape.value(l.simple).item(),
        l.vlb.map(|x| tape.value(x).item()),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| standard_normal(rng)).collect(),
    )
    .unwrap()
}

#[test]
fn loss_examples() {
    let s = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z0 = random_tensor(&mut rng, 4, 3);
    let noise = random_tensor(&mut rng, 4, 3);
    let ts = [1, 5, 500, 1000];
    let v = Tensor::full(&[4, 3], 0.3);
    let (total, simple, _) = loss_value(&s, &ts, &z0, &noise, &noise, &v, false);
    assert_eq!((total, simple), (0.0, 0.0));
    let shifted = Tensor::new(vec![4, 3], noise.data().iter().map(|e| e + 0.5).collect()).unwrap();
    let (_, simple, _) = loss_value(&s, &ts, &z0, &noise, &shifted, &v, true);
    assert!((simple - 0.25).abs() < 1e-12);
    // Perfect noise and v = 0 (σ² = β̃) make the KL vanish for t > 1.
    let (total, simple, vlb) = loss_value(
        &s,
        &[7, 20, 500, 1000],
        &z0,
        &noise,
        &noise,
        &Tensor::zeros(&[4, 3]),
        true,
    );
    assert_eq!(simple, 0.0);
    assert!(vlb.unwrap().abs() < 1e-12 && total.abs() < 1e-12);
}

#[test]
fn loss_shape_errors() {
    let s = paper_schedule();
    let z0 = Tensor::zeros(&[2, 3]);
    let mut tape = Tape::new();
    let e = tape.variable(Tensor::zeros(&[3, 3]));
    let v = tape.variable(Tensor::zeros(&[3, 3]));
    assert!(matches!(
        diffusion_loss(&mut tape, &s, &[1, 2], &z0, &z0, e, v, true, 0.001),
        Err(DiffusionError::ShapeMismatch(_))
    ));
    let e = tape.variable(Tensor::zeros(&[2, 3]));
    let v = tape.variable(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        diffusion_loss(&mut tape, &s, &[1], &z0, &z0, e, v, true, 0.001),
        Err(DiffusionError::ShapeMismatch(_))
    ));
}

#[test]
fn hybrid_loss_gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    let s = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..20 {
        let rows = 1 + instance % 4;
        let ts: Vec<usize> = (0..rows).map(|_| rng.random_range(1..=1000)).collect();
        let z0 = random_tensor(&mut rng, rows, 3);
        let noise = random_tensor(&mut rng, rows, 3);
        let eps_hat = random_tensor(&mut rng, rows, 3);
        let v = Tensor::new(
            vec![rows, 3],
            (0..rows * 3).map(|_| rng.random_range(0.05..0.95)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let e = tape.variable(eps_hat.clone());
        let vv = tape.variable(v.clone());
        let l = diffusion_loss(&mut tape, &s, &ts, &z0, &noise, e, vv, true, 0.001).unwrap();
        tape.backward(l.total).unwrap();
        let (ge, gv) = (tape.grad(e).unwrap().to_vec(), tape.grad(vv).unwrap().to_vec());
        for i in 0..rows * 3 {
            // ε̂ is a constant inside the VLB, so its numeric derivative is the
            // simple term's alone.
            let simple_at = |d: f64| {
                let mut x = eps_hat.clone();
                x.data_mut()[i] += d;
                loss_value(&s, &ts, &z0, &noise, &x, &v, true).1
            };
            let total_at = |d: f64| {
                let mut x = v.clone();
                x.data_mut()[i] += d;
                loss_value(&s, &ts, &z0, &noise, &eps_hat, &x, true).0
            };
            for (analytic, numeric) in [
                (ge[i], (simple_at(H) - simple_at(-H)) / (2.0 * H)),
                (gv[i], (total_at(H) - total_at(-H)) / (2.0 * H)),
            ] {
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "instance {instance}[{i}]: {analytic} vs {numeric}");
            }
        }
    }
}

proptest! {
    #[test]
    fn loss_is_non_negative(seed in 0u64..500, learned in any::<bool>()) {
        let s = paper_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<usize> = (0..3).map(|_| rng.random_range(1..=1000)).collect();
        let z0 = random_tensor(&mut rng, 3, 3);
        let noise = random_tensor(&mut rng, 3, 3);
        let eps_hat = random_tensor(&mut rng, 3, 3);
        let v = Tensor::new(vec![3, 3], (0..9).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let (total, simple, vlb) = loss_value(&s, &ts, &z0, &noise, &eps_hat, &v, learned);
        prop_assert!(total >= 0.0 && simple >= 0.0);
        if let Some(vlb) = vlb {
            prop_assert!(vlb >= -1e-12);
        }
    }

    #[test]
    fn strided_schedule_is_valid(total in 1usize..300, frac in 0.0f64..1.0) {
        let s = if total == 1 { linear_schedule(1, 1e-4, 2e-2) } else { linear_schedule(total, 1e-4, 0.05) }.unwrap();
        let steps = 1 + ((total - 1) as f64 * frac) as usize;
        let (ts, strided) = s.strided(steps).unwrap();
        prop_assert_eq!(ts.len(), steps);
        prop_assert_eq!(*ts.last().unwrap(), total);
        if steps > 1 {
            prop_assert_eq!(ts[0], 1);
        }
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        for (i, &t) in ts.iter().enumerate() {
            let rel = (strided.alpha_bar(i + 1) - s.alpha_bar(t)).abs() / s.alpha_bar(t);
            prop_assert!(rel < 1e-10);
        }
    }
}

#[test]
fn stride_one_reproduces_schedule_exactly() {
    let s = paper_schedule();
    let (ts, strided) = s.strided(1000).unwrap();
    assert_eq!(ts, (1..=1000).collect::<Vec<_>>());
    assert_eq!(strided, s);
}

#[test]
fn strided_edge_cases() {
    let s = paper_schedule();
    let (ts, one) = s.strided(1).unwrap();
    assert_eq!(ts, vec![1000]);
    assert!((one.alpha_bar(1) - s.alpha_bar(1000)).abs() < 1e-15);
    let (ts, _) = s.strided(100).unwrap();
    assert_eq!((ts.len(), ts[0], ts[1], ts[99]), (100, 1, 11, 1000));
    for bad in [0, 1001] {
        assert!(matches!(s.strided(bad), Err(DiffusionError::InvalidStride { .. })));
    }
}

fn zero_model(z: &Tensor, _t: usize) -> Result<DenoiserOutput, DiffusionError> {
    Ok(DenoiserOutput {
        eps_hat: Tensor::zeros(z.shape()),
        v: Tensor::full(z.shape(), 0.5),
    })
}

#[test]
fn final_step_is_deterministic_and_fixed_variance_uses_beta() {
    let s = paper_schedule();
    let z = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]).unwrap();
    let out = zero_model(&z, 1).unwrap();
    let a = p_sample_step(&s, &z, 1, &out, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = p_sample_step(&s, &z, 1, &out, true, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = 300;
    let v_far = DenoiserOutput {
        eps_hat: Tensor::zeros(&[1, 1]),
        v: Tensor::full(&[1, 1], 0.0),
    };
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            p_sample_step(&s, &scalar(0.0), t, &v_far, false, &mut rng)
                .unwrap()
                .item()
        })
        .collect();
    assert_normal_moments(&draws, 0.0, s.beta(t));
}

#[test]
fn sampling_counts_denoiser_calls() {
    let s = paper_schedule();
    let mut calls = Vec::new();
    let mut model = |z: &Tensor, t: usize| {
        calls.push(t);
        zero_model(z, t)
    };
    let z = sample(&mut model, &s, &[4, 3], 100, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(calls.len(), 100);
    assert_eq!((calls[0], calls[99]), (1000, 1));
    assert!(z.data().iter().all(|x| x.is_finite()));
    calls.clear();
    let mut model = |z: &Tensor, t: usize| {
        calls.push(t);
        zero_model(z, t)
    };
    let z = sample(&mut model, &s, &[4, 3], 1, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(calls, vec![1000]);
    assert!(z.data().iter().all(|x| x.is_finite()));
}

#[test]
fn full_stride_matches_full_sampler_bitwise() {
    let s = linear_schedule(200, 1e-4, 2e-2).unwrap();
    // A model that depends on z and t so any divergence would propagate.
    let mut model = |z: &Tensor, t: usize| {
        Ok(DenoiserOutput {
            eps_hat: Tensor::new(
                z.shape().to_vec(),
                z.data().iter().map(|x| 0.3 * x + t as f64 * 1e-3).collect(),
            )?,
            v: Tensor::full(z.shape(), 0.25),
        })
    };
    let a = sample(&mut model, &s, &[5, 3], 200, true, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = sample_full(&mut model, &s, &[5, 3], true, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
}

/// Optimal noise prediction for data `N(m, 1)`: z_t is `N(√ᾱ m, 1)`, so
/// E[ε | z_t] = √(1−ᾱ)(z_t − √ᾱ m).
fn gaussian_oracle(
    s: &NoiseSchedule,
    m: f64,
) -> impl FnMut(&Tensor, usize) -> Result<DenoiserOutput, DiffusionError> + '_ {
    move |z: &Tensor, t: usize| {
        let a = s.alpha_bar(t);
        let eps = z.data().iter().map(|x| (1.0 - a).sqrt() * (x - a.sqrt() * m)).collect();
        Ok(DenoiserOutput {
            eps_hat: Tensor::new(z.shape().to_vec(), eps)?,
            v: Tensor::full(z.shape(), 1.0),
        })
    }
}

#[test]
fn perfect_denoiser_recovers_gaussian_data() {
    let s = linear_schedule(100, 1e-4, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = gaussian_oracle(&s, 2.0);
    let z = sample(&mut model, &s, &[10_000, 1], 100, false, &mut rng).unwrap();
    // The deterministic last step drops β_1 of the variance.
    assert_normal_moments(z.data(), 2.0, 1.0 - s.beta(1));
}
