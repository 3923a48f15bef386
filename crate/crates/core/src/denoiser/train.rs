use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CgGraph, Denoiser, DenoiserError, CODE_DIM};
use crate::diffusion::{diffusion_loss, q_sample, standard_normal, DiffusionConfig, NoiseSchedule};
use crate::tensor_nn::{adam_step, warmup_linear_decay, AdamConfig, AdamState, Tape, Tensor};

/// Clean latent codes `[nodes, 3]` with their conditioning graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSample {
    pub graph: CgGraph,
    pub z0: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub simple: f64,
    pub vlb: Option<f64>,
}

/// Uniform timesteps in `1..=total`.
pub fn sample_timesteps<R: Rng + ?Sized>(rng: &mut R, total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=total)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserTrainer {
    pub adam: AdamState,
    /// Steps completed.
    pub step: u64,
    /// Seed of the batch, timestep and noise streams.
    pub seed: u64,
}

impl DenoiserTrainer {
    pub fn new(model: &Denoiser, seed: u64) -> Self {
        Self {
            adam: AdamState::new(&model.store, AdamConfig::default()),
            step: 0,
            seed,
        }
    }

    /// One optimizer step on a batch drawn with replacement. The random
    /// stream depends only on the seed and the step number.
    pub fn run_step(
        &mut self,
        model: &mut Denoiser,
        samples: &[DenoiserSample],
        schedule: &NoiseSchedule,
        diffusion: &DiffusionConfig,
    ) -> Result<StepStats, DenoiserError> {
        if samples.is_empty() {
            return Err(DenoiserError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.step + 1);
        let picks: Vec<usize> = (0..model.config.batch)
            .map(|_| rng.random_range(0..samples.len()))
            .collect();
        let timesteps = sample_timesteps(&mut rng, schedule.len(), picks.len());
        let graphs: Vec<&CgGraph> = picks.iter().map(|&i| &samples[i].graph).collect();
        let batch = CgGraph::batch(&graphs);
        let n = batch.node_count();
        let mut z0 = Vec::with_capacity(n * CODE_DIM);
        let mut zt = Vec::with_capacity(n * CODE_DIM);
        let mut noise = Vec::with_capacity(n * CODE_DIM);
        let mut row_t = Vec::with_capacity(n);
        for (&i, &t) in picks.iter().zip(&timesteps) {
            let sample = &samples[i];
            let eps = Tensor::new(
                sample.z0.shape().to_vec(),
                (0..sample.z0.numel()).map(|_| standard_normal(&mut rng)).collect(),
            )?;
            let noisy = q_sample(schedule, &sample.z0, t, &eps)?;
            z0.extend_from_slice(sample.z0.data());
            zt.extend_from_slice(noisy.data());
            noise.extend_from_slice(eps.data());
            row_t.extend(std::iter::repeat_n(t, sample.z0.rows()));
        }
        let shape = vec![n, CODE_DIM];
        let z0 = Tensor::new(shape.clone(), z0)?;
        let noise = Tensor::new(shape.clone(), noise)?;
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(shape, zt)?);
        let (eps_hat, v) = model.forward(&mut tape, &batch, z, &timesteps)?;
        let loss = diffusion_loss(
            &mut tape,
            schedule,
            &row_t,
            &z0,
            &noise,
            eps_hat,
            v,
            diffusion.learned_variance,
            diffusion.lambda_vlb,
        )?;
        tape.backward(loss.total)?;
        let grads = tape.param_grads(&model.store);
        let c = &model.config;
        let lr = warmup_linear_decay(self.step, c.lr, c.warmup, c.total, c.lr_final);
        adam_step(&mut model.store, &grads, &mut self.adam, lr)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            lr,
            loss: tape.value(loss.total).item(),
            simple: tape.value(loss.simple).item(),
            vlb: loss.vlb.map(|v| tape.value(v).item()),
        })
    }
}

/// Trains for `config.total` steps from scratch, drawing batches, timesteps
/// and noise from the diffusion seed.
pub fn train_denoiser(
    model: &mut Denoiser,
    samples: &[DenoiserSample],
    schedule: &NoiseSchedule,
    diffusion: &DiffusionConfig,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Vec<StepStats>, DenoiserError> {
    if samples.is_empty() {
        return Err(DenoiserError::EmptyDataset);
    }
    let mut trainer = DenoiserTrainer::new(model, diffusion.seed);
    let mut history = Vec::new();
    while trainer.step < model.config.total {
        let stats = trainer.run_step(model, samples, schedule, diffusion)?;
        on_step(&stats);
        history.push(stats);
    }
    Ok(history)
}
