use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prepare_input, EncoderInput, Quantizer, VqVae, VqvaeError};
use crate::geometry::{cartesian_to_internal, InternalCoordinates, TopologyTable};
use crate::protein_io::{coarse_grain, AllAtomStructure};
use crate::tensor_nn::{adam_step, AdamConfig, AdamState, Gradients, Tape};

/// One training structure: encoder input and its target internal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeSample {
    pub input: EncoderInput,
    pub target: InternalCoordinates,
}

impl VqvaeSample {
    pub fn from_structure(structure: &AllAtomStructure, model: &VqVae) -> Result<Self, VqvaeError> {
        let cg = coarse_grain(structure).map_err(|e| VqvaeError::Config(e.to_string()))?;
        let target = cartesian_to_internal(structure, &cg, TopologyTable::standard())?;
        Ok(Self {
            input: prepare_input(structure, &model.config)?,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commit: f64,
    pub val_loss: Option<f64>,
    /// Distinct codes used this epoch.
    pub codes_used: usize,
    /// Sum of the usage histogram, equal to the number of quantized residues.
    pub usage_total: usize,
    pub dead_codes_reseeded: usize,
}

/// Optimizer and early-stopping state, kept separate from the model so a run
/// can be resumed.
#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeTrainer {
    pub adam: AdamState,
    /// Epochs completed.
    pub epoch: usize,
    pub best: f64,
    pub stale: usize,
}

impl VqvaeTrainer {
    pub fn new(model: &VqVae) -> Self {
        Self {
            adam: AdamState::new(&model.store, AdamConfig::default()),
            epoch: 0,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Whether training should stop before the next epoch.
    pub fn finished(&self, model: &VqVae) -> bool {
        let patience = model.config.patience;
        self.epoch >= model.config.max_epochs || (patience > 0 && self.stale >= patience)
    }

    /// Runs one epoch of mini-batch updates. Dead codes are re-seeded only if
    /// another epoch follows.
    pub fn run_epoch(
        &mut self,
        model: &mut VqVae,
        train: &[VqvaeSample],
        val: &[VqvaeSample],
    ) -> Result<EpochStats, VqvaeError> {
        if train.is_empty() {
            return Err(VqvaeError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut usage = vec![0usize; model.codebook.size];
        let mut projected_rows: Vec<Vec<f64>> = Vec::new();
        let mut sums = [0.0; 4];
        for batch in order.chunks(model.config.batch_size) {
            let mut grads = Gradients::zeros_like(&model.store);
            for &i in batch {
                let sample = &train[i];
                let mut tape = Tape::new();
                let pass = model.forward(&mut tape, &sample.input, Quantizer::StraightThrough)?;
                let terms = model.loss(&mut tape, &pass, &sample.target, &sample.input.residue_types)?;
                for (acc, v) in sums
                    .iter_mut()
                    .zip([terms.total, terms.recon, terms.codebook, terms.commit])
                {
                    *acc += tape.value(v).item();
                }
                for &k in &pass.indices {
                    usage[k] += 1;
                }
                let p = tape.value(pass.projected);
                projected_rows.extend((0..p.rows()).map(|r| p.row(r).to_vec()));
                tape.backward(terms.total)?;
                grads.accumulate(&tape.param_grads(&model.store));
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.store, &grads, &mut self.adam, model.config.lr)?;
        }
        self.epoch += 1;

        let val_loss = if val.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for sample in val {
                total += evaluate_loss(model, sample)?;
            }
            Some(total / val.len() as f64)
        };
        let n = train.len() as f64;
        let monitored = val_loss.unwrap_or(sums[0] / n);
        if monitored < self.best {
            self.best = monitored;
            self.stale = 0;
        } else {
            self.stale += 1;
        }

        let mut reseeded = 0;
        if model.config.reseed_dead_codes && !self.finished(model) && !projected_rows.is_empty() {
            let entries_id = model.codebook.entries;
            let dim = model.codebook.code_dim;
            for (k, &count) in usage.iter().enumerate() {
                if count > 0 {
                    continue;
                }
                let source = &projected_rows[rng.random_range(0..projected_rows.len())];
                model.store.get_mut(entries_id).data_mut()[k * dim..(k + 1) * dim].copy_from_slice(source);
                for buf in [&mut self.adam.m[entries_id.0], &mut self.adam.v[entries_id.0]] {
                    buf[k * dim..(k + 1) * dim].fill(0.0);
                }
                reseeded += 1;
            }
        }

        Ok(EpochStats {
            epoch: self.epoch,
            loss: sums[0] / n,
            recon: sums[1] / n,
            codebook: sums[2] / n,
            commit: sums[3] / n,
            val_loss,
            codes_used: usage.iter().filter(|&&c| c > 0).count(),
            usage_total: usage.iter().sum(),
            dead_codes_reseeded: reseeded,
        })
    }
}

/// Total loss of one sample without updating anything.
pub fn evaluate_loss(model: &VqVae, sample: &VqvaeSample) -> Result<f64, VqvaeError> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &sample.input, Quantizer::StraightThrough)?;
    let terms = model.loss(&mut tape, &pass, &sample.target, &sample.input.residue_types)?;
    Ok(tape.value(terms.total).item())
}

/// Trains until `max_epochs` or until the monitored loss (validation if any,
/// else training) has not improved for `patience` epochs.
pub fn train_vqvae(
    model: &mut VqVae,
    train: &[VqvaeSample],
    val: &[VqvaeSample],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>, VqvaeError> {
    if train.is_empty() {
        return Err(VqvaeError::EmptyDataset);
    }
    let mut trainer = VqvaeTrainer::new(model);
    let mut history = Vec::new();
    while !trainer.finished(model) {
        let stats = trainer.run_epoch(model, train, val)?;
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
