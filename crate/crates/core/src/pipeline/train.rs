use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prepare::{PreparedDataset, PreparedEntry};
use super::{create_dir, read_config, read_text, resolve, PipelineError, RunLog};
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserSample, DenoiserTrainer, CODE_DIM};
use crate::diffusion::DiffusionConfig;
use crate::protein_io::{coarse_grain, parse_pdb, AllAtomStructure, Split};
use crate::tensor_nn::{read_checkpoint, write_checkpoint, AdamConfig, AdamState, Checkpoint, Tensor};
use crate::vqvae::{prepare_input, VqVae, VqvaeConfig, VqvaeSample, VqvaeTrainer};

pub const VQVAE_CHECKPOINT: &str = "vqvae.ckpt";
pub const VQVAE_LOG: &str = "vqvae_log.jsonl";
pub const DIFFUSION_CHECKPOINT: &str = "diffusion.ckpt";
pub const DIFFUSION_LOG: &str = "diffusion_log.jsonl";
pub const DIFFUSION_KIND: &str = "diffusion";

fn default_log_every() -> u64 {
    1
}

/// `train-vqvae` settings. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqvaeRunConfig {
    /// Directory written by `prepare`.
    pub data: PathBuf,
    pub out_dir: PathBuf,
    /// Epochs between log lines and checkpoints.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Overrides `vqvae.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub vqvae: VqvaeConfig,
}

/// `train-diffusion` settings. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionRunConfig {
    pub data: PathBuf,
    pub out_dir: PathBuf,
    /// Steps between log lines and checkpoints.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Overrides both `diffusion.seed` and `denoiser.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
}

impl VqvaeRunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = read_config(path)?;
        config.data = resolve(path, &config.data);
        config.out_dir = resolve(path, &config.out_dir);
        if let Some(seed) = config.seed {
            config.vqvae.seed = seed;
        }
        config.vqvae.validate()?;
        if config.log_every == 0 {
            return Err(PipelineError::Config("log_every must be positive".into()));
        }
        Ok(config)
    }
}

impl DiffusionRunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = read_config(path)?;
        config.data = resolve(path, &config.data);
        config.out_dir = resolve(path, &config.out_dir);
        if let Some(seed) = config.seed {
            config.diffusion.seed = seed;
            config.denoiser.seed = seed;
        }
        config.diffusion.validate()?;
        config.denoiser.validate()?;
        if config.log_every == 0 {
            return Err(PipelineError::Config("log_every must be positive".into()));
        }
        Ok(config)
    }
}

pub(crate) fn load_structure(dir: &Path, entry: &PreparedEntry) -> Result<AllAtomStructure, PipelineError> {
    Ok(parse_pdb(&read_text(&dir.join(&entry.structure))?, true)?)
}

fn load_split(dataset: &PreparedDataset, dir: &Path, split: Split) -> Result<Vec<AllAtomStructure>, PipelineError> {
    dataset.split(split).map(|e| load_structure(dir, e)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct VqvaeTrainerMeta {
    epoch: usize,
    best: Option<f64>,
    stale: usize,
    adam_step: u64,
}

fn vqvae_checkpoint(model: &VqVae, trainer: &VqvaeTrainer) -> Checkpoint {
    let mut ckpt = model.to_checkpoint();
    ckpt.meta["trainer"] = serde_json::to_value(VqvaeTrainerMeta {
        epoch: trainer.epoch,
        best: trainer.best.is_finite().then_some(trainer.best),
        stale: trainer.stale,
        adam_step: trainer.adam.step,
    })
    .expect("trainer meta serializes");
    ckpt.tensors.extend(trainer.adam.to_tensors(&model.store));
    ckpt
}

fn lookup(ckpt: &Checkpoint) -> impl Fn(&str) -> Option<Tensor> + '_ {
    |name| ckpt.get(name).cloned()
}

/// Loads a VQ-VAE checkpoint, mapping a missing file to `MissingCheckpoint`.
pub fn load_vqvae(path: &Path) -> Result<(VqVae, Checkpoint), PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingCheckpoint(path.to_path_buf()));
    }
    let ckpt = read_checkpoint(path)?;
    Ok((VqVae::from_checkpoint(&ckpt)?, ckpt))
}

fn same_except(a: &VqvaeConfig, b: &VqvaeConfig) -> bool {
    let strip = |c: &VqvaeConfig| VqvaeConfig {
        max_epochs: 0,
        patience: 0,
        ..c.clone()
    };
    strip(a) == strip(b)
}

/// Trains (or resumes) the VQ-VAE on the prepared training split, with the
/// validation split monitored for early stopping.
pub fn train_vqvae(config_path: &Path) -> Result<PathBuf, PipelineError> {
    train_vqvae_for(config_path, usize::MAX)
}

/// Like [`train_vqvae`] but runs at most `max_epochs` epochs in this call.
/// A later call resumes from the checkpoint.
pub fn train_vqvae_for(config_path: &Path, max_epochs: usize) -> Result<PathBuf, PipelineError> {
    let config = VqvaeRunConfig::load(config_path)?;
    let dataset = PreparedDataset::load(&config.data)?;
    create_dir(&config.out_dir)?;
    let ckpt_path = config.out_dir.join(VQVAE_CHECKPOINT);

    let (mut model, mut trainer) = if ckpt_path.is_file() {
        let (mut model, ckpt) = load_vqvae(&ckpt_path)?;
        if !same_except(&model.config, &config.vqvae) {
            return Err(PipelineError::Config(format!(
                "{} was trained with a different model configuration",
                ckpt_path.display()
            )));
        }
        model.config = config.vqvae.clone();
        let meta: VqvaeTrainerMeta = serde_json::from_value(ckpt.meta["trainer"].clone())
            .map_err(|e| PipelineError::Data(format!("{}: trainer state: {e}", ckpt_path.display())))?;
        let adam = AdamState::from_tensors(&model.store, AdamConfig::default(), meta.adam_step, lookup(&ckpt))?;
        let trainer = VqvaeTrainer {
            adam,
            epoch: meta.epoch,
            best: meta.best.unwrap_or(f64::INFINITY),
            stale: meta.stale,
        };
        log::info!("resuming VQ-VAE training at epoch {}", trainer.epoch);
        (model, trainer)
    } else {
        let model = VqVae::new(config.vqvae.clone())?;
        let trainer = VqvaeTrainer::new(&model);
        (model, trainer)
    };

    let to_samples = |structures: Vec<AllAtomStructure>, model: &VqVae| {
        structures
            .iter()
            .map(|s| VqvaeSample::from_structure(s, model))
            .collect::<Result<Vec<_>, _>>()
    };
    let train = to_samples(load_split(&dataset, &config.data, Split::Train)?, &model)?;
    let val = to_samples(load_split(&dataset, &config.data, Split::Val)?, &model)?;
    if train.is_empty() {
        return Err(PipelineError::Data("training split is empty".into()));
    }

    let mut log = RunLog::open(&config.out_dir.join(VQVAE_LOG))?;
    let stop = trainer.epoch.saturating_add(max_epochs);
    while !trainer.finished(&model) && trainer.epoch < stop {
        let stats = trainer.run_epoch(&mut model, &train, &val)?;
        let last = trainer.finished(&model) || trainer.epoch == stop;
        if (stats.epoch as u64).is_multiple_of(config.log_every) || stats.epoch == 1 || last {
            log::info!(
                "epoch {} loss {:.6} recon {:.6} codes {}",
                stats.epoch,
                stats.loss,
                stats.recon,
                stats.codes_used
            );
            log.append(stats.epoch as u64, &stats)?;
            write_checkpoint(&ckpt_path, &vqvae_checkpoint(&model, &trainer))?;
        }
    }
    write_checkpoint(&ckpt_path, &vqvae_checkpoint(&model, &trainer))?;
    Ok(ckpt_path)
}

/// Per-dimension mean and standard deviation of the training codes.
/// Constant dimensions get unit scale.
pub fn latent_statistics(codes: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0usize;
    let mut sum = [0.0; CODE_DIM];
    for c in codes {
        for r in 0..c.rows() {
            for (s, x) in sum.iter_mut().zip(c.row(r)) {
                *s += x;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut var = [0.0; CODE_DIM];
    for c in codes {
        for r in 0..c.rows() {
            for ((v, x), m) in var.iter_mut().zip(c.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-8 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Layout compatibility data recorded in the diffusion checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqvaeDims {
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
}

impl VqvaeDims {
    pub fn of(config: &VqvaeConfig) -> Self {
        Self {
            latent_dim: config.latent_dim,
            codebook_size: config.codebook_size,
            code_dim: config.code_dim,
        }
    }
}

/// Metadata header of a diffusion checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionMeta {
    pub kind: String,
    pub diffusion: DiffusionConfig,
    pub denoiser: DenoiserConfig,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
    pub vqvae: VqvaeDims,
    pub step: u64,
}

fn diffusion_checkpoint(meta: &DiffusionMeta, model: &Denoiser, trainer: &DenoiserTrainer) -> Checkpoint {
    let mut ckpt = Checkpoint::new(serde_json::to_value(meta).expect("meta serializes"));
    model.add_to_checkpoint(&mut ckpt);
    ckpt.tensors.extend(trainer.adam.to_tensors(&model.store));
    ckpt
}

pub fn read_diffusion_meta(ckpt: &Checkpoint, path: &Path) -> Result<DiffusionMeta, PipelineError> {
    if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some(DIFFUSION_KIND) {
        return Err(PipelineError::Data(format!(
            "{} is not a diffusion checkpoint",
            path.display()
        )));
    }
    let meta: DiffusionMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    if meta.latent_mean.len() != CODE_DIM || meta.latent_std.len() != CODE_DIM {
        return Err(PipelineError::DimensionMismatch(format!(
            "latent statistics must have {CODE_DIM} entries"
        )));
    }
    Ok(meta)
}

/// Encodes and quantizes each structure with the frozen VQ-VAE, returning the
/// chosen codebook entries.
fn quantized_codes(model: &VqVae, structures: &[AllAtomStructure]) -> Result<Vec<Tensor>, PipelineError> {
    structures
        .iter()
        .map(|s| {
            let input = prepare_input(s, &model.config)?;
            let latent = model.encode(&input)?;
            Ok(model.quantize(&latent)?.codes)
        })
        .collect()
}

fn normalize(codes: &Tensor, mean: &[f64], std: &[f64]) -> Tensor {
    let mut out = codes.clone();
    for row in out.data_mut().chunks_mut(CODE_DIM) {
        for ((x, m), s) in row.iter_mut().zip(mean).zip(std) {
            *x = (*x - m) / s;
        }
    }
    out
}

/// Trains (or resumes) the latent denoiser on codes of the frozen VQ-VAE.
pub fn train_diffusion(config_path: &Path, vqvae_path: &Path) -> Result<PathBuf, PipelineError> {
    train_diffusion_for(config_path, vqvae_path, u64::MAX)
}

/// Like [`train_diffusion`] but runs at most `max_steps` steps in this call.
pub fn train_diffusion_for(config_path: &Path, vqvae_path: &Path, max_steps: u64) -> Result<PathBuf, PipelineError> {
    let config = DiffusionRunConfig::load(config_path)?;
    let (vqvae, _) = load_vqvae(vqvae_path)?;
    if vqvae.config.code_dim != CODE_DIM {
        return Err(PipelineError::DimensionMismatch(format!(
            "VQ-VAE code_dim {} but the denoiser models {CODE_DIM}",
            vqvae.config.code_dim
        )));
    }
    let dataset = PreparedDataset::load(&config.data)?;
    let structures = load_split(&dataset, &config.data, Split::Train)?;
    if structures.is_empty() {
        return Err(PipelineError::Data("training split is empty".into()));
    }
    let codes = quantized_codes(&vqvae, &structures)?;
    let (latent_mean, latent_std) = latent_statistics(&codes);
    create_dir(&config.out_dir)?;
    let ckpt_path = config.out_dir.join(DIFFUSION_CHECKPOINT);

    let mut meta = DiffusionMeta {
        kind: DIFFUSION_KIND.into(),
        diffusion: config.diffusion.clone(),
        denoiser: config.denoiser.clone(),
        latent_mean,
        latent_std,
        vqvae: VqvaeDims::of(&vqvae.config),
        step: 0,
    };
    let (mut model, mut trainer) = if ckpt_path.is_file() {
        let ckpt = read_checkpoint(&ckpt_path)?;
        let saved = read_diffusion_meta(&ckpt, &ckpt_path)?;
        let comparable = |m: &DiffusionMeta| DiffusionMeta {
            step: 0,
            denoiser: DenoiserConfig {
                total: 0,
                ..m.denoiser.clone()
            },
            ..m.clone()
        };
        if comparable(&saved) != comparable(&meta) {
            return Err(PipelineError::Config(format!(
                "{} was trained with different settings or a different VQ-VAE",
                ckpt_path.display()
            )));
        }
        let model = Denoiser::from_checkpoint(config.denoiser.clone(), &ckpt)?;
        let mut trainer = DenoiserTrainer::new(&model, config.diffusion.seed);
        trainer.adam = AdamState::from_tensors(&model.store, AdamConfig::default(), saved.step, lookup(&ckpt))?;
        trainer.step = saved.step;
        log::info!("resuming diffusion training at step {}", trainer.step);
        (model, trainer)
    } else {
        let model = Denoiser::new(config.denoiser.clone())?;
        let trainer = DenoiserTrainer::new(&model, config.diffusion.seed);
        (model, trainer)
    };

    let samples: Vec<DenoiserSample> = structures
        .iter()
        .zip(&codes)
        .map(|(s, c)| {
            Ok(DenoiserSample {
                graph: model.graph(&coarse_grain(s)?),
                z0: normalize(c, &meta.latent_mean, &meta.latent_std),
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let schedule = config.diffusion.schedule()?;
    let mut log = RunLog::open(&config.out_dir.join(DIFFUSION_LOG))?;
    let total = model.config.total;
    let stop = trainer.step.saturating_add(max_steps).min(total);
    while trainer.step < stop {
        let stats = trainer.run_step(&mut model, &samples, &schedule, &config.diffusion)?;
        if stats.step % config.log_every == 0 || stats.step == 1 || stats.step == stop {
            log::info!("step {} loss {:.6} lr {:.3e}", stats.step, stats.loss, stats.lr);
            log.append(stats.step, &stats)?;
            meta.step = trainer.step;
            write_checkpoint(&ckpt_path, &diffusion_checkpoint(&meta, &model, &trainer))?;
        }
    }
    meta.step = trainer.step;
    write_checkpoint(&ckpt_path, &diffusion_checkpoint(&meta, &model, &trainer))?;
    Ok(ckpt_path)
}
