use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::train::{load_vqvae, read_diffusion_meta, DiffusionMeta, VqvaeDims};
use super::{create_dir, io_err, read_text, write_file, PipelineError};
use crate::denoiser::{Denoiser, CODE_DIM};
use crate::diffusion::{sample, NoiseSchedule};
use crate::geometry::{internal_to_cartesian, TopologyTable};
use crate::protein_io::{coarse_grain, parse_pdb, write_pdb, AllAtomStructure, CgStructure};
use crate::tensor_nn::{read_checkpoint, Tensor};
use crate::vqvae::{quantize_rows, VqVae};

/// Frozen models and latent normalization needed for sampling.
pub struct LoadedModels {
    pub vqvae: VqVae,
    pub denoiser: Denoiser,
    pub meta: DiffusionMeta,
    pub schedule: NoiseSchedule,
}

impl LoadedModels {
    /// Loads both checkpoints and checks that the diffusion model was trained
    /// on this VQ-VAE's code layout.
    pub fn load(vqvae_path: &Path, diffusion_path: &Path) -> Result<Self, PipelineError> {
        let (vqvae, _) = load_vqvae(vqvae_path)?;
        if !diffusion_path.is_file() {
            return Err(PipelineError::MissingCheckpoint(diffusion_path.to_path_buf()));
        }
        let ckpt = read_checkpoint(diffusion_path)?;
        let meta = read_diffusion_meta(&ckpt, diffusion_path)?;
        let dims = VqvaeDims::of(&vqvae.config);
        if meta.vqvae != dims || dims.code_dim != CODE_DIM {
            return Err(PipelineError::DimensionMismatch(format!(
                "diffusion checkpoint expects {:?}, VQ-VAE has {:?}",
                meta.vqvae, dims
            )));
        }
        let denoiser = Denoiser::from_checkpoint(meta.denoiser.clone(), &ckpt)?;
        let schedule = meta.diffusion.schedule()?;
        Ok(Self {
            vqvae,
            denoiser,
            meta,
            schedule,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackmapOptions {
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    /// Snap sampled codes to their nearest codebook entries before decoding.
    pub snap: bool,
}

/// One all-atom sample for a CG structure. The result depends only on the
/// models, the input and `seed`.
pub fn sample_structure(
    models: &LoadedModels,
    cg: &CgStructure,
    steps: usize,
    seed: u64,
    snap: bool,
) -> Result<AllAtomStructure, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = models.denoiser.graph(cg);
    let mut conditioned = models.denoiser.conditioned(&graph);
    let z = sample(
        &mut conditioned,
        &models.schedule,
        &[cg.len(), CODE_DIM],
        steps,
        models.meta.diffusion.learned_variance,
        &mut rng,
    )?;
    let mut codes = z.into_data();
    for row in codes.chunks_mut(CODE_DIM) {
        for ((x, m), s) in row
            .iter_mut()
            .zip(&models.meta.latent_mean)
            .zip(&models.meta.latent_std)
        {
            *x = *x * s + m;
        }
    }
    let codes = Tensor::new(vec![cg.len(), CODE_DIM], codes)?;
    let assignment = if snap {
        let indices = quantize_rows(&codes, models.vqvae.codebook_entries());
        models.vqvae.assignment_from_indices(indices)?
    } else {
        models.vqvae.assignment_from_codes(codes)?
    };
    let ic = models.vqvae.decode(&assignment, &cg.residue_types())?;
    Ok(internal_to_cartesian(&ic, cg, TopologyTable::standard())?)
}

/// Input PDB files: `path` itself, or the `.pdb` files of a directory in
/// name order.
pub fn pdb_inputs(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err(path))? {
        let p = entry.map_err(io_err(path))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "pdb") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// File stem with any `.cg` suffix removed, so `x.cg.pdb` pairs with `x.pdb`.
pub fn structure_stem(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_suffix(".cg").map(str::to_string).unwrap_or(stem)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub input: PathBuf,
    pub sample: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BackmapSummary {
    pub written: Vec<PathBuf>,
    pub failures: Vec<SampleFailure>,
}

/// Writes `{stem}_sNN.pdb` for each input and sample index, seeding sample
/// `i` with `seed + i`. Failed samples are reported, not fatal.
pub fn backmap(
    input: &Path,
    vqvae_path: &Path,
    diffusion_path: &Path,
    options: BackmapOptions,
    out: &Path,
) -> Result<BackmapSummary, PipelineError> {
    if options.samples == 0 {
        return Err(PipelineError::Config("samples must be positive".into()));
    }
    if options.steps == 0 {
        return Err(PipelineError::Config("steps must be positive".into()));
    }
    let models = LoadedModels::load(vqvae_path, diffusion_path)?;
    if options.steps > models.schedule.len() {
        return Err(PipelineError::Config(format!(
            "steps {} exceeds the trained schedule length {}",
            options.steps,
            models.schedule.len()
        )));
    }
    let inputs = pdb_inputs(input)?;
    if inputs.is_empty() {
        return Err(PipelineError::Data(format!("no .pdb files in {}", input.display())));
    }
    create_dir(out)?;
    let mut summary = BackmapSummary::default();
    for path in inputs {
        let cg = coarse_grain(&parse_pdb(&read_text(&path)?, true)?)?;
        let stem = structure_stem(&path);
        for i in 0..options.samples {
            let seed = options.seed.wrapping_add(i as u64);
            match sample_structure(&models, &cg, options.steps, seed, options.snap) {
                Ok(structure) => {
                    let file = out.join(format!("{stem}_s{i:02}.pdb"));
                    write_file(&file, write_pdb(&structure)?.as_bytes())?;
                    log::info!("wrote {}", file.display());
                    summary.written.push(file);
                }
                Err(e) => {
                    log::error!("{} sample {i}: {e}", path.display());
                    summary.failures.push(SampleFailure {
                        input: path.clone(),
                        sample: i,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    Ok(summary)
}
