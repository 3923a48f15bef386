//! End-to-end commands: dataset preparation, two-stage training, backmapping
//! and evaluation. Every artifact is written atomically and depends only on
//! its inputs and seeds.

mod backmap;
mod evaluate;
mod prepare;
mod train;


use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::denoiser::DenoiserError;
use crate::diffusion::DiffusionError;
use crate::geometry::GeometryError;
use crate::metrics::MetricError;
use crate::protein_io::{AllAtomStructure, AtomRecord, CgStructure, Element, StructureError};
use crate::tensor_nn::TensorError;
use crate::vqvae::VqvaeError;

pub use backmap::{
    backmap, pdb_inputs, sample_structure, structure_stem, BackmapOptions, BackmapSummary, LoadedModels, SampleFailure,
};
pub use evaluate::{evaluate, pair_files, EvaluationReport, SamplePair};
pub use prepare::{prepare, PrepareSummary, PreparedDataset, PreparedEntry, Rejection, PREPARED_MANIFEST, REJECTIONS};
pub use train::{
    latent_statistics, load_vqvae, train_diffusion, train_diffusion_for, train_vqvae, train_vqvae_for, DiffusionMeta,
    DiffusionRunConfig, VqvaeDims, VqvaeRunConfig, DIFFUSION_CHECKPOINT, DIFFUSION_KIND, DIFFUSION_LOG,
    VQVAE_CHECKPOINT, VQVAE_LOG,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("incompatible checkpoints: {0}")]
    DimensionMismatch(String),
    #[error("unpaired files: {}", .0.join(", "))]
    UnpairedFiles(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Vqvae(#[from] VqvaeError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl PipelineError {
    /// 1 for usage and configuration problems, 2 for bad data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingCheckpoint(_)
            | PipelineError::DimensionMismatch(_)
            | PipelineError::Vqvae(VqvaeError::Config(_))
            | PipelineError::Denoiser(DenoiserError::Config(_))
            | PipelineError::Diffusion(DiffusionError::InvalidRange(_))
            | PipelineError::Diffusion(DiffusionError::InvalidStride { .. }) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    crate::tensor_nn::write_atomic(path, bytes).map_err(|e| match e {
        TensorError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => PipelineError::Tensor(other),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Data(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Parses a JSON config, resolving `path`-like fields later against the
/// config's directory.
pub(crate) fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Selects the `frame`-th MODEL block (0-based) of a PDB text. Files without
/// MODEL records have a single frame.
pub fn select_model(text: &str, frame: u64) -> Option<String> {
    if !text.lines().any(|l| l.starts_with("MODEL")) {
        return (frame == 0).then(|| text.to_string());
    }
    let mut index = 0u64;
    let mut inside = false;
    let mut out = String::new();
    for line in text.lines() {
        if line.starts_with("MODEL") {
            inside = index == frame;
            continue;
        }
        if line.starts_with("ENDMDL") {
            if inside {
                return Some(out);
            }
            index += 1;
            continue;
        }
        if inside {
            out.push_str(line);
            out.push('\n');
        }
    }
    inside.then_some(out)
}

/// Cα-only structure carrying the beads' residue identities and segments.
pub fn cg_to_structure(cg: &CgStructure) -> Result<AllAtomStructure, PipelineError> {
    let atoms = cg
        .beads
        .iter()
        .enumerate()
        .map(|(i, b)| AtomRecord {
            serial: i as u32 + 1,
            atom_name: "CA".into(),
            element: Element::C,
            residue_name: b.residue_type,
            residue_index: b.seq_num,
            chain_id: b.chain_id,
            position: b.position,
        })
        .collect();
    let segments: Vec<usize> = cg.beads.iter().map(|b| b.segment).collect();
    Ok(AllAtomStructure::from_atoms(atoms, Some(&segments))?)
}

/// Append-only JSON-lines log of `{step, wall_ms, losses}`.
pub struct RunLog {
    out: BufWriter<File>,
    path: PathBuf,
    start: Instant,
}

impl RunLog {
    /// Opens `path` for appending, so resumed runs extend the same log.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            start: Instant::now(),
        })
    }

    pub fn append<T: Serialize>(&mut self, step: u64, losses: &T) -> Result<(), PipelineError> {
        let line = serde_json::json!({
            "step": step,
            "wall_ms": self.start.elapsed().as_millis() as u64,
            "losses": losses,
        });
        writeln!(self.out, "{line}").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }
}
