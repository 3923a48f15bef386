//! Conditional noise-prediction network over the Cα graph.

mod graph;
mod network;
mod train;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{Denoise, DenoiserOutput, DiffusionError};
use crate::tensor_nn::{Checkpoint, ParamStore, Tape, Tensor, TensorError, Var};
use network::Network;

pub use graph::{build_cg_graph, CgGraph, MAX_SEQUENCE_OFFSET, NODE_FEATURES, OFFSET_FEATURES};
pub use train::{sample_timesteps, train_denoiser, DenoiserSample, DenoiserTrainer, StepStats};

/// Width of the per-residue latent code being denoised.
pub const CODE_DIM: usize = 3;
pub const TIME_EMBEDDING_DIM: usize = 128;
const PREFIX: &str = "denoiser.";

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid denoiser config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub k_neighbors: usize,
    pub hidden: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub rbf_bins: usize,
    pub rbf_max: f64,
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub warmup: u64,
    pub total: u64,
    pub lr_final: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 30,
            hidden: 128,
            layers_enc: 3,
            layers_dec: 3,
            rbf_bins: 16,
            rbf_max: 20.0,
            seed: 0,
            lr: 3e-4,
            batch: 128,
            warmup: 20_000,
            total: 300_000,
            lr_final: 1e-5,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |what: &str| Err(DenoiserError::Config(what.to_string()));
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be positive");
        }
        if self.hidden == 0 || self.batch == 0 || self.rbf_bins == 0 {
            return bad("hidden, batch and rbf_bins must be positive");
        }
        if !(self.rbf_max > 0.0) {
            return bad("rbf_max must be positive");
        }
        if !(self.lr >= 0.0 && self.lr_final >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    network: Network,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let network = Network::new(&mut store, &config, &mut rng);
        Ok(Self { config, store, network })
    }

    pub fn graph(&self, cg: &crate::protein_io::CgStructure) -> CgGraph {
        build_cg_graph(cg, self.config.k_neighbors, self.config.rbf_bins, self.config.rbf_max)
    }

    /// Records the network on `tape`; `timesteps` has one entry per batched
    /// graph. Returns `(eps_hat, v)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &CgGraph,
        z_t: Var,
        timesteps: &[usize],
    ) -> Result<(Var, Var), DenoiserError> {
        self.network.forward(tape, &self.store, graph, z_t, timesteps)
    }

    /// Evaluates the network without recording gradients.
    pub fn denoise(&self, graph: &CgGraph, z_t: &Tensor, timesteps: &[usize]) -> Result<DenoiserOutput, DenoiserError> {
        let mut tape = Tape::new();
        let z = tape.constant(z_t.clone());
        let (eps, v) = self.forward(&mut tape, graph, z, timesteps)?;
        Ok(DenoiserOutput {
            eps_hat: tape.value(eps).clone(),
            v: tape.value(v).clone(),
        })
    }

    /// Binds the network to one conditioning graph for sampling.
    pub fn conditioned<'a>(&'a self, graph: &'a CgGraph) -> ConditionedDenoiser<'a> {
        ConditionedDenoiser {
            model: self,
            graph,
            calls: 0,
        }
    }

    pub fn add_to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.add_store(PREFIX, &self.store);
    }

    pub fn from_checkpoint(config: DenoiserConfig, ckpt: &Checkpoint) -> Result<Self, DenoiserError> {
        let mut model = Self::new(config)?;
        ckpt.restore_store(PREFIX, &mut model.store)?;
        Ok(model)
    }
}

/// A denoiser with fixed conditioning that counts its evaluations.
pub struct ConditionedDenoiser<'a> {
    model: &'a Denoiser,
    graph: &'a CgGraph,
    pub calls: usize,
}

impl Denoise for ConditionedDenoiser<'_> {
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<DenoiserOutput, DiffusionError> {
        self.calls += 1;
        let timesteps = vec![t; self.graph.graph_count];
        self.model
            .denoise(self.graph, z_t, &timesteps)
            .map_err(|e| DiffusionError::Model(e.to_string()))
    }
}
