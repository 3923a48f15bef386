//! Vector-quantized autoencoder over per-residue latents.
//!
//! The encoder runs message passing on the all-atom graph and mean-pools atom
//! states into one latent per residue. Latents are quantized in a
//! low-dimensional projection against a learned codebook, projected back up and
//! decoded, together with the residue type, into internal coordinates.

mod codebook;
mod decoder;
mod encoder;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, IcSlot, InternalCoordinates, TopologyTable, SLOTS_PER_RESIDUE};
use crate::protein_io::{AllAtomStructure, ResidueType};
use crate::tensor_nn::{Checkpoint, ParamStore, Tape, Tensor, TensorError, Var};

pub use codebook::{nearest_code, quantize_rows, Codebook};
pub use decoder::{Decoder, IcPrediction};
pub use encoder::{Encoder, EncoderInput, NODE_FEATURES};
pub use train::{evaluate_loss, train_vqvae, EpochStats, VqvaeSample, VqvaeTrainer};

#[derive(Debug, thiserror::Error)]
pub enum VqvaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("residue {residue}: atom {atom:?} is not part of the {residue_type} template")]
    UnknownAtom {
        residue: usize,
        residue_type: ResidueType,
        atom: String,
    },
    #[error("slot mask mismatch at residue {residue}, slot {slot}")]
    MaskMismatch { residue: usize, slot: usize },
    #[error("training split is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Model and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqvaeConfig {
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub beta_commit: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without improvement of the monitored loss before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    /// Non-bonded atom pairs closer than this (Å) become encoder edges.
    pub encoder_cutoff: f64,
    pub rbf_bins: usize,
    pub decoder_hidden: usize,
    pub reseed_dead_codes: bool,
}

impl Default for VqvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 36,
            codebook_size: 4096,
            code_dim: 3,
            beta_commit: 0.25,
            lr: 1e-3,
            batch_size: 4,
            seed: 0,
            patience: 20,
            max_epochs: 500,
            encoder_hidden: 64,
            encoder_layers: 3,
            encoder_cutoff: 5.0,
            rbf_bins: 16,
            decoder_hidden: 128,
            reseed_dead_codes: true,
        }
    }
}

impl VqvaeConfig {
    pub fn validate(&self) -> Result<(), VqvaeError> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("codebook_size", self.codebook_size),
            ("code_dim", self.code_dim),
            ("batch_size", self.batch_size),
            ("encoder_hidden", self.encoder_hidden),
            ("rbf_bins", self.rbf_bins),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(VqvaeError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.encoder_cutoff > 0.0) {
            return Err(VqvaeError::Config("encoder_cutoff must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.beta_commit >= 0.0) {
            return Err(VqvaeError::Config("lr and beta_commit must be non-negative".into()));
        }
        Ok(())
    }
}

/// How the decoder sees the quantized code during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantizer {
    /// Decoder input takes the code's value; gradients pass to the
    /// pre-quantization projection unchanged.
    StraightThrough,
    /// Decoder input is the unquantized projection itself.
    Identity,
}

/// Per-residue quantization result.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeAssignment {
    pub indices: Vec<usize>,
    /// `[residues, code_dim]` selected codebook entries.
    pub codes: Tensor,
    /// `[residues, latent_dim]` up-projected codes.
    pub up: Tensor,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub latent: Var,
    /// Down-projected latent, `[residues, code_dim]`.
    pub projected: Var,
    /// Selected codebook rows (gradient reaches the codebook).
    pub codes: Var,
    pub indices: Vec<usize>,
    pub prediction: IcPrediction,
}

/// Loss terms of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub recon: Var,
    pub codebook: Var,
    pub commit: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqVae {
    pub config: VqvaeConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub codebook: Codebook,
    pub decoder: Decoder,
}

pub const CHECKPOINT_KIND: &str = "vqvae";
const PREFIX: &str = "vqvae.";

impl VqVae {
    pub fn new(config: VqvaeConfig) -> Result<Self, VqvaeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let codebook = Codebook::new(&mut store, &config, &mut rng);
        let decoder = Decoder::new(&mut store, &config, &mut rng);
        Ok(Self {
            config,
            store,
            encoder,
            codebook,
            decoder,
        })
    }

    /// Encoder latents, `[residues, latent_dim]`.
    pub fn encode(&self, input: &EncoderInput) -> Result<Tensor, VqvaeError> {
        let mut tape = Tape::new();
        let latent = self.encoder.forward(&mut tape, &self.store, input)?;
        Ok(tape.value(latent).clone())
    }

    /// Quantizes latents against the codebook.
    pub fn quantize(&self, latent: &Tensor) -> Result<CodeAssignment, VqvaeError> {
        let mut tape = Tape::new();
        let x = tape.constant(latent.clone());
        let p = self.codebook.down.forward(&mut tape, &self.store, x)?;
        let indices = quantize_rows(tape.value(p), self.store.get(self.codebook.entries));
        self.assignment_from_indices(indices)
    }

    /// Builds the assignment for given code indices.
    pub fn assignment_from_indices(&self, indices: Vec<usize>) -> Result<CodeAssignment, VqvaeError> {
        let mut tape = Tape::new();
        let entries = tape.param(&self.store, self.codebook.entries);
        let codes = tape.gather_rows(entries, &indices)?;
        let up = self.codebook.up.forward(&mut tape, &self.store, codes)?;
        Ok(CodeAssignment {
            indices,
            codes: tape.value(codes).clone(),
            up: tape.value(up).clone(),
        })
    }

    /// Assignment for arbitrary points in code space, up-projected as given.
    /// `indices` still records the nearest entries.
    pub fn assignment_from_codes(&self, codes: Tensor) -> Result<CodeAssignment, VqvaeError> {
        let indices = quantize_rows(&codes, self.store.get(self.codebook.entries));
        let mut tape = Tape::new();
        let c = tape.constant(codes.clone());
        let up = self.codebook.up.forward(&mut tape, &self.store, c)?;
        Ok(CodeAssignment {
            indices,
            codes,
            up: tape.value(up).clone(),
        })
    }

    /// Decoded internal coordinates. Slots outside a residue's template are
    /// masked.
    pub fn decode(
        &self,
        assignment: &CodeAssignment,
        residue_types: &[ResidueType],
    ) -> Result<InternalCoordinates, VqvaeError> {
        let mut tape = Tape::new();
        let up = tape.constant(assignment.up.clone());
        let pred = self.decoder.forward(&mut tape, &self.store, up, residue_types)?;
        Ok(pred.to_internal(&tape, residue_types))
    }

    /// Encode, quantize and decode in one go.
    pub fn reconstruct(&self, input: &EncoderInput) -> Result<(CodeAssignment, InternalCoordinates), VqvaeError> {
        let latent = self.encode(input)?;
        let assignment = self.quantize(&latent)?;
        let ic = self.decode(&assignment, &input.residue_types)?;
        Ok((assignment, ic))
    }

    /// Records encode → quantize → decode on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
        quantizer: Quantizer,
    ) -> Result<ForwardPass, VqvaeError> {
        let latent = self.encoder.forward(tape, &self.store, input)?;
        self.forward_from_latent(tape, latent, &input.residue_types, quantizer, None)
    }

    /// Forward pass from a latent already on the tape. `indices` fixes the
    /// code assignment instead of searching for the nearest entries.
    pub fn forward_from_latent(
        &self,
        tape: &mut Tape,
        latent: Var,
        residue_types: &[ResidueType],
        quantizer: Quantizer,
        indices: Option<Vec<usize>>,
    ) -> Result<ForwardPass, VqvaeError> {
        let projected = self.codebook.down.forward(tape, &self.store, latent)?;
        let indices = match indices {
            Some(i) => i,
            None => quantize_rows(tape.value(projected), self.store.get(self.codebook.entries)),
        };
        let entries = tape.param(&self.store, self.codebook.entries);
        let codes = tape.gather_rows(entries, &indices)?;
        let decoder_input = match quantizer {
            Quantizer::StraightThrough => {
                let offset = tape.sub(codes, projected)?;
                let offset = tape.detach(offset);
                tape.add(projected, offset)?
            }
            Quantizer::Identity => projected,
        };
        let up = self.codebook.up.forward(tape, &self.store, decoder_input)?;
        let prediction = self.decoder.forward(tape, &self.store, up, residue_types)?;
        Ok(ForwardPass {
            latent,
            projected,
            codes,
            indices,
            prediction,
        })
    }

    /// Reconstruction, codebook and commitment terms for one structure.
    pub fn loss(
        &self,
        tape: &mut Tape,
        pass: &ForwardPass,
        target: &InternalCoordinates,
        residue_types: &[ResidueType],
    ) -> Result<LossTerms, VqvaeError> {
        let recon = reconstruction_loss(tape, &pass.prediction, target, residue_types)?;
        let p_stop = tape.detach(pass.projected);
        let e_stop = tape.detach(pass.codes);
        let rows = tape.shape(pass.codes)[0].max(1) as f64;
        let codebook = squared_distance_mean(tape, p_stop, pass.codes, rows)?;
        let commit = squared_distance_mean(tape, pass.projected, e_stop, rows)?;
        let weighted = tape.scale(commit, self.config.beta_commit);
        let total = tape.add(recon, codebook)?;
        let total = tape.add(total, weighted)?;
        Ok(LossTerms {
            total,
            recon,
            codebook,
            commit,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.config,
        }));
        ckpt.add_store(PREFIX, &self.store);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, VqvaeError> {
        if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(VqvaeError::Checkpoint("not a VQ-VAE checkpoint".into()));
        }
        let config: VqvaeConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| VqvaeError::Checkpoint(format!("config: {e}")))?;
        let mut model = Self::new(config)?;
        ckpt.restore_store(PREFIX, &mut model.store)?;
        Ok(model)
    }

    /// Codebook entries, `[codebook_size, code_dim]`.
    pub fn codebook_entries(&self) -> &Tensor {
        self.store.get(self.codebook.entries)
    }
}

/// `Σ‖a_r − b_r‖² / rows`.
fn squared_distance_mean(tape: &mut Tape, a: Var, b: Var, rows: f64) -> Result<Var, TensorError> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows))
}

/// Masked mean over valid slots of `Δd² + Δθ² + wrap(Δτ)²`.
pub fn reconstruction_loss(
    tape: &mut Tape,
    pred: &IcPrediction,
    target: &InternalCoordinates,
    residue_types: &[ResidueType],
) -> Result<Var, VqvaeError> {
    let n = residue_types.len();
    if target.len() != n {
        return Err(GeometryError::LengthMismatch {
            left: target.len(),
            right: n,
        }
        .into());
    }
    let topo = TopologyTable::standard();
    let mut weights = vec![0.0; n * SLOTS_PER_RESIDUE];
    let mut d = vec![0.0; n * SLOTS_PER_RESIDUE];
    let mut theta = vec![0.0; n * SLOTS_PER_RESIDUE];
    let mut tau = vec![0.0; n * SLOTS_PER_RESIDUE];
    let mut count = 0usize;
    for (r, (slots, &rt)) in target.residues.iter().zip(residue_types).enumerate() {
        let mask = topo.slot_mask(rt);
        for (s, slot) in slots.iter().enumerate() {
            if !slot.valid {
                continue;
            }
            if !mask[s] {
                return Err(VqvaeError::MaskMismatch { residue: r, slot: s });
            }
            let k = r * SLOTS_PER_RESIDUE + s;
            weights[k] = 1.0;
            d[k] = slot.d;
            theta[k] = slot.theta;
            tau[k] = slot.tau;
            count += 1;
        }
    }
    let scale = 1.0 / count.max(1) as f64;
    weights.iter_mut().for_each(|w| *w *= scale);
    let shape = vec![n, SLOTS_PER_RESIDUE];
    let constant = |tape: &mut Tape, data: Vec<f64>| tape.constant(Tensor::new(shape.clone(), data).unwrap());
    let (d_t, theta_t, tau_t, w) = (
        constant(tape, d),
        constant(tape, theta),
        constant(tape, tau),
        constant(tape, weights),
    );
    let dd = tape.sub(pred.d, d_t)?;
    let dd = tape.square(dd);
    let dt = tape.sub(pred.theta, theta_t)?;
    let dt = tape.square(dt);
    let da = tape.angle_diff(pred.tau, tau_t)?;
    let da = tape.square(da);
    let per_slot = tape.add(dd, dt)?;
    let per_slot = tape.add(per_slot, da)?;
    let weighted = tape.mul(per_slot, w)?;
    Ok(tape.sum(weighted))
}

const MIN_BOND: f64 = 1e-6;
const MIN_ANGLE: f64 = 1e-6;

/// Converts predicted slot values into [`InternalCoordinates`], masking slots
/// outside each residue's template.
pub(crate) fn prediction_to_internal(
    d: &[f64],
    theta: &[f64],
    tau: &[f64],
    residue_types: &[ResidueType],
) -> InternalCoordinates {
    let topo = TopologyTable::standard();
    let residues = residue_types
        .iter()
        .enumerate()
        .map(|(r, &rt)| {
            let mask = topo.slot_mask(rt);
            let mut slots = [IcSlot::MASKED; SLOTS_PER_RESIDUE];
            for s in 0..SLOTS_PER_RESIDUE {
                if mask[s] {
                    let k = r * SLOTS_PER_RESIDUE + s;
                    // Squashing keeps values in range up to floating-point
                    // saturation; clamp the extremes.
                    slots[s] = IcSlot {
                        d: d[k].max(MIN_BOND),
                        theta: theta[k].clamp(MIN_ANGLE, std::f64::consts::PI - MIN_ANGLE),
                        tau: crate::geometry::wrap_angle(tau[k]),
                        valid: true,
                    };
                }
            }
            slots
        })
        .collect();
    InternalCoordinates { residues }
}

/// Encoder input for a structure, checked against the residue templates.
pub fn prepare_input(structure: &AllAtomStructure, config: &VqvaeConfig) -> Result<EncoderInput, VqvaeError> {
    EncoderInput::new(structure, config.encoder_cutoff, config.rbf_bins)
}
