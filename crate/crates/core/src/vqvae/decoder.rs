use std::f64::consts::PI;

use rand::Rng;

use super::{prediction_to_internal, VqvaeConfig};
use crate::geometry::{InternalCoordinates, SLOTS_PER_RESIDUE};
use crate::protein_io::ResidueType;
use crate::tensor_nn::{Linear, ParamStore, Tape, Tensor, TensorError, Var};

const S: usize = SLOTS_PER_RESIDUE;

/// Predicted slot values, each `[residues, 13]`.
#[derive(Debug, Clone, Copy)]
pub struct IcPrediction {
    pub d: Var,
    pub theta: Var,
    pub tau: Var,
}

impl IcPrediction {
    pub fn to_internal(&self, tape: &Tape, residue_types: &[ResidueType]) -> InternalCoordinates {
        prediction_to_internal(
            tape.value(self.d).data(),
            tape.value(self.theta).data(),
            tape.value(self.tau).data(),
            residue_types,
        )
    }
}

/// Per-residue MLP from the up-projected code and residue type to 13 slots of
/// `(d, θ, τ)`. Bond lengths pass through softplus, angles through a scaled
/// sigmoid and dihedrals are the atan2 of a predicted (sin, cos) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    hidden: Vec<Linear>,
    out: Linear,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &VqvaeConfig, rng: &mut R) -> Self {
        let width = config.decoder_hidden;
        let input = config.latent_dim + ResidueType::ALL.len();
        let hidden = vec![
            Linear::new(store, "decoder.hidden0", input, width, rng),
            Linear::new(store, "decoder.hidden1", width, width, rng),
        ];
        let out = Linear::new(store, "decoder.out", width, 4 * S, rng);
        for w in store.get_mut(out.weight).data_mut() {
            *w *= 0.1;
        }
        // Start near typical heavy-atom geometry: d ≈ 1.45 Å, θ ≈ 111°, τ = 0.
        let bias = store.get_mut(out.bias).data_mut();
        let d_raw = (1.45f64.exp() - 1.0).ln();
        let p = 1.94 / PI;
        let theta_raw = (p / (1.0 - p)).ln();
        for s in 0..S {
            bias[s] = d_raw;
            bias[S + s] = theta_raw;
            bias[2 * S + s] = 0.0;
            bias[3 * S + s] = 1.0;
        }
        Self { hidden, out }
    }

    /// `up: [residues, latent_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        up: Var,
        residue_types: &[ResidueType],
    ) -> Result<IcPrediction, TensorError> {
        let n = residue_types.len();
        let types = ResidueType::ALL.len();
        let mut onehot = vec![0.0; n * types];
        for (r, rt) in residue_types.iter().enumerate() {
            onehot[r * types + rt.index()] = 1.0;
        }
        let onehot = tape.constant(Tensor::new(vec![n, types], onehot)?);
        let mut h = tape.concat_cols(&[up, onehot])?;
        for layer in &self.hidden {
            h = layer.forward(tape, store, h)?;
            h = tape.silu(h);
        }
        let out = self.out.forward(tape, store, h)?;
        let d_raw = tape.slice_cols(out, 0, S)?;
        let theta_raw = tape.slice_cols(out, S, 2 * S)?;
        let sin = tape.slice_cols(out, 2 * S, 3 * S)?;
        let cos = tape.slice_cols(out, 3 * S, 4 * S)?;
        let d = tape.softplus(d_raw);
        let theta = tape.sigmoid(theta_raw);
        let theta = tape.scale(theta, PI);
        let tau = tape.atan2(sin, cos)?;
        Ok(IcPrediction { d, theta, tau })
    }
}
