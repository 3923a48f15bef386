use rand::Rng;

use super::VqvaeConfig;
use crate::tensor_nn::{Linear, ParamId, ParamStore, Tensor};

/// Code table plus the projections between latent and code space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codebook {
    /// `[codebook_size, code_dim]`.
    pub entries: ParamId,
    pub down: Linear,
    pub up: Linear,
    pub size: usize,
    pub code_dim: usize,
}

impl Codebook {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &VqvaeConfig, rng: &mut R) -> Self {
        let (k, c) = (config.codebook_size, config.code_dim);
        let bound = 1.0 / k as f64;
        let data = (0..k * c).map(|_| rng.random_range(-bound..=bound)).collect();
        let entries = store.add("codebook.entries", Tensor::new(vec![k, c], data).unwrap());
        let down = Linear::new(store, "codebook.down", config.latent_dim, c, rng);
        let up = Linear::new(store, "codebook.up", c, config.latent_dim, rng);
        Self {
            entries,
            down,
            up,
            size: k,
            code_dim: c,
        }
    }
}

/// Index of the entry closest to `point` in squared distance; ties go to the
/// lowest index.
pub fn nearest_code(point: &[f64], entries: &Tensor) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..entries.rows() {
        let d: f64 = entries.row(k).iter().zip(point).map(|(e, p)| (e - p) * (e - p)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// [`nearest_code`] for every row of `points`.
pub fn quantize_rows(points: &Tensor, entries: &Tensor) -> Vec<usize> {
    (0..points.rows())
        .map(|r| nearest_code(points.row(r), entries))
        .collect()
}
