use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{shape_err, Tensor, TensorError};

/// Affine map `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::new(vec![fan_in, fan_out], sample(fan_in * fan_out)).unwrap();
        let b = Tensor::new(vec![fan_out], sample(fan_out)).unwrap();
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    /// Zero weights with a constant bias.
    pub fn constant(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: f64) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[fan_in, fan_out])),
            bias: store.add(format!("{name}.bias"), Tensor::full(&[fan_out], bias)),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Stack of linear layers with SiLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }
}

/// Layer normalization whose per-channel scale and shift are linear
/// functions of a conditioning vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaLayerNorm {
    pub scale: Linear,
    pub shift: Linear,
    pub dim: usize,
}

impl AdaLayerNorm {
    pub const EPS: f64 = 1e-5;

    /// Identity modulation at start: zero weights, unit scale bias, zero shift.
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, dim: usize) -> Self {
        Self {
            scale: Linear::constant(store, &format!("{name}.scale"), cond_dim, dim, 1.0),
            shift: Linear::constant(store, &format!("{name}.shift"), cond_dim, dim, 0.0),
            dim,
        }
    }

    /// `x: [n, dim]`; `cond: [1, cond_dim]` (shared) or `[n, cond_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, cond: Var) -> Result<Var, TensorError> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.dim {
            return Err(shape_err("ada_layer_norm", &xs, &[self.dim]));
        }
        let cond_rows = tape.shape(cond)[0];
        let mut gamma = self.scale.forward(tape, store, cond)?;
        let mut beta = self.shift.forward(tape, store, cond)?;
        if cond_rows == 1 {
            gamma = tape.reshape(gamma, &[self.dim])?;
            beta = tape.reshape(beta, &[self.dim])?;
        } else if cond_rows != xs[0] {
            return Err(shape_err("ada_layer_norm", &xs, tape.shape(cond)));
        }
        let normed = tape.layer_norm(x, Self::EPS);
        let scaled = tape.mul(normed, gamma)?;
        tape.add(scaled, beta)
    }
}

/// Sinusoidal embedding of a scalar position: `dim/2` sines then `dim/2` cosines.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}
