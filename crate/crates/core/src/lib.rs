//! Latent diffusion backmapping: reconstruct all-atom protein structures from
//! Cα traces by diffusing discrete per-residue latent codes.

pub mod denoiser;
pub mod diffusion;
pub mod fuzz_entry;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod protein_io;
pub mod tensor_nn;
pub mod vqvae;
