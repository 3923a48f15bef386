//! Byte-level entry points shared by the fuzz targets and their stable
//! regression test. Each accepts arbitrary input and must never panic except
//! on a violated roundtrip property.

use crate::denoiser::DenoiserConfig;
use crate::diffusion::DiffusionConfig;
use crate::geometry::InternalCoordinates;
use crate::pipeline::select_model;
use crate::protein_io::{parse_pdb, write_pdb, DatasetManifest, FilterConfig};
use crate::tensor_nn::Checkpoint;
use crate::vqvae::{VqVae, VqvaeConfig};

pub fn parse_pdb_bytes(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for drop_hydrogens in [false, true] {
        if let Ok(s) = parse_pdb(text, drop_hydrogens) {
            if let Ok(out) = write_pdb(&s) {
                let again = parse_pdb(&out, drop_hydrogens).expect("written PDB reparses");
                assert_eq!(again.atom_count(), s.atom_count());
            }
        }
    }
}

/// First byte picks the frame.
pub fn select_model_bytes(data: &[u8]) {
    let Some((&frame, rest)) = data.split_first() else {
        return;
    };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Some(model) = select_model(text, u64::from(frame % 8)) {
            parse_pdb_bytes(model.as_bytes());
        }
    }
}

pub fn ic_binary_bytes(data: &[u8]) {
    if let Ok(ic) = InternalCoordinates::from_bytes(data) {
        let bytes = ic.to_bytes();
        let again = InternalCoordinates::from_bytes(&bytes).expect("encoded IC decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
}

pub fn ic_json_bytes(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ic) = InternalCoordinates::from_json(text) {
            let _ = InternalCoordinates::from_json(&ic.to_json());
        }
    }
}

pub fn checkpoint_bytes(data: &[u8]) {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes).is_ok(), "encoded checkpoint decodes");
        let _ = VqVae::from_checkpoint(&ckpt);
    }
}

pub fn manifest_bytes(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = DatasetManifest::from_json(text) {
            assert_eq!(DatasetManifest::from_json(&m.to_json()).expect("manifest reparses"), m);
        }
    }
}

pub fn filter_config_bytes(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = FilterConfig::from_json(text);
    }
}

pub fn config_bytes(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = serde_json::from_str::<VqvaeConfig>(text) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_str::<DiffusionConfig>(text) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_str::<DenoiserConfig>(text) {
        let _ = c.validate();
    }
}

/// Target name → entry point, matching the fuzz crate's binaries and corpus
/// directories.
pub const TARGETS: [(&str, fn(&[u8])); 8] = [
    ("parse_pdb", parse_pdb_bytes),
    ("select_model", select_model_bytes),
    ("ic_binary", ic_binary_bytes),
    ("ic_json", ic_json_bytes),
    ("checkpoint", checkpoint_bytes),
    ("manifest", manifest_bytes),
    ("filter_config", filter_config_bytes),
    ("configs", config_bytes),
];
