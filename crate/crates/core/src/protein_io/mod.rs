//! Structure ingestion: PDB parsing and writing, coarse-graining to Cα beads,
//! dataset filters, covalent bond graphs and dataset manifests.

mod bonds;
mod filter;
mod manifest;
mod pdb;
mod types;

pub use bonds::{build_bond_graph, build_bond_graph_brute_force, BondGraph, DEFAULT_BOND_TOLERANCE};
pub use filter::{filter_structure, FilterConfig, FilterDecision, RejectReason};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use pdb::{parse_pdb, write_pdb};
pub use types::{AllAtomStructure, AtomRecord, Element, Residue, ResidueType};

use crate::geometry::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum StructureError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("residue {residue} has no CA atom")]
    MissingCa { residue: String },
    #[error("structure contains no atoms")]
    EmptyStructure,
    #[error("line {line}: non-canonical residue {name:?}")]
    NonCanonicalResidue { line: usize, name: String },
    #[error("line {line}: unsupported element {symbol:?}")]
    UnknownElement { line: usize, symbol: String },
    #[error("manifest entry {path:?} does not exist")]
    MissingPath { path: std::path::PathBuf },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One Cα bead.
#[derive(Debug, Clone, PartialEq)]
pub struct Bead {
    pub position: Vec3,
    pub residue_type: ResidueType,
    pub chain_id: char,
    pub seq_num: i32,
    pub segment: usize,
}

/// Coarse-grained structure: one bead per residue plus the atom → bead map.
#[derive(Debug, Clone, PartialEq)]
pub struct CgStructure {
    pub beads: Vec<Bead>,
    /// `mapping[atom] = bead`; empty when the CG structure was built without
    /// an all-atom parent.
    pub mapping: Vec<usize>,
}

impl CgStructure {
    pub fn len(&self) -> usize {
        self.beads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beads.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.beads.iter().map(|b| b.position).collect()
    }

    pub fn residue_types(&self) -> Vec<ResidueType> {
        self.beads.iter().map(|b| b.residue_type).collect()
    }

    /// Same beads moved by `f`.
    pub fn map_positions(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        let mut out = self.clone();
        for bead in &mut out.beads {
            bead.position = f(bead.position);
        }
        out
    }
}

/// Collapses every residue onto its Cα atom.
pub fn coarse_grain(structure: &AllAtomStructure) -> Result<CgStructure, StructureError> {
    let mut beads = Vec::with_capacity(structure.residue_count());
    for (r, res) in structure.residues().iter().enumerate() {
        let ca = structure.ca_index(r).ok_or_else(|| StructureError::MissingCa {
            residue: format!("{}{}{}", res.residue_type, res.chain_id, res.seq_num),
        })?;
        beads.push(Bead {
            position: structure.atoms()[ca].position,
            residue_type: res.residue_type,
            chain_id: res.chain_id,
            seq_num: res.seq_num,
            segment: res.segment,
        });
    }
    Ok(CgStructure {
        beads,
        mapping: structure.atom_residue_map(),
    })
}
