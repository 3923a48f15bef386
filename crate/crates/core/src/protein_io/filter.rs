use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::AllAtomStructure;
use crate::geometry::{distance, TopologyTable};

/// Dataset filter thresholds. `max_chains` is off unless set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "defaults::ca_min")]
    pub ca_min: f64,
    #[serde(default = "defaults::ca_max")]
    pub ca_max: f64,
    #[serde(default = "defaults::min_residues")]
    pub min_residues: usize,
    #[serde(default = "defaults::max_residues")]
    pub max_residues: usize,
    #[serde(default = "defaults::bond_tolerance")]
    pub bond_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chains: Option<usize>,
}

mod defaults {
    pub fn ca_min() -> f64 {
        2.7
    }
    pub fn ca_max() -> f64 {
        4.1
    }
    pub fn min_residues() -> usize {
        5
    }
    pub fn max_residues() -> usize {
        512
    }
    pub fn bond_tolerance() -> f64 {
        super::super::DEFAULT_BOND_TOLERANCE
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            ca_min: defaults::ca_min(),
            ca_max: defaults::ca_max(),
            min_residues: defaults::min_residues(),
            max_residues: defaults::max_residues(),
            bond_tolerance: defaults::bond_tolerance(),
            max_chains: None,
        }
    }
}

impl FilterConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RejectReason {
    TooFewResidues { count: usize, min: usize },
    TooManyResidues { count: usize, max: usize },
    CaDistanceOutOfRange { residue: usize, distance: f64 },
    IncompleteSideChain { residue: usize, missing: String },
    UnexpectedAtom { residue: usize, atom: String },
    TooManyChains { count: usize, max: usize },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::TooFewResidues { count, min } => {
                write!(f, "fewer than {min} residues ({count})")
            }
            RejectReason::TooManyResidues { count, max } => {
                write!(f, "more than {max} residues ({count})")
            }
            RejectReason::CaDistanceOutOfRange { residue, distance } => {
                write!(
                    f,
                    "CA-CA distance out of range ({distance:.3} A after residue {residue})"
                )
            }
            RejectReason::IncompleteSideChain { residue, missing } => {
                write!(f, "incomplete side chain at residue {residue} (missing {missing})")
            }
            RejectReason::UnexpectedAtom { residue, atom } => {
                write!(f, "unexpected atom {atom} at residue {residue}")
            }
            RejectReason::TooManyChains { count, max } => {
                write!(f, "{count} chains exceeds limit of {max}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

impl FilterDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterDecision::Accept)
    }
}

/// Applies the dataset filters in a fixed order and reports the first rule
/// the structure violates.
///
/// Terminal residues may lack side-chain atoms; every other residue must carry
/// its full heavy-atom topology. Atoms that the topology does not know are
/// rejected everywhere.
pub fn filter_structure(structure: &AllAtomStructure, rules: &FilterConfig) -> FilterDecision {
    let count = structure.residue_count();
    if count < rules.min_residues {
        return FilterDecision::Reject(RejectReason::TooFewResidues {
            count,
            min: rules.min_residues,
        });
    }
    if count > rules.max_residues {
        return FilterDecision::Reject(RejectReason::TooManyResidues {
            count,
            max: rules.max_residues,
        });
    }
    if let Some(max) = rules.max_chains {
        let chains = structure.segment_count();
        if chains > max {
            return FilterDecision::Reject(RejectReason::TooManyChains { count: chains, max });
        }
    }
    let residues = structure.residues();
    for r in 1..count {
        if residues[r].segment != residues[r - 1].segment {
            continue;
        }
        let a = structure.atoms()[structure.ca_index(r - 1).unwrap()].position;
        let b = structure.atoms()[structure.ca_index(r).unwrap()].position;
        let d = distance(a, b);
        if !(rules.ca_min..=rules.ca_max).contains(&d) {
            return FilterDecision::Reject(RejectReason::CaDistanceOutOfRange {
                residue: r - 1,
                distance: d,
            });
        }
    }
    let topo = TopologyTable::standard();
    for (r, res) in residues.iter().enumerate() {
        let template = topo.residue(res.residue_type);
        for atom in structure.residue_atoms(r) {
            if atom.atom_name != "CA" && template.slot_of(&atom.atom_name).is_none() {
                return FilterDecision::Reject(RejectReason::UnexpectedAtom {
                    residue: r,
                    atom: atom.atom_name.clone(),
                });
            }
        }
        if structure.is_terminal(r) {
            continue;
        }
        for slot in &template.atoms {
            if structure.find_atom(r, slot.name).is_none() {
                return FilterDecision::Reject(RejectReason::IncompleteSideChain {
                    residue: r,
                    missing: slot.name.to_string(),
                });
            }
        }
    }
    FilterDecision::Accept
}
