//! Structure-quality metrics: RMSD, bond-graph edit ratios, steric clashes
//! and the interaction score.

mod report;


use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::{distance, neighbors::pairs_within, topology_bond_graph, GeometryError, TopologyTable, Vec3};
use crate::protein_io::{build_bond_graph, AllAtomStructure, BondGraph, Element, DEFAULT_BOND_TOLERANCE};

pub use report::{evaluate_ensemble, match_atoms, MetricReport, MetricSummary, PairMetrics};

/// Pairs closer than this are clashes.
pub const CLASH_DISTANCE: f64 = 1.2;
/// Polar atom pairs up to this distance enter the interaction score.
pub const POLAR_CUTOFF: f64 = 3.3;
/// Ring-center pairs up to this distance enter the interaction score.
pub const RING_CUTOFF: f64 = 5.5;
const POLAR_OFFSET: f64 = 4.0;
const RING_OFFSET: f64 = 6.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least two atoms with a countable pair, got {0} atoms")]
    TooFewAtoms(usize),
    #[error("node counts differ: {left} vs {right}")]
    NodeCountMismatch { left: usize, right: usize },
    #[error("{generated} generated structures for {references} references")]
    LengthMismatch { generated: usize, references: usize },
    #[error("no atoms in common between generated and reference structure")]
    NoCommonAtoms,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Atom pairs one or two bonds apart, as `(i, j)` with `i < j`.
pub fn bonded_neighborhood(bonds: &BondGraph) -> BTreeSet<(usize, usize)> {
    let mut out = bonds.edges.clone();
    for neighbors in bonds.adjacency() {
        for (k, &a) in neighbors.iter().enumerate() {
            for &b in &neighbors[k + 1..] {
                out.insert((a.min(b), a.max(b)));
            }
        }
    }
    out
}

/// Clashes per thousand counted pairs. Pairs one or two bonds apart in
/// `bonds` are not counted.
pub fn clash_score_with_bonds(positions: &[Vec3], bonds: &BondGraph) -> Result<f64, MetricError> {
    let n = positions.len();
    let excluded = bonded_neighborhood(bonds);
    let counted = (n * n.saturating_sub(1) / 2).saturating_sub(excluded.len());
    if n < 2 || counted == 0 {
        return Err(MetricError::TooFewAtoms(n));
    }
    let clashes = pairs_within(positions, CLASH_DISTANCE)
        .into_iter()
        .filter(|&(i, j, d)| d < CLASH_DISTANCE && !excluded.contains(&(i, j)))
        .count();
    Ok(1000.0 * clashes as f64 / counted as f64)
}

/// Clash score with bonds taken from the residue templates, so a collapsed
/// bond is never mistaken for a clash-free pair.
pub fn clash_score(structure: &AllAtomStructure) -> Result<f64, MetricError> {
    let bonds = topology_bond_graph(structure, TopologyTable::standard());
    clash_score_with_bonds(&structure.positions(), &bonds)
}

/// Arithmetic mean of a residue's aromatic ring atoms present in the
/// structure, as `(residue, center)`.
pub fn ring_centers(structure: &AllAtomStructure) -> Vec<(usize, Vec3)> {
    let topo = TopologyTable::standard();
    let mut out = Vec::new();
    for (r, residue) in structure.residues().iter().enumerate() {
        let names = topo.residue(residue.residue_type).ring_atoms();
        if names.is_empty() {
            continue;
        }
        let members: Vec<Vec3> = names
            .iter()
            .filter_map(|name| structure.find_atom(r, name))
            .map(|i| structure.atoms()[i].position)
            .collect();
        if members.len() != names.len() {
            continue;
        }
        let mut c = [0.0; 3];
        for p in &members {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        out.push((r, c.map(|x| x / members.len() as f64)));
    }
    out
}

/// `Σ_A max(d² − 4, 0) + Σ_P max(d² − 6, 0)` over polar atom pairs `A` and
/// aromatic ring-center pairs `P`.
pub fn interaction_score(structure: &AllAtomStructure) -> f64 {
    let bonds = topology_bond_graph(structure, TopologyTable::standard());
    interaction_score_with_bonds(structure, &bonds)
}

pub fn interaction_score_with_bonds(structure: &AllAtomStructure, bonds: &BondGraph) -> f64 {
    let atoms = structure.atoms();
    let residue_of = structure.atom_residue_map();
    let polar: Vec<usize> = (0..atoms.len())
        .filter(|&i| matches!(atoms[i].element, Element::N | Element::O | Element::S))
        .collect();
    let points: Vec<Vec3> = polar.iter().map(|&i| atoms[i].position).collect();
    let mut total = 0.0;
    for (a, b, d) in pairs_within(&points, POLAR_CUTOFF) {
        let (i, j) = (polar[a], polar[b]);
        if residue_of[i] != residue_of[j] && !bonds.contains(i, j) {
            total += (d * d - POLAR_OFFSET).max(0.0);
        }
    }
    let rings = ring_centers(structure);
    for (k, (_, a)) in rings.iter().enumerate() {
        for (_, b) in &rings[k + 1..] {
            let d = distance(*a, *b);
            if d <= RING_CUTOFF {
                total += (d * d - RING_OFFSET).max(0.0);
            }
        }
    }
    total
}

fn check_nodes(a: &BondGraph, b: &BondGraph) -> Result<(), MetricError> {
    if a.node_count != b.node_count {
        return Err(MetricError::NodeCountMismatch {
            left: a.node_count,
            right: b.node_count,
        });
    }
    Ok(())
}

/// `|E_gen Δ E_true| / (|V| + |E_true|)` under the identity node mapping.
pub fn ged_ratio(generated: &BondGraph, truth: &BondGraph) -> Result<f64, MetricError> {
    check_nodes(generated, truth)?;
    let denom = truth.node_count + truth.edge_count();
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(generated.symmetric_difference_len(truth) as f64 / denom as f64)
}

/// Percentage of reference bonds changed: `100 |E_gen Δ E_ref| / |E_ref|`.
/// A reference without bonds uses a denominator of one.
pub fn gdr_from_graphs(generated: &BondGraph, reference: &BondGraph) -> Result<f64, MetricError> {
    check_nodes(generated, reference)?;
    let diff = generated.symmetric_difference_len(reference);
    Ok(100.0 * diff as f64 / reference.edge_count().max(1) as f64)
}

/// GDR with both bond graphs inferred from interatomic distances.
pub fn gdr(generated: &AllAtomStructure, reference: &AllAtomStructure) -> Result<f64, MetricError> {
    gdr_from_graphs(
        &build_bond_graph(generated, DEFAULT_BOND_TOLERANCE),
        &build_bond_graph(reference, DEFAULT_BOND_TOLERANCE),
    )
}
