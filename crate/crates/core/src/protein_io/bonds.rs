use std::collections::BTreeSet;

use super::types::{AllAtomStructure, Element};
use crate::geometry::{distance, neighbors::pairs_within};

pub const DEFAULT_BOND_TOLERANCE: f64 = 0.4;

/// Undirected graph over atom indices. Edges are stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BondGraph {
    pub node_count: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl BondGraph {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            edges: BTreeSet::new(),
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a != b && a < self.node_count && b < self.node_count);
        self.edges.insert((a.min(b), a.max(b)));
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Size of the symmetric difference of the two edge sets.
    pub fn symmetric_difference_len(&self, other: &BondGraph) -> usize {
        self.edges.symmetric_difference(&other.edges).count()
    }
}

fn bond_cutoff(a: Element, b: Element, tolerance: f64) -> f64 {
    a.covalent_radius() + b.covalent_radius() + tolerance
}

/// Covalent bond graph: `(i, j)` is an edge iff their distance is at most
/// `r_i + r_j + tolerance`.
pub fn build_bond_graph(structure: &AllAtomStructure, tolerance: f64) -> BondGraph {
    assert!(tolerance > 0.0, "bond tolerance must be positive");
    let atoms = structure.atoms();
    let positions = structure.positions();
    let max_cutoff = 2.0 * Element::S.covalent_radius() + tolerance;
    let mut graph = BondGraph::new(atoms.len());
    for (i, j, d) in pairs_within(&positions, max_cutoff) {
        if d <= bond_cutoff(atoms[i].element, atoms[j].element, tolerance) {
            graph.add_edge(i, j);
        }
    }
    graph
}

/// O(n²) reference for [`build_bond_graph`].
pub fn build_bond_graph_brute_force(structure: &AllAtomStructure, tolerance: f64) -> BondGraph {
    let atoms = structure.atoms();
    let mut graph = BondGraph::new(atoms.len());
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let d = distance(atoms[i].position, atoms[j].position);
            if d <= bond_cutoff(atoms[i].element, atoms[j].element, tolerance) {
                graph.add_edge(i, j);
            }
        }
    }
    graph
}
