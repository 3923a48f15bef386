use crate::geometry::{distance, gaussian_rbf};
use crate::protein_io::{CgStructure, ResidueType};
use crate::tensor_nn::Tensor;

/// Largest sequence offset with its own bucket; larger offsets are clipped.
pub const MAX_SEQUENCE_OFFSET: i32 = 32;
/// Offset buckets `-32..=32` plus one for pairs on different chain segments.
pub const OFFSET_FEATURES: usize = 2 * MAX_SEQUENCE_OFFSET as usize + 2;
pub const NODE_FEATURES: usize = 20;

/// k-nearest-neighbor graph over Cα beads. Several graphs can be batched into
/// one disjoint union; `graph_index` records which graph each node came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CgGraph {
    pub positions: Vec<[f64; 3]>,
    pub residue_types: Vec<ResidueType>,
    /// Residue one-hot, `[nodes, 20]`.
    pub node_features: Tensor,
    /// Messages flow from `edge_source[e]` into `edge_target[e]`; each node is
    /// the target of its `min(k, N − 1)` nearest neighbors.
    pub edge_source: Vec<usize>,
    pub edge_target: Vec<usize>,
    pub edge_distance: Vec<f64>,
    /// Distance basis then sequence-offset one-hot, `[edges, bins + 66]`.
    pub edge_features: Tensor,
    pub inv_degree: Vec<f64>,
    pub graph_index: Vec<usize>,
    pub graph_count: usize,
}

/// Sequence-offset bucket of `to` relative to `from`.
fn offset_bucket(cg: &CgStructure, from: usize, to: usize) -> usize {
    let (a, b) = (&cg.beads[from], &cg.beads[to]);
    if a.segment != b.segment {
        return OFFSET_FEATURES - 1;
    }
    let offset = (b.seq_num - a.seq_num).clamp(-MAX_SEQUENCE_OFFSET, MAX_SEQUENCE_OFFSET);
    (offset + MAX_SEQUENCE_OFFSET) as usize
}

/// Builds the kNN graph. Neighbors are ordered by distance with ties going to
/// the lower node index.
pub fn build_cg_graph(cg: &CgStructure, k: usize, rbf_bins: usize, rbf_max: f64) -> CgGraph {
    let n = cg.len();
    let positions = cg.positions();
    let mut node_features = Tensor::zeros(&[n, NODE_FEATURES]);
    for (i, bead) in cg.beads.iter().enumerate() {
        node_features.data_mut()[i * NODE_FEATURES + bead.residue_type.index()] = 1.0;
    }
    let per_node = k.min(n.saturating_sub(1));
    let width = rbf_bins + OFFSET_FEATURES;
    let (mut edge_source, mut edge_target, mut edge_distance) = (Vec::new(), Vec::new(), Vec::new());
    let mut features = Vec::with_capacity(n * per_node * width);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (distance(positions[i], positions[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in &others[..per_node] {
            edge_source.push(j);
            edge_target.push(i);
            edge_distance.push(d);
            features.extend(gaussian_rbf(d, rbf_bins, rbf_max));
            let mut onehot = [0.0; OFFSET_FEATURES];
            onehot[offset_bucket(cg, i, j)] = 1.0;
            features.extend(onehot);
        }
    }
    let edges = edge_source.len();
    let inv_degree = vec![if per_node > 0 { 1.0 / per_node as f64 } else { 0.0 }; n];
    CgGraph {
        positions,
        residue_types: cg.residue_types(),
        node_features,
        edge_source,
        edge_target,
        edge_distance,
        edge_features: Tensor::new(vec![edges, width], features).expect("edge feature shape"),
        inv_degree,
        graph_index: vec![0; n],
        graph_count: 1,
    }
}

impl CgGraph {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_source.len()
    }

    /// Disjoint union of `graphs`, nodes in order.
    pub fn batch(graphs: &[&CgGraph]) -> CgGraph {
        let width = graphs.first().map_or(0, |g| g.edge_features.cols());
        let mut out = CgGraph {
            positions: Vec::new(),
            residue_types: Vec::new(),
            node_features: Tensor::zeros(&[0, NODE_FEATURES]),
            edge_source: Vec::new(),
            edge_target: Vec::new(),
            edge_distance: Vec::new(),
            edge_features: Tensor::zeros(&[0, width]),
            inv_degree: Vec::new(),
            graph_index: Vec::new(),
            graph_count: 0,
        };
        let (mut nodes, mut edge_rows) = (Vec::new(), Vec::new());
        for g in graphs {
            let offset = out.positions.len();
            out.positions.extend_from_slice(&g.positions);
            out.residue_types.extend_from_slice(&g.residue_types);
            nodes.extend_from_slice(g.node_features.data());
            out.edge_source.extend(g.edge_source.iter().map(|s| s + offset));
            out.edge_target.extend(g.edge_target.iter().map(|t| t + offset));
            out.edge_distance.extend_from_slice(&g.edge_distance);
            edge_rows.extend_from_slice(g.edge_features.data());
            out.inv_degree.extend_from_slice(&g.inv_degree);
            out.graph_index
                .extend(g.graph_index.iter().map(|i| i + out.graph_count));
            out.graph_count += g.graph_count;
        }
        let n = out.positions.len();
        out.node_features = Tensor::new(vec![n, NODE_FEATURES], nodes).expect("node feature shape");
        out.edge_features = Tensor::new(vec![out.edge_source.len(), width], edge_rows).expect("edge feature shape");
        out
    }

    /// Node ranges of each batched graph.
    pub fn graph_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges: Vec<std::ops::Range<usize>> = Vec::with_capacity(self.graph_count);
        for (node, &g) in self.graph_index.iter().enumerate() {
            if g == ranges.len() {
                ranges.push(node..node + 1);
            } else {
                ranges[g].end = node + 1;
            }
        }
        ranges
    }
}
