use std::f64::consts::PI;

use rand::Rng;

use super::{VqvaeConfig, VqvaeError};
use crate::geometry::{
    distance, gaussian_rbf, neighbors::pairs_within, topology_bond_graph, TopologyTable, SLOTS_PER_RESIDUE,
};
use crate::protein_io::{AllAtomStructure, ResidueType};
use crate::tensor_nn::{Linear, ParamStore, Tape, Tensor, TensorError, Var};

/// Residue type one-hot, atom slot one-hot (Cα first) and element one-hot.
pub const NODE_FEATURES: usize = ResidueType::ALL.len() + 1 + SLOTS_PER_RESIDUE + 4;

/// Precomputed, parameter-free encoder inputs for one structure. Everything
/// geometric is derived from interatomic distances only.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub residue_types: Vec<ResidueType>,
    /// `[atoms, NODE_FEATURES]`.
    pub node_features: Tensor,
    /// Directed edges `source → target`; each undirected pair appears twice.
    pub edge_source: Vec<usize>,
    pub edge_target: Vec<usize>,
    /// `[edges, rbf_bins + 1]`: distance basis plus a covalent-bond flag.
    pub edge_features: Tensor,
    /// Smooth cutoff envelope per edge (1 for covalent bonds).
    pub edge_weights: Vec<f64>,
    pub inv_degree: Vec<f64>,
    pub atom_residue: Vec<usize>,
    pub inv_residue_size: Vec<f64>,
}

impl EncoderInput {
    pub fn new(structure: &AllAtomStructure, cutoff: f64, bins: usize) -> Result<Self, VqvaeError> {
        let topo = TopologyTable::standard();
        let atoms = structure.atoms();
        let n = atoms.len();
        let n_res = ResidueType::ALL.len();
        let mut features = vec![0.0; n * NODE_FEATURES];
        let atom_residue = structure.atom_residue_map();
        for (i, atom) in atoms.iter().enumerate() {
            let r = atom_residue[i];
            let rt = structure.residues()[r].residue_type;
            let slot = if atom.atom_name == "CA" {
                0
            } else {
                topo.residue(rt)
                    .slot_of(&atom.atom_name)
                    .ok_or_else(|| VqvaeError::UnknownAtom {
                        residue: r,
                        residue_type: rt,
                        atom: atom.atom_name.clone(),
                    })?
                    + 1
            };
            let row = &mut features[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
            row[rt.index()] = 1.0;
            row[n_res + slot] = 1.0;
            row[n_res + 1 + SLOTS_PER_RESIDUE + atom.element.index()] = 1.0;
        }

        let positions = structure.positions();
        let bonds = topology_bond_graph(structure, topo);
        let mut pairs: Vec<(usize, usize, f64, bool)> = pairs_within(&positions, cutoff)
            .into_iter()
            .map(|(i, j, d)| (i, j, d, bonds.contains(i, j)))
            .collect();
        for &(i, j) in &bonds.edges {
            let d = distance(positions[i], positions[j]);
            if d > cutoff {
                pairs.push((i, j, d, true));
            }
        }
        pairs.sort_by_key(|a| (a.0, a.1));

        let width = bins + 1;
        let mut edge_source = Vec::with_capacity(2 * pairs.len());
        let mut edge_target = Vec::with_capacity(2 * pairs.len());
        let mut edge_features = Vec::with_capacity(2 * pairs.len() * width);
        let mut edge_weights = Vec::with_capacity(2 * pairs.len());
        let mut degree = vec![0usize; n];
        for &(i, j, d, bonded) in &pairs {
            let weight = if bonded {
                1.0
            } else {
                0.5 * ((PI * d / cutoff).cos() + 1.0)
            };
            for (s, t) in [(i, j), (j, i)] {
                edge_source.push(s);
                edge_target.push(t);
                edge_features.extend(gaussian_rbf(d, bins, cutoff));
                edge_features.push(if bonded { 1.0 } else { 0.0 });
                edge_weights.push(weight);
                degree[t] += 1;
            }
        }
        let residue_count = structure.residue_count();
        let mut sizes = vec![0usize; residue_count];
        for &r in &atom_residue {
            sizes[r] += 1;
        }
        Ok(Self {
            residue_types: structure.residues().iter().map(|r| r.residue_type).collect(),
            node_features: Tensor::new(vec![n, NODE_FEATURES], features)?,
            edge_features: Tensor::new(vec![edge_source.len(), width], edge_features)?,
            edge_source,
            edge_target,
            edge_weights,
            inv_degree: degree.iter().map(|&d| 1.0 / d.max(1) as f64).collect(),
            atom_residue,
            inv_residue_size: sizes.iter().map(|&s| 1.0 / s.max(1) as f64).collect(),
        })
    }

    pub fn atom_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn residue_count(&self) -> usize {
        self.residue_types.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct MessageLayer {
    target: Linear,
    source: Linear,
    edge: Linear,
    message: Linear,
    ff_in: Linear,
    ff_out: Linear,
}

/// Message passing over atoms followed by a per-residue mean pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    input: Linear,
    layers: Vec<MessageLayer>,
    readout: Linear,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &VqvaeConfig, rng: &mut R) -> Self {
        let h = config.encoder_hidden;
        let input = Linear::new(store, "encoder.input", NODE_FEATURES, h, rng);
        let layers = (0..config.encoder_layers)
            .map(|l| {
                let name = |part: &str| format!("encoder.layer{l}.{part}");
                MessageLayer {
                    target: Linear::new(store, &name("target"), h, h, rng),
                    source: Linear::new(store, &name("source"), h, h, rng),
                    edge: Linear::new(store, &name("edge"), config.rbf_bins + 1, h, rng),
                    message: Linear::new(store, &name("message"), h, h, rng),
                    ff_in: Linear::new(store, &name("ff_in"), h, h, rng),
                    ff_out: Linear::new(store, &name("ff_out"), h, h, rng),
                }
            })
            .collect();
        let readout = Linear::new(store, "encoder.readout", h, config.latent_dim, rng);
        Self { input, layers, readout }
    }

    /// Per-residue latents, `[residues, latent_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &EncoderInput) -> Result<Var, TensorError> {
        let atoms = input.atom_count();
        let x = tape.constant(input.node_features.clone());
        let edges = tape.constant(input.edge_features.clone());
        let mut h = self.input.forward(tape, store, x)?;
        for layer in &self.layers {
            let at_target = layer.target.forward(tape, store, h)?;
            let at_source = layer.source.forward(tape, store, h)?;
            let at_edge = layer.edge.forward(tape, store, edges)?;
            let at_target = tape.gather_rows(at_target, &input.edge_target)?;
            let at_source = tape.gather_rows(at_source, &input.edge_source)?;
            let pre = tape.add(at_target, at_source)?;
            let pre = tape.add(pre, at_edge)?;
            let pre = tape.silu(pre);
            let msg = layer.message.forward(tape, store, pre)?;
            let msg = tape.silu(msg);
            let msg = tape.row_scale(msg, &input.edge_weights)?;
            let agg = tape.scatter_add_rows(msg, &input.edge_target, atoms)?;
            let agg = tape.row_scale(agg, &input.inv_degree)?;
            let h1 = tape.add(h, agg)?;
            let h1 = tape.layer_norm(h1, 1e-5);
            let ff = layer.ff_in.forward(tape, store, h1)?;
            let ff = tape.silu(ff);
            let ff = layer.ff_out.forward(tape, store, ff)?;
            let h2 = tape.add(h1, ff)?;
            h = tape.layer_norm(h2, 1e-5);
        }
        let pooled = tape.scatter_add_rows(h, &input.atom_residue, input.residue_count())?;
        let pooled = tape.row_scale(pooled, &input.inv_residue_size)?;
        self.readout.forward(tape, store, pooled)
    }
}
