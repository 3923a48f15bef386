use rand::Rng;

use super::graph::{CgGraph, NODE_FEATURES, OFFSET_FEATURES};
use super::{DenoiserConfig, DenoiserError, TIME_EMBEDDING_DIM};
use crate::tensor_nn::{sinusoidal_embedding, AdaLayerNorm, Linear, Mlp, ParamStore, Tape, Tensor, Var};

/// Message-passing round with timestep-modulated normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct GraphLayer {
    target: Linear,
    source: Linear,
    edge: Linear,
    message: Linear,
    norm_message: AdaLayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm_ff: AdaLayerNorm,
}

impl GraphLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, edge_dim: usize, rng: &mut R) -> Self {
        let part = |p: &str| format!("{name}.{p}");
        Self {
            target: Linear::new(store, &part("target"), hidden, hidden, rng),
            source: Linear::new(store, &part("source"), hidden, hidden, rng),
            edge: Linear::new(store, &part("edge"), edge_dim, hidden, rng),
            message: Linear::new(store, &part("message"), hidden, hidden, rng),
            norm_message: AdaLayerNorm::new(store, &part("norm_message"), hidden, hidden),
            ff_in: Linear::new(store, &part("ff_in"), hidden, 2 * hidden, rng),
            ff_out: Linear::new(store, &part("ff_out"), 2 * hidden, hidden, rng),
            norm_ff: AdaLayerNorm::new(store, &part("norm_ff"), hidden, hidden),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &CgGraph,
        edges: Var,
        h: Var,
        cond: Var,
    ) -> Result<Var, DenoiserError> {
        let at_target = self.target.forward(tape, store, h)?;
        let at_source = self.source.forward(tape, store, h)?;
        let at_edge = self.edge.forward(tape, store, edges)?;
        let at_target = tape.gather_rows(at_target, &graph.edge_target)?;
        let at_source = tape.gather_rows(at_source, &graph.edge_source)?;
        let pre = tape.add(at_target, at_source)?;
        let pre = tape.add(pre, at_edge)?;
        let pre = tape.silu(pre);
        let msg = self.message.forward(tape, store, pre)?;
        let agg = tape.scatter_add_rows(msg, &graph.edge_target, graph.node_count())?;
        let agg = tape.row_scale(agg, &graph.inv_degree)?;
        let h1 = tape.add(h, agg)?;
        let h1 = self.norm_message.forward(tape, store, h1, cond)?;
        let ff = self.ff_in.forward(tape, store, h1)?;
        let ff = tape.silu(ff);
        let ff = self.ff_out.forward(tape, store, ff)?;
        let h2 = tape.add(h1, ff)?;
        Ok(self.norm_ff.forward(tape, store, h2, cond)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Network {
    time: Mlp,
    node_in: Linear,
    encoder: Vec<GraphLayer>,
    code_in: Linear,
    decoder: Vec<GraphLayer>,
    head: Linear,
}

impl Network {
    pub(crate) fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &DenoiserConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let edge_dim = config.rbf_bins + OFFSET_FEATURES;
        let time = Mlp::new(store, "time", &[TIME_EMBEDDING_DIM, h, h], rng);
        let node_in = Linear::new(store, "node_in", NODE_FEATURES, h, rng);
        let encoder = (0..config.layers_enc)
            .map(|l| GraphLayer::new(store, &format!("encoder{l}"), h, edge_dim, rng))
            .collect();
        let code_in = Linear::new(store, "code_in", h + super::CODE_DIM, h, rng);
        let decoder = (0..config.layers_dec)
            .map(|l| GraphLayer::new(store, &format!("decoder{l}"), h, edge_dim, rng))
            .collect();
        let head = Linear::constant(store, "head", h, 2 * super::CODE_DIM, 0.0);
        Self {
            time,
            node_in,
            encoder,
            code_in,
            decoder,
            head,
        }
    }

    /// Returns `(eps_hat, v)` with `v` squashed into `[0, 1]`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &CgGraph,
        z_t: Var,
        timesteps: &[usize],
    ) -> Result<(Var, Var), DenoiserError> {
        let n = graph.node_count();
        if tape.shape(z_t) != [n, super::CODE_DIM] {
            return Err(DenoiserError::ShapeMismatch(format!(
                "latents {:?} for {n} nodes",
                tape.shape(z_t)
            )));
        }
        if timesteps.len() != graph.graph_count {
            return Err(DenoiserError::ShapeMismatch(format!(
                "{} timesteps for {} graphs",
                timesteps.len(),
                graph.graph_count
            )));
        }
        let rows: Vec<f64> = timesteps
            .iter()
            .flat_map(|&t| sinusoidal_embedding(t as f64, TIME_EMBEDDING_DIM))
            .collect();
        let t_emb = tape.constant(Tensor::new(vec![timesteps.len(), TIME_EMBEDDING_DIM], rows)?);
        let cond = self.time.forward(tape, store, t_emb)?;
        let cond = tape.silu(cond);
        let cond = tape.gather_rows(cond, &graph.graph_index)?;
        let edges = tape.constant(graph.edge_features.clone());

        let x = tape.constant(graph.node_features.clone());
        let mut h = self.node_in.forward(tape, store, x)?;
        for layer in &self.encoder {
            h = layer.forward(tape, store, graph, edges, h, cond)?;
        }
        let joined = tape.concat_cols(&[h, z_t])?;
        let mut h = self.code_in.forward(tape, store, joined)?;
        for layer in &self.decoder {
            h = layer.forward(tape, store, graph, edges, h, cond)?;
        }
        let out = self.head.forward(tape, store, h)?;
        let eps = tape.slice_cols(out, 0, super::CODE_DIM)?;
        let v = tape.slice_cols(out, super::CODE_DIM, 2 * super::CODE_DIM)?;
        let v = tape.sigmoid(v);
        Ok((eps, v))
    }
}
