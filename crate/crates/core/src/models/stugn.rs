//! The unified-graph model family: one graph network learns spatial and
//! temporal dependencies jointly over sample-per-node graphs.

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, TapeError, Tensor, Var};
use crate::data::HORIZON;
use crate::graph::UnifiedGraph;

use super::blocks::{layer_name, EdgeTopo, FfnParams, LayerParams};
use super::embed::{unified_embedding_inputs, EdgeEmbedder, NodeEmbedder};
use super::{persistence_tensor, DataStats, DropoutStream, ModelConfig};

/// Parameter wiring of a STUGN model.
pub struct StugnArch {
    node_embed: NodeEmbedder,
    edge_embed: EdgeEmbedder,
    layers: Vec<LayerParams>,
    readout: FfnParams,
    alpha_out: ParamId,
    /// Frozen [dt_scale, pos_mean_lat, pos_mean_lon, pos_std_lat, pos_std_lon].
    stats: ParamId,
}

impl StugnArch {
    pub fn init(
        config: &ModelConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        stats: &DataStats,
    ) -> StugnArch {
        let d = config.latent_dim;
        let node_embed = NodeEmbedder::init(
            params,
            rng,
            "embed",
            crate::data::FEATURE_CHANNELS,
            d,
            true,
            true,
        );
        let edge_embed = EdgeEmbedder::init(params, rng, "embed", 3, d);
        let layers = (0..config.layers)
            .map(|l| LayerParams::init(config, params, rng, &layer_name("layer", l)))
            .collect();
        let readout = FfnParams::init(params, rng, "readout", d, config.ffn_hidden, 1);
        let alpha_out = params.add("alpha_out", Tensor::scalar(0.0));
        let stats = params.add_frozen(
            "stats.unified",
            Tensor::new(
                &[5],
                alloc::vec![
                    stats.dt_scale,
                    stats.pos_mean[0],
                    stats.pos_mean[1],
                    stats.pos_std[0],
                    stats.pos_std[1],
                ],
            ),
        );
        StugnArch { node_embed, edge_embed, layers, readout, alpha_out, stats }
    }

    /// Full forward pass: embed, L graph layers, placeholder readout,
    /// persistence connection. Output is `(stations × 6)` in scaled units.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        config: &ModelConfig,
        graph: &UnifiedGraph,
        drop: &mut DropoutStream,
    ) -> Result<Var, TapeError> {
        let stats = params.get(self.stats).value.data();
        let (dt_scale, pos_mean, pos_std) =
            (stats[0], [stats[1], stats[2]], [stats[3], stats[4]]);

        // edge lists flattened per destination, preserving the sorted order
        let n_edges = graph.n_edges();
        let mut src = Vec::with_capacity(n_edges);
        let mut dst = Vec::with_capacity(n_edges);
        let mut edge_feat = Vec::with_capacity(n_edges * 3);
        for edges in &graph.in_edges {
            for e in edges {
                src.push(e.src);
                dst.push(e.dst);
                edge_feat.push(e.dlat);
                edge_feat.push(e.dlon);
                edge_feat.push(e.dt_minutes / dt_scale);
            }
        }
        let topo = EdgeTopo { src: Rc::new(src), dst: Rc::new(dst), n_nodes: graph.n_nodes() };

        let (feat, phys, time, seq, flags) =
            unified_embedding_inputs(graph, &graph.stations, pos_mean, pos_std);
        let mut h =
            self.node_embed.embed(tape, params, feat, phys, time, &seq, Some(&flags))?;
        let mut e = self.edge_embed.embed(tape, params, Tensor::new(&[n_edges, 3], edge_feat))?;

        for layer in &self.layers {
            let (h2, e2) =
                layer.apply(tape, params, config, h, e, &topo, drop, |_, _, x| Ok(x))?;
            h = h2;
            e = e2;
        }

        // readout at placeholder nodes, station-major then horizon step
        let n_st = graph.forecast_nodes.len();
        let mut ids = Vec::with_capacity(n_st * HORIZON);
        for per_station in &graph.forecast_nodes {
            ids.extend_from_slice(per_station);
        }
        let ph = tape.gather(h, Rc::new(ids))?;
        let out = self.readout.apply(tape, params, ph)?;
        let out = tape.reshape(out, &[n_st, HORIZON])?;
        let gate = tape.param(params, self.alpha_out);
        let gated = tape.mul_scalar(out, gate)?;
        let persist = tape.constant(persistence_tensor(&graph.persistence_scaled));
        tape.add(gated, persist)
    }
}
