//! Baseline model families on the traditional fixed spatial graph:
//! persistence, the one-layer linear model, and the ST-LSTM /
//! ST-Transformer stacks (per-timestep spatial graph block followed by a
//! temporal update, per layer).

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, TapeError, Tensor, Var};
use crate::data::{encode_epoch_minute, HORIZON, LOOKBACK_10MIN};
use crate::graph::{AlignedWindow, SpatialGraph};

use super::blocks::{layer_name, EdgeTopo, FfnParams, LayerParams, LinearParams, TgatParams};
use super::embed::{EdgeEmbedder, NodeEmbedder};
use super::{persistence_tensor, uniform_tensor, DataStats, DropoutStream, ModelConfig, ModelFamily};

/// The persistence forecast: every horizon step repeats the last recorded
/// value.
pub fn persistence_forecast(persistence_scaled: &[f64]) -> Tensor {
    persistence_tensor(persistence_scaled)
}

/// One linear map from the wind-speed look-back to the horizon, gated and
/// added to persistence.
pub struct TsfLinearArch {
    pub q: LinearParams,
    pub alpha: ParamId,
}

impl TsfLinearArch {
    pub fn init(params: &mut ParamSet, rng: &mut ChaCha8Rng) -> TsfLinearArch {
        TsfLinearArch {
            q: LinearParams::init(params, rng, "q", LOOKBACK_10MIN, HORIZON, true),
            alpha: params.add("alpha_out", Tensor::scalar(0.0)),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        aligned: &AlignedWindow,
    ) -> Result<Var, TapeError> {
        let n = aligned.n_stations;
        let x = tape.constant(Tensor::new(&[n, aligned.steps], aligned.ws_lookback.clone()));
        let mapped = self.q.apply(tape, params, x)?;
        let gate = tape.param(params, self.alpha);
        let gated = tape.mul_scalar(mapped, gate)?;
        let persist = tape.constant(persistence_tensor(&aligned.persistence_scaled));
        tape.add(gated, persist)
    }
}

/// LSTM cell parameters with fused gate matrices, gate order [i, f, g, o];
/// the forget-gate bias starts at +1.
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub d: usize,
}

impl LstmParams {
    pub fn init(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> LstmParams {
        let w_ih = params.add(alloc::format!("{name}.w_ih"), uniform_tensor(rng, &[d, 4 * d], d));
        let w_hh = params.add(alloc::format!("{name}.w_hh"), uniform_tensor(rng, &[d, 4 * d], d));
        let mut bias = uniform_tensor(rng, &[4 * d], d);
        for v in bias.data_mut()[d..2 * d].iter_mut() {
            *v += 1.0;
        }
        let bias = params.add(alloc::format!("{name}.b"), bias);
        LstmParams { w_ih, w_hh, bias, d }
    }

    /// Run the cell over a `(steps*batch x d)` step-major sequence; returns
    /// the full output sequence in the same layout.
    pub fn run(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        seq: Var,
        steps: usize,
        batch: usize,
    ) -> Result<Var, TapeError> {
        let d = self.d;
        let w_ih = tape.param(params, self.w_ih);
        let w_hh = tape.param(params, self.w_hh);
        let bias = tape.param(params, self.bias);
        let mut h = tape.constant(Tensor::zeros(&[batch, d]));
        let mut c = tape.constant(Tensor::zeros(&[batch, d]));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let rows: Vec<usize> = (t * batch..(t + 1) * batch).collect();
            let x_t = tape.gather(seq, Rc::new(rows))?;
            let zx = tape.matmul(x_t, w_ih)?;
            let zh = tape.matmul(h, w_hh)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add_bias(z, bias)?;
            let i_gate = tape.slice_cols(z, 0, d)?;
            let i_gate = tape.sigmoid(i_gate)?;
            let f_gate = tape.slice_cols(z, d, d)?;
            let f_gate = tape.sigmoid(f_gate)?;
            let g_gate = tape.slice_cols(z, 2 * d, d)?;
            let g_gate = tape.tanh(g_gate)?;
            let o_gate = tape.slice_cols(z, 3 * d, d)?;
            let o_gate = tape.sigmoid(o_gate)?;
            let keep = tape.mul(f_gate, c)?;
            let write = tape.mul(i_gate, g_gate)?;
            c = tape.add(keep, write)?;
            let c_act = tape.tanh(c)?;
            h = tape.mul(o_gate, c_act)?;
            outputs.push(h);
        }
        tape.concat_rows(&outputs)
    }
}

/// Temporal update applied after the per-timestep spatial block.
pub enum TemporalParams {
    Lstm(LstmParams),
    /// Full self-attention over the step dimension, per station.
    Attention(TgatParams),
}

/// Parameter wiring of the ST-LSTM / ST-Transformer families.
pub struct StBaselineArch {
    node_embed: NodeEmbedder,
    edge_embed: EdgeEmbedder,
    layers: Vec<(LayerParams, TemporalParams)>,
    readout: FfnParams,
    alpha_out: ParamId,
    /// Frozen [dist_mean, dist_std, pos_mean_lat, pos_mean_lon, pos_std_lat, pos_std_lon].
    stats: ParamId,
    lstm: bool,
}

impl StBaselineArch {
    pub fn init(
        config: &ModelConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        stats: &DataStats,
    ) -> StBaselineArch {
        let d = config.latent_dim;
        let lstm = config.family == ModelFamily::StLstm;
        let node_embed = NodeEmbedder::init(
            params,
            rng,
            "embed",
            crate::graph::ALIGNED_CHANNELS,
            d,
            false,
            !lstm,
        );
        let edge_embed = EdgeEmbedder::init(params, rng, "embed", 1, d);
        let layers = (0..config.layers)
            .map(|l| {
                let name = layer_name("layer", l);
                let layer = LayerParams::init(config, params, rng, &name);
                let temporal = if lstm {
                    TemporalParams::Lstm(LstmParams::init(params, rng, &alloc::format!("{name}.lstm"), d))
                } else {
                    TemporalParams::Attention(TgatParams::init(
                        params,
                        rng,
                        &alloc::format!("{name}.attn"),
                        d,
                        config.heads,
                    ))
                };
                (layer, temporal)
            })
            .collect();
        let readout = if lstm {
            FfnParams::init(params, rng, "readout", d, config.ffn_hidden, HORIZON)
        } else {
            FfnParams::init(params, rng, "readout", d, config.ffn_hidden, 1)
        };
        let alpha_out = params.add("alpha_out", Tensor::scalar(0.0));
        let stats = params.add_frozen(
            "stats.aligned",
            Tensor::new(
                &[6],
                alloc::vec![
                    stats.dist_mean,
                    stats.dist_std,
                    stats.pos_mean[0],
                    stats.pos_mean[1],
                    stats.pos_std[0],
                    stats.pos_std[1],
                ],
            ),
        );
        StBaselineArch { node_embed, edge_embed, layers, readout, alpha_out, stats, lstm }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        config: &ModelConfig,
        aligned: &AlignedWindow,
        drop: &mut DropoutStream,
    ) -> Result<Var, TapeError> {
        let stats = params.get(self.stats).value.data();
        let (dist_mean, dist_std) = (stats[0], stats[1]);
        let (pos_mean, pos_std) = ([stats[2], stats[3]], [stats[4], stats[5]]);
        let n = aligned.n_stations;
        let t_in = aligned.steps;
        let c = aligned.channels;
        // placeholder steps appended for attention models
        let t_eff = if self.lstm { t_in } else { t_in + HORIZON };

        // step-major inputs: row t*n + s
        let mut feat = Vec::with_capacity(t_eff * n * c);
        let mut phys = Vec::with_capacity(t_eff * n * 2);
        let mut time = Vec::with_capacity(t_eff * n * 8);
        let mut seq = Vec::with_capacity(t_eff * n);
        for t in 0..t_eff {
            for s in 0..n {
                let src_t = t.min(t_in - 1); // placeholders copy the last step
                feat.extend_from_slice(
                    &aligned.features[(s * t_in + src_t) * c..(s * t_in + src_t + 1) * c],
                );
                let st = &aligned.stations[s];
                phys.push((st.latitude - pos_mean[0]) / pos_std[0]);
                phys.push((st.longitude - pos_mean[1]) / pos_std[1]);
                if t < t_in {
                    time.extend_from_slice(&aligned.time_encoding[t * 8..(t + 1) * 8]);
                } else {
                    time.extend_from_slice(&encode_epoch_minute(
                        aligned.target_timestamps[t - t_in],
                    ));
                }
                seq.push(t);
            }
        }
        let mut h = self.node_embed.embed(
            tape,
            params,
            Tensor::new(&[t_eff * n, c], feat),
            Tensor::new(&[t_eff * n, 2], phys),
            Tensor::new(&[t_eff * n, 8], time),
            &seq,
            None,
        )?;

        let (topo, dists) = replicated_spatial_topo(&aligned.spatial, n, t_eff);
        let edge_feat: Vec<f64> = dists.iter().map(|&km| (km - dist_mean) / dist_std).collect();
        let n_edges = edge_feat.len();
        let mut e =
            self.edge_embed.embed(tape, params, Tensor::new(&[n_edges, 1], edge_feat))?;

        let temporal_topo = if self.lstm { None } else { Some(temporal_attention_topo(n, t_eff)) };

        for (layer, temporal) in &self.layers {
            let (h2, e2) = layer.apply(tape, params, config, h, e, &topo, drop, |tape, params, x| {
                match temporal {
                    TemporalParams::Lstm(cell) => cell.run(tape, params, x, t_eff, n),
                    TemporalParams::Attention(attn) => super::blocks::tgat_layer(
                        tape,
                        params,
                        attn,
                        x,
                        None,
                        temporal_topo.as_ref().unwrap(),
                    ),
                }
            })?;
            h = h2;
            e = e2;
        }

        // readout
        let out = if self.lstm {
            // final step of the sequence, one row per station
            let rows: Vec<usize> = ((t_eff - 1) * n..t_eff * n).collect();
            let last = tape.gather(h, Rc::new(rows))?;
            self.readout.apply(tape, params, last)?
        } else {
            // placeholder positions, station-major then horizon step
            let mut rows = Vec::with_capacity(n * HORIZON);
            for s in 0..n {
                for k in 0..HORIZON {
                    rows.push((t_in + k) * n + s);
                }
            }
            let ph = tape.gather(h, Rc::new(rows))?;
            let o = self.readout.apply(tape, params, ph)?;
            tape.reshape(o, &[n, HORIZON])?
        };
        let gate = tape.param(params, self.alpha_out);
        let gated = tape.mul_scalar(out, gate)?;
        let persist = tape.constant(persistence_tensor(&aligned.persistence_scaled));
        tape.add(gated, persist)
    }
}

/// Spatial k-NN edges replicated across `t_eff` timesteps, step-major.
/// Returns the topology and the per-edge distance in km.
pub fn replicated_spatial_topo(
    spatial: &SpatialGraph,
    n_stations: usize,
    t_eff: usize,
) -> (EdgeTopo, Vec<f64>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut dists = Vec::new();
    for t in 0..t_eff {
        for i in 0..n_stations {
            for (nb, km) in spatial.neighbors[i].iter().zip(&spatial.distances_km[i]) {
                src.push(t * n_stations + nb);
                dst.push(t * n_stations + i);
                dists.push(*km);
            }
        }
    }
    (
        EdgeTopo { src: Rc::new(src), dst: Rc::new(dst), n_nodes: n_stations * t_eff },
        dists,
    )
}

/// Complete directed attention topology over timesteps within each station
/// (self-edges included), on step-major rows.
pub fn temporal_attention_topo(n_stations: usize, t_eff: usize) -> EdgeTopo {
    let mut src = Vec::with_capacity(n_stations * t_eff * t_eff);
    let mut dst = Vec::with_capacity(n_stations * t_eff * t_eff);
    for s in 0..n_stations {
        for t in 0..t_eff {
            for t2 in 0..t_eff {
                src.push(t2 * n_stations + s);
                dst.push(t * n_stations + s);
            }
        }
    }
    EdgeTopo { src: Rc::new(src), dst: Rc::new(dst), n_nodes: n_stations * t_eff }
}
