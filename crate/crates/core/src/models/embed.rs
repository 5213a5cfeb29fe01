//! Node and edge embeddings.
//!
//! A node embedding is the sum of learned linear maps of the measurement
//! channels, the physical position and the timestamp encoding, plus a
//! fixed sinusoidal sequence-position code (attention models only) and a
//! learned frequency-flag row (unified graphs only).

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, TapeError, Tensor, Var};
use crate::fmath;
use crate::graph::{FreqFlag, UnifiedGraph};

use super::blocks::LinearParams;
use super::uniform_tensor;

/// Fixed sinusoidal position code of dimension `d`.
pub fn sinusoidal_position_encoding(pos: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let freq = fmath::powf(10_000.0, -(2.0 * i as f64) / d as f64);
        let angle = pos as f64 * freq;
        out.push(fmath::sin(angle));
        out.push(fmath::cos(angle));
    }
    if d % 2 == 1 {
        let freq = fmath::powf(10_000.0, -((d - 1) as f64) / d as f64);
        out.push(fmath::sin(pos as f64 * freq));
    }
    out
}

/// Learned maps from raw node information to the latent space.
pub struct NodeEmbedder {
    pub feat: LinearParams,
    pub phys: LinearParams,
    pub time: LinearParams,
    /// Two learned rows (10-minute, hourly); `None` for single-frequency
    /// inputs.
    pub freq: Option<ParamId>,
    pub use_seq_pos: bool,
    pub d: usize,
}

impl NodeEmbedder {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        channels: usize,
        d: usize,
        with_freq: bool,
        use_seq_pos: bool,
    ) -> NodeEmbedder {
        let feat = LinearParams::init(params, rng, &alloc::format!("{prefix}.feat"), channels, d, true);
        let phys = LinearParams::init(params, rng, &alloc::format!("{prefix}.phys"), 2, d, true);
        let time = LinearParams::init(params, rng, &alloc::format!("{prefix}.time"), 8, d, true);
        let freq = with_freq.then(|| {
            params.add(alloc::format!("{prefix}.freq"), uniform_tensor(rng, &[2, d], d))
        });
        NodeEmbedder { feat, phys, time, freq, use_seq_pos, d }
    }

    /// Sum of the component embeddings for pre-assembled input matrices.
    ///
    /// `features` is `(M x channels)`, `phys` `(M x 2)`, `time` `(M x 8)`;
    /// `seq_pos` and `freq_flags` hold one entry per row.
    pub fn embed(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        features: Tensor,
        phys: Tensor,
        time: Tensor,
        seq_pos: &[usize],
        freq_flags: Option<&[FreqFlag]>,
    ) -> Result<Var, TapeError> {
        let m = features.rows();
        let fv = tape.constant(features);
        let pv = tape.constant(phys);
        let tv = tape.constant(time);
        let mut x = self.feat.apply(tape, params, fv)?;
        let p = self.phys.apply(tape, params, pv)?;
        x = tape.add(x, p)?;
        let t = self.time.apply(tape, params, tv)?;
        x = tape.add(x, t)?;
        if let (Some(freq_id), Some(flags)) = (self.freq, freq_flags) {
            let rows: Vec<usize> =
                flags.iter().map(|f| if *f == FreqFlag::TenMin { 0 } else { 1 }).collect();
            let table = tape.param(params, freq_id);
            let gathered = tape.gather(table, alloc::rc::Rc::new(rows))?;
            x = tape.add(x, gathered)?;
        }
        if self.use_seq_pos {
            let mut pe = Vec::with_capacity(m * self.d);
            for &pos in seq_pos {
                pe.extend(sinusoidal_position_encoding(pos, self.d));
            }
            let pev = tape.constant(Tensor::new(&[m, self.d], pe));
            x = tape.add(x, pev)?;
        }
        Ok(x)
    }
}

/// Learned linear map of edge deltas or distances to the latent space.
pub struct EdgeEmbedder {
    pub lin: LinearParams,
}

impl EdgeEmbedder {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_dim: usize,
        d: usize,
    ) -> EdgeEmbedder {
        EdgeEmbedder {
            lin: LinearParams::init(params, rng, &alloc::format!("{prefix}.edge"), in_dim, d, true),
        }
    }

    pub fn embed(&self, tape: &mut Tape, params: &ParamSet, features: Tensor) -> Result<Var, TapeError> {
        let f = tape.constant(features);
        self.lin.apply(tape, params, f)
    }
}

/// Assemble the embedding inputs of a unified graph.
///
/// Returns (features, phys, time, seq positions, frequency flags) with the
/// physical position standardized by the station statistics.
pub fn unified_embedding_inputs(
    graph: &UnifiedGraph,
    stations: &[crate::data::StationMeta],
    pos_mean: [f64; 2],
    pos_std: [f64; 2],
) -> (Tensor, Tensor, Tensor, Vec<usize>, Vec<FreqFlag>) {
    let m = graph.n_nodes();
    let c = crate::data::FEATURE_CHANNELS;
    let mut feat = Vec::with_capacity(m * c);
    let mut phys = Vec::with_capacity(m * 2);
    let mut time = Vec::with_capacity(m * 8);
    let mut seq = Vec::with_capacity(m);
    let mut flags = Vec::with_capacity(m);
    for node in &graph.nodes {
        feat.extend_from_slice(&node.features);
        let st = &stations[node.station];
        phys.push((st.latitude - pos_mean[0]) / pos_std[0]);
        phys.push((st.longitude - pos_mean[1]) / pos_std[1]);
        time.extend_from_slice(&node.time_encoding);
        seq.push(node.seq_pos);
        flags.push(node.frequency);
    }
    (
        Tensor::new(&[m, c], feat),
        Tensor::new(&[m, 2], phys),
        Tensor::new(&[m, 8], time),
        seq,
        flags,
    )
}

/// Population mean/std of station coordinates; degenerate spreads fall back
/// to std 1.
pub fn station_position_stats(stations: &[crate::data::StationMeta]) -> ([f64; 2], [f64; 2]) {
    let n = stations.len().max(1) as f64;
    let mut mean = [0.0; 2];
    for s in stations {
        mean[0] += s.latitude / n;
        mean[1] += s.longitude / n;
    }
    let mut var = [0.0; 2];
    for s in stations {
        var[0] += (s.latitude - mean[0]) * (s.latitude - mean[0]) / n;
        var[1] += (s.longitude - mean[1]) * (s.longitude - mean[1]) / n;
    }
    let std = [
        if var[0] > 1e-12 { fmath::sqrt(var[0]) } else { 1.0 },
        if var[1] > 1e-12 { fmath::sqrt(var[1]) } else { 1.0 },
    ];
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn position_encoding_shape_and_range() {
        let pe = sinusoidal_position_encoding(5, 16);
        assert_eq!(pe.len(), 16);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(sinusoidal_position_encoding(0, 16)[0], 0.0);
        assert_eq!(sinusoidal_position_encoding(0, 16)[1], 1.0);
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = NodeEmbedder::init(&mut params, &mut rng, "n", 5, 8, true, false);
        for p in params.iter_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new(false);
        let x = emb
            .embed(
                &mut tape,
                &params,
                Tensor::new(&[2, 5], alloc::vec![1.0; 10]),
                Tensor::new(&[2, 2], alloc::vec![0.5; 4]),
                Tensor::new(&[2, 8], alloc::vec![0.1; 16]),
                &[0, 1],
                Some(&[FreqFlag::TenMin, FreqFlag::Hourly]),
            )
            .unwrap();
        assert!(tape.value(x).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn embedding_is_sum_of_components() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = NodeEmbedder::init(&mut params, &mut rng, "n", 5, 8, false, false);
        let feats = Tensor::new(&[1, 5], alloc::vec![0.3, -0.2, 0.9, 0.1, -0.7]);
        let phys = Tensor::new(&[1, 2], alloc::vec![0.4, -1.2]);
        let time = Tensor::new(&[1, 8], alloc::vec![0.05; 8]);

        let mut tape = Tape::new(false);
        let full = emb
            .embed(&mut tape, &params, feats.clone(), phys.clone(), time.clone(), &[0], None)
            .unwrap();

        // independent per-term evaluation
        let term = |which: usize| -> Vec<f64> {
            let mut t = Tape::new(false);
            let zeros5 = Tensor::zeros(&[1, 5]);
            let zeros2 = Tensor::zeros(&[1, 2]);
            let zeros8 = Tensor::zeros(&[1, 8]);
            let (f, p, ti) = match which {
                0 => (feats.clone(), zeros2, zeros8),
                1 => (zeros5, phys.clone(), zeros8),
                _ => (zeros5, zeros2, time.clone()),
            };
            let v = emb.embed(&mut t, &params, f, p, ti, &[0], None).unwrap();
            t.value(v).data().to_vec()
        };
        let (a, b, c) = (term(0), term(1), term(2));
        // biases are triple-counted in the per-term runs
        let mut bias_sum = alloc::vec![0.0; 8];
        for lin in [&emb.feat, &emb.phys, &emb.time] {
            let bias = params.get(lin.bias.unwrap()).value.data();
            for (o, v) in bias_sum.iter_mut().zip(bias) {
                *o += v;
            }
        }
        for j in 0..8 {
            let expect = a[j] + b[j] + c[j] - 2.0 * bias_sum[j];
            assert!((tape.value(full).data()[j] - expect).abs() < 1e-12, "component {j}");
        }
    }

    #[test]
    fn two_nodes_differing_in_latitude_differ_by_phys_delta() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = NodeEmbedder::init(&mut params, &mut rng, "n", 5, 8, false, false);
        let feats = Tensor::new(&[2, 5], alloc::vec![0.1; 10]);
        let phys = Tensor::new(&[2, 2], alloc::vec![0.0, 0.5, 1.0, 0.5]);
        let time = Tensor::new(&[2, 8], alloc::vec![0.2; 16]);
        let mut tape = Tape::new(false);
        let x = tape_embed(&emb, &mut tape, &params, feats, phys, time);
        // difference equals PhysPosEmbed([0,0.5]) - PhysPosEmbed([1,0.5])
        let w = params.get(emb.phys.weight).value.clone();
        for j in 0..8 {
            let delta = tape.value(x).at(0, j) - tape.value(x).at(1, j);
            let expect = (0.0 - 1.0) * w.at(0, j);
            assert!((delta - expect).abs() < 1e-12);
        }
    }

    fn tape_embed(
        emb: &NodeEmbedder,
        tape: &mut Tape,
        params: &ParamSet,
        f: Tensor,
        p: Tensor,
        t: Tensor,
    ) -> Var {
        emb.embed(tape, params, f, p, t, &[0, 0], None).unwrap()
    }
}
