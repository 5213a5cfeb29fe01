//! Graph update blocks and the residual plumbing around them.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, TapeError, Tensor, Var};
use crate::fmath;

use super::{uniform_tensor, DropoutStream, ModelConfig, Normalisation};

/// Negative slope of the GATv2 scoring nonlinearity.
pub const GATV2_LEAKY_SLOPE: f64 = 0.2;

/// A learned linear map, optionally with bias.
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearParams {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> LinearParams {
        let weight = params.add(alloc::format!("{name}.w"), uniform_tensor(rng, &[fan_in, fan_out], fan_in));
        let bias = bias.then(|| {
            params.add(alloc::format!("{name}.b"), uniform_tensor(rng, &[fan_out], fan_in))
        });
        LinearParams { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, TapeError> {
        let w = tape.param(params, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let bv = tape.param(params, b);
                tape.add_bias(y, bv)
            }
            None => Ok(y),
        }
    }
}

/// Directed edge lists of a graph on the tape: `src[k] -> dst[k]`.
#[derive(Debug, Clone)]
pub struct EdgeTopo {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub n_nodes: usize,
}

impl EdgeTopo {
    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Message/update maps of the plain message-passing block.
pub struct MpnnParams {
    /// ψ: (3d -> d) over [h_i ∥ h_j ∥ e_ji].
    pub psi: LinearParams,
    /// φ: (2d -> d) over [h_i ∥ mean-aggregated messages].
    pub phi: LinearParams,
}

impl MpnnParams {
    pub fn init(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> MpnnParams {
        MpnnParams {
            psi: LinearParams::init(params, rng, &alloc::format!("{name}.psi"), 3 * d, d, false),
            phi: LinearParams::init(params, rng, &alloc::format!("{name}.phi"), 2 * d, d, false),
        }
    }
}

/// One message-passing update: linear messages over [h_i ∥ h_j ∥ e_ji],
/// mean aggregation over in-edges (zero vector for isolated nodes), linear
/// update over [h_i ∥ agg].
pub fn mpnn_layer(
    tape: &mut Tape,
    params: &ParamSet,
    block: &MpnnParams,
    h: Var,
    e: Var,
    topo: &EdgeTopo,
) -> Result<Var, TapeError> {
    let h_i = tape.gather(h, topo.dst.clone())?;
    let h_j = tape.gather(h, topo.src.clone())?;
    let x = tape.concat_cols(&[h_i, h_j, e])?;
    let msg = block.psi.apply(tape, params, x)?;
    let agg = tape.segment_mean(msg, topo.dst.clone(), topo.n_nodes)?;
    let upd_in = tape.concat_cols(&[h, agg])?;
    block.phi.apply(tape, params, upd_in)
}

/// Attention scoring and value maps of the GATv2 block.
pub struct Gatv2Params {
    /// Shared transform of [h_i ∥ h_j ∥ e_ji], all heads: (3d -> d).
    pub w: LinearParams,
    /// Per-head scoring vector, each (d_k x 1).
    pub attn: Vec<ParamId>,
    /// Value projection (d -> d).
    pub w_v: LinearParams,
    /// Output transform after head concatenation (d -> d).
    pub w_o: LinearParams,
    pub heads: usize,
}

impl Gatv2Params {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Gatv2Params {
        let dk = d / heads;
        Gatv2Params {
            w: LinearParams::init(params, rng, &alloc::format!("{name}.w"), 3 * d, d, false),
            attn: (0..heads)
                .map(|h| params.add(alloc::format!("{name}.a{h}"), uniform_tensor(rng, &[dk, 1], dk)))
                .collect(),
            w_v: LinearParams::init(params, rng, &alloc::format!("{name}.wv"), d, d, false),
            w_o: LinearParams::init(params, rng, &alloc::format!("{name}.wo"), d, d, false),
            heads,
        }
    }
}

// Column-block indicator (d x heads): column h is 1 on head h's block.
fn head_indicator(d: usize, heads: usize) -> Tensor {
    let dk = d / heads;
    let mut data = vec![0.0; d * heads];
    for c in 0..d {
        data[c * heads + c / dk] = 1.0;
    }
    Tensor::new(&[d, heads], data)
}

// Transposed indicator (heads x d): expands per-head weights across their
// d_k columns.
fn head_expander(d: usize, heads: usize) -> Tensor {
    let dk = d / heads;
    let mut data = vec![0.0; heads * d];
    for c in 0..d {
        data[(c / dk) * d + c] = 1.0;
    }
    Tensor::new(&[heads, d], data)
}

/// GATv2 update: per head, score aᵀ·LeakyReLU(W[h_i ∥ h_j ∥ e_ji]),
/// softmax over the in-neighbourhood, weighted sum of value projections,
/// heads concatenated and linearly transformed.
pub fn gatv2_layer(
    tape: &mut Tape,
    params: &ParamSet,
    block: &Gatv2Params,
    h: Var,
    e: Var,
    topo: &EdgeTopo,
) -> Result<Var, TapeError> {
    let d = tape.value(h).cols();
    let dk = d / block.heads;
    let h_i = tape.gather(h, topo.dst.clone())?;
    let h_j = tape.gather(h, topo.src.clone())?;
    let x = tape.concat_cols(&[h_i, h_j, e])?;
    let z = block.w.apply(tape, params, x)?;
    let z = tape.leaky_relu(z, GATV2_LEAKY_SLOPE)?;
    let mut logits = Vec::with_capacity(block.heads);
    for (head, attn) in block.attn.iter().enumerate() {
        let zh = tape.slice_cols(z, head * dk, dk)?;
        let a = tape.param(params, *attn);
        logits.push(tape.matmul(zh, a)?);
    }
    let logits = tape.concat_cols(&logits)?;
    let alpha = tape.segment_softmax(logits, topo.dst.clone())?;
    let v_all = block.w_v.apply(tape, params, h)?;
    let v = tape.gather(v_all, topo.src.clone())?;
    let expander = tape.constant(head_expander(d, block.heads));
    let alpha_wide = tape.matmul(alpha, expander)?;
    let weighted = tape.mul(v, alpha_wide)?;
    let out = tape.segment_sum(weighted, topo.dst.clone(), topo.n_nodes)?;
    block.w_o.apply(tape, params, out)
}

/// Scaled dot-product attention with edge-modulated keys.
pub struct TgatParams {
    pub w_q: LinearParams,
    pub w_k: LinearParams,
    pub w_v: LinearParams,
    pub w_o: LinearParams,
    pub heads: usize,
}

impl TgatParams {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> TgatParams {
        TgatParams {
            w_q: LinearParams::init(params, rng, &alloc::format!("{name}.wq"), d, d, false),
            w_k: LinearParams::init(params, rng, &alloc::format!("{name}.wk"), d, d, false),
            w_v: LinearParams::init(params, rng, &alloc::format!("{name}.wv"), d, d, false),
            w_o: LinearParams::init(params, rng, &alloc::format!("{name}.wo"), d, d, false),
            heads,
        }
    }
}

/// Graph attention with queries from receivers, keys from sender features
/// elementwise-modulated by projected edge features, softmax over the
/// in-neighbourhood scaled by sqrt(d_k), and the usual multi-head output
/// transform. Pass `None` for `e` to fall back to plain keys h_j·W^K.
pub fn tgat_layer(
    tape: &mut Tape,
    params: &ParamSet,
    block: &TgatParams,
    h: Var,
    e: Option<Var>,
    topo: &EdgeTopo,
) -> Result<Var, TapeError> {
    let d = tape.value(h).cols();
    let dk = d / block.heads;
    let q_all = block.w_q.apply(tape, params, h)?;
    let q = tape.gather(q_all, topo.dst.clone())?;
    let k = match e {
        Some(e) => {
            // k_ji = h_j ⊙ (e_ji W^K), per head a d_k-dim block
            let ek = block.w_k.apply(tape, params, e)?;
            let h_j = tape.gather(h, topo.src.clone())?;
            tape.mul(h_j, ek)?
        }
        None => {
            let k_all = block.w_k.apply(tape, params, h)?;
            tape.gather(k_all, topo.src.clone())?
        }
    };
    let prod = tape.mul(k, q)?;
    let indicator = tape.constant(head_indicator(d, block.heads));
    let logits = tape.matmul(prod, indicator)?;
    let logits = tape.scale_const(logits, 1.0 / fmath::sqrt(dk as f64))?;
    let alpha = tape.segment_softmax(logits, topo.dst.clone())?;
    let v_all = block.w_v.apply(tape, params, h)?;
    let v = tape.gather(v_all, topo.src.clone())?;
    let expander = tape.constant(head_expander(d, block.heads));
    let alpha_wide = tape.matmul(alpha, expander)?;
    let weighted = tape.mul(v, alpha_wide)?;
    let out = tape.segment_sum(weighted, topo.dst.clone(), topo.n_nodes)?;
    block.w_o.apply(tape, params, out)
}

/// Two-layer position-wise feed-forward network with GELU.
pub struct FfnParams {
    pub l1: LinearParams,
    pub l2: LinearParams,
}

impl FfnParams {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> FfnParams {
        FfnParams {
            l1: LinearParams::init(params, rng, &alloc::format!("{name}.l1"), d_in, hidden, true),
            l2: LinearParams::init(params, rng, &alloc::format!("{name}.l2"), hidden, d_out, true),
        }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, TapeError> {
        let h = self.l1.apply(tape, params, x)?;
        let h = tape.gelu(h)?;
        self.l2.apply(tape, params, h)
    }
}

/// Residual-connection state for one sub-layer site.
pub struct ResidualSite {
    /// ReZero gate, zero-initialized.
    pub gate: Option<ParamId>,
    /// Pre-layer-norm affine (scale, shift).
    pub ln: Option<(ParamId, ParamId)>,
}

impl ResidualSite {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        norm: Normalisation,
        d: usize,
    ) -> ResidualSite {
        match norm {
            Normalisation::ReZero => ResidualSite {
                gate: Some(params.add(alloc::format!("{name}.alpha"), Tensor::scalar(0.0))),
                ln: None,
            },
            Normalisation::PreLayerNorm => {
                let scale = params.add(alloc::format!("{name}.ln_scale"), Tensor::new(&[d], vec![1.0; d]));
                let shift = params.add(alloc::format!("{name}.ln_shift"), Tensor::zeros(&[d]));
                ResidualSite { gate: None, ln: Some((scale, shift)) }
            }
            Normalisation::None => ResidualSite { gate: None, ln: None },
        }
    }

    /// Input to the wrapped sub-layer (identity or pre-norm).
    pub fn pre(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, TapeError> {
        match self.ln {
            Some((scale, shift)) => {
                let normed = tape.layer_norm(x)?;
                let sv = tape.param(params, scale);
                let scaled = tape.mul_row(normed, sv)?;
                let bv = tape.param(params, shift);
                tape.add_bias(scaled, bv)
            }
            None => Ok(x),
        }
    }

    /// Combine the sub-layer output with the residual branch, applying
    /// dropout and the ReZero gate when configured.
    pub fn post(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: Var,
        branch: Var,
        config: &ModelConfig,
        drop: &mut DropoutStream,
    ) -> Result<Var, TapeError> {
        let branch = tape.dropout(branch, config.dropout, drop.next_seed())?;
        let branch = match self.gate {
            Some(gate) => {
                let g = tape.param(params, gate);
                tape.mul_scalar(branch, g)?
            }
            None => branch,
        };
        tape.add(x, branch)
    }
}

/// Graph block parameters for one layer, any of the three kinds.
pub enum BlockParams {
    Mpnn(MpnnParams),
    Gatv2(Gatv2Params),
    Tgat(TgatParams),
}

impl BlockParams {
    pub fn init(
        config: &ModelConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> BlockParams {
        let d = config.latent_dim;
        match config.block {
            super::GraphBlock::Mpnn => BlockParams::Mpnn(MpnnParams::init(params, rng, name, d)),
            super::GraphBlock::Gatv2 => {
                BlockParams::Gatv2(Gatv2Params::init(params, rng, name, d, config.heads))
            }
            super::GraphBlock::Tgat => {
                BlockParams::Tgat(TgatParams::init(params, rng, name, d, config.heads))
            }
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        h: Var,
        e: Var,
        topo: &EdgeTopo,
    ) -> Result<Var, TapeError> {
        match self {
            BlockParams::Mpnn(p) => mpnn_layer(tape, params, p, h, e, topo),
            BlockParams::Gatv2(p) => gatv2_layer(tape, params, p, h, e, topo),
            BlockParams::Tgat(p) => tgat_layer(tape, params, p, h, Some(e), topo),
        }
    }
}

/// The shared per-layer wrapper: graph block with residual, then optional
/// node FFN and edge FFN, each with its own residual site.
pub struct LayerParams {
    pub block: BlockParams,
    pub block_site: ResidualSite,
    pub node_ffn: Option<(FfnParams, ResidualSite)>,
    pub edge_ffn: Option<(FfnParams, ResidualSite)>,
}

impl LayerParams {
    pub fn init(
        config: &ModelConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
    ) -> LayerParams {
        let d = config.latent_dim;
        let block = BlockParams::init(config, params, rng, &alloc::format!("{prefix}.block"));
        let block_site =
            ResidualSite::init(params, &alloc::format!("{prefix}.block"), config.normalisation, d);
        let node_ffn = config.ffn_node.then(|| {
            (
                FfnParams::init(params, rng, &alloc::format!("{prefix}.node_ffn"), d, config.ffn_hidden, d),
                ResidualSite::init(params, &alloc::format!("{prefix}.node_ffn"), config.normalisation, d),
            )
        });
        let edge_ffn = config.ffn_edge.then(|| {
            (
                FfnParams::init(params, rng, &alloc::format!("{prefix}.edge_ffn"), d, config.ffn_hidden, d),
                ResidualSite::init(params, &alloc::format!("{prefix}.edge_ffn"), config.normalisation, d),
            )
        });
        LayerParams { block, block_site, node_ffn, edge_ffn }
    }

    /// Apply the node-side updates of this layer; `temporal` optionally
    /// post-processes the block output inside the same residual branch.
    pub fn apply<FT>(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        config: &ModelConfig,
        h: Var,
        e: Var,
        topo: &EdgeTopo,
        drop: &mut DropoutStream,
        temporal: FT,
    ) -> Result<(Var, Var), TapeError>
    where
        FT: FnOnce(&mut Tape, &ParamSet, Var) -> Result<Var, TapeError>,
    {
        let pre = self.block_site.pre(tape, params, h)?;
        let spatial = self.block.apply(tape, params, pre, e, topo)?;
        let branch = temporal(tape, params, spatial)?;
        let mut h = self.block_site.post(tape, params, h, branch, config, drop)?;
        if let Some((ffn, site)) = &self.node_ffn {
            let pre = site.pre(tape, params, h)?;
            let branch = ffn.apply(tape, params, pre)?;
            h = site.post(tape, params, h, branch, config, drop)?;
        }
        let e = match &self.edge_ffn {
            Some((ffn, site)) => {
                let pre = site.pre(tape, params, e)?;
                let branch = ffn.apply(tape, params, pre)?;
                site.post(tape, params, e, branch, config, drop)?
            }
            None => e,
        };
        Ok((h, e))
    }
}

/// Build a `label.index` parameter name.
pub(crate) fn layer_name(base: &str, l: usize) -> String {
    alloc::format!("{base}{l}")
}
