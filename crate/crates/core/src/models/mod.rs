//! Network blocks and full model assemblies.
//!
//! Five model families share the same output contract: a `(stations × 6)`
//! forecast in scaled wind-speed units, produced on an autodiff tape.
//! Every trainable family ends in a persistence connection — the network
//! output is multiplied by a zero-initialized gate and added to the last
//! recorded value — so an untrained model reproduces the persistence
//! forecast exactly.

mod baselines;
mod blocks;
mod embed;
mod stugn;

pub use baselines::{persistence_forecast, StBaselineArch, TsfLinearArch};
pub use blocks::{
    gatv2_layer, mpnn_layer, tgat_layer, EdgeTopo, FfnParams, Gatv2Params, LinearParams,
    MpnnParams, TgatParams,
};
pub use embed::{sinusoidal_position_encoding, station_position_stats, EdgeEmbedder, NodeEmbedder};
pub use stugn::StugnArch;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, TapeError, Tensor, Var};
use crate::data::HORIZON;
use crate::graph::{AlignedWindow, UnifiedGraph};
use crate::seedstream::mix64;

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Stugn,
    StLstm,
    StTransformer,
    TsfLinear,
    Persistence,
}

impl ModelFamily {
    pub fn label(&self) -> &'static str {
        match self {
            ModelFamily::Stugn => "STUGN",
            ModelFamily::StLstm => "ST-LSTM",
            ModelFamily::StTransformer => "ST-Transformer",
            ModelFamily::TsfLinear => "TSF-Linear",
            ModelFamily::Persistence => "Persistence",
        }
    }
}

/// Graph update block selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphBlock {
    Mpnn,
    Gatv2,
    Tgat,
}

impl GraphBlock {
    pub fn label(&self) -> &'static str {
        match self {
            GraphBlock::Mpnn => "MPNN",
            GraphBlock::Gatv2 => "GATv2",
            GraphBlock::Tgat => "TGAT",
        }
    }
}

/// Residual/normalisation style around each sub-layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalisation {
    /// x + α·F(x) with a zero-initialized scalar gate per branch.
    ReZero,
    /// x + F(LayerNorm(x)) with learned affine.
    PreLayerNorm,
    /// Plain residual x + F(x).
    None,
}

/// Architecture selection plus the tuned hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub block: GraphBlock,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub ffn_node: bool,
    pub ffn_edge: bool,
    pub normalisation: Normalisation,
    pub learning_rate: f64,
}

impl ModelConfig {
    /// Tuned defaults per family and block: latent 64, 3 layers, 4 heads,
    /// FFN hidden 256, 5% dropout; learning rate 5e-5 for the unified
    /// models and 1e-5 for the traditional baselines; edge FFN on for
    /// MPNN/GATv2 and off for TGAT.
    pub fn defaults(family: ModelFamily, block: GraphBlock) -> ModelConfig {
        let ffn_edge = !matches!(block, GraphBlock::Tgat);
        let (learning_rate, ffn_node, normalisation) = match family {
            ModelFamily::Stugn => (5e-5, true, Normalisation::ReZero),
            ModelFamily::StLstm => (1e-5, false, Normalisation::None),
            ModelFamily::StTransformer => (1e-5, true, Normalisation::PreLayerNorm),
            ModelFamily::TsfLinear | ModelFamily::Persistence => {
                (1e-3, false, Normalisation::None)
            }
        };
        ModelConfig {
            family,
            block,
            latent_dim: 64,
            layers: 3,
            heads: 4,
            ffn_hidden: 256,
            dropout: 0.05,
            ffn_node,
            ffn_edge,
            normalisation,
            learning_rate,
        }
    }

    /// Row label in experiment reports, e.g. `STUGN-GATv2`.
    pub fn label(&self) -> String {
        match self.family {
            ModelFamily::Persistence | ModelFamily::TsfLinear => self.family.label().into(),
            _ => alloc::format!("{}-{}", self.family.label(), self.block.label()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim % self.heads != 0 {
            return Err(alloc::format!(
                "latent_dim {} not divisible by heads {}",
                self.latent_dim,
                self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Errors raised while assembling or running a model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Tape(TapeError),
    BadConfig(String),
    WrongInput { family: &'static str, expected: &'static str },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tape(e) => write!(f, "{e}"),
            ModelError::BadConfig(msg) => write!(f, "bad model config: {msg}"),
            ModelError::WrongInput { family, expected } => {
                write!(f, "{family} expects {expected} input")
            }
        }
    }
}

impl From<TapeError> for ModelError {
    fn from(e: TapeError) -> Self {
        ModelError::Tape(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

/// Dataset statistics frozen into a model at build time so they travel
/// with checkpoints: the Δt standardization scale of unified-graph edges,
/// the distance standardization of spatial edges and the station position
/// standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct DataStats {
    pub dt_scale: f64,
    pub dist_mean: f64,
    pub dist_std: f64,
    pub pos_mean: [f64; 2],
    pub pos_std: [f64; 2],
}

impl DataStats {
    /// Neutral statistics (no rescaling); mostly for tests.
    pub fn identity() -> DataStats {
        DataStats { dt_scale: 1.0, dist_mean: 0.0, dist_std: 1.0, pos_mean: [0.0; 2], pos_std: [1.0; 2] }
    }
}

/// Input of one window, in the representation the family needs.
pub enum WindowInput<'a> {
    Unified(&'a UnifiedGraph),
    Aligned(&'a AlignedWindow),
}

impl WindowInput<'_> {
    pub fn n_stations(&self) -> usize {
        match self {
            WindowInput::Unified(g) => g.forecast_nodes.len(),
            WindowInput::Aligned(a) => a.n_stations,
        }
    }

    pub fn persistence_scaled(&self) -> &[f64] {
        match self {
            WindowInput::Unified(g) => &g.persistence_scaled,
            WindowInput::Aligned(a) => &a.persistence_scaled,
        }
    }
}

enum Arch {
    Persistence,
    TsfLinear(TsfLinearArch),
    Baseline(StBaselineArch),
    Stugn(StugnArch),
}

/// A model family instance: configuration, parameters and wiring.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    arch: Arch,
}

impl Model {
    /// Build a model with freshly initialized parameters. The dataset
    /// statistics are stored as frozen parameters so they travel with
    /// checkpoints.
    pub fn new(config: ModelConfig, seed: u64, stats: &DataStats) -> Result<Model, ModelError> {
        config.validate().map_err(ModelError::BadConfig)?;
        let mut params = ParamSet::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let arch = match config.family {
            ModelFamily::Persistence => Arch::Persistence,
            ModelFamily::TsfLinear => Arch::TsfLinear(TsfLinearArch::init(&mut params, &mut rng)),
            ModelFamily::StLstm | ModelFamily::StTransformer => {
                Arch::Baseline(StBaselineArch::init(&config, &mut params, &mut rng, stats))
            }
            ModelFamily::Stugn => {
                Arch::Stugn(StugnArch::init(&config, &mut params, &mut rng, stats))
            }
        };
        Ok(Model { config, params, arch })
    }

    /// Rebuild the wiring of a checkpointed model around restored params.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Model, ModelError> {
        // Re-initialize with a throwaway seed to get the id layout, then
        // swap in the restored parameter set. Parameter creation order is
        // deterministic, so ids line up; names are checked by the caller.
        let mut model = Model::new(config, 0, &DataStats::identity())?;
        if model.params.len() != params.len() {
            return Err(ModelError::BadConfig(alloc::format!(
                "checkpoint has {} parameters, architecture expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in 0..params.len() {
            if model.params.get(id).name != params.get(id).name {
                return Err(ModelError::BadConfig(alloc::format!(
                    "checkpoint parameter {} is {}, architecture expects {}",
                    id,
                    params.get(id).name,
                    model.params.get(id).name
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Forecast one window: returns a `(stations × 6)` var in scaled units.
    pub fn forecast(
        &self,
        tape: &mut Tape,
        input: &WindowInput<'_>,
        dropout_seed: u64,
    ) -> Result<Var, ModelError> {
        self.forecast_with(&self.params, tape, input, dropout_seed)
    }

    /// Forecast with an explicit parameter set (gradient checks and
    /// optimizer-free evaluation).
    pub fn forecast_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        input: &WindowInput<'_>,
        dropout_seed: u64,
    ) -> Result<Var, ModelError> {
        let mut drop = DropoutStream::new(dropout_seed);
        match (&self.arch, input) {
            (Arch::Persistence, _) => {
                Ok(tape.constant(persistence_forecast(input.persistence_scaled())))
            }
            (Arch::TsfLinear(arch), WindowInput::Aligned(a)) => {
                arch.forward(tape, params, a).map_err(ModelError::from)
            }
            (Arch::Baseline(arch), WindowInput::Aligned(a)) => arch
                .forward(tape, params, &self.config, a, &mut drop)
                .map_err(ModelError::from),
            (Arch::Stugn(arch), WindowInput::Unified(g)) => arch
                .forward(tape, params, &self.config, g, &mut drop)
                .map_err(ModelError::from),
            (Arch::TsfLinear(_) | Arch::Baseline(_), _) => Err(ModelError::WrongInput {
                family: self.config.family.label(),
                expected: "aligned",
            }),
            (Arch::Stugn(_), _) => Err(ModelError::WrongInput {
                family: self.config.family.label(),
                expected: "unified graph",
            }),
        }
    }

    /// Whether this family trains on imputed (aligned) inputs.
    pub fn needs_aligned_input(&self) -> bool {
        !matches!(self.config.family, ModelFamily::Stugn)
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.config.family, ModelFamily::Persistence)
    }
}

/// Per-forward stream of dropout seeds, one per dropout site.
pub struct DropoutStream {
    base: u64,
    counter: u64,
}

impl DropoutStream {
    pub fn new(base: u64) -> DropoutStream {
        DropoutStream { base, counter: 0 }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.base ^ mix64(self.counter))
    }
}

/// Uniform init in ±sqrt(1/fan_in).
pub(crate) fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = crate::fmath::sqrt(1.0 / fan_in.max(1) as f64);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(shape, data)
}

/// Repeat per-station persistence values across the horizon columns.
pub(crate) fn persistence_tensor(persistence_scaled: &[f64]) -> Tensor {
    let n = persistence_scaled.len();
    let mut data = Vec::with_capacity(n * HORIZON);
    for &v in persistence_scaled {
        for _ in 0..HORIZON {
            data.push(v);
        }
    }
    Tensor::new(&[n, HORIZON], data)
}
