//! Loss, optimizer, epoch loop and the missing-rate × seed experiment
//! matrix.
//!
//! Targets always come from the uncorrupted series and are masked by the
//! original availability; injected missingness only degrades the inputs.
//! Unified-graph models consume the corrupted series as-is, baselines the
//! imputed variant.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, TapeError, Tensor, Var};
use crate::corruption::{inject_missing, interpolate_impute, BurstModel, CorruptionError, CorruptionLog};
use crate::data::{
    make_windows, split_dataset, DataError, Scaler, SeriesPair, SeriesSet, Window, HORIZON,
};
use crate::evaluation::{
    energy_over_horizon, energy_saving_vs_persistence, CellMetrics, EvalError, ExperimentReport,
    PowerCurve, ReportRow,
};
use crate::fmath;
use crate::graph::{
    build_spatial_graph, build_unified_graph, knn_stations, GraphError, ScalerPair, SpatialGraph,
    SPATIAL_NEIGHBOURS,
};
use crate::models::{DataStats, Model, ModelConfig, ModelError, WindowInput};
use crate::models::{persistence_forecast, station_position_stats};
use crate::seedstream::mix64;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Data(DataError),
    Corruption(CorruptionError),
    Graph(GraphError),
    Model(ModelError),
    Tape(TapeError),
    Eval(EvalError),
    /// No target entries left under the mask.
    EmptyMask,
    /// Loss became non-finite.
    Diverged { epoch: usize },
    /// A split yields no training windows.
    NoWindows { split: &'static str },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::Corruption(e) => write!(f, "{e}"),
            TrainError::Graph(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Tape(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
            TrainError::EmptyMask => write!(f, "no target entries under the mask"),
            TrainError::Diverged { epoch } => write!(f, "training diverged (non-finite loss) at epoch {epoch}"),
            TrainError::NoWindows { split } => write!(f, "{split} split yields no windows"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

macro_rules! from_err {
    ($from:ty, $variant:ident) => {
        impl From<$from> for TrainError {
            fn from(e: $from) -> Self {
                TrainError::$variant(e)
            }
        }
    };
}
from_err!(DataError, Data);
from_err!(CorruptionError, Corruption);
from_err!(GraphError, Graph);
from_err!(ModelError, Model);
from_err!(TapeError, Tape);
from_err!(EvalError, Eval);

/// Experiment-wide training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Model-init/shuffle/dropout seeds; metrics average over these.
    pub seeds: Vec<u64>,
    pub missing_rates: Vec<f64>,
    /// Stride over training window anchors (1 = every window).
    pub window_stride: usize,
    /// Stride over validation/test window anchors.
    pub eval_stride: usize,
    /// Overrides the per-family learning rate when set.
    pub learning_rate: Option<f64>,
    /// Seed of the missing-data injection, mixed with the rate index.
    pub corruption_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 25,
            dropout: 0.05,
            seeds: vec![11, 23, 37, 53, 71],
            missing_rates: vec![0.0, 0.10, 0.20, 0.30],
            window_stride: 1,
            eval_stride: 1,
            learning_rate: None,
            corruption_seed: 0x57_55_47_4e,
        }
    }
}

/// Adam optimizer state: one moment pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> AdamState {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let bc1 = 1.0 - fmath::powi(state.beta1, state.step as i32);
    let bc2 = 1.0 - fmath::powi(state.beta2, state.step as i32);
    for id in 0..params.len() {
        if !params.get(id).trainable {
            continue;
        }
        let m = state.m[id].data_mut();
        let v = state.v[id].data_mut();
        let p = params.get_mut(id);
        let g = p.grad.data().to_vec();
        let w = p.value.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (fmath::sqrt(v_hat) + state.epsilon);
        }
    }
}

/// Masked mean-squared-error loss on the tape.
pub fn mse_loss(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    mask: &[bool],
) -> Result<Var, TrainError> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(TrainError::EmptyMask);
    }
    let mask01 = Tensor::new(
        target.shape(),
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    );
    let tv = tape.constant(target.clone());
    let mv = tape.constant(mask01);
    let diff = tape.sub(pred, tv)?;
    let masked = tape.mul(diff, mv)?;
    let sq = tape.mul(masked, masked)?;
    let total = tape.sum_all(sq)?;
    Ok(tape.scale_const(total, 1.0 / count as f64)?)
}

/// One split of an experiment dataset with all three data variants.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub truth: SeriesPair,
    pub corrupted: SeriesPair,
    pub imputed: SeriesPair,
    pub windows: Vec<Window>,
}

/// Everything needed to train and score models at one missing rate.
#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    pub rate: f64,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    pub scalers: ScalerPair,
    pub spatial: SpatialGraph,
    pub stats: DataStats,
    pub corruption_log: CorruptionLog,
}

fn stride_windows(mut windows: Vec<Window>, stride: usize) -> Vec<Window> {
    if stride <= 1 {
        return windows;
    }
    windows = windows.into_iter().step_by(stride).collect();
    windows
}

fn build_split(
    truth10: SeriesSet,
    corrupted10: SeriesSet,
    stride: usize,
) -> Result<SplitData, TrainError> {
    let truth = SeriesPair::derive(truth10)?;
    let imputed10 = interpolate_impute(&corrupted10)?;
    let corrupted = SeriesPair::derive(corrupted10)?;
    let imputed = SeriesPair::derive(imputed10)?;
    let windows = stride_windows(make_windows(&truth), stride);
    Ok(SplitData { truth, corrupted, imputed, windows })
}

/// Corrupt, split, impute, fit scalers and measure edge statistics for one
/// missing rate.
pub fn prepare_experiment_dataset(
    full10: &SeriesSet,
    rate: f64,
    corruption_seed: u64,
    train_stride: usize,
    eval_stride: usize,
) -> Result<ExperimentDataset, TrainError> {
    let burst = BurstModel::new(rate, corruption_seed)?;
    let (corrupted10, corruption_log) = inject_missing(full10, &burst)?;

    let (truth_tr, truth_va, truth_te) = split_dataset(full10)?;
    let (corr_tr, corr_va, corr_te) = split_dataset(&corrupted10)?;

    let train = build_split(truth_tr, corr_tr, train_stride)?;
    let val = build_split(truth_va, corr_va, eval_stride)?;
    let test = build_split(truth_te, corr_te, eval_stride)?;

    let scalers = ScalerPair {
        ten_min: Scaler::fit(&train.corrupted.ten_min)?,
        hourly: Scaler::fit(&train.corrupted.hourly)?,
    };
    let stations = full10.stations().to_vec();
    let spatial = knn_stations(&stations, SPATIAL_NEIGHBOURS);

    let sample: Vec<crate::graph::UnifiedGraph> = train
        .windows
        .iter()
        .take(8)
        .map(|w| build_unified_graph(w, &train.corrupted, &scalers, &spatial))
        .collect();
    let dt_scale = crate::graph::edge_dt_scale(&sample);
    let (dist_mean, dist_std) = spatial.distance_stats();
    let (pos_mean, pos_std) = station_position_stats(&stations);
    let stats = DataStats { dt_scale, dist_mean, dist_std, pos_mean, pos_std };

    Ok(ExperimentDataset { rate, train, val, test, scalers, spatial, stats, corruption_log })
}

/// Scaled wind-speed targets of one window with the truth-availability
/// mask.
pub fn window_targets(
    truth: &SeriesPair,
    window: &Window,
    scalers: &ScalerPair,
) -> (Tensor, Vec<bool>) {
    let n = truth.ten_min.n_stations();
    let mut values = vec![0.0; n * HORIZON];
    let mut mask = vec![false; n * HORIZON];
    for s in 0..n {
        for (k, slot) in window.targets.clone().enumerate() {
            if let Some(raw) = truth.ten_min.raw(s, slot) {
                values[s * HORIZON + k] = scalers.ten_min.apply_channel(0, raw[0]);
                mask[s * HORIZON + k] = true;
            }
        }
    }
    (Tensor::new(&[n, HORIZON], values), mask)
}

fn forecast_window(
    model: &Model,
    params: &ParamSet,
    data: &ExperimentDataset,
    split: &SplitData,
    window: &Window,
    tape: &mut Tape,
    dropout_seed: u64,
) -> Result<Var, TrainError> {
    if model.needs_aligned_input() {
        let aligned = build_spatial_graph(window, &split.imputed, &data.scalers, &data.spatial)?;
        Ok(model.forecast_with(params, tape, &WindowInput::Aligned(&aligned), dropout_seed)?)
    } else {
        let graph = build_unified_graph(window, &split.corrupted, &data.scalers, &data.spatial);
        Ok(model.forecast_with(params, tape, &WindowInput::Unified(&graph), dropout_seed)?)
    }
}

/// Metrics of one split evaluation; errors in scaled units and in m/s,
/// plus per-case horizon energies for the saving metric.
#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub mse_scaled: f64,
    pub mse: f64,
    pub mae: f64,
    pub model_energy: Vec<f64>,
    pub persistence_energy: Vec<f64>,
    pub truth_energy: Vec<f64>,
}

/// Evaluate a parameter set over a split (dropout inactive).
pub fn evaluate_split(
    model: &Model,
    params: &ParamSet,
    data: &ExperimentDataset,
    split: &SplitData,
    curve: &PowerCurve,
) -> Result<SplitEvaluation, TrainError> {
    if split.windows.is_empty() {
        return Err(TrainError::NoWindows { split: "evaluation" });
    }
    let n = split.truth.ten_min.n_stations();
    let scaler = &data.scalers.ten_min;
    let mut se_scaled = 0.0;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut count = 0usize;
    let mut model_energy = Vec::new();
    let mut persistence_energy = Vec::new();
    let mut truth_energy = Vec::new();
    for window in &split.windows {
        let mut tape = Tape::new(false);
        let pred = forecast_window(model, params, data, split, window, &mut tape, 0)?;
        let pred = tape.value(pred);
        let (target, mask) = window_targets(&split.truth, window, &data.scalers);
        // the energy baseline is always the Persistence model's forecast
        // (imputed inputs), so savings are comparable across rows
        let aligned = build_spatial_graph(window, &split.imputed, &data.scalers, &data.spatial)?;
        let persistence = persistence_forecast(&aligned.persistence_scaled);
        for s in 0..n {
            let mut full = true;
            let mut e_model = [0.0; HORIZON];
            let mut e_pers = [0.0; HORIZON];
            let mut e_true = [0.0; HORIZON];
            for k in 0..HORIZON {
                let idx = s * HORIZON + k;
                if mask[idx] {
                    let d_scaled = pred.data()[idx] - target.data()[idx];
                    se_scaled += d_scaled * d_scaled;
                    let p_mps = scaler.invert_channel(0, pred.data()[idx]);
                    let t_mps = scaler.invert_channel(0, target.data()[idx]);
                    let d = p_mps - t_mps;
                    se += d * d;
                    ae += fmath::abs(d);
                    count += 1;
                    e_model[k] = p_mps.max(0.0);
                    e_pers[k] = scaler.invert_channel(0, persistence.at(s, k)).max(0.0);
                    e_true[k] = t_mps.max(0.0);
                } else {
                    full = false;
                }
            }
            // energy is defined over a complete horizon only
            if full {
                model_energy.push(energy_over_horizon(&e_model, curve)?);
                persistence_energy.push(energy_over_horizon(&e_pers, curve)?);
                truth_energy.push(energy_over_horizon(&e_true, curve)?);
            }
        }
    }
    if count == 0 {
        return Err(TrainError::EmptyMask);
    }
    Ok(SplitEvaluation {
        mse_scaled: se_scaled / count as f64,
        mse: se / count as f64,
        mae: ae / count as f64,
        model_energy,
        persistence_energy,
        truth_energy,
    })
}

/// Losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Entry 0 is the pre-training evaluation.
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best_params: ParamSet,
}

/// Train a model on the prepared dataset with shuffled mini-batches.
///
/// Deterministic given `run_seed`: it drives the parameter init (already
/// done by the caller), the shuffle order and the dropout masks.
pub fn train(
    model: &mut Model,
    data: &ExperimentDataset,
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<TrainResult, TrainError> {
    if data.train.windows.is_empty() {
        return Err(TrainError::NoWindows { split: "train" });
    }
    let curve = PowerCurve::default();
    let lr = cfg.learning_rate.unwrap_or(model.config.learning_rate);
    let mut state = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    let initial_train = evaluate_split(model, &model.params, data, &data.train, &curve)?;
    let initial_val = evaluate_split(model, &model.params, data, &data.val, &curve)?;
    history.push(EpochMetrics {
        epoch: 0,
        train_mse: initial_train.mse_scaled,
        val_mse: initial_val.mse_scaled,
    });
    let mut best_epoch = 0;
    let mut best_val = initial_val.mse_scaled;
    let mut best_params = model.params.clone();

    let mut order: Vec<usize> = (0..data.train.windows.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng =
            <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(mix64(run_seed ^ mix64(epoch as u64)));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &wi in batch {
                let window = &data.train.windows[wi];
                let mut tape = Tape::new(true);
                let dropout_seed = mix64(run_seed ^ mix64((epoch as u64) << 32 | wi as u64));
                let pred = forecast_window(
                    model,
                    &model.params.clone(),
                    data,
                    &data.train,
                    window,
                    &mut tape,
                    dropout_seed,
                )?;
                let (target, mask) = window_targets(&data.train.truth, window, &data.scalers);
                let loss = mse_loss(&mut tape, pred, &target, &mask)?;
                let loss_value = tape.value(loss).data()[0];
                if !loss_value.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                epoch_loss += loss_value;
                seen += 1;
                let grads = tape.backward(loss)?;
                tape.accumulate_param_grads(&grads, &mut model.params, scale);
            }
            adam_step(&mut model.params, &mut state, lr);
        }
        let val = evaluate_split(model, &model.params, data, &data.val, &curve)?;
        history.push(EpochMetrics {
            epoch,
            train_mse: epoch_loss / seen.max(1) as f64,
            val_mse: val.mse_scaled,
        });
        if val.mse_scaled < best_val {
            best_val = val.mse_scaled;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
    }
    Ok(TrainResult { history, best_epoch, best_val_mse: best_val, best_params })
}

/// Per-cell training trace for the metrics log.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub label: String,
    pub rate: f64,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
}

/// Train the full (model × rate × seed) matrix and average per-cell test
/// metrics over seeds. Per-cell failures are recorded in the report and
/// the rest of the matrix continues.
pub fn run_experiment(
    configs: &[ModelConfig],
    full10: &SeriesSet,
    cfg: &TrainConfig,
    curve: &PowerCurve,
) -> Result<(ExperimentReport, Vec<CellRun>), TrainError> {
    let mut datasets = Vec::with_capacity(cfg.missing_rates.len());
    for &rate in &cfg.missing_rates {
        datasets.push(prepare_experiment_dataset(
            full10,
            rate,
            corruption_seed_for(cfg.corruption_seed, rate),
            cfg.window_stride,
            cfg.eval_stride,
        )?);
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut runs = Vec::new();
    for config in configs {
        let mut cells = Vec::with_capacity(datasets.len());
        for data in &datasets {
            cells.push(run_cell(config, data, cfg, &mut runs, curve));
        }
        rows.push(ReportRow { label: config.label(), cells });
    }
    Ok((
        ExperimentReport { missing_rates: cfg.missing_rates.clone(), rows },
        runs,
    ))
}

/// Train and score one (model, rate) cell across all seeds.
pub fn run_cell(
    config: &ModelConfig,
    data: &ExperimentDataset,
    cfg: &TrainConfig,
    runs: &mut Vec<CellRun>,
    curve: &PowerCurve,
) -> Result<CellMetrics, String> {
    let mut config = config.clone();
    config.dropout = cfg.dropout;
    let mut inner = || -> Result<CellMetrics, TrainError> {
        let mut acc = CellMetrics { mse: 0.0, mae: 0.0, saving_kwh: 0.0 };
        let seeds: &[u64] =
            if config.family == crate::models::ModelFamily::Persistence { &cfg.seeds[..1] } else { &cfg.seeds };
        for &seed in seeds {
            let mut model = Model::new(config.clone(), seed, &data.stats)?;
            let eval_params = if model.is_trainable() {
                let result = train(&mut model, data, cfg, seed)?;
                runs.push(CellRun {
                    label: config.label(),
                    rate: data.rate,
                    seed,
                    history: result.history.clone(),
                });
                result.best_params
            } else {
                model.params.clone()
            };
            let eval = evaluate_split(&model, &eval_params, data, &data.test, curve)?;
            let saving = energy_saving_vs_persistence(
                &eval.model_energy,
                &eval.persistence_energy,
                &eval.truth_energy,
            );
            acc.mse += eval.mse;
            acc.mae += eval.mae;
            acc.saving_kwh += saving;
        }
        let n = seeds.len() as f64;
        Ok(CellMetrics { mse: acc.mse / n, mae: acc.mae / n, saving_kwh: acc.saving_kwh / n })
    };
    inner().map_err(|e| e.to_string())
}

/// Seed of the missing-data injection for one rate, derived from the rate
/// value so audit runs and training agree regardless of rate ordering.
pub fn corruption_seed_for(base: u64, rate: f64) -> u64 {
    mix64(base ^ mix64(rate.to_bits()))
}

/// Anchor range helper for tests: the valid target ranges of a split.
pub fn window_target_ranges(split: &SplitData) -> Vec<Range<usize>> {
    split.windows.iter().map(|w| w.targets.clone()).collect()
}
