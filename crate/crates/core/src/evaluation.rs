//! Test-set metrics in physical units and power-curve energy conversion.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::data::HORIZON;
use crate::fmath;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// Every entry was masked out.
    EmptyMask,
    /// Wind speed below zero.
    NegativeWind(f64),
    /// Prediction/target/mask lengths differ.
    LengthMismatch { pred: usize, target: usize, mask: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyMask => write!(f, "no valid entries under the mask"),
            EvalError::NegativeWind(v) => write!(f, "wind speed must be >= 0, got {v}"),
            EvalError::LengthMismatch { pred, target, mask } => {
                write!(f, "length mismatch: pred {pred}, target {target}, mask {mask}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

fn check_lengths(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(), EvalError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
            mask: mask.len(),
        });
    }
    Ok(())
}

/// Mean squared error over masked-in entries.
pub fn mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64, EvalError> {
    check_lengths(pred, target, mask)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            let d = target[i] - pred[i];
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// Mean absolute error over masked-in entries.
pub fn mae(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64, EvalError> {
    check_lengths(pred, target, mask)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            acc += fmath::abs(target[i] - pred[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// Reference-turbine power curve: cubic between cut-in and rated speed,
/// rated output up to cut-out, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    pub rated_power_kw: f64,
}

impl Default for PowerCurve {
    /// The 5 MW reference turbine: cut-in 3 m/s, rated 11.4 m/s,
    /// cut-out 25 m/s.
    fn default() -> PowerCurve {
        PowerCurve { cut_in: 3.0, rated_speed: 11.4, cut_out: 25.0, rated_power_kw: 5000.0 }
    }
}

/// Electrical power in kW for a wind speed in m/s.
pub fn power_from_wind(v: f64, curve: &PowerCurve) -> Result<f64, EvalError> {
    if v < 0.0 || !v.is_finite() {
        return Err(EvalError::NegativeWind(v));
    }
    if v < curve.cut_in || v >= curve.cut_out {
        return Ok(0.0);
    }
    if v >= curve.rated_speed {
        return Ok(curve.rated_power_kw);
    }
    let v3 = v * v * v;
    let ci3 = curve.cut_in * curve.cut_in * curve.cut_in;
    let r3 = curve.rated_speed * curve.rated_speed * curve.rated_speed;
    Ok(curve.rated_power_kw * (v3 - ci3) / (r3 - ci3))
}

/// Energy in kWh over a horizon of six 10-minute wind speeds.
pub fn energy_over_horizon(forecast: &[f64], curve: &PowerCurve) -> Result<f64, EvalError> {
    let mut total_kw = 0.0;
    for &v in forecast {
        total_kw += power_from_wind(v, curve)?;
    }
    Ok(total_kw / 6.0)
}

/// Mean of |E_true − E_pers| − |E_true − E_model| over forecast cases;
/// positive values mean the model beats persistence.
pub fn energy_saving_vs_persistence(
    model_energy: &[f64],
    persistence_energy: &[f64],
    truth_energy: &[f64],
) -> f64 {
    if model_energy.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..model_energy.len() {
        acc += fmath::abs(truth_energy[i] - persistence_energy[i])
            - fmath::abs(truth_energy[i] - model_energy[i]);
    }
    acc / model_energy.len() as f64
}

/// Metrics of one (model, missing-rate) cell, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    /// MSE in (m/s)^2 on the test split.
    pub mse: f64,
    /// MAE in m/s on the test split.
    pub mae: f64,
    /// Energy saving vs persistence in kWh per 1-hour horizon.
    pub saving_kwh: f64,
}

/// One model row across all missing rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    /// One entry per missing rate; `Err` carries the cell's failure text.
    pub cells: Vec<Result<CellMetrics, String>>,
}

/// Experiment results in the accuracy/energy table layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub missing_rates: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

/// The canonical report row labels, in table order.
pub fn canonical_row_labels() -> Vec<&'static str> {
    alloc::vec![
        "Persistence",
        "TSF-Linear",
        "ST-LSTM-MPNN",
        "ST-LSTM-GATv2",
        "ST-LSTM-TGAT",
        "ST-Transformer-MPNN",
        "ST-Transformer-GATv2",
        "ST-Transformer-TGAT",
        "STUGN-MPNN",
        "STUGN-GATv2",
        "STUGN-TGAT",
    ]
}

/// Horizon length used by the energy metrics.
pub const ENERGY_HORIZON_STEPS: usize = HORIZON;
