//! Metrics, evaluation and report-table CSV formats.

use std::fmt::Write as _;
use std::path::Path;

use stugn_core::evaluation::canonical_row_labels;

use crate::CliError;

/// One per-epoch training log line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub block: String,
    pub rate: f64,
    pub seed: u64,
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Fractional rate rendered as a percentage column value.
pub fn rate_percent(rate: f64) -> String {
    let pct = rate * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// `model,block,rate,seed,epoch,train_mse,val_mse`
pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("model,block,rate,seed,epoch,train_mse,val_mse\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6}",
            r.model,
            r.block,
            rate_percent(r.rate),
            r.seed,
            r.epoch,
            r.train_mse,
            r.val_mse
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One per-seed test evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub model: String,
    pub rate: f64,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub saving_kwh: f64,
}

/// `model,rate,seed,mse,mae,saving_kwh`
pub fn write_evaluation_csv(rows: &[EvaluationRow], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("model,rate,seed,mse,mae,saving_kwh\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.model,
            rate_percent(r.rate),
            r.seed,
            r.mse,
            r.mae,
            r.saving_kwh
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_evaluation_csv(path: &Path) -> Result<Vec<EvaluationRow>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::validation(format!("evaluation line {}: {e}", i + 2)))?;
        let field = |c: usize| row.get(c).unwrap_or("").to_string();
        let num = |c: usize| -> Result<f64, CliError> {
            row.get(c)
                .unwrap_or("")
                .parse()
                .map_err(|_| CliError::validation(format!("evaluation line {}: bad number", i + 2)))
        };
        rows.push(EvaluationRow {
            model: field(0),
            rate: num(1)? / 100.0,
            seed: num(2)? as u64,
            mse: num(3)?,
            mae: num(4)?,
            saving_kwh: num(5)?,
        });
    }
    Ok(rows)
}

/// Mean per (model, rate) over seeds, in canonical row order and ascending
/// rate order.
pub fn aggregate(rows: &[EvaluationRow]) -> Vec<(String, f64, f64, f64, f64)> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, rt)| *m == r.model && *rt == r.rate) {
            keys.push((r.model.clone(), r.rate));
        }
    }
    let canon = canonical_row_labels();
    let rank = |label: &str| canon.iter().position(|c| *c == label).unwrap_or(canon.len());
    keys.sort_by(|a, b| {
        rank(&a.0)
            .cmp(&rank(&b.0))
            .then(a.0.cmp(&b.0))
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    keys.iter()
        .map(|(model, rate)| {
            let cells: Vec<&EvaluationRow> =
                rows.iter().filter(|r| r.model == *model && r.rate == *rate).collect();
            let n = cells.len() as f64;
            (
                model.clone(),
                *rate,
                cells.iter().map(|c| c.mse).sum::<f64>() / n,
                cells.iter().map(|c| c.mae).sum::<f64>() / n,
                cells.iter().map(|c| c.saving_kwh).sum::<f64>() / n,
            )
        })
        .map(|(m, r, mse, mae, sav)| (m, r, mse, mae, sav))
        .collect()
}

/// `model,rate,mse,mae` — the prediction-accuracy table.
pub fn write_table2(agg: &[(String, f64, f64, f64, f64)], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("model,rate,mse,mae\n");
    for (model, rate, mse, mae, _) in agg {
        let _ = writeln!(out, "{},{},{:.4},{:.4}", model, rate_percent(*rate), mse, mae);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `model,rate,saving_kwh` — the energy-saving table.
pub fn write_table3(agg: &[(String, f64, f64, f64, f64)], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("model,rate,saving_kwh\n");
    for (model, rate, _, _, saving) in agg {
        let _ = writeln!(out, "{},{},{:.2}", model, rate_percent(*rate), saving);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Aligned plain-text rendering of both tables.
pub fn render_summary(agg: &[(String, f64, f64, f64, f64)]) -> String {
    let mut rates: Vec<f64> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for (model, rate, ..) in agg {
        if !rates.contains(rate) {
            rates.push(*rate);
        }
        if !models.contains(model) {
            models.push(model.clone());
        }
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let cell = |model: &str, rate: f64| -> Option<&(String, f64, f64, f64, f64)> {
        agg.iter().find(|(m, r, ..)| m == model && *r == rate)
    };
    let mut out = String::new();
    let _ = writeln!(out, "Prediction accuracy on the test split (m/s)");
    let mut header = format!("{:<22}", "model");
    for rate in &rates {
        header.push_str(&format!("  {:>8}  {:>8}", format!("mse@{}%", rate_percent(*rate)), format!("mae@{}%", rate_percent(*rate))));
    }
    let _ = writeln!(out, "{header}");
    for model in &models {
        let mut line = format!("{model:<22}");
        for rate in &rates {
            match cell(model, *rate) {
                Some((_, _, mse, mae, _)) => line.push_str(&format!("  {mse:>8.4}  {mae:>8.4}")),
                None => line.push_str(&format!("  {:>8}  {:>8}", "-", "-")),
            }
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Estimated energy saving vs persistence (kWh per 1-hour horizon)");
    let mut header = format!("{:<22}", "model");
    for rate in &rates {
        header.push_str(&format!("  {:>10}", format!("kwh@{}%", rate_percent(*rate))));
    }
    let _ = writeln!(out, "{header}");
    for model in &models {
        let mut line = format!("{model:<22}");
        for rate in &rates {
            match cell(model, *rate) {
                Some((_, _, _, _, saving)) => line.push_str(&format!("  {saving:>10.2}")),
                None => line.push_str(&format!("  {:>10}", "-")),
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out
}
