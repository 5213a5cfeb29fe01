//! Subcommand implementations, communicating through the run directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! data/base_10min.csv                      — generate (or user CSV)
//! corrupt/rate_<pct>/data_10min.csv        — corrupt
//! corrupt/rate_<pct>/corruption_log.csv
//! runs/<config-hash>/metrics.csv           — train
//! runs/<config-hash>/checkpoints/*.ckpt
//! runs/<config-hash>/evaluation.csv        — evaluate
//! runs/<config-hash>/table2.csv            — report
//! runs/<config-hash>/table3.csv
//! runs/<config-hash>/summary.txt
//! ```

use std::path::PathBuf;

use stugn_core::corruption::{inject_missing, BurstModel};
use stugn_core::data::SeriesSet;
use stugn_core::evaluation::PowerCurve;
use stugn_core::models::{Model, ModelConfig, ModelFamily};
use stugn_core::synth::generate_synthetic;
use stugn_core::evaluation::energy_saving_vs_persistence;
use stugn_core::training::{
    corruption_seed_for, evaluate_split, prepare_experiment_dataset, train, ExperimentDataset,
    TrainConfig,
};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::csvio;
use crate::report::{self, EvaluationRow, MetricsRow};
use crate::CliError;

/// Resolved file locations of one run.
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> RunPaths {
        let out_dir = cfg.out_dir.clone();
        let run_dir = out_dir.join("runs").join(cfg.run_hash());
        RunPaths { out_dir, run_dir }
    }

    pub fn base_csv(&self, cfg: &RunConfig) -> PathBuf {
        match &cfg.source {
            DataSource::Synthetic => self.out_dir.join("data").join("base_10min.csv"),
            DataSource::Csv(path) => path.clone(),
        }
    }

    pub fn corrupt_dir(&self, rate: f64) -> PathBuf {
        self.out_dir.join("corrupt").join(format!("rate_{}", report::rate_percent(rate)))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.run_dir.join("metrics.csv")
    }

    pub fn evaluation_csv(&self) -> PathBuf {
        self.run_dir.join("evaluation.csv")
    }

    pub fn checkpoint(&self, label: &str, rate: f64, seed: u64, which: &str) -> PathBuf {
        self.run_dir.join("checkpoints").join(format!(
            "{label}_rate{}_seed{seed}_{which}.ckpt",
            report::rate_percent(rate)
        ))
    }
}

fn load_base(cfg: &RunConfig, paths: &RunPaths) -> Result<SeriesSet, CliError> {
    let path = paths.base_csv(cfg);
    if !path.exists() {
        let hint = match cfg.source {
            DataSource::Synthetic => "run `stugn generate` first",
            DataSource::Csv(_) => "check data.csv_path",
        };
        return Err(CliError::validation(format!(
            "base dataset {} not found; {hint}",
            path.display()
        )));
    }
    csvio::ingest_series(&path)
}

/// `generate`: write the synthetic base dataset.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let DataSource::Synthetic = cfg.source else {
        return Err(CliError::validation(
            "data.source = csv: nothing to generate (the base dataset is supplied)",
        ));
    };
    let series =
        generate_synthetic(&cfg.synthetic).map_err(|e| CliError::validation(e.to_string()))?;
    let paths = RunPaths::new(cfg);
    let path = paths.base_csv(cfg);
    csvio::export_series(&series, &path)?;
    Ok(path)
}

/// `corrupt`: write corrupted datasets and their audit logs per rate.
pub fn cmd_corrupt(cfg: &RunConfig, rate_override: Option<f64>) -> Result<Vec<PathBuf>, CliError> {
    let paths = RunPaths::new(cfg);
    let base = load_base(cfg, &paths)?;
    let rates: Vec<f64> = match rate_override {
        Some(rate) => vec![rate],
        None => cfg.train.missing_rates.clone(),
    };
    let mut written = Vec::new();
    for rate in rates {
        let seed = corruption_seed_for(cfg.train.corruption_seed, rate);
        let burst = BurstModel::new(rate, seed).map_err(|e| CliError::validation(e.to_string()))?;
        let (corrupted, log) =
            inject_missing(&base, &burst).map_err(|e| CliError::runtime(e.to_string()))?;
        let dir = paths.corrupt_dir(rate);
        csvio::export_series(&corrupted, &dir.join("data_10min.csv"))?;
        csvio::export_corruption_log(&log, &dir.join("corruption_log.csv"))?;
        written.push(dir);
    }
    Ok(written)
}

struct SeedRun {
    seed: u64,
    history: Vec<stugn_core::training::EpochMetrics>,
    best: stugn_core::autodiff::ParamSet,
    fin: stugn_core::autodiff::ParamSet,
}

struct CellBundle {
    model_idx: usize,
    rate_idx: usize,
    result: Result<Vec<SeedRun>, String>,
}

fn train_cell(
    config: &ModelConfig,
    data: &ExperimentDataset,
    tcfg: &TrainConfig,
) -> Result<Vec<SeedRun>, String> {
    let mut runs = Vec::new();
    let seeds: &[u64] = if config.family == ModelFamily::Persistence {
        &tcfg.seeds[..1]
    } else {
        &tcfg.seeds
    };
    for &seed in seeds {
        let mut model = Model::new(config.clone(), seed, &data.stats).map_err(|e| e.to_string())?;
        if model.is_trainable() {
            let result = train(&mut model, data, tcfg, seed).map_err(|e| e.to_string())?;
            runs.push(SeedRun {
                seed,
                history: result.history,
                best: result.best_params,
                fin: model.params.clone(),
            });
        } else {
            runs.push(SeedRun {
                seed,
                history: Vec::new(),
                best: model.params.clone(),
                fin: model.params.clone(),
            });
        }
    }
    Ok(runs)
}

fn prepare_all_datasets(
    cfg: &RunConfig,
    base: &SeriesSet,
) -> Result<Vec<ExperimentDataset>, CliError> {
    cfg.train
        .missing_rates
        .iter()
        .map(|&rate| {
            prepare_experiment_dataset(
                base,
                rate,
                corruption_seed_for(cfg.train.corruption_seed, rate),
                cfg.train.window_stride,
                cfg.train.eval_stride,
            )
            .map_err(|e| CliError::runtime(format!("rate {rate}: {e}")))
        })
        .collect()
}

// Run one closure per cell index across `jobs` threads; results land in
// index-ordered slots, so output bytes do not depend on parallelism.
fn run_cells<F>(n_cells: usize, jobs: usize, f: F) -> Vec<CellBundle>
where
    F: Fn(usize) -> CellBundle + Sync,
{
    let jobs = jobs.max(1).min(n_cells.max(1));
    let slots: Vec<std::sync::Mutex<Option<CellBundle>>> =
        (0..n_cells).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n_cells {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(i));
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every cell produced"))
        .collect()
}

/// `train`: run the experiment matrix, writing per-epoch metrics and
/// best/final checkpoints per (model, rate, seed).
pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<PathBuf, CliError> {
    let paths = RunPaths::new(cfg);
    let base = load_base(cfg, &paths)?;
    let datasets = prepare_all_datasets(cfg, &base)?;
    let n_rates = datasets.len();
    let n_cells = cfg.models.len() * n_rates;

    let bundles = run_cells(n_cells, jobs, |i| {
        let model_idx = i / n_rates;
        let rate_idx = i % n_rates;
        let result = train_cell(&cfg.models[model_idx], &datasets[rate_idx], &cfg.train);
        CellBundle { model_idx, rate_idx, result }
    });

    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for bundle in &bundles {
        let config = &cfg.models[bundle.model_idx];
        let rate = cfg.train.missing_rates[bundle.rate_idx];
        match &bundle.result {
            Ok(runs) => {
                for run in runs {
                    checkpoint::save(
                        config,
                        &run.best,
                        &paths.checkpoint(&config.label(), rate, run.seed, "best"),
                    )?;
                    checkpoint::save(
                        config,
                        &run.fin,
                        &paths.checkpoint(&config.label(), rate, run.seed, "final"),
                    )?;
                    for epoch in &run.history {
                        metrics.push(MetricsRow {
                            model: config.family.label().to_string(),
                            block: config.block.label().to_string(),
                            rate,
                            seed: run.seed,
                            epoch: epoch.epoch,
                            train_mse: epoch.train_mse,
                            val_mse: epoch.val_mse,
                        });
                    }
                }
            }
            Err(e) => failures.push(format!("{} at rate {}: {e}", config.label(), rate)),
        }
    }
    report::write_metrics_csv(&metrics, &paths.metrics_csv())?;
    if !failures.is_empty() {
        return Err(CliError::runtime(format!(
            "{} cell(s) failed:\n{}",
            failures.len(),
            failures.join("\n")
        )));
    }
    Ok(paths.metrics_csv())
}

/// `evaluate`: score best-validation checkpoints on the test split.
pub fn cmd_evaluate(cfg: &RunConfig, jobs: usize) -> Result<PathBuf, CliError> {
    let paths = RunPaths::new(cfg);
    let base = load_base(cfg, &paths)?;
    let datasets = prepare_all_datasets(cfg, &base)?;
    let n_rates = datasets.len();
    let n_cells = cfg.models.len() * n_rates;
    let curve = cfg.power.clone();

    let slots: Vec<std::sync::Mutex<Option<Result<Vec<EvaluationRow>, CliError>>>> =
        (0..n_cells).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let jobs_n = jobs.max(1).min(n_cells.max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs_n {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n_cells {
                    break;
                }
                let model_idx = i / n_rates;
                let rate_idx = i % n_rates;
                let out = evaluate_cell(
                    cfg,
                    &paths,
                    &cfg.models[model_idx],
                    &datasets[rate_idx],
                    &curve,
                );
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut rows: Vec<EvaluationRow> = Vec::new();
    for slot in slots {
        rows.extend(slot.into_inner().unwrap().expect("every cell produced")?);
    }
    report::write_evaluation_csv(&rows, &paths.evaluation_csv())?;
    Ok(paths.evaluation_csv())
}

fn evaluate_cell(
    cfg: &RunConfig,
    paths: &RunPaths,
    config: &ModelConfig,
    data: &ExperimentDataset,
    curve: &PowerCurve,
) -> Result<Vec<EvaluationRow>, CliError> {
    let seeds: &[u64] = if config.family == ModelFamily::Persistence {
        &cfg.train.seeds[..1]
    } else {
        &cfg.train.seeds
    };
    let mut rows = Vec::new();
    for &seed in seeds {
        let path = paths.checkpoint(&config.label(), data.rate, seed, "best");
        if !path.exists() {
            return Err(CliError::validation(format!(
                "checkpoint {} not found; run `stugn train` first",
                path.display()
            )));
        }
        let model = checkpoint::load_model(&path)?;
        let eval = evaluate_split(&model, &model.params, data, &data.test, curve)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let saving = energy_saving_vs_persistence(
            &eval.model_energy,
            &eval.persistence_energy,
            &eval.truth_energy,
        );
        rows.push(EvaluationRow {
            model: config.label(),
            rate: data.rate,
            seed,
            mse: eval.mse,
            mae: eval.mae,
            saving_kwh: saving,
        });
    }
    Ok(rows)
}

/// `report`: render the accuracy and energy tables plus a text summary.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let paths = RunPaths::new(cfg);
    let eval_path = paths.evaluation_csv();
    if !eval_path.exists() {
        return Err(CliError::validation(format!(
            "evaluation results {} not found; run `stugn evaluate` first",
            eval_path.display()
        )));
    }
    let rows = report::read_evaluation_csv(&eval_path)?;
    let agg = report::aggregate(&rows);
    let table2 = paths.run_dir.join("table2.csv");
    let table3 = paths.run_dir.join("table3.csv");
    let summary = paths.run_dir.join("summary.txt");
    report::write_table2(&agg, &table2)?;
    report::write_table3(&agg, &table3)?;
    std::fs::write(&summary, report::render_summary(&agg))?;
    Ok(vec![table2, table3, summary])
}
