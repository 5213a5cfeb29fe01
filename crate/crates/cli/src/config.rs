//! Flat key-value run configuration with `[section]` headers.
//!
//! Every key has a documented default; unknown keys are rejected so typos
//! fail loudly. `#` starts a comment. The canonical serialization (sorted
//! keys) also feeds the run-directory hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stugn_core::models::{GraphBlock, ModelConfig, ModelFamily};
use stugn_core::evaluation::PowerCurve;
use stugn_core::synth::SyntheticSpec;
use stugn_core::training::TrainConfig;

use crate::CliError;

/// Where the base dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    pub models: Vec<ModelConfig>,
    pub train: TrainConfig,
    pub power: PowerCurve,
    pub out_dir: PathBuf,
}

struct Parsed {
    entries: BTreeMap<String, String>,
}

impl Parsed {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }
}

fn parse_entries(text: &str) -> Result<Parsed, CliError> {
    let mut entries = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::validation(format!(
                "config line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        let full = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        if entries.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::validation(format!("config line {}: duplicate key {full}", lineno + 1)));
        }
    }
    Ok(Parsed { entries })
}

const KNOWN_KEYS: &[&str] = &[
    "data.source",
    "data.csv_path",
    "synthetic.stations",
    "synthetic.grid_len",
    "synthetic.seed",
    "synthetic.ar1",
    "synthetic.ar2",
    "synthetic.offset",
    "synthetic.offset_spread",
    "synthetic.scale_spread",
    "synthetic.diurnal",
    "synthetic.noise_std",
    "synthetic.corr_km",
    "model.families",
    "model.latent_dim",
    "model.layers",
    "model.heads",
    "model.ffn_hidden",
    "train.epochs",
    "train.batch_size",
    "train.dropout",
    "train.seeds",
    "train.rates",
    "train.window_stride",
    "train.eval_stride",
    "train.learning_rate",
    "train.corruption_seed",
    "power.cut_in",
    "power.rated_speed",
    "power.cut_out",
    "power.rated_power_kw",
    "output.dir",
];

fn parse_num<T: std::str::FromStr>(p: &Parsed, key: &str, default: T) -> Result<T, CliError> {
    match p.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| CliError::validation(format!("config key {key}: cannot parse `{raw}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(p: &Parsed, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError> {
    match p.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|_| CliError::validation(format!("config key {key}: cannot parse `{part}`")))
            })
            .collect(),
    }
}

/// Model rows selected by label; `all` expands to the full table.
fn parse_models(p: &Parsed) -> Result<Vec<(ModelFamily, GraphBlock)>, CliError> {
    let raw = p.get("model.families").unwrap_or("all");
    let mut out = Vec::new();
    if raw.trim() == "all" {
        out.push((ModelFamily::Persistence, GraphBlock::Mpnn));
        out.push((ModelFamily::TsfLinear, GraphBlock::Mpnn));
        for family in [ModelFamily::StLstm, ModelFamily::StTransformer, ModelFamily::Stugn] {
            for block in [GraphBlock::Mpnn, GraphBlock::Gatv2, GraphBlock::Tgat] {
                out.push((family, block));
            }
        }
        return Ok(out);
    }
    for label in raw.split(',') {
        out.push(model_from_label(label.trim())?);
    }
    Ok(out)
}

fn model_from_label(label: &str) -> Result<(ModelFamily, GraphBlock), CliError> {
    let lower = label.to_ascii_lowercase();
    let (family, block_str) = if let Some(rest) = lower.strip_prefix("stugn-") {
        (ModelFamily::Stugn, rest)
    } else if let Some(rest) = lower.strip_prefix("st-lstm-") {
        (ModelFamily::StLstm, rest)
    } else if let Some(rest) = lower.strip_prefix("st-transformer-") {
        (ModelFamily::StTransformer, rest)
    } else if lower == "tsf-linear" {
        return Ok((ModelFamily::TsfLinear, GraphBlock::Mpnn));
    } else if lower == "persistence" {
        return Ok((ModelFamily::Persistence, GraphBlock::Mpnn));
    } else {
        return Err(CliError::validation(format!("unknown model label `{label}`")));
    };
    let block = match block_str {
        "mpnn" => GraphBlock::Mpnn,
        "gatv2" => GraphBlock::Gatv2,
        "tgat" => GraphBlock::Tgat,
        other => return Err(CliError::validation(format!("unknown graph block `{other}` in `{label}`"))),
    };
    Ok((family, block))
}

impl RunConfig {
    /// Parse a config file; missing keys take their documented defaults.
    pub fn from_path(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<RunConfig, CliError> {
        let parsed = parse_entries(text)?;
        for key in parsed.entries.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::validation(format!("unknown config key `{key}`")));
            }
        }

        let source = match parsed.get("data.source").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic,
            "csv" => {
                let p = parsed.get("data.csv_path").ok_or_else(|| {
                    CliError::validation("data.source = csv requires data.csv_path")
                })?;
                DataSource::Csv(PathBuf::from(p))
            }
            other => {
                return Err(CliError::validation(format!(
                    "data.source must be `synthetic` or `csv`, got `{other}`"
                )))
            }
        };

        let mut synthetic = SyntheticSpec::desk_default(6, 10_000, 424_242);
        synthetic.n_stations = parse_num(&parsed, "synthetic.stations", synthetic.n_stations)?;
        synthetic.grid_len = parse_num(&parsed, "synthetic.grid_len", synthetic.grid_len)?;
        synthetic.seed = parse_num(&parsed, "synthetic.seed", synthetic.seed)?;
        synthetic.ar_coeffs[0] = parse_num(&parsed, "synthetic.ar1", synthetic.ar_coeffs[0])?;
        synthetic.ar_coeffs[1] = parse_num(&parsed, "synthetic.ar2", synthetic.ar_coeffs[1])?;
        synthetic.offset_base = parse_num(&parsed, "synthetic.offset", synthetic.offset_base)?;
        synthetic.offset_spread =
            parse_num(&parsed, "synthetic.offset_spread", synthetic.offset_spread)?;
        synthetic.scale_spread =
            parse_num(&parsed, "synthetic.scale_spread", synthetic.scale_spread)?;
        synthetic.diurnal_amplitude = parse_num(&parsed, "synthetic.diurnal", synthetic.diurnal_amplitude)?;
        synthetic.noise_std = parse_num(&parsed, "synthetic.noise_std", synthetic.noise_std)?;
        synthetic.spatial_corr_km = parse_num(&parsed, "synthetic.corr_km", synthetic.spatial_corr_km)?;

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: parse_num(&parsed, "train.epochs", defaults.epochs)?,
            batch_size: parse_num(&parsed, "train.batch_size", defaults.batch_size)?,
            dropout: parse_num(&parsed, "train.dropout", defaults.dropout)?,
            seeds: parse_list(&parsed, "train.seeds", defaults.seeds.clone())?,
            missing_rates: parse_list(&parsed, "train.rates", defaults.missing_rates.clone())?,
            window_stride: parse_num(&parsed, "train.window_stride", defaults.window_stride)?,
            eval_stride: parse_num(&parsed, "train.eval_stride", defaults.eval_stride)?,
            learning_rate: match parsed.get("train.learning_rate") {
                None => None,
                Some(raw) => Some(raw.parse().map_err(|_| {
                    CliError::validation(format!("config key train.learning_rate: cannot parse `{raw}`"))
                })?),
            },
            corruption_seed: parse_num(&parsed, "train.corruption_seed", defaults.corruption_seed)?,
        };
        if train.batch_size == 0 || train.window_stride == 0 || train.eval_stride == 0 {
            return Err(CliError::validation("batch_size and strides must be positive"));
        }
        if train.seeds.is_empty() || train.missing_rates.is_empty() {
            return Err(CliError::validation("train.seeds and train.rates must be non-empty"));
        }

        let latent_dim = parse_num(&parsed, "model.latent_dim", 64usize)?;
        let layers = parse_num(&parsed, "model.layers", 3usize)?;
        let heads = parse_num(&parsed, "model.heads", 4usize)?;
        let ffn_hidden = parse_num(&parsed, "model.ffn_hidden", 256usize)?;
        let mut models = Vec::new();
        for (family, block) in parse_models(&parsed)? {
            let mut config = ModelConfig::defaults(family, block);
            config.latent_dim = latent_dim;
            config.layers = layers;
            config.heads = heads;
            config.ffn_hidden = ffn_hidden;
            config.dropout = train.dropout;
            config.validate().map_err(CliError::Validation)?;
            models.push(config);
        }

        let power = PowerCurve {
            cut_in: parse_num(&parsed, "power.cut_in", 3.0)?,
            rated_speed: parse_num(&parsed, "power.rated_speed", 11.4)?,
            cut_out: parse_num(&parsed, "power.cut_out", 25.0)?,
            rated_power_kw: parse_num(&parsed, "power.rated_power_kw", 5000.0)?,
        };
        if !(0.0 < power.cut_in && power.cut_in < power.rated_speed && power.rated_speed < power.cut_out) {
            return Err(CliError::validation(
                "power curve must satisfy 0 < cut_in < rated_speed < cut_out",
            ));
        }

        let out_dir = PathBuf::from(parsed.get("output.dir").unwrap_or("out"));

        Ok(RunConfig { source, synthetic, models, train, power, out_dir })
    }

    /// Canonical serialization: sorted `section.key = value` lines. Feeds
    /// the run-directory hash, so it must be stable.
    pub fn canonical(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        match &self.source {
            DataSource::Synthetic => lines.push("data.source = synthetic".into()),
            DataSource::Csv(p) => {
                lines.push("data.source = csv".into());
                lines.push(format!("data.csv_path = {}", p.display()));
            }
        }
        let s = &self.synthetic;
        lines.push(format!("synthetic.stations = {}", s.n_stations));
        lines.push(format!("synthetic.grid_len = {}", s.grid_len));
        lines.push(format!("synthetic.seed = {}", s.seed));
        lines.push(format!("synthetic.ar1 = {}", s.ar_coeffs[0]));
        lines.push(format!("synthetic.ar2 = {}", s.ar_coeffs[1]));
        lines.push(format!("synthetic.offset = {}", s.offset_base));
        lines.push(format!("synthetic.offset_spread = {}", s.offset_spread));
        lines.push(format!("synthetic.scale_spread = {}", s.scale_spread));
        lines.push(format!("synthetic.diurnal = {}", s.diurnal_amplitude));
        lines.push(format!("synthetic.noise_std = {}", s.noise_std));
        lines.push(format!("synthetic.corr_km = {}", s.spatial_corr_km));
        let labels: Vec<String> = self.models.iter().map(|m| m.label()).collect();
        lines.push(format!("model.families = {}", labels.join(",")));
        if let Some(first) = self.models.first() {
            lines.push(format!("model.latent_dim = {}", first.latent_dim));
            lines.push(format!("model.layers = {}", first.layers));
            lines.push(format!("model.heads = {}", first.heads));
            lines.push(format!("model.ffn_hidden = {}", first.ffn_hidden));
        }
        let t = &self.train;
        lines.push(format!("train.epochs = {}", t.epochs));
        lines.push(format!("train.batch_size = {}", t.batch_size));
        lines.push(format!("train.dropout = {}", t.dropout));
        let seeds: Vec<String> = t.seeds.iter().map(|s| s.to_string()).collect();
        lines.push(format!("train.seeds = {}", seeds.join(",")));
        let rates: Vec<String> = t.missing_rates.iter().map(|r| r.to_string()).collect();
        lines.push(format!("train.rates = {}", rates.join(",")));
        lines.push(format!("train.window_stride = {}", t.window_stride));
        lines.push(format!("train.eval_stride = {}", t.eval_stride));
        if let Some(lr) = t.learning_rate {
            lines.push(format!("train.learning_rate = {lr}"));
        }
        lines.push(format!("train.corruption_seed = {}", t.corruption_seed));
        let p = &self.power;
        lines.push(format!("power.cut_in = {}", p.cut_in));
        lines.push(format!("power.rated_speed = {}", p.rated_speed));
        lines.push(format!("power.cut_out = {}", p.cut_out));
        lines.push(format!("power.rated_power_kw = {}", p.rated_power_kw));
        lines.sort();
        let mut out = String::new();
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// FNV-1a hash of the canonical config, as the run-directory name.
    pub fn run_hash(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let cfg = RunConfig::from_text("").unwrap();
        assert_eq!(cfg.source, DataSource::Synthetic);
        assert_eq!(cfg.models.len(), 11);
        assert_eq!(cfg.train.epochs, 25);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.seeds.len(), 5);
        assert_eq!(cfg.train.missing_rates, vec![0.0, 0.10, 0.20, 0.30]);
        assert_eq!(cfg.power.rated_power_kw, 5000.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_text("[train]\nepochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn sections_and_comments() {
        let text = "# comment\n[synthetic]\nstations = 4 # trailing\ngrid_len = 700\n[train]\nepochs = 2\nseeds = 1,2\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.synthetic.n_stations, 4);
        assert_eq!(cfg.synthetic.grid_len, 700);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.seeds, vec![1, 2]);
    }

    #[test]
    fn model_selection() {
        let cfg = RunConfig::from_text("[model]\nfamilies = STUGN-GATv2, Persistence\n").unwrap();
        assert_eq!(cfg.models.len(), 2);
        assert_eq!(cfg.models[0].label(), "STUGN-GATv2");
        assert_eq!(cfg.models[1].label(), "Persistence");
        assert!(RunConfig::from_text("[model]\nfamilies = STUGN-FOO\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_text("").unwrap();
        let b = RunConfig::from_text("").unwrap();
        assert_eq!(a.run_hash(), b.run_hash());
        let c = RunConfig::from_text("[train]\nepochs = 3\n").unwrap();
        assert_ne!(a.run_hash(), c.run_hash());
    }

    #[test]
    fn bad_power_curve_rejected() {
        let err = RunConfig::from_text("[power]\ncut_in = 30\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
