//! Text checkpoint format, version 1.
//!
//! ```text
//! stugn-checkpoint v1
//! [config]
//! family = STUGN
//! block = GATv2
//! ...
//! [params]
//! name<TAB>dims(comma)<TAB>trainable(0|1)<TAB>values(space-separated)
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a load
//! reproduces the exact f64 bits. Text is byte-order independent.

use std::fmt::Write as _;
use std::path::Path;

use stugn_core::autodiff::{ParamSet, Tensor};
use stugn_core::models::{GraphBlock, Model, ModelConfig, ModelFamily, Normalisation};

use crate::CliError;

const MAGIC: &str = "stugn-checkpoint v1";

fn family_str(f: ModelFamily) -> &'static str {
    match f {
        ModelFamily::Stugn => "STUGN",
        ModelFamily::StLstm => "ST-LSTM",
        ModelFamily::StTransformer => "ST-Transformer",
        ModelFamily::TsfLinear => "TSF-Linear",
        ModelFamily::Persistence => "Persistence",
    }
}

fn family_from(s: &str) -> Result<ModelFamily, CliError> {
    Ok(match s {
        "STUGN" => ModelFamily::Stugn,
        "ST-LSTM" => ModelFamily::StLstm,
        "ST-Transformer" => ModelFamily::StTransformer,
        "TSF-Linear" => ModelFamily::TsfLinear,
        "Persistence" => ModelFamily::Persistence,
        other => return Err(CliError::validation(format!("unknown model family `{other}`"))),
    })
}

fn block_str(b: GraphBlock) -> &'static str {
    match b {
        GraphBlock::Mpnn => "MPNN",
        GraphBlock::Gatv2 => "GATv2",
        GraphBlock::Tgat => "TGAT",
    }
}

fn block_from(s: &str) -> Result<GraphBlock, CliError> {
    Ok(match s {
        "MPNN" => GraphBlock::Mpnn,
        "GATv2" => GraphBlock::Gatv2,
        "TGAT" => GraphBlock::Tgat,
        other => return Err(CliError::validation(format!("unknown graph block `{other}`"))),
    })
}

fn norm_str(n: Normalisation) -> &'static str {
    match n {
        Normalisation::ReZero => "rezero",
        Normalisation::PreLayerNorm => "pre_layer_norm",
        Normalisation::None => "none",
    }
}

fn norm_from(s: &str) -> Result<Normalisation, CliError> {
    Ok(match s {
        "rezero" => Normalisation::ReZero,
        "pre_layer_norm" => Normalisation::PreLayerNorm,
        "none" => Normalisation::None,
        other => return Err(CliError::validation(format!("unknown normalisation `{other}`"))),
    })
}

/// Serialize a model config block plus all parameters.
pub fn render(config: &ModelConfig, params: &ParamSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "[config]");
    let _ = writeln!(out, "family = {}", family_str(config.family));
    let _ = writeln!(out, "block = {}", block_str(config.block));
    let _ = writeln!(out, "latent_dim = {}", config.latent_dim);
    let _ = writeln!(out, "layers = {}", config.layers);
    let _ = writeln!(out, "heads = {}", config.heads);
    let _ = writeln!(out, "ffn_hidden = {}", config.ffn_hidden);
    let _ = writeln!(out, "dropout = {}", config.dropout);
    let _ = writeln!(out, "ffn_node = {}", config.ffn_node);
    let _ = writeln!(out, "ffn_edge = {}", config.ffn_edge);
    let _ = writeln!(out, "normalisation = {}", norm_str(config.normalisation));
    let _ = writeln!(out, "learning_rate = {}", config.learning_rate);
    let _ = writeln!(out, "[params]");
    for p in params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = p.value.data().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.name,
            dims.join(","),
            if p.trainable { 1 } else { 0 },
            values.join(" ")
        );
    }
    out
}

/// Write a checkpoint file.
pub fn save(config: &ModelConfig, params: &ParamSet, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, render(config, params))?;
    Ok(())
}

/// Parse a checkpoint back into a config and parameter set.
pub fn parse(text: &str) -> Result<(ModelConfig, ParamSet), CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == MAGIC => {}
        other => {
            return Err(CliError::validation(format!(
                "not a checkpoint: expected `{MAGIC}`, got `{}`",
                other.unwrap_or("<empty>")
            )))
        }
    }
    let mut config_map = std::collections::BTreeMap::new();
    let mut in_params = false;
    let mut params = ParamSet::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if line == "[config]" {
            continue;
        }
        if line == "[params]" {
            in_params = true;
            continue;
        }
        if !in_params {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("bad config line `{line}`")))?;
            config_map.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        let mut parts = line.split('\t');
        let name = parts.next().unwrap_or("");
        let dims = parts
            .next()
            .ok_or_else(|| CliError::validation(format!("param `{name}`: missing shape")))?;
        let trainable = parts
            .next()
            .ok_or_else(|| CliError::validation(format!("param `{name}`: missing trainable flag")))?;
        let values = parts.next().unwrap_or("");
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| CliError::validation(format!("param `{name}`: bad dim `{d}`")))
            })
            .collect::<Result<_, _>>()?;
        let data: Vec<f64> = values
            .split(' ')
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::validation(format!("param `{name}`: bad value `{v}`")))
            })
            .collect::<Result<_, _>>()?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(CliError::validation(format!(
                "param `{name}`: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let id = params.add(name, Tensor::new(&shape, data));
        if trainable == "0" {
            // re-freeze dataset statistics
            params.get_mut(id).trainable = false;
        }
    }

    let get = |k: &str| -> Result<&String, CliError> {
        config_map
            .get(k)
            .ok_or_else(|| CliError::validation(format!("checkpoint missing config key `{k}`")))
    };
    let parse_num = |k: &str| -> Result<f64, CliError> {
        get(k)?.parse().map_err(|_| CliError::validation(format!("bad numeric config key `{k}`")))
    };
    let config = ModelConfig {
        family: family_from(get("family")?)?,
        block: block_from(get("block")?)?,
        latent_dim: parse_num("latent_dim")? as usize,
        layers: parse_num("layers")? as usize,
        heads: parse_num("heads")? as usize,
        ffn_hidden: parse_num("ffn_hidden")? as usize,
        dropout: parse_num("dropout")?,
        ffn_node: get("ffn_node")? == "true",
        ffn_edge: get("ffn_edge")? == "true",
        normalisation: norm_from(get("normalisation")?)?,
        learning_rate: parse_num("learning_rate")?,
    };
    Ok((config, params))
}

/// Load a checkpoint and rebuild the model around it.
pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let (config, params) = parse(&text)?;
    Model::from_parts(config, params).map_err(|e| CliError::validation(e.to_string()))
}
