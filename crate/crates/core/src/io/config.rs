//! Flat training config: `key = value` lines grouped under bracketed
//! sections, `#` comments. Unknown keys are errors (with line numbers), so
//! typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::loss::LossConfig;
use crate::net::NetConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Directory(String),
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub source: DataSource,
    /// Frame count for generated scenes.
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Seed of the generated scene (independent of the training seed).
    pub scene_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            frames: 20,
            width: 64,
            height: 64,
            scene_seed: 1,
        }
    }
}

/// Everything a training run needs; every field has a desk-scale default and
/// a config file overrides selectively.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetConfig::desk(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

pub fn parse_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?;
            section = name.trim().to_string();
            match section.as_str() {
                "net" | "loss" | "train" | "data" => continue,
                other => return Err(parse_err(line_no, format!("unknown section [{other}]"))),
            }
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected 'key = value'"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(parse_err(line_no, "empty key or value"));
        }
        let qualified = format!("{section}.{key}");
        if let Some(prev) = seen.insert(qualified.clone(), line_no) {
            return Err(parse_err(
                line_no,
                format!("duplicate key '{key}' (first set on line {prev})"),
            ));
        }
        apply(&mut cfg, &section, key, value, line_no)?;
    }
    if cfg.train.lr_after >= cfg.train.lr_initial {
        return Err(parse_err(
            0,
            "train.lr_after must be smaller than train.lr_initial",
        ));
    }
    Ok(cfg)
}

fn apply(
    cfg: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let f = |v: &str| -> Result<f64, ConfigError> {
        v.parse::<f64>()
            .map_err(|_| parse_err(line, format!("'{v}' is not a number")))
    };
    let u = |v: &str| -> Result<usize, ConfigError> {
        v.parse::<usize>()
            .map_err(|_| parse_err(line, format!("'{v}' is not a non-negative integer")))
    };
    match (section, key) {
        ("net", "base_channels") => cfg.net.base_channels = u(value)?,
        ("net", "state_dim") => cfg.net.state_dim = u(value)?,
        ("net", "min_depth") => cfg.net.min_depth = f(value)?,
        ("net", "max_depth") => cfg.net.max_depth = f(value)?,
        ("loss", "alpha") => cfg.loss.alpha = f(value)?,
        ("loss", "lambda") => cfg.loss.lambda = f(value)?,
        ("train", "batch_size") => cfg.train.batch_size = u(value)?,
        ("train", "epochs") => cfg.train.epochs = u(value)?,
        ("train", "lr_initial") => cfg.train.lr_initial = f(value)?,
        ("train", "lr_after") => cfg.train.lr_after = f(value)?,
        ("train", "lr_drop_epoch") => cfg.train.lr_drop_epoch = u(value)?,
        ("train", "beta1") => cfg.train.beta1 = f(value)?,
        ("train", "beta2") => cfg.train.beta2 = f(value)?,
        ("train", "seed") => {
            cfg.train.seed = value
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("'{value}' is not a seed")))?
        }
        ("data", "source") => {
            cfg.data.source = match value {
                "synthetic" => DataSource::Synthetic,
                other => DataSource::Directory(other.to_string()),
            }
        }
        ("data", "frames") => cfg.data.frames = u(value)?,
        ("data", "width") => cfg.data.width = u(value)?,
        ("data", "height") => cfg.data.height = u(value)?,
        ("data", "scene_seed") => {
            cfg.data.scene_seed = value
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("'{value}' is not a seed")))?
        }
        _ => {
            return Err(parse_err(
                line,
                format!("unknown key '{key}' in section [{section}]"),
            ))
        }
    }
    Ok(())
}
