//! Declarative experiment configuration: a flat plain-text key=value format
//! with `include` support and profile-based defaults.
//!
//! ```text
//! # lines are `key = value`, `include <path>`, comments, or blank
//! profile = desk
//! datasets = lander
//! seeds = 0,1,2
//! z_sizes.lander = 32
//! train.max_epochs = 12
//! extractor = random:7
//! ```
//!
//! The `profile` key (`desk` or `paper`) seeds every default; later keys
//! override, in file order, includes expanding in place. Unknown keys are
//! rejected with their line number.

use crate::datasets::fetch::DatasetName;
use crate::datasets::SceneConfig;
use crate::errors::{Error, Result};
use crate::evaluation::ModelKind;
use crate::losses::Reduction;
use crate::perceptual::InputNorm;
use crate::predictors::PredictorTrainConfig;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale protocol: all datasets, the published z-size subsets, the
    /// default training budget.
    Paper,
    /// Reduced profile for commodity hardware: the synthetic dataset at
    /// ~10k images, z = 32, capped epochs and batches.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }
}

/// Where perceptual-loss features come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorChoice {
    /// Converted pretrained weights (see docs/WEIGHTS.md).
    Pretrained { path: PathBuf },
    /// Seeded random weights with the published topology.
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub datasets: Vec<DatasetName>,
    pub z_sizes: BTreeMap<String, Vec<usize>>,
    pub model_kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub retrain: TrainConfig,
    pub probe: PredictorTrainConfig,
    pub kl_weight: f64,
    pub reduction: Reduction,
    pub norm: InputNorm,
    pub extractor: ExtractorChoice,
    pub lander: SceneConfig,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        let mut z_sizes = BTreeMap::new();
        match profile {
            Profile::Paper => {
                // the tested subsets: smaller z for lower-dimensional data
                z_sizes.insert("lander".to_string(), vec![32, 64, 128, 256]);
                z_sizes.insert("stl10".to_string(), vec![64, 128, 256, 512]);
                z_sizes.insert("svhn".to_string(), vec![32, 64, 128]);
                ExperimentConfig {
                    profile,
                    datasets: vec![DatasetName::Lander, DatasetName::Stl10, DatasetName::Svhn],
                    z_sizes,
                    model_kinds: MODEL_KINDS_ALL.to_vec(),
                    seeds: vec![0],
                    train: TrainConfig::default(),
                    retrain: TrainConfig {
                        max_epochs: 50,
                        patience: 10,
                        ..TrainConfig::default()
                    },
                    probe: PredictorTrainConfig::default(),
                    kl_weight: 8e-5,
                    reduction: Reduction::Mean,
                    norm: InputNorm::Raw01,
                    extractor: ExtractorChoice::Pretrained {
                        path: PathBuf::from("alexnet_prefix.pewt"),
                    },
                    lander: SceneConfig::default(),
                }
            }
            Profile::Desk => {
                z_sizes.insert("lander".to_string(), vec![32]);
                ExperimentConfig {
                    profile,
                    datasets: vec![DatasetName::Lander],
                    z_sizes,
                    model_kinds: MODEL_KINDS_ALL.to_vec(),
                    seeds: vec![0],
                    train: TrainConfig {
                        lr: 1e-3,
                        batch_size: 64,
                        max_epochs: 10,
                        patience: 10,
                        seed: 0,
                        max_batches_per_epoch: Some(30),
                        max_val_batches: Some(6),
                    },
                    retrain: TrainConfig {
                        lr: 1e-3,
                        batch_size: 64,
                        max_epochs: 6,
                        patience: 6,
                        seed: 0,
                        max_batches_per_epoch: Some(30),
                        max_val_batches: Some(6),
                    },
                    probe: PredictorTrainConfig {
                        lr: 2e-3,
                        batch_size: 128,
                        max_epochs: 40,
                        patience: 6,
                    },
                    kl_weight: 8e-5,
                    reduction: Reduction::Mean,
                    norm: InputNorm::Raw01,
                    extractor: ExtractorChoice::SeededRandom { seed: 7 },
                    lander: SceneConfig::desk(),
                }
            }
        }
    }
}

const MODEL_KINDS_ALL: [ModelKind; 4] = [
    ModelKind::Ae,
    ModelKind::Vae,
    ModelKind::PAe,
    ModelKind::PVae,
];

/// Parses a config file, following includes.
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let mut pairs = Vec::new();
    collect_pairs(path, 0, &mut pairs)?;
    build_config(&pairs)
}

/// Parses config text directly (tests and defaults).
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let fake = PathBuf::from("<inline>");
    let mut pairs = Vec::new();
    collect_text(&fake, text, 0, &mut pairs)?;
    build_config(&pairs)
}

struct KeyValue {
    file: PathBuf,
    line: usize,
    key: String,
    value: String,
}

fn collect_pairs(path: &Path, depth: usize, out: &mut Vec<KeyValue>) -> Result<()> {
    if depth > 8 {
        return Err(Error::InvalidConfig(format!(
            "include depth exceeded at {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    collect_text(path, &text, depth, out)
}

fn collect_text(path: &Path, text: &str, depth: usize, out: &mut Vec<KeyValue>) -> Result<()> {
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            let include_path = rest.trim();
            let resolved = path
                .parent()
                .map(|p| p.join(include_path))
                .unwrap_or_else(|| PathBuf::from(include_path));
            collect_pairs(&resolved, depth + 1, out)?;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                file: path.to_path_buf(),
                line: line_no + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        out.push(KeyValue {
            file: path.to_path_buf(),
            line: line_no + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(())
}

fn build_config(pairs: &[KeyValue]) -> Result<ExperimentConfig> {
    // profile first, wherever it appears; later profile keys reset defaults
    let mut profile = Profile::Desk;
    for kv in pairs {
        if kv.key == "profile" {
            profile = kv.value.parse().map_err(|e| reject(kv, &format!("{e}")))?;
        }
    }
    let mut cfg = ExperimentConfig::defaults(profile);
    for kv in pairs {
        apply_key(&mut cfg, kv)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn reject(kv: &KeyValue, msg: &str) -> Error {
    Error::ConfigParse {
        file: kv.file.clone(),
        line: kv.line,
        msg: format!("{}: {msg}", kv.key),
    }
}

fn parse_list<T: std::str::FromStr>(kv: &KeyValue) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    kv.value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| reject(kv, &format!("{e}"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(kv: &KeyValue) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    kv.value
        .parse::<T>()
        .map_err(|e| reject(kv, &format!("{e}")))
}

fn apply_key(cfg: &mut ExperimentConfig, kv: &KeyValue) -> Result<()> {
    match kv.key.as_str() {
        "profile" => {} // consumed in the first pass
        "datasets" => cfg.datasets = parse_list(kv)?,
        "seeds" => cfg.seeds = parse_list(kv)?,
        "model_kinds" => cfg.model_kinds = parse_list(kv)?,
        "kl_weight" => cfg.kl_weight = parse_one(kv)?,
        "reduction" => {
            cfg.reduction = match kv.value.as_str() {
                "mean" => Reduction::Mean,
                "sum" => Reduction::Sum,
                other => return Err(reject(kv, &format!("unknown reduction {other:?}"))),
            }
        }
        "norm" => {
            cfg.norm = match kv.value.as_str() {
                "raw01" => InputNorm::Raw01,
                "imagenet_stats" => InputNorm::ImagenetStats,
                other => return Err(reject(kv, &format!("unknown normalization {other:?}"))),
            }
        }
        "extractor" => {
            cfg.extractor = match kv.value.split_once(':') {
                Some(("random", seed)) => ExtractorChoice::SeededRandom {
                    seed: seed
                        .trim()
                        .parse()
                        .map_err(|e| reject(kv, &format!("{e}")))?,
                },
                Some(("pretrained", path)) => ExtractorChoice::Pretrained {
                    path: PathBuf::from(path.trim()),
                },
                _ => {
                    return Err(reject(
                        kv,
                        "expected `random:<seed>` or `pretrained:<path>`",
                    ))
                }
            }
        }
        key if key.starts_with("z_sizes.") => {
            let dataset = key.trim_start_matches("z_sizes.").to_string();
            cfg.z_sizes.insert(dataset, parse_list(kv)?);
        }
        "train.lr" => cfg.train.lr = parse_one(kv)?,
        "train.batch_size" => cfg.train.batch_size = parse_one(kv)?,
        "train.max_epochs" => cfg.train.max_epochs = parse_one(kv)?,
        "train.patience" => cfg.train.patience = parse_one(kv)?,
        "train.max_batches_per_epoch" => {
            cfg.train.max_batches_per_epoch = Some(parse_one(kv)?);
        }
        "train.max_val_batches" => cfg.train.max_val_batches = Some(parse_one(kv)?),
        "retrain.lr" => cfg.retrain.lr = parse_one(kv)?,
        "retrain.batch_size" => cfg.retrain.batch_size = parse_one(kv)?,
        "retrain.max_epochs" => cfg.retrain.max_epochs = parse_one(kv)?,
        "retrain.patience" => cfg.retrain.patience = parse_one(kv)?,
        "retrain.max_batches_per_epoch" => {
            cfg.retrain.max_batches_per_epoch = Some(parse_one(kv)?);
        }
        "probe.lr" => cfg.probe.lr = parse_one(kv)?,
        "probe.batch_size" => cfg.probe.batch_size = parse_one(kv)?,
        "probe.max_epochs" => cfg.probe.max_epochs = parse_one(kv)?,
        "probe.patience" => cfg.probe.patience = parse_one(kv)?,
        "lander.rollouts" => cfg.lander.rollouts = parse_one(kv)?,
        "lander.frames_per_rollout" => cfg.lander.frames_per_rollout = parse_one(kv)?,
        other => return Err(reject(kv, &format!("unknown key {other:?}"))),
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.datasets.is_empty() {
        return Err(Error::InvalidConfig("no datasets selected".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds".into()));
    }
    if cfg.model_kinds.is_empty() {
        return Err(Error::InvalidConfig("no model kinds".into()));
    }
    for d in &cfg.datasets {
        let name = d.to_string();
        let zs = cfg
            .z_sizes
            .get(&name)
            .ok_or_else(|| Error::InvalidConfig(format!("no z_sizes.{name} configured")))?;
        if zs.is_empty() {
            return Err(Error::InvalidConfig(format!("empty z_sizes.{name}")));
        }
        for &z in zs {
            if !crate::models::ALLOWED_Z_SIZES.contains(&z) {
                return Err(Error::InvalidConfig(format!(
                    "z size {z} for {name} not in {:?}",
                    crate::models::ALLOWED_Z_SIZES
                )));
            }
        }
    }
    cfg.train.validate()?;
    cfg.retrain.validate()?;
    if cfg.kl_weight < 0.0 {
        return Err(Error::InvalidConfig("kl_weight must be >= 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_parse_from_empty_text() {
        let cfg = parse_config_text("").unwrap();
        assert_eq!(cfg.profile, Profile::Desk);
        assert_eq!(cfg.datasets, vec![DatasetName::Lander]);
        assert_eq!(cfg.z_sizes["lander"], vec![32]);
        assert_eq!(cfg.lander.rollouts, 70);
    }

    #[test]
    fn paper_profile_declares_published_z_subsets() {
        let cfg = parse_config_text("profile = paper").unwrap();
        assert_eq!(cfg.z_sizes["lander"], vec![32, 64, 128, 256]);
        assert_eq!(cfg.z_sizes["stl10"], vec![64, 128, 256, 512]);
        assert_eq!(cfg.z_sizes["svhn"], vec![32, 64, 128]);
        assert_eq!(cfg.lander.rollouts, 1400);
    }

    #[test]
    fn keys_override_in_order() {
        let cfg = parse_config_text(
            "profile = desk\nseeds = 0, 1, 2\ntrain.max_epochs = 4\ntrain.patience = 3\nextractor = random:42\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.train.max_epochs, 4);
        assert_eq!(cfg.train.patience, 3);
        assert_eq!(cfg.extractor, ExtractorChoice::SeededRandom { seed: 42 });
    }

    #[test]
    fn unknown_key_errors_with_line_number() {
        let err = parse_config_text("profile = desk\nnot_a_key = 7\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_errors_with_line_number() {
        let err = parse_config_text("profile desk\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn includes_expand_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("base.cfg");
        std::fs::write(&base, "profile = desk\nseeds = 5\n").unwrap();
        let main = dir.path().join("main.cfg");
        std::fs::write(&main, "include base.cfg\nseeds = 6,7\n").unwrap();
        let cfg = parse_config_file(&main).unwrap();
        assert_eq!(cfg.seeds, vec![6, 7]);
    }

    #[test]
    fn invalid_z_size_rejected() {
        let err = parse_config_text("z_sizes.lander = 33\n").unwrap_err();
        assert!(err.to_string().contains("33"), "{err}");
    }

    #[test]
    fn pretrained_extractor_path_parses() {
        let cfg = parse_config_text("extractor = pretrained:weights/alexnet.pewt\n").unwrap();
        assert_eq!(
            cfg.extractor,
            ExtractorChoice::Pretrained {
                path: PathBuf::from("weights/alexnet.pewt")
            }
        );
    }
}
