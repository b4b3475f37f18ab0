//! Config-driven experiment matrix: declares cells
//! (dataset x z-size x model kind x seed), runs them resumably, and
//! regenerates tables, plots, and a cross-seed summary from the persisted
//! records.
//!
//! Each cell runs the full protocol: train the autoencoder under its loss,
//! embed the predictor part with the frozen encoder, train the probe grid
//! (36 MLPs and the linear probe), select by validation loss and evaluate
//! once on the test part, retrain the decoder with pixel-wise MSE, and
//! score test reconstruction L1. Every artifact lands in a directory named
//! by a content hash of the cell's effective configuration; a completed
//! `records.json` makes the cell a no-op on rerun (commit is
//! write-then-rename, so concurrent workers can share a results
//! directory).

pub mod config;

pub use config::{parse_config_file, parse_config_text, ExperimentConfig, ExtractorChoice, Profile};

use crate::datasets::fetch::DatasetName;
use crate::datasets::{generate_lander_collection, DatasetBundle};
use crate::errors::{Error, Result};
use crate::evaluation::{
    select_and_test, test_recon_l1, test_reconstruction_samples, ExperimentRecord, GridRun,
    ModelKind, SeedInfo,
};
use crate::losses::{LossKind, LossSpec};
use crate::models::build_model;
use crate::perceptual::{load_extractor, random_extractor, PerceptualExtractor};
use crate::predictors::{
    enumerate_mlp_grid, train_predictor, PredictorConfig, PredictorKind, ProbeTargets,
};
use crate::seed::derive_seed;
use crate::training::{
    embed_predictor_part, retrain_decoder, train_autoencoder, write_history_csv,
    CheckpointManifest, TrainConfig, TrainRun,
};
use crate::Ftrain;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub dataset: DatasetName,
    pub z_size: usize,
    pub model_kind: ModelKind,
    pub seed: u64,
}

impl CellSpec {
    pub fn label(&self) -> String {
        let kind = match self.model_kind {
            ModelKind::Ae => "AE",
            ModelKind::Vae => "VAE",
            ModelKind::PAe => "PAE",
            ModelKind::PVae => "PVAE",
        };
        format!("{}_z{}_{}_s{}", self.dataset, self.z_size, kind, self.seed)
    }
}

/// The declared matrix in a fixed order: dataset, then z, then kind, then
/// seed.
pub fn enumerate_cells(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for &dataset in &cfg.datasets {
        let zs = &cfg.z_sizes[&dataset.to_string()];
        for &z_size in zs {
            for &model_kind in &cfg.model_kinds {
                for &seed in &cfg.seeds {
                    cells.push(CellSpec {
                        dataset,
                        z_size,
                        model_kind,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// Everything that determines a cell's outcome, hashed for resumability.
#[derive(Serialize)]
struct EffectiveCellConfig<'a> {
    cell: &'a CellSpec,
    train: &'a TrainConfig,
    retrain: &'a TrainConfig,
    probe: &'a crate::predictors::PredictorTrainConfig,
    kl_weight: f64,
    reduction: crate::losses::Reduction,
    norm: crate::perceptual::InputNorm,
    extractor: &'a ExtractorChoice,
    lander: Option<&'a crate::datasets::SceneConfig>,
}

pub fn cell_hash(cfg: &ExperimentConfig, cell: &CellSpec) -> String {
    let effective = EffectiveCellConfig {
        cell,
        train: &cfg.train,
        retrain: &cfg.retrain,
        probe: &cfg.probe,
        kl_weight: if cell.model_kind.variational() {
            cfg.kl_weight
        } else {
            0.0
        },
        reduction: cfg.reduction,
        norm: cfg.norm,
        extractor: &cfg.extractor,
        lander: match cell.dataset {
            DatasetName::Lander => Some(&cfg.lander),
            _ => None,
        },
    };
    let json = serde_json::to_string(&effective).unwrap();
    hex::encode(&Sha256::digest(json.as_bytes())[..6])
}

/// Shared per-run dataset store: bundles are deterministic in
/// (config, seed), so one instance serves every cell of a seed.
pub struct DatasetCache {
    bundles: HashMap<(DatasetName, u64), Arc<DatasetBundle>>,
}

impl DatasetCache {
    pub fn new() -> Self {
        DatasetCache {
            bundles: HashMap::new(),
        }
    }

    pub fn get(
        &mut self,
        cfg: &ExperimentConfig,
        data_root: &Path,
        name: DatasetName,
        seed: u64,
    ) -> Result<Arc<DatasetBundle>> {
        if let Some(b) = self.bundles.get(&(name, seed)) {
            return Ok(b.clone());
        }
        let bundle = match name {
            DatasetName::Lander => generate_lander_collection(cfg.lander.clone(), seed)?,
            DatasetName::Stl10 => {
                let dir = data_root.join("stl10").join("stl10_binary");
                if !dir.join("unlabeled_X.bin").exists() {
                    return Err(Error::dataset(
                        &dir,
                        "STL-10 binaries not found; run `percept-embed fetch stl10` first",
                    ));
                }
                crate::datasets::stl10::load_dir(&dir, seed)?
            }
            DatasetName::Svhn => {
                let dir = data_root.join("svhn");
                if !dir.join("train_32x32.mat").exists() {
                    return Err(Error::dataset(
                        &dir,
                        "SVHN mat files not found; run `percept-embed fetch svhn` first",
                    ));
                }
                crate::datasets::svhn::load_dir(&dir, seed)?
            }
        };
        let arc = Arc::new(bundle);
        self.bundles.insert((name, seed), arc.clone());
        Ok(arc)
    }
}

impl Default for DatasetCache {
    fn default() -> Self {
        Self::new()
    }
}

fn build_run_extractor(cfg: &ExperimentConfig) -> Result<Arc<PerceptualExtractor<Ftrain>>> {
    match &cfg.extractor {
        ExtractorChoice::SeededRandom { seed } => Ok(Arc::new(random_extractor(*seed))),
        ExtractorChoice::Pretrained { path } => Ok(Arc::new(load_extractor(path)?)),
    }
}

fn extractor_seed(cfg: &ExperimentConfig) -> Option<u64> {
    match &cfg.extractor {
        ExtractorChoice::SeededRandom { seed } => Some(*seed),
        ExtractorChoice::Pretrained { .. } => None,
    }
}

pub struct CellResult {
    pub spec: CellSpec,
    pub dir: PathBuf,
    pub records: Vec<ExperimentRecord>,
    pub ran: bool,
}

/// Trains the whole probe grid for one task, every member recorded.
pub fn run_probe_grid(
    configs: &[PredictorConfig],
    embeddings: &ndarray::Array2<Ftrain>,
    targets: &ProbeTargets<Ftrain>,
    split: &crate::datasets::TrainValSplit,
    probe_cfg: &crate::predictors::PredictorTrainConfig,
    base_seed: u64,
) -> GridRun<Ftrain> {
    let outcomes: Vec<_> = configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| {
            let seed = derive_seed(base_seed, "probe-cfg", i as u64);
            let outcome = train_predictor(config, embeddings, targets, split, seed, probe_cfg)
                .map_err(|e| e.to_string());
            (config.clone(), outcome)
        })
        .collect();
    GridRun {
        expected_len: configs.len(),
        outcomes,
    }
}

fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value).unwrap();
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs one cell end to end, or loads its records when already complete.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &CellSpec,
    bundle: &DatasetBundle,
    extractor: &Arc<PerceptualExtractor<Ftrain>>,
    out_dir: &Path,
) -> Result<CellResult> {
    let hash = cell_hash(cfg, cell);
    let dir = out_dir
        .join("runs")
        .join(format!("{}_{hash}", cell.label()));
    let records_path = dir.join("records.json");
    if records_path.exists() {
        let text = std::fs::read_to_string(&records_path)
            .map_err(|e| Error::io(&records_path, e))?;
        let records: Vec<ExperimentRecord> =
            serde_json::from_str(&text).map_err(|e| Error::Json {
                path: records_path.clone(),
                source: e,
            })?;
        return Ok(CellResult {
            spec: *cell,
            dir,
            records,
            ran: false,
        });
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let master = derive_seed(cell.seed, &cell.label(), 0);
    let model_seed = derive_seed(master, "model", 0);
    let train_seed = derive_seed(master, "train", 0);
    let seeds = SeedInfo {
        master: cell.seed,
        model: model_seed,
        train: train_seed,
        extractor: extractor_seed(cfg),
        split: cell.seed,
    };

    let kl_weight = if cell.model_kind.variational() {
        cfg.kl_weight
    } else {
        0.0
    };
    let spec = match cell.model_kind.loss_kind() {
        LossKind::Pixelwise => LossSpec::pixelwise(cfg.reduction, kl_weight)?,
        LossKind::Perceptual => {
            LossSpec::perceptual(cfg.reduction, kl_weight, extractor.clone(), cfg.norm)?
        }
    };

    let mut model = build_model::<Ftrain>(
        cell.z_size,
        cell.model_kind.variational(),
        bundle.image_size,
        model_seed,
    )?;
    let mut train_cfg = cfg.train;
    train_cfg.seed = train_seed;
    let run: TrainRun = train_autoencoder(&mut model, bundle, &spec, &train_cfg)?;
    write_history_csv(&dir.join("history.csv"), &run.history)?;

    let manifest = CheckpointManifest {
        arch: model.arch.clone(),
        z_size: cell.z_size,
        variational: cell.model_kind.variational(),
        model_seed,
        train_seed,
        loss_kind: cell.model_kind.loss_kind(),
        reduction: cfg.reduction,
        kl_weight,
        norm: cfg.norm,
        extractor_seed: extractor_seed(cfg),
    };
    crate::training::save_checkpoint(&dir.join("checkpoint"), &model, &manifest)?;

    // probes on frozen mean embeddings
    let embeddings = embed_predictor_part(&model, bundle);
    let pred_idxs: Vec<usize> = (0..bundle.pred_len()).collect();
    let targets = match bundle.task {
        crate::datasets::TaskKind::Positioning => {
            ProbeTargets::Positions(bundle.pred_positions::<Ftrain>(&pred_idxs)?)
        }
        crate::datasets::TaskKind::Classification => ProbeTargets::Classes {
            ids: bundle.pred_classes(&pred_idxs)?,
            num_classes: bundle.num_classes.unwrap_or(0),
        },
    };
    let output_dim = targets.output_dim();

    // decoder retraining with pixel-wise MSE against the frozen encoder
    let mut retrain_cfg = cfg.retrain;
    retrain_cfg.seed = derive_seed(master, "retrain", 0);
    let (retrained, retrain_run) = retrain_decoder(&model, bundle, &retrain_cfg)?;
    write_history_csv(&dir.join("retrain_history.csv"), &retrain_run.history)?;
    retrained
        .to_container()
        .write_to(&dir.join("retrained.pewt"))?;
    let recon_l1 = test_recon_l1(&retrained, bundle)?;

    // reconstruction grid: originals, reconstructions, retrained
    {
        let (orig, recon) = test_reconstruction_samples(&model, bundle, 6)?;
        let (_, recon_retrained) = test_reconstruction_samples(&retrained, bundle, 6)?;
        let row = |a: &ndarray::Array4<Ftrain>| -> Vec<ndarray::Array3<Ftrain>> {
            (0..a.dim().0)
                .map(|i| a.index_axis(ndarray::Axis(0), i).to_owned())
                .collect()
        };
        crate::plot::write_image_grid(
            &dir.join("recon_grid.png"),
            &[row(&orig), row(&recon), row(&recon_retrained)],
        )?;
    }

    let mut records = Vec::new();
    for predictor_kind in [PredictorKind::Mlp, PredictorKind::Linear] {
        let configs = match predictor_kind {
            PredictorKind::Mlp => enumerate_mlp_grid(cell.z_size, output_dim),
            PredictorKind::Linear => vec![PredictorConfig::linear(cell.z_size, output_dim)],
        };
        let grid_seed = derive_seed(master, "grid", predictor_kind as u64);
        let grid = run_probe_grid(
            &configs,
            &embeddings,
            &targets,
            &bundle.pred_split,
            &cfg.probe,
            grid_seed,
        );
        let selection = select_and_test(&model, bundle, &grid)?;
        records.push(ExperimentRecord {
            dataset: bundle.name.clone(),
            task: bundle.task,
            z_size: cell.z_size,
            model_kind: cell.model_kind,
            predictor_kind,
            best_predictor: selection.best_config,
            best_val_loss: selection.best_val_loss,
            metric_value: selection.metric_value,
            recon_l1,
            timings: run.timings.clone(),
            seeds,
            norm: cfg.norm,
            failed_configs: grid.failed_configs(),
        });
    }

    atomic_write_json(&dir.join("cell.json"), &serde_json::json!({
        "cell": cell,
        "hash": hash,
        "train": cfg.train,
        "retrain": cfg.retrain,
        "probe": cfg.probe,
        "retrain_timings": retrain_run.timings,
    }))?;
    atomic_write_json(&records_path, &records)?;
    Ok(CellResult {
        spec: *cell,
        dir,
        records,
        ran: true,
    })
}

pub struct MatrixOutcome {
    pub records: Vec<ExperimentRecord>,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub failures: Vec<(CellSpec, String)>,
    pub out_dir: PathBuf,
}

/// Runs every cell of the configured matrix sequentially, skipping
/// completed cells. Failures are collected, not fatal; the caller decides
/// the exit status.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    data_root: &Path,
    out_dir: &Path,
) -> Result<MatrixOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells = enumerate_cells(cfg);
    let extractor = build_run_extractor(cfg)?;
    let mut cache = DatasetCache::new();
    let mut outcome = MatrixOutcome {
        records: Vec::new(),
        cells_run: 0,
        cells_skipped: 0,
        failures: Vec::new(),
        out_dir: out_dir.to_path_buf(),
    };
    for cell in &cells {
        let bundle = match cache.get(cfg, data_root, cell.dataset, cell.seed) {
            Ok(b) => b,
            Err(e) => {
                outcome.failures.push((*cell, e.to_string()));
                continue;
            }
        };
        match run_cell(cfg, cell, &bundle, &extractor, out_dir) {
            Ok(result) => {
                if result.ran {
                    outcome.cells_run += 1;
                } else {
                    outcome.cells_skipped += 1;
                }
                outcome.records.extend(result.records);
            }
            Err(e) => outcome.failures.push((*cell, e.to_string())),
        }
    }
    Ok(outcome)
}

// ---- reporting ------------------------------------------------------------

pub struct ReportOutcome {
    pub report_dir: PathBuf,
    pub tables: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// Loads every record under `results_dir/runs`, in directory-name order.
pub fn load_records(results_dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let runs = results_dir.join("runs");
    if !runs.exists() {
        return Err(Error::EmptyInput(format!(
            "no runs directory under {}",
            results_dir.display()
        )));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)
        .map_err(|e| Error::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut records = Vec::new();
    for dir in dirs {
        let path = dir.join("records.json");
        if !path.exists() {
            continue; // incomplete cell
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut cell_records: Vec<ExperimentRecord> =
            serde_json::from_str(&text).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
        records.append(&mut cell_records);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("no completed cells".into()));
    }
    Ok(records)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Regenerates tables, comparison plots, and a cross-seed summary from the
/// stored records. Pure function of the records: rerunning produces
/// identical bytes.
pub fn report(results_dir: &Path) -> Result<ReportOutcome> {
    let records = load_records(results_dir)?;
    let report_dir = results_dir.join("report");
    std::fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;

    let mut seeds: Vec<u64> = records.iter().map(|r| r.seeds.master).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut tables = Vec::new();
    for &seed in &seeds {
        let subset: Vec<ExperimentRecord> = records
            .iter()
            .filter(|r| r.seeds.master == seed)
            .cloned()
            .collect();
        let dir = if seeds.len() == 1 {
            report_dir.join("tables")
        } else {
            report_dir.join(format!("tables_s{seed}"))
        };
        tables.extend(crate::evaluation::emit_tables(&subset, &dir)?);
    }

    // plots: metric vs z per model kind, mean over seeds
    let mut plots = Vec::new();
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    for dataset in &datasets {
        for pk in [PredictorKind::Mlp, PredictorKind::Linear] {
            let subset: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| &r.dataset == dataset && r.predictor_kind == pk)
                .collect();
            if subset.is_empty() {
                continue;
            }
            let mut zs: Vec<usize> = subset.iter().map(|r| r.z_size).collect();
            zs.sort_unstable();
            zs.dedup();
            let series: Vec<crate::plot::Series> = crate::evaluation::MODEL_KINDS
                .iter()
                .map(|&kind| {
                    let points = zs
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &z)| {
                            let vals: Vec<f64> = subset
                                .iter()
                                .filter(|r| r.z_size == z && r.model_kind == kind)
                                .map(|r| r.metric_value)
                                .collect();
                            if vals.is_empty() {
                                None
                            } else {
                                Some((i as f64, mean(&vals)))
                            }
                        })
                        .collect();
                    crate::plot::Series {
                        label: kind.to_string(),
                        points,
                    }
                })
                .collect();
            let task = subset[0].task;
            let y_label = match task {
                crate::datasets::TaskKind::Positioning => "mean test distance (px)",
                crate::datasets::TaskKind::Classification => "test accuracy",
            };
            let ticks: Vec<String> = zs.iter().map(|z| z.to_string()).collect();
            let svg = crate::plot::line_chart_svg(
                &format!("{dataset} / {pk} probe"),
                y_label,
                &ticks,
                &series,
            );
            let path = report_dir.join(format!("plot_{dataset}_{pk}.svg"));
            crate::plot::write_svg(&path, &svg)?;
            plots.push(path);
        }
    }

    // summary: cross-seed metric spread + timing overhead per loss kind
    let mut summary = String::new();
    summary.push_str(&format!(
        "records: {} across {} seed(s)\n\n",
        records.len(),
        seeds.len()
    ));
    for dataset in &datasets {
        for pk in [PredictorKind::Mlp, PredictorKind::Linear] {
            for kind in crate::evaluation::MODEL_KINDS {
                let mut zs: Vec<usize> = records
                    .iter()
                    .filter(|r| &r.dataset == dataset)
                    .map(|r| r.z_size)
                    .collect();
                zs.sort_unstable();
                zs.dedup();
                for z in zs {
                    let vals: Vec<f64> = records
                        .iter()
                        .filter(|r| {
                            &r.dataset == dataset
                                && r.predictor_kind == pk
                                && r.model_kind == kind
                                && r.z_size == z
                        })
                        .map(|r| r.metric_value)
                        .collect();
                    if vals.is_empty() {
                        continue;
                    }
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    summary.push_str(&format!(
                        "{dataset} z={z} {kind} {pk}: mean {:.4} (min {:.4}, max {:.4}, n={})\n",
                        mean(&vals),
                        lo,
                        hi,
                        vals.len()
                    ));
                }
            }
        }
    }
    // seconds/epoch medians per loss kind; overhead when both are present
    let secs_of = |lk: LossKind| -> Vec<f64> {
        let mut medians: Vec<f64> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            // one timing entry per trained model, not per predictor record
            let key = (r.dataset.clone(), r.z_size, r.model_kind, r.seeds.master);
            if r.timings.loss_kind == lk && seen.insert(key) {
                medians.push(median(&r.timings.seconds_per_epoch));
            }
        }
        medians
    };
    let pix = secs_of(LossKind::Pixelwise);
    let perc = secs_of(LossKind::Perceptual);
    if !pix.is_empty() && !perc.is_empty() {
        let overhead = 100.0 * (median(&perc) / median(&pix) - 1.0);
        summary.push_str(&format!(
            "\ntiming: median s/epoch pixel-wise {:.3}, perceptual {:.3}, overhead {:+.1}%\n",
            median(&pix),
            median(&perc),
            overhead
        ));
    }
    let summary_path = report_dir.join("summary.txt");
    std::fs::write(&summary_path, &summary).map_err(|e| Error::io(&summary_path, e))?;

    Ok(ReportOutcome {
        report_dir,
        tables,
        plots,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_declares_44_autoencoder_cells_per_seed() {
        let cfg = parse_config_text("profile = paper").unwrap();
        let cells = enumerate_cells(&cfg);
        // (4 + 4 + 3) z-sizes x 4 model kinds
        assert_eq!(cells.len(), 44);
    }

    #[test]
    fn cell_hash_tracks_config_changes() {
        let a = parse_config_text("profile = desk").unwrap();
        let mut b = a.clone();
        let cell = enumerate_cells(&a)[0];
        assert_eq!(cell_hash(&a, &cell), cell_hash(&b, &cell));
        b.train.lr = 9e-9;
        assert_ne!(cell_hash(&a, &cell), cell_hash(&b, &cell));
        // pixel-wise cells ignore the kl weight only through variational kinds
        let mut c = a.clone();
        c.kl_weight = 0.5;
        let ae_cell = CellSpec {
            model_kind: ModelKind::Ae,
            ..cell
        };
        let vae_cell = CellSpec {
            model_kind: ModelKind::Vae,
            ..cell
        };
        assert_eq!(cell_hash(&a, &ae_cell), cell_hash(&c, &ae_cell));
        assert_ne!(cell_hash(&a, &vae_cell), cell_hash(&c, &vae_cell));
    }

    fn micro_config() -> ExperimentConfig {
        parse_config_text(
            "profile = desk\n\
             model_kinds = AE,P.AE\n\
             lander.rollouts = 6\n\
             lander.frames_per_rollout = 10\n\
             train.max_epochs = 1\n\
             train.patience = 1\n\
             train.batch_size = 16\n\
             train.max_batches_per_epoch = 2\n\
             train.max_val_batches = 1\n\
             retrain.max_epochs = 1\n\
             retrain.patience = 1\n\
             retrain.batch_size = 16\n\
             retrain.max_batches_per_epoch = 2\n\
             probe.max_epochs = 2\n\
             probe.patience = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn micro_matrix_runs_resumes_and_reports() {
        let out = tempfile::tempdir().unwrap();
        let data = tempfile::tempdir().unwrap();
        let cfg = micro_config();

        let first = run_matrix(&cfg, data.path(), out.path()).unwrap();
        assert_eq!(first.failures.len(), 0, "{:?}", first.failures);
        assert_eq!(first.cells_run, 2);
        assert_eq!(first.records.len(), 4); // 2 cells x (mlp + linear)

        // rerun: zero training work, identical records
        let second = run_matrix(&cfg, data.path(), out.path()).unwrap();
        assert_eq!(second.cells_run, 0);
        assert_eq!(second.cells_skipped, 2);
        assert_eq!(first.records, second.records);

        // artifacts exist
        let runs: Vec<_> = std::fs::read_dir(out.path().join("runs"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(runs.len(), 2);
        for dir in &runs {
            assert!(dir.join("records.json").exists());
            assert!(dir.join("history.csv").exists());
            assert!(dir.join("retrain_history.csv").exists());
            assert!(dir.join("checkpoint/model.pewt").exists());
            assert!(dir.join("recon_grid.png").exists());
        }

        let rep = report(out.path()).unwrap();
        assert!(rep.summary_path.exists());
        assert!(!rep.tables.is_empty());
        assert_eq!(rep.plots.len(), 2); // mlp + linear for one dataset
        let report_again = report(out.path()).unwrap();
        let a = std::fs::read(&rep.summary_path).unwrap();
        let b = std::fs::read(&report_again.summary_path).unwrap();
        assert_eq!(a, b, "report must be byte-identical on rerun");
    }

    #[test]
    fn changing_config_invalidates_cells() {
        let out = tempfile::tempdir().unwrap();
        let data = tempfile::tempdir().unwrap();
        let cfg = micro_config();
        run_matrix(&cfg, data.path(), out.path()).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.train.lr = 5e-4;
        let outcome = run_matrix(&cfg2, data.path(), out.path()).unwrap();
        assert_eq!(outcome.cells_run, 2, "new hash must force a re-run");
    }
}
