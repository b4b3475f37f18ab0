//! Test-set metrics, probe selection, and result tables.
//!
//! The held-out test part is only ever read here, inside
//! [`select_and_test`] and [`test_recon_l1`]; the rest of the pipeline sees
//! validation data at most. Selection follows the protocol: per autoencoder
//! and probe family, the configuration with the lowest validation loss is
//! the one evaluated on the test set, ties resolving to the earliest grid
//! index.
//!
//! Tables mirror the published layout: one row per latent size plus an
//! "Any" row holding the best column value, columns AE / VAE / P.AE /
//! P.VAE, and a reconstruction table scoring each model kind relative to
//! the lowest L1 error in its dataset row.

use crate::datasets::{DatasetBundle, Label, TaskKind};
use crate::errors::{Error, Result};
use crate::losses::LossKind;
use crate::models::Autoencoder;
use crate::nn::Scalar;
use crate::perceptual::InputNorm;
use crate::predictors::{PredictorConfig, PredictorKind, Predictions, TrainedPredictor};
use crate::training::RunTimings;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The four model kinds of the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ae,
    Vae,
    PAe,
    PVae,
}

pub const MODEL_KINDS: [ModelKind; 4] = [ModelKind::Ae, ModelKind::Vae, ModelKind::PAe, ModelKind::PVae];

impl ModelKind {
    pub fn variational(self) -> bool {
        matches!(self, ModelKind::Vae | ModelKind::PVae)
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            ModelKind::Ae | ModelKind::Vae => LossKind::Pixelwise,
            ModelKind::PAe | ModelKind::PVae => LossKind::Perceptual,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Ae => write!(f, "AE"),
            ModelKind::Vae => write!(f, "VAE"),
            ModelKind::PAe => write!(f, "P.AE"),
            ModelKind::PVae => write!(f, "P.VAE"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AE" => Ok(ModelKind::Ae),
            "VAE" => Ok(ModelKind::Vae),
            "P.AE" => Ok(ModelKind::PAe),
            "P.VAE" => Ok(ModelKind::PVae),
            other => Err(Error::Invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Mean Euclidean distance in pixels between predictions and truths.
pub fn positioning_error(preds: &[(f64, f64)], truths: &[(f64, f64)]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} truths", preds.len()),
            found: format!("{}", truths.len()),
        });
    }
    let sum: f64 = preds
        .iter()
        .zip(truths)
        .map(|(&(px, py), &(tx, ty))| ((px - tx).powi(2) + (py - ty).powi(2)).sqrt())
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Fraction of exact class matches.
pub fn classification_accuracy(pred_ids: &[u32], true_ids: &[u32]) -> Result<f64> {
    if pred_ids.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    if pred_ids.len() != true_ids.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} truths", pred_ids.len()),
            found: format!("{}", true_ids.len()),
        });
    }
    let correct = pred_ids.iter().zip(true_ids).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred_ids.len() as f64)
}

/// Relative reconstruction score: `100 * min(errors) / error`, so the best
/// model scores exactly 100% and everything else proportionally less.
pub fn relative_recon_score(
    errors: &BTreeMap<ModelKind, f64>,
) -> Result<BTreeMap<ModelKind, f64>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("no reconstruction errors".into()));
    }
    for (k, &e) in errors {
        if e <= 0.0 || !e.is_finite() {
            return Err(Error::Invalid(format!("non-positive L1 error {e} for {k}")));
        }
    }
    let best = errors.values().cloned().fold(f64::INFINITY, f64::min);
    Ok(errors
        .iter()
        .map(|(&k, &e)| (k, 100.0 * best / e))
        .collect())
}

/// Seeds recorded with every experiment record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master: u64,
    pub model: u64,
    pub train: u64,
    pub extractor: Option<u64>,
    pub split: u64,
}

/// One trained model + probe family, fully evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub task: TaskKind,
    pub z_size: usize,
    pub model_kind: ModelKind,
    pub predictor_kind: PredictorKind,
    pub best_predictor: PredictorConfig,
    pub best_val_loss: f64,
    /// Mean test distance in pixels, or test accuracy fraction.
    pub metric_value: f64,
    /// Mean absolute pixel error on the test part after decoder retraining.
    pub recon_l1: f64,
    pub timings: RunTimings,
    pub seeds: SeedInfo,
    pub norm: InputNorm,
    /// Grid members that failed to train, with reasons; kept for the record.
    pub failed_configs: Vec<String>,
}

/// Outcome of training one probe grid: every member is present, either
/// trained or failed with a reason.
pub struct GridRun<F: Scalar> {
    pub outcomes: Vec<(PredictorConfig, std::result::Result<TrainedPredictor<F>, String>)>,
    pub expected_len: usize,
}

impl<F: Scalar> GridRun<F> {
    pub fn failed_configs(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .filter_map(|(c, r)| r.as_ref().err().map(|e| format!("{}: {e}", c.describe())))
            .collect()
    }
}

pub struct SelectionOutcome {
    pub best_index: usize,
    pub best_config: PredictorConfig,
    pub best_val_loss: f64,
    pub metric_value: f64,
    pub test_len: usize,
}

/// Selects the grid member with the lowest validation loss and evaluates it
/// once on the test part. The only reader of test images and labels,
/// together with [`test_recon_l1`].
pub fn select_and_test<F: Scalar>(
    model: &Autoencoder<F>,
    bundle: &DatasetBundle,
    grid: &GridRun<F>,
) -> Result<SelectionOutcome> {
    if grid.outcomes.len() != grid.expected_len {
        let have: Vec<String> = grid.outcomes.iter().map(|(c, _)| c.describe()).collect();
        return Err(Error::MissingGridCells(vec![format!(
            "expected {} grid cells, have {}: {have:?}",
            grid.expected_len,
            grid.outcomes.len()
        )]));
    }
    let mut best: Option<(usize, &TrainedPredictor<F>)> = None;
    for (i, (_, outcome)) in grid.outcomes.iter().enumerate() {
        if let Ok(trained) = outcome {
            let better = match &best {
                None => true,
                // strict comparison: ties keep the earlier grid index
                Some((_, b)) => trained.best_val_loss < b.best_val_loss,
            };
            if better {
                best = Some((i, trained));
            }
        }
    }
    let (best_index, trained) = best.ok_or_else(|| {
        Error::MissingGridCells(grid.failed_configs())
    })?;

    let test = bundle.test_samples();
    if test.is_empty() {
        return Err(Error::EmptyInput("empty test part".into()));
    }
    let idxs: Vec<usize> = (0..test.len()).collect();
    let mut embeddings = ndarray::Array2::<F>::zeros((test.len(), model.z_size));
    for chunk in idxs.chunks(256) {
        let x = bundle.test_batch::<F>(chunk);
        let (mu, _) = model.encode_batch(&x);
        for (row, &i) in chunk.iter().enumerate() {
            embeddings.row_mut(i).assign(&mu.row(row));
        }
    }

    let metric_value = match bundle.task {
        TaskKind::Positioning => {
            let preds = match trained.predict(&embeddings, false)? {
                Predictions::Coords(c) => c,
                _ => unreachable!(),
            };
            let pred_pairs: Vec<(f64, f64)> = preds
                .rows()
                .into_iter()
                .map(|r| (r[0].tof64(), r[1].tof64()))
                .collect();
            let truth_pairs: Vec<(f64, f64)> = test
                .iter()
                .map(|s| match s.label {
                    Label::Position { x, y } => (x as f64, y as f64),
                    _ => (f64::NAN, f64::NAN),
                })
                .collect();
            positioning_error(&pred_pairs, &truth_pairs)?
        }
        TaskKind::Classification => {
            let preds = match trained.predict(&embeddings, true)? {
                Predictions::Classes(ids) => ids,
                _ => unreachable!(),
            };
            let truths: Vec<u32> = test
                .iter()
                .map(|s| match s.label {
                    Label::Class(c) => c,
                    _ => u32::MAX,
                })
                .collect();
            classification_accuracy(&preds, &truths)?
        }
    };

    Ok(SelectionOutcome {
        best_index,
        best_config: grid.outcomes[best_index].0.clone(),
        best_val_loss: trained.best_val_loss,
        metric_value,
        test_len: test.len(),
    })
}

/// Mean absolute pixel error of reconstructions over the test part.
pub fn test_recon_l1<F: Scalar>(model: &Autoencoder<F>, bundle: &DatasetBundle) -> Result<f64> {
    let n = bundle.test_len();
    if n == 0 {
        return Err(Error::EmptyInput("empty test part".into()));
    }
    let idxs: Vec<usize> = (0..n).collect();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for chunk in idxs.chunks(128) {
        let x = bundle.test_batch::<F>(chunk);
        let (mu, _) = model.encode_batch(&x);
        let xhat = model.decode_batch(&mu);
        for (&a, &b) in x.iter().zip(xhat.iter()) {
            acc += (a.tof64() - b.tof64()).abs();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// A handful of test images and their reconstructions, for image grids.
pub fn test_reconstruction_samples<F: Scalar>(
    model: &Autoencoder<F>,
    bundle: &DatasetBundle,
    count: usize,
) -> Result<(ndarray::Array4<F>, ndarray::Array4<F>)> {
    let n = bundle.test_len().min(count);
    if n == 0 {
        return Err(Error::EmptyInput("empty test part".into()));
    }
    let idxs: Vec<usize> = (0..n).collect();
    let x = bundle.test_batch::<F>(&idxs);
    let (mu, _) = model.encode_batch(&x);
    let xhat = model.decode_batch(&mu);
    Ok((x, xhat))
}

// ---- tables ---------------------------------------------------------------

/// Row labels: the z sizes in ascending order plus "Any".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub dataset: String,
    pub predictor_kind: PredictorKind,
    pub task: TaskKind,
    pub z_sizes: Vec<usize>,
    /// Column order; the full scheme is AE, VAE, P.AE, P.VAE.
    pub kinds: Vec<ModelKind>,
    /// cells[row][col] aligned with `kinds`; the final row is "Any".
    pub cells: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn csv(&self) -> String {
        let headers: Vec<String> = self.kinds.iter().map(|k| k.to_string()).collect();
        let mut out = format!("z size,{}\n", headers.join(","));
        for (i, z) in self.z_sizes.iter().enumerate() {
            let row: Vec<String> = self.cells[i].iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{z},{}", row.join(","));
        }
        let any: Vec<String> = self.cells[self.z_sizes.len()]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        let _ = writeln!(out, "Any,{}", any.join(","));
        out
    }

    pub fn text(&self) -> String {
        let mut out = format!(
            "{} / {} probe ({})\n",
            self.dataset,
            self.predictor_kind,
            match self.task {
                TaskKind::Positioning => "mean test distance, pixels",
                TaskKind::Classification => "test accuracy",
            }
        );
        let fmt = |v: f64| match self.task {
            TaskKind::Positioning => format!("{v:8.2}"),
            TaskKind::Classification => format!("{:7.1}%", v * 100.0),
        };
        let _ = write!(out, "{:>8}", "z");
        for k in &self.kinds {
            let _ = write!(out, " {:>8}", k.to_string());
        }
        out.push('\n');
        for (i, z) in self.z_sizes.iter().enumerate() {
            let row: Vec<String> = self.cells[i].iter().map(|&v| fmt(v)).collect();
            let _ = writeln!(out, "{z:>8} {}", row.join(" "));
        }
        let any: Vec<String> = self.cells[self.z_sizes.len()].iter().map(|&v| fmt(v)).collect();
        let _ = writeln!(out, "{:>8} {}", "Any", any.join(" "));
        out
    }
}

/// Builds the per-dataset metric table for one probe family. Requires a
/// complete record set: every (z, model kind) cell exactly once.
pub fn metric_table(
    dataset: &str,
    predictor_kind: PredictorKind,
    records: &[ExperimentRecord],
) -> Result<MetricTable> {
    let subset: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| r.dataset == dataset && r.predictor_kind == predictor_kind)
        .collect();
    if subset.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no records for {dataset}/{predictor_kind}"
        )));
    }
    let mut z_sizes: Vec<usize> = subset.iter().map(|r| r.z_size).collect();
    z_sizes.sort_unstable();
    z_sizes.dedup();
    let task = subset[0].task;

    let kinds: Vec<ModelKind> = MODEL_KINDS
        .into_iter()
        .filter(|k| subset.iter().any(|r| r.model_kind == *k))
        .collect();
    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for &z in &z_sizes {
        let mut row = Vec::new();
        for &kind in &kinds {
            let matches: Vec<&&ExperimentRecord> = subset
                .iter()
                .filter(|r| r.z_size == z && r.model_kind == kind)
                .collect();
            match matches.len() {
                1 => row.push(matches[0].metric_value),
                0 => {
                    missing.push(format!("{dataset}/z{z}/{kind}/{predictor_kind}"));
                    row.push(f64::NAN);
                }
                _ => {
                    return Err(Error::Invalid(format!(
                        "duplicate records for {dataset}/z{z}/{kind}/{predictor_kind}"
                    )))
                }
            }
        }
        cells.push(row);
    }
    if !missing.is_empty() {
        return Err(Error::MissingGridCells(missing));
    }
    // "Any" row: best per column across z rows
    let better = |task: TaskKind, a: f64, b: f64| match task {
        TaskKind::Positioning => a.min(b),
        TaskKind::Classification => a.max(b),
    };
    let mut any = cells[0].clone();
    for row in &cells[1..] {
        for (a, &v) in any.iter_mut().zip(row) {
            *a = better(task, *a, v);
        }
    }
    cells.push(any);
    Ok(MetricTable {
        dataset: dataset.to_string(),
        predictor_kind,
        task,
        z_sizes,
        kinds,
        cells,
    })
}

/// Reconstruction score table: one row per dataset, the best (lowest)
/// retrained L1 per model kind, scored relative to the row's best.
pub fn recon_table(records: &[ExperimentRecord]) -> Result<Vec<(String, BTreeMap<ModelKind, f64>)>> {
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut rows = Vec::new();
    for dataset in datasets {
        let mut best_l1: BTreeMap<ModelKind, f64> = BTreeMap::new();
        for r in records.iter().filter(|r| r.dataset == dataset) {
            let e = best_l1.entry(r.model_kind).or_insert(f64::INFINITY);
            *e = e.min(r.recon_l1);
        }
        let scores = relative_recon_score(&best_l1)?;
        rows.push((dataset, scores));
    }
    Ok(rows)
}

pub fn recon_table_csv(rows: &[(String, BTreeMap<ModelKind, f64>)]) -> String {
    let kinds: Vec<ModelKind> = MODEL_KINDS
        .into_iter()
        .filter(|k| rows.iter().any(|(_, scores)| scores.contains_key(k)))
        .collect();
    let headers: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    let mut out = format!("dataset,{}\n", headers.join(","));
    for (dataset, scores) in rows {
        let cells: Vec<String> = kinds
            .iter()
            .map(|k| scores.get(k).map(|v| format!("{v}")).unwrap_or_default())
            .collect();
        let _ = writeln!(out, "{dataset},{}", cells.join(","));
    }
    out
}

/// Writes every table for the record set: per dataset and probe family a
/// CSV and a text rendering, plus the cross-dataset reconstruction table.
pub fn emit_tables(records: &[ExperimentRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut text_all = String::new();
    for dataset in &datasets {
        for kind in [PredictorKind::Mlp, PredictorKind::Linear] {
            let table = metric_table(dataset, kind, records)?;
            let csv_path = out_dir.join(format!("table_{dataset}_{kind}.csv"));
            std::fs::write(&csv_path, table.csv()).map_err(|e| Error::io(&csv_path, e))?;
            written.push(csv_path);
            text_all.push_str(&table.text());
            text_all.push('\n');
        }
    }
    let rows = recon_table(records)?;
    let recon_path = out_dir.join("table_recon.csv");
    std::fs::write(&recon_path, recon_table_csv(&rows)).map_err(|e| Error::io(&recon_path, e))?;
    written.push(recon_path);
    text_all.push_str("reconstruction score (relative L1, best = 100%)\n");
    text_all.push_str(&recon_table_csv(&rows));
    let text_path = out_dir.join("tables.txt");
    std::fs::write(&text_path, text_all).map_err(|e| Error::io(&text_path, e))?;
    written.push(text_path);
    Ok(written)
}
