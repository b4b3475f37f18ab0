//! Datasets: the synthetic lander positioning collection, STL-10 and SVHN
//! ingestion, and the three-way split every experiment runs on.
//!
//! Each [`DatasetBundle`] has an autoencoder part (images only), a predictor
//! part (labeled), and a test part (labeled). The three parts are pairwise
//! disjoint. The autoencoder and predictor parts carry seeded 80/20
//! train/validation splits: at rollout granularity for the synthetic
//! collection, at sample granularity for STL-10/SVHN.
//!
//! Images are stored as raw `u8` intensities in channel-major (CHW) layout
//! and converted to `[0, 1]` floats (value / 255) when batched. SVHN images
//! stay 32x32 in storage and are tiled 2x2 to 64x64 at batch time.

pub mod fetch;
pub mod lander;
pub mod stl10;
pub mod svhn;

pub use lander::{generate_lander_collection, SceneConfig};

use crate::errors::{Error, Result};
use crate::nn::Scalar;
use crate::seed::rng_for;
use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

/// Environment variable overriding the default dataset root.
pub const DATA_ROOT_ENV: &str = "PERCEPT_EMBED_DATA";

/// Dataset root: `$PERCEPT_EMBED_DATA` if set, else `./data`.
pub fn default_data_root() -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("data"),
    }
}

/// A 3-channel image in channel-major byte layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    /// `3 * height * width` bytes, CHW.
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn zeros(height: usize, width: usize) -> Self {
        ImageU8 {
            height,
            width,
            data: vec![0u8; 3 * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> u8 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: u8) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    /// Intensities rescaled to `[0, 1]`.
    pub fn to_tensor<F: Scalar>(&self) -> Array3<F> {
        let scale = F::fromf64(1.0 / 255.0);
        Array3::from_shape_vec(
            (3, self.height, self.width),
            self.data.iter().map(|&b| F::fromf64(b as f64) * scale).collect(),
        )
        .unwrap()
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(&self.data);
        h.finalize().into()
    }
}

/// Duplicates a 32x32 image into a 2-by-2 grid of 64x64 pixels.
pub fn svhn_tile(img: &ImageU8) -> Result<ImageU8> {
    if img.height != 32 || img.width != 32 {
        return Err(Error::ShapeMismatch {
            expected: "3x32x32".into(),
            found: format!("3x{}x{}", img.height, img.width),
        });
    }
    let mut out = ImageU8::zeros(64, 64);
    for c in 0..3 {
        for r in 0..32 {
            for col in 0..32 {
                let v = img.get(c, r, col);
                out.set(c, r, col, v);
                out.set(c, r + 32, col, v);
                out.set(c, r, col + 32, v);
                out.set(c, r + 32, col + 32, v);
            }
        }
    }
    Ok(out)
}

/// Task label: sub-pixel object coordinates or a class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    /// `(x, y)` pixel coordinates, x along columns, y along rows.
    Position { x: f32, y: f32 },
    Class(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: ImageU8,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Positioning,
    Classification,
}

/// Index lists for an 80/20 train/validation split of one part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainValSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl TrainValSplit {
    /// Sample-granularity split: a seeded shuffle of `0..n`, first 80% train.
    pub fn by_sample(n: usize, seed: u64, tag: &str) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = rng_for(seed, tag, 0);
        idx.shuffle(&mut rng);
        let cut = (n * 8) / 10;
        TrainValSplit {
            train: idx[..cut].to_vec(),
            val: idx[cut..].to_vec(),
        }
    }

    /// Group-granularity split: shuffles group ids, assigns the first 80% of
    /// groups to train, and expands to sample indices. Prevents leakage of
    /// near-duplicate frames between train and validation.
    pub fn by_group(groups: &[Vec<usize>], seed: u64, tag: &str) -> Self {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        let mut rng = rng_for(seed, tag, 0);
        order.shuffle(&mut rng);
        let cut = (groups.len() * 8) / 10;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &g) in order.iter().enumerate() {
            let dst = if i < cut { &mut train } else { &mut val };
            dst.extend_from_slice(&groups[g]);
        }
        TrainValSplit { train, val }
    }
}

/// One dataset with its three disjoint parts and split bookkeeping.
///
/// The test part is deliberately not exposed: final test evaluation happens
/// only through the evaluation module's selection entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub task: TaskKind,
    pub num_classes: Option<u32>,
    /// Image side after any tiling; always 64 or 96.
    pub image_size: usize,
    /// SVHN stores 32x32 and tiles at batch time.
    tile2x2: bool,
    ae_images: Vec<ImageU8>,
    pred_samples: Vec<LabeledSample>,
    test_samples: Vec<LabeledSample>,
    pub ae_split: TrainValSplit,
    pub pred_split: TrainValSplit,
}

impl DatasetBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        task: TaskKind,
        num_classes: Option<u32>,
        image_size: usize,
        tile2x2: bool,
        ae_images: Vec<ImageU8>,
        pred_samples: Vec<LabeledSample>,
        test_samples: Vec<LabeledSample>,
        ae_split: TrainValSplit,
        pred_split: TrainValSplit,
    ) -> Result<Self> {
        if let Some(nc) = num_classes {
            for s in pred_samples.iter().chain(test_samples.iter()) {
                if let Label::Class(c) = s.label {
                    if c >= nc {
                        return Err(Error::Invalid(format!(
                            "class id {c} out of range for {nc} classes"
                        )));
                    }
                }
            }
        }
        Ok(DatasetBundle {
            name,
            task,
            num_classes,
            image_size,
            tile2x2,
            ae_images,
            pred_samples,
            test_samples,
            ae_split,
            pred_split,
        })
    }

    pub fn ae_len(&self) -> usize {
        self.ae_images.len()
    }

    pub fn pred_len(&self) -> usize {
        self.pred_samples.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_samples.len()
    }

    fn image_to_tensor_row<F: Scalar>(&self, img: &ImageU8, out: &mut [F]) {
        if self.tile2x2 {
            let tiled = svhn_tile(img).expect("tile source must be 32x32");
            for (o, &b) in out.iter_mut().zip(tiled.data.iter()) {
                *o = F::fromf64(b as f64 / 255.0);
            }
        } else {
            for (o, &b) in out.iter_mut().zip(img.data.iter()) {
                *o = F::fromf64(b as f64 / 255.0);
            }
        }
    }

    fn batch_from<F: Scalar>(&self, images: &[&ImageU8]) -> Array4<F> {
        let s = self.image_size;
        let mut out = Array4::<F>::zeros((images.len(), 3, s, s));
        let per = 3 * s * s;
        let slice = out.as_slice_mut().unwrap();
        for (i, img) in images.iter().enumerate() {
            self.image_to_tensor_row(img, &mut slice[i * per..(i + 1) * per]);
        }
        out
    }

    /// Batch of autoencoder-part images by index, as `[n, 3, s, s]` floats.
    pub fn ae_batch<F: Scalar>(&self, idxs: &[usize]) -> Array4<F> {
        let imgs: Vec<&ImageU8> = idxs.iter().map(|&i| &self.ae_images[i]).collect();
        self.batch_from(&imgs)
    }

    /// Batch of predictor-part images by index.
    pub fn pred_batch<F: Scalar>(&self, idxs: &[usize]) -> Array4<F> {
        let imgs: Vec<&ImageU8> = idxs.iter().map(|&i| &self.pred_samples[i].image).collect();
        self.batch_from(&imgs)
    }

    /// Position targets `[n, 2]` for predictor-part indices.
    pub fn pred_positions<F: Scalar>(&self, idxs: &[usize]) -> Result<Array2<F>> {
        let mut out = Array2::<F>::zeros((idxs.len(), 2));
        for (row, &i) in idxs.iter().enumerate() {
            match self.pred_samples[i].label {
                Label::Position { x, y } => {
                    out[[row, 0]] = F::fromf64(x as f64);
                    out[[row, 1]] = F::fromf64(y as f64);
                }
                Label::Class(_) => {
                    return Err(Error::Invalid("classification label in positioning task".into()))
                }
            }
        }
        Ok(out)
    }

    /// Class targets for predictor-part indices.
    pub fn pred_classes(&self, idxs: &[usize]) -> Result<Vec<u32>> {
        idxs.iter()
            .map(|&i| match self.pred_samples[i].label {
                Label::Class(c) => Ok(c),
                Label::Position { .. } => {
                    Err(Error::Invalid("positioning label in classification task".into()))
                }
            })
            .collect()
    }

    pub fn pred_label(&self, idx: usize) -> Label {
        self.pred_samples[idx].label
    }

    /// Test-part access for the evaluation module only.
    pub(crate) fn test_samples(&self) -> &[LabeledSample] {
        &self.test_samples
    }

    pub(crate) fn test_batch<F: Scalar>(&self, idxs: &[usize]) -> Array4<F> {
        let imgs: Vec<&ImageU8> = idxs.iter().map(|&i| &self.test_samples[i].image).collect();
        self.batch_from(&imgs)
    }

    /// Content hashes per part, for disjointness checks.
    pub fn part_hashes(&self) -> (Vec<[u8; 32]>, Vec<[u8; 32]>, Vec<[u8; 32]>) {
        (
            self.ae_images.iter().map(ImageU8::content_hash).collect(),
            self.pred_samples.iter().map(|s| s.image.content_hash()).collect(),
            self.test_samples.iter().map(|s| s.image.content_hash()).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(seed: u64) -> ImageU8 {
        let mut rng = rng_for(seed, "img", 0);
        let mut img = ImageU8::zeros(32, 32);
        use rand::Rng;
        rng.fill(&mut img.data[..]);
        img
    }

    #[test]
    fn tile_quadrants_copy_input() {
        let img = random_image(1);
        let tiled = svhn_tile(&img).unwrap();
        assert_eq!(tiled.height, 64);
        for c in 0..3 {
            for r in 0..32 {
                for col in 0..32 {
                    let v = img.get(c, r, col);
                    assert_eq!(tiled.get(c, r, col), v);
                    assert_eq!(tiled.get(c, r + 32, col), v);
                    assert_eq!(tiled.get(c, r, col + 32), v);
                    assert_eq!(tiled.get(c, r + 32, col + 32), v);
                }
            }
        }
    }

    #[test]
    fn tile_sum_is_four_times_input_sum() {
        let img = random_image(7);
        let tiled = svhn_tile(&img).unwrap();
        let s: u64 = img.data.iter().map(|&b| b as u64).sum();
        let st: u64 = tiled.data.iter().map(|&b| b as u64).sum();
        assert_eq!(st, 4 * s);
    }

    #[test]
    fn tile_constant_is_constant() {
        let mut img = ImageU8::zeros(32, 32);
        img.data.fill(128); // 0.5 after rescale
        let tiled = svhn_tile(&img).unwrap();
        assert!(tiled.data.iter().all(|&b| b == 128));
    }

    #[test]
    fn tile_rejects_wrong_size() {
        assert!(svhn_tile(&ImageU8::zeros(64, 64)).is_err());
        assert!(svhn_tile(&ImageU8::zeros(32, 16)).is_err());
    }

    #[test]
    fn tensor_values_are_in_unit_interval() {
        let img = random_image(3);
        let t = img.to_tensor::<f32>();
        assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(t[[0, 0, 0]], img.data[0] as f32 / 255.0);
    }

    #[test]
    fn sample_split_is_deterministic_and_disjoint() {
        let a = TrainValSplit::by_sample(100, 5, "t");
        let b = TrainValSplit::by_sample(100, 5, "t");
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.val.len(), 20);
        let mut all: Vec<usize> = a.train.iter().chain(a.val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let c = TrainValSplit::by_sample(100, 6, "t");
        assert_ne!(a, c);
    }

    #[test]
    fn group_split_keeps_groups_whole() {
        let groups: Vec<Vec<usize>> = (0..10).map(|g| (g * 5..(g + 1) * 5).collect()).collect();
        let s = TrainValSplit::by_group(&groups, 9, "g");
        assert_eq!(s.train.len(), 40);
        assert_eq!(s.val.len(), 10);
        for g in &groups {
            let in_train = g.iter().filter(|i| s.train.contains(i)).count();
            assert!(in_train == 0 || in_train == g.len(), "group split leaked");
        }
    }

    proptest! {
        #[test]
        fn tile_quadrant_extraction_recovers_input(seed in 0u64..500) {
            let img = random_image(seed);
            let tiled = svhn_tile(&img).unwrap();
            for (qr, qc) in [(0, 0), (0, 32), (32, 0), (32, 32)] {
                for c in 0..3usize {
                    for r in 0..32usize {
                        for col in 0..32usize {
                            prop_assert_eq!(tiled.get(c, r + qr, col + qc), img.get(c, r, col));
                        }
                    }
                }
            }
        }
    }
}
