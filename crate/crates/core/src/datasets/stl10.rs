//! STL-10 binary ingestion.
//!
//! The published archive (`stl10_binary.tar.gz`) holds flat `u8` files:
//! each image is 3x96x96 bytes, channel-planar (red plane first), and each
//! plane is stored column-wise, so pixel `(c, row, col)` lives at
//! `c*9216 + col*96 + row`. Labels are one byte per image, 1..=10.
//!
//! Parts: `unlabeled_X.bin` (100000) trains the autoencoders,
//! `train_X.bin`/`train_y.bin` (500) train the predictors, and
//! `test_X.bin`/`test_y.bin` (8000) are the held-out test set.

use super::{DatasetBundle, ImageU8, Label, LabeledSample, TaskKind, TrainValSplit};
use crate::errors::{Error, Result};
use std::path::Path;

pub const UNLABELED_COUNT: usize = 100_000;
pub const TRAIN_COUNT: usize = 500;
pub const TEST_COUNT: usize = 8_000;
pub const NUM_CLASSES: u32 = 10;
const SIDE: usize = 96;
const IMAGE_BYTES: usize = 3 * SIDE * SIDE;

/// Whether a loader enforces the published part sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountCheck {
    Expected(usize),
    Any,
}

impl CountCheck {
    pub(crate) fn verify(self, path: &Path, found: usize) -> Result<()> {
        if let CountCheck::Expected(n) = self {
            if n != found {
                return Err(Error::dataset(
                    path,
                    format!("expected {n} images, found {found}"),
                ));
            }
        }
        Ok(())
    }
}

/// Reads an `*_X.bin` image file, transposing each plane to row-major.
pub fn read_images(path: &Path, count: CountCheck) -> Result<Vec<ImageU8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % IMAGE_BYTES != 0 {
        return Err(Error::dataset(
            path,
            format!(
                "file length {} is not a multiple of the {IMAGE_BYTES}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / IMAGE_BYTES;
    count.verify(path, n)?;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let src = &bytes[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES];
        let mut img = ImageU8::zeros(SIDE, SIDE);
        for c in 0..3 {
            let plane = &src[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
            for col in 0..SIDE {
                for row in 0..SIDE {
                    img.data[(c * SIDE + row) * SIDE + col] = plane[col * SIDE + row];
                }
            }
        }
        images.push(img);
    }
    Ok(images)
}

/// Reads a `*_y.bin` label file (bytes 1..=10).
pub fn read_labels(path: &Path, count: CountCheck) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    count.verify(path, bytes.len())?;
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (1..=10).contains(&b) {
                Ok((b - 1) as u32)
            } else {
                Err(Error::dataset(path, format!("label byte {b} at index {i}")))
            }
        })
        .collect()
}

/// Loads the extracted `stl10_binary` directory into a bundle, enforcing the
/// published counts. `seed` drives the sample-granularity 80/20 splits.
pub fn load_dir(dir: &Path, seed: u64) -> Result<DatasetBundle> {
    load_dir_with_counts(
        dir,
        seed,
        CountCheck::Expected(UNLABELED_COUNT),
        CountCheck::Expected(TRAIN_COUNT),
        CountCheck::Expected(TEST_COUNT),
    )
}

pub fn load_dir_with_counts(
    dir: &Path,
    seed: u64,
    unlabeled: CountCheck,
    train: CountCheck,
    test: CountCheck,
) -> Result<DatasetBundle> {
    let ae_images = read_images(&dir.join("unlabeled_X.bin"), unlabeled)?;
    let train_images = read_images(&dir.join("train_X.bin"), train)?;
    let train_labels = read_labels(
        &dir.join("train_y.bin"),
        CountCheck::Expected(train_images.len()),
    )?;
    let test_images = read_images(&dir.join("test_X.bin"), test)?;
    let test_labels = read_labels(
        &dir.join("test_y.bin"),
        CountCheck::Expected(test_images.len()),
    )?;

    let pred_samples: Vec<LabeledSample> = train_images
        .into_iter()
        .zip(train_labels)
        .map(|(image, c)| LabeledSample {
            image,
            label: Label::Class(c),
        })
        .collect();
    let test_samples: Vec<LabeledSample> = test_images
        .into_iter()
        .zip(test_labels)
        .map(|(image, c)| LabeledSample {
            image,
            label: Label::Class(c),
        })
        .collect();

    let ae_split = TrainValSplit::by_sample(ae_images.len(), seed, "ae-split");
    let pred_split = TrainValSplit::by_sample(pred_samples.len(), seed, "pred-split");
    DatasetBundle::new(
        "stl10".into(),
        TaskKind::Classification,
        Some(NUM_CLASSES),
        SIDE,
        false,
        ae_images,
        pred_samples,
        test_samples,
        ae_split,
        pred_split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(path: &Path, images: &[(u8, u8)]) {
        // each entry renders a tiny asymmetric pattern so transposition shows
        let mut bytes = Vec::new();
        for &(base, step) in images {
            let mut plane = vec![0u8; IMAGE_BYTES];
            for c in 0..3 {
                for col in 0..SIDE {
                    for row in 0..SIDE {
                        plane[c * SIDE * SIDE + col * SIDE + row] =
                            base.wrapping_add(step.wrapping_mul((c + 2 * row + 3 * col) as u8));
                    }
                }
            }
            bytes.extend_from_slice(&plane);
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn published_counts_match_the_protocol_table() {
        assert_eq!(
            (UNLABELED_COUNT, TRAIN_COUNT, TEST_COUNT),
            (100_000, 500, 8_000)
        );
        assert_eq!(NUM_CLASSES, 10);
    }

    #[test]
    fn images_are_transposed_from_column_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train_X.bin");
        write_images(&path, &[(5, 1)]);
        let imgs = read_images(&path, CountCheck::Expected(1)).unwrap();
        // source value at (c=0, col=3, row=2) must land at (c=0, row=2, col=3)
        assert_eq!(imgs[0].get(0, 2, 3), 5u8.wrapping_add((2 * 2 + 3 * 3) as u8));
        assert_eq!(imgs[0].get(2, 0, 0), 5u8.wrapping_add(2));
    }

    #[test]
    fn truncated_file_is_rejected_with_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unlabeled_X.bin");
        std::fs::write(&path, vec![0u8; IMAGE_BYTES + 7]).unwrap();
        let err = read_images(&path, CountCheck::Any).unwrap_err().to_string();
        assert!(err.contains("unlabeled_X.bin"), "{err}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test_X.bin");
        write_images(&path, &[(1, 1), (2, 1)]);
        assert!(read_images(&path, CountCheck::Expected(3)).is_err());
        assert!(read_images(&path, CountCheck::Expected(2)).is_ok());
    }

    #[test]
    fn bad_label_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train_y.bin");
        std::fs::write(&path, [1u8, 10, 0]).unwrap();
        assert!(read_labels(&path, CountCheck::Any).is_err());
        std::fs::write(&path, [1u8, 10, 3]).unwrap();
        assert_eq!(read_labels(&path, CountCheck::Any).unwrap(), vec![0, 9, 2]);
    }

    #[test]
    fn mini_dataset_loads_into_bundle() {
        let dir = tempfile::tempdir().unwrap();
        write_images(&dir.path().join("unlabeled_X.bin"), &[(1, 1); 10]);
        write_images(&dir.path().join("train_X.bin"), &[(2, 3); 5]);
        std::fs::write(dir.path().join("train_y.bin"), [1u8, 2, 3, 4, 5]).unwrap();
        write_images(&dir.path().join("test_X.bin"), &[(9, 2); 4]);
        std::fs::write(dir.path().join("test_y.bin"), [10u8, 9, 8, 7]).unwrap();
        let bundle = load_dir_with_counts(
            dir.path(),
            3,
            CountCheck::Any,
            CountCheck::Any,
            CountCheck::Any,
        )
        .unwrap();
        assert_eq!(bundle.ae_len(), 10);
        assert_eq!(bundle.pred_len(), 5);
        assert_eq!(bundle.test_len(), 4);
        assert_eq!(bundle.image_size, 96);
        assert_eq!(bundle.num_classes, Some(10));
        // rescaling contract
        let t = bundle.ae_batch::<f32>(&[0]);
        assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
