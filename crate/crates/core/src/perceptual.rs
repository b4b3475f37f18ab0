//! The frozen perceptual-loss network: an AlexNet-topology prefix truncated
//! after its second rectification, with a sigmoid appended to normalize the
//! features.
//!
//! Layers: conv(3 -> 64, k11, s4, p2) -> relu -> maxpool(k3, s2) ->
//! conv(64 -> 192, k5, s1, p2) -> relu -> sigmoid. A 3x64x64 input yields a
//! 192x7x7 feature map (m = 9408); 3x96x96 yields 192x11x11 (m = 23232).
//!
//! Weights are loaded from the serialized-weights container (see
//! [`crate::weights`] and `docs/WEIGHTS.md` for the AlexNet name mapping) or
//! drawn from a seeded fan-in-scaled uniform distribution for hermetic runs.
//! The extractor is immutable after construction: the loss path only ever
//! propagates gradients to its *input*, never to its weights.

use crate::errors::{Error, Result};
use crate::nn::{he_uniform, relu, relu_backward, sigmoid, sigmoid_backward, Conv2d, MaxPool2d, PoolCache, Scalar};
use crate::seed::rng_for;
use crate::weights::WeightsContainer;
use ndarray::{Array1, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Channel statistics used when normalizing to the pretrained network's
/// training distribution.
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// How images are normalized before entering the extractor.
///
/// The appended sigmoid suggests the features were used without standard
/// preprocessing, so `Raw01` (feed [0,1] intensities directly) is the
/// default; `ImagenetStats` standardizes per channel. The mode in effect is
/// recorded in every experiment record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    #[default]
    Raw01,
    ImagenetStats,
}

impl std::fmt::Display for InputNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputNorm::Raw01 => write!(f, "raw01"),
            InputNorm::ImagenetStats => write!(f, "imagenet_stats"),
        }
    }
}

/// Where the extractor weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorSource {
    Pretrained { file: String },
    SeededRandom { seed: u64 },
}

/// Supported input sides for feature extraction.
pub const EXTRACTOR_INPUT_SIZES: [usize; 2] = [64, 96];

/// Spatial side of the feature map for a given input side.
pub fn feature_side(input_side: usize) -> usize {
    let c1 = (input_side + 2 * 2 - 11) / 4 + 1;
    let pooled = (c1 - 3) / 2 + 1;
    // conv2 is stride 1 with padding 2, kernel 5: spatial size is preserved.
    pooled
}

/// Flattened feature count `m` for a given input side.
pub fn feature_len(input_side: usize) -> usize {
    let side = feature_side(input_side);
    192 * side * side
}

pub struct ExtractorCache<F: Scalar> {
    input_hw: (usize, usize),
    relu1: Array4<F>,
    pool: PoolCache,
    pool_hw: (usize, usize),
    relu2: Array4<F>,
    pub features: Array4<F>,
}

/// The frozen two-convolution feature network.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor<F: Scalar> {
    conv1: Conv2d<F>,
    pool: MaxPool2d,
    conv2: Conv2d<F>,
    pub source: ExtractorSource,
}

/// Loads the truncated pretrained network from a weights container file.
/// Entries beyond the two convolutions are ignored (prefix semantics).
pub fn load_extractor<F: Scalar>(weights_file: &Path) -> Result<PerceptualExtractor<F>> {
    let c = WeightsContainer::read_from(weights_file)?;
    let conv1_w = c.get(weights_file, "conv1.weight", &[64, 3, 11, 11])?;
    let conv1_b = c.get(weights_file, "conv1.bias", &[64])?;
    let conv2_w = c.get(weights_file, "conv2.weight", &[192, 64, 5, 5])?;
    let conv2_b = c.get(weights_file, "conv2.bias", &[192])?;
    Ok(PerceptualExtractor {
        conv1: Conv2d::new(conv1_w, conv1_b, 4, 2),
        pool: MaxPool2d { kernel: 3, stride: 2 },
        conv2: Conv2d::new(conv2_w, conv2_b, 1, 2),
        source: ExtractorSource::Pretrained {
            file: weights_file.display().to_string(),
        },
    })
}

/// Same topology with seeded fan-in-scaled uniform weights, for hermetic
/// tests and desk-scale runs without the pretrained file.
pub fn random_extractor<F: Scalar>(seed: u64) -> PerceptualExtractor<F> {
    let mut rng = rng_for(seed, "extractor-init", 0);
    let conv1_w = he_uniform(&mut rng, 3 * 11 * 11, (64, 3, 11, 11));
    let conv1_b = Array1::zeros(64);
    let conv2_w = he_uniform(&mut rng, 64 * 5 * 5, (192, 64, 5, 5));
    let conv2_b = Array1::zeros(192);
    PerceptualExtractor {
        conv1: Conv2d::new(conv1_w, conv1_b, 4, 2),
        pool: MaxPool2d { kernel: 3, stride: 2 },
        conv2: Conv2d::new(conv2_w, conv2_b, 1, 2),
        source: ExtractorSource::SeededRandom { seed },
    }
}

impl<F: Scalar> PerceptualExtractor<F> {
    fn normalize(&self, x: &Array4<F>, norm: InputNorm) -> Array4<F> {
        match norm {
            InputNorm::Raw01 => x.clone(),
            InputNorm::ImagenetStats => {
                let mut out = x.clone();
                for ch in 0..3 {
                    let mean = F::fromf64(IMAGENET_MEAN[ch]);
                    let std = F::fromf64(IMAGENET_STD[ch]);
                    out.index_axis_mut(Axis(1), ch)
                        .mapv_inplace(|v| (v - mean) / std);
                }
                out
            }
        }
    }

    /// Forward pass on any spatial size the stack supports. Feature maps are
    /// `[n, 192, side, side]`.
    pub fn forward_batch(&self, x: &Array4<F>, norm: InputNorm) -> (Array4<F>, ExtractorCache<F>) {
        let (_, _, h, w) = x.dim();
        let xn = self.normalize(x, norm);
        let a1 = relu(&self.conv1.forward(&xn));
        let (p, pool_cache) = self.pool.forward(&a1);
        let pool_hw = (p.dim().2, p.dim().3);
        let a2 = relu(&self.conv2.forward(&p));
        let features = sigmoid(&a2);
        let cache = ExtractorCache {
            input_hw: (h, w),
            relu1: a1,
            pool: pool_cache,
            pool_hw,
            relu2: a2,
            features: features.clone(),
        };
        (features, cache)
    }

    /// Gradient of the features with respect to the *input* image. Extractor
    /// weights receive no gradient anywhere in this crate.
    pub fn backward_input(
        &self,
        cache: &ExtractorCache<F>,
        gfeatures: &Array4<F>,
        norm: InputNorm,
    ) -> Array4<F> {
        let g = sigmoid_backward(&cache.features, gfeatures);
        let g = relu_backward(&cache.relu2, &g);
        let g = self.conv2.backward_input(cache.pool_hw, &g);
        let g = self.pool.backward(&cache.pool, &g);
        let g = relu_backward(&cache.relu1, &g);
        let mut gx = self.conv1.backward_input(cache.input_hw, &g);
        if norm == InputNorm::ImagenetStats {
            for ch in 0..3 {
                let std = F::fromf64(IMAGENET_STD[ch]);
                gx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v / std);
            }
        }
        gx
    }

    /// Hash of the frozen weights; training asserts it is unchanged.
    pub fn weights_sha256(&self) -> String {
        self.to_container().sha256_hex()
    }

    pub fn to_container(&self) -> WeightsContainer {
        let mut c = WeightsContainer::new();
        c.add("conv1.weight", &self.conv1.weight);
        c.add("conv1.bias", &self.conv1.bias);
        c.add("conv2.weight", &self.conv2.weight);
        c.add("conv2.bias", &self.conv2.bias);
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    /// Raw weight views for the straight-line oracle in tests.
    pub fn weight_arrays(&self) -> (&ndarray::Array4<F>, &Array1<F>, &ndarray::Array4<F>, &Array1<F>) {
        (
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
        )
    }
}

/// Extracts the feature tensor for a single image of a supported size.
pub fn extract_features<F: Scalar>(
    extractor: &PerceptualExtractor<F>,
    x: &Array3<F>,
    norm: InputNorm,
) -> Result<Array3<F>> {
    let (c, h, w) = x.dim();
    if c != 3 || h != w || !EXTRACTOR_INPUT_SIZES.contains(&h) {
        return Err(Error::ShapeMismatch {
            expected: "3x64x64 or 3x96x96".into(),
            found: format!("{c}x{h}x{w}"),
        });
    }
    let xb = x.clone().insert_axis(Axis(0));
    let (f, _) = extractor.forward_batch(&xb, norm);
    Ok(f.remove_axis(Axis(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    #[test]
    fn feature_shapes_follow_conv_arithmetic() {
        assert_eq!(feature_side(64), 7);
        assert_eq!(feature_side(96), 11);
        assert_eq!(feature_len(64), 9408);
        assert_eq!(feature_len(96), 23232);
    }

    #[test]
    fn extract_features_shapes_and_range() {
        let ext = random_extractor::<f32>(3);
        let x64 = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| {
            ((c + h * 3 + w * 7) % 19) as f32 / 19.0
        });
        let f = extract_features(&ext, &x64, InputNorm::Raw01).unwrap();
        assert_eq!(f.dim(), (192, 7, 7));
        assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));

        let x96 = Array3::<f32>::from_elem((3, 96, 96), 0.25);
        let f96 = extract_features(&ext, &x96, InputNorm::Raw01).unwrap();
        assert_eq!(f96.dim(), (192, 11, 11));

        let bad = Array3::<f32>::zeros((3, 32, 32));
        assert!(extract_features(&ext, &bad, InputNorm::Raw01).is_err());
    }

    #[test]
    fn same_seed_same_weights_different_seed_differs() {
        let a = random_extractor::<f32>(5);
        let b = random_extractor::<f32>(5);
        let c = random_extractor::<f32>(6);
        assert_eq!(a.weights_sha256(), b.weights_sha256());
        assert_ne!(a.weights_sha256(), c.weights_sha256());
    }

    #[test]
    fn forward_is_deterministic() {
        let ext = random_extractor::<f32>(9);
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| ((c * h + w) % 23) as f32 / 23.0);
        let a = extract_features(&ext, &x, InputNorm::Raw01).unwrap();
        let b = extract_features(&ext, &x, InputNorm::Raw01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_straight_line_oracle() {
        let ext = random_extractor::<f64>(17);
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| {
            ((3 * c + 5 * h + 11 * w) % 29) as f64 / 29.0
        });
        let f = extract_features(&ext, &x, InputNorm::Raw01).unwrap();
        let (w1, b1, w2, b2) = ext.weight_arrays();
        let weights = oracles::NaiveExtractorWeights {
            conv1_w: w1.as_slice().unwrap(),
            conv1_b: b1.as_slice().unwrap(),
            conv2_w: w2.as_slice().unwrap(),
            conv2_b: b2.as_slice().unwrap(),
        };
        let (naive, side) = oracles::naive_extractor_forward(x.as_slice().unwrap(), 64, &weights);
        assert_eq!(side, 7);
        let ours = f.as_slice().unwrap();
        let rel = oracles::max_rel_err(ours, &naive);
        assert!(rel < 1e-12, "rel err {rel}");
    }

    #[test]
    fn load_ignores_extra_entries_and_checks_shapes() {
        let dir = std::env::temp_dir().join("pe_extractor_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("alexnet_prefix.pewt");
        let ext = random_extractor::<f32>(21);
        let mut c = ext.to_container();
        // trailing layers beyond the truncation point must be ignored
        c.add("conv3.weight", &ndarray::Array2::<f32>::zeros((4, 4)));
        c.write_to(&path).unwrap();
        let loaded = load_extractor::<f32>(&path).unwrap();
        assert_eq!(loaded.to_container().sha256_hex(), ext.to_container().sha256_hex());
        assert_eq!(loaded.conv1.weight.dim(), (64, 3, 11, 11));

        // wrong shape is rejected with both shapes in the message
        let mut bad = WeightsContainer::new();
        bad.add("conv1.weight", &ndarray::Array4::<f32>::zeros((64, 3, 7, 7)));
        let bad_path = dir.join("bad.pewt");
        bad.write_to(&bad_path).unwrap();
        let err = load_extractor::<f32>(&bad_path).unwrap_err().to_string();
        assert!(err.contains("[64, 3, 11, 11]") && err.contains("[64, 3, 7, 7]"), "{err}");
    }

    #[test]
    fn imagenet_normalization_changes_features() {
        let ext = random_extractor::<f64>(2);
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| ((c + h + w) % 7) as f64 / 7.0);
        let a = extract_features(&ext, &x, InputNorm::Raw01).unwrap();
        let b = extract_features(&ext, &x, InputNorm::ImagenetStats).unwrap();
        assert_ne!(a, b);
    }
}
