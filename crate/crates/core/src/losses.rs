//! Reconstruction losses and the KL regularizer.
//!
//! The element-wise (pixel-wise) loss sums squared differences over
//! corresponding elements of the target and reconstruction. The perceptual
//! loss applies the same squared-error reduction to the feature maps the
//! frozen extractor produces for both images. Both support sum and mean
//! reduction; mean is the default throughout the experiments.
//!
//! [`demos`] holds executable versions of the classic pixel-wise-loss
//! pathologies: the one-pixel stripe shift that scores worse than a
//! constant gray image, and the small gray feature whose removal barely
//! moves the pixel-wise loss.

use crate::errors::{Error, Result};
use crate::models::LatentCode;
use crate::nn::Scalar;
use crate::perceptual::{InputNorm, PerceptualExtractor};
use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Pixelwise,
    Perceptual,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Pixelwise => write!(f, "pixelwise"),
            LossKind::Perceptual => write!(f, "perceptual"),
        }
    }
}

/// The training objective: which reconstruction loss, its reduction, the KL
/// weight (zero for plain autoencoders), and the frozen extractor for the
/// perceptual variant.
#[derive(Clone)]
pub struct LossSpec<F: Scalar> {
    pub kind: LossKind,
    pub reduction: Reduction,
    pub kl_weight: f64,
    pub extractor: Option<Arc<PerceptualExtractor<F>>>,
    pub norm: InputNorm,
}

impl<F: Scalar> LossSpec<F> {
    pub fn pixelwise(reduction: Reduction, kl_weight: f64) -> Result<Self> {
        if kl_weight < 0.0 {
            return Err(Error::InvalidConfig("kl_weight must be >= 0".into()));
        }
        Ok(LossSpec {
            kind: LossKind::Pixelwise,
            reduction,
            kl_weight,
            extractor: None,
            norm: InputNorm::Raw01,
        })
    }

    pub fn perceptual(
        reduction: Reduction,
        kl_weight: f64,
        extractor: Arc<PerceptualExtractor<F>>,
        norm: InputNorm,
    ) -> Result<Self> {
        if kl_weight < 0.0 {
            return Err(Error::InvalidConfig("kl_weight must be >= 0".into()));
        }
        Ok(LossSpec {
            kind: LossKind::Perceptual,
            reduction,
            kl_weight,
            extractor: Some(extractor),
            norm,
        })
    }
}

fn reduce<F: Scalar>(sum_sq: F, count: usize, reduction: Reduction) -> F {
    match reduction {
        Reduction::Sum => sum_sq,
        Reduction::Mean => sum_sq / F::fromf64(count as f64),
    }
}

/// Element-wise squared-error loss between a target and its reconstruction.
pub fn elementwise_loss<F: Scalar>(
    x: &Array3<F>,
    x_hat: &Array3<F>,
    reduction: Reduction,
) -> Result<F> {
    if x.dim() != x_hat.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", x.dim()),
            found: format!("{:?}", x_hat.dim()),
        });
    }
    let mut acc = F::zero();
    for (&a, &b) in x.iter().zip(x_hat.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(reduce(acc, x.len(), reduction))
}

/// Perceptual squared-error loss: the element-wise loss applied to the
/// frozen extractor's features of both images.
pub fn perceptual_loss<F: Scalar>(
    x: &Array3<F>,
    x_hat: &Array3<F>,
    extractor: &PerceptualExtractor<F>,
    norm: InputNorm,
    reduction: Reduction,
) -> Result<F> {
    if x.dim() != x_hat.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", x.dim()),
            found: format!("{:?}", x_hat.dim()),
        });
    }
    let fx = crate::perceptual::extract_features(extractor, x, norm)?;
    let fxh = crate::perceptual::extract_features(extractor, x_hat, norm)?;
    let mut acc = F::zero();
    for (&a, &b) in fx.iter().zip(fxh.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(reduce(acc, fx.len(), reduction))
}

/// KL divergence from `N(mu, exp(logvar))` to the standard normal, summed
/// over dimensions: `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_loss<F: Scalar>(mu: &Array1<F>, logvar: &Array1<F>) -> Result<F> {
    if mu.len() != logvar.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("logvar of length {}", mu.len()),
            found: format!("length {}", logvar.len()),
        });
    }
    let mut acc = F::zero();
    for (&m, &lv) in mu.iter().zip(logvar.iter()) {
        acc += m * m + lv.exp() - F::one() - lv;
    }
    Ok(acc * F::fromf64(0.5))
}

/// Loss components: `total = recon + kl_weight * kl`.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<F> {
    pub total: F,
    pub recon: F,
    pub kl: F,
}

/// Evaluates the configured objective for one sample.
pub fn total_loss<F: Scalar>(
    spec: &LossSpec<F>,
    x: &Array3<F>,
    x_hat: &Array3<F>,
    code: &LatentCode<F>,
) -> Result<LossParts<F>> {
    let recon = match spec.kind {
        LossKind::Pixelwise => elementwise_loss(x, x_hat, spec.reduction)?,
        LossKind::Perceptual => {
            let extractor = spec
                .extractor
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("perceptual loss without extractor".into()))?;
            perceptual_loss(x, x_hat, extractor, spec.norm, spec.reduction)?
        }
    };
    let kl = kl_loss(&code.mu, &code.logvar)?;
    let total = recon + F::fromf64(spec.kl_weight) * kl;
    Ok(LossParts { total, recon, kl })
}

// ---- batched helpers used by the training loop ---------------------------

/// Mean over the batch of per-sample reduced squared error.
pub fn batch_squared_error<F: Scalar>(x: &Array4<F>, x_hat: &Array4<F>, reduction: Reduction) -> F {
    debug_assert_eq!(x.dim(), x_hat.dim());
    let n = x.dim().0;
    let per = x.len() / n;
    let mut acc = F::zero();
    for (&a, &b) in x.iter().zip(x_hat.iter()) {
        let d = a - b;
        acc += d * d;
    }
    match reduction {
        Reduction::Sum => acc / F::fromf64(n as f64),
        Reduction::Mean => acc / F::fromf64((n * per) as f64),
    }
}

/// Gradient of [`batch_squared_error`] with respect to `x_hat`.
pub fn batch_squared_error_grad<F: Scalar>(
    x: &Array4<F>,
    x_hat: &Array4<F>,
    reduction: Reduction,
) -> Array4<F> {
    let n = x.dim().0;
    let per = x.len() / n;
    let scale = match reduction {
        Reduction::Sum => F::fromf64(2.0 / n as f64),
        Reduction::Mean => F::fromf64(2.0 / (n * per) as f64),
    };
    let mut g = x_hat.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|g, &t| *g = (*g - t) * scale);
    g
}

/// Mean over the batch of per-sample KL, plus gradients with respect to
/// `mu` and `logvar` (already scaled by `kl_weight / n`).
pub fn batch_kl<F: Scalar>(
    mu: &ndarray::Array2<F>,
    logvar: &ndarray::Array2<F>,
    kl_weight: f64,
) -> (F, ndarray::Array2<F>, ndarray::Array2<F>) {
    let n = mu.dim().0;
    let half = F::fromf64(0.5);
    let mut acc = F::zero();
    for (&m, &lv) in mu.iter().zip(logvar.iter()) {
        acc += m * m + lv.exp() - F::one() - lv;
    }
    let kl = acc * half / F::fromf64(n as f64);
    let wscale = F::fromf64(kl_weight / n as f64);
    let gmu = mu.mapv(|m| m * wscale);
    let glogvar = logvar.mapv(|lv| half * (lv.exp() - F::one()) * wscale);
    (kl, gmu, glogvar)
}

/// Demonstration scenes for the loss pathologies.
pub mod demos {
    use super::*;

    /// Binary vertical stripes of width 1; `phase` shifts the pattern
    /// horizontally. All three channels carry the same pattern.
    pub fn stripes<F: Scalar>(side: usize, phase: usize) -> Array3<F> {
        Array3::from_shape_fn((3, side, side), |(_, _, w)| {
            if (w + phase) % 2 == 0 {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    /// Constant image at the given intensity.
    pub fn constant<F: Scalar>(side: usize, value: f64) -> Array3<F> {
        Array3::from_elem((3, side, side), F::fromf64(value))
    }

    /// The small-feature scene: a black-and-white 64x64 image (white sky
    /// above, black ground below) with one 2x2 mid-gray feature on the
    /// black region.
    pub fn small_feature_scene<F: Scalar>() -> SmallFeatureScene<F> {
        let side = 64usize;
        let base = Array3::from_shape_fn((3, side, side), |(_, h, _)| {
            if h < 32 {
                F::one()
            } else {
                F::zero()
            }
        });
        let gray = F::fromf64(0.5);
        let mut original = base.clone();
        paint(&mut original, 44, 20, 2, 2, gray);
        let missing_feature = base.clone();
        let mut four_pixels_removed = original.clone();
        paint(&mut four_pixels_removed, 50, 40, 2, 2, F::one());
        let mut feature_moved = base.clone();
        paint(&mut feature_moved, 43, 21, 2, 2, gray);
        SmallFeatureScene {
            original,
            missing_feature,
            four_pixels_removed,
            feature_moved,
        }
    }

    fn paint<F: Scalar>(img: &mut Array3<F>, row: usize, col: usize, h: usize, w: usize, v: F) {
        for c in 0..3 {
            for r in row..row + h {
                for cc in col..col + w {
                    img[[c, r, cc]] = v;
                }
            }
        }
    }

    pub struct SmallFeatureScene<F: Scalar> {
        pub original: Array3<F>,
        /// The gray feature replaced by background.
        pub missing_feature: Array3<F>,
        /// Four black pixels elsewhere flipped to white.
        pub four_pixels_removed: Array3<F>,
        /// The gray feature moved one pixel up and one right.
        pub feature_moved: Array3<F>,
    }

    /// Loss changes caused by removing the small feature, each normalized by
    /// the same loss against a constant image at the scene's mean intensity.
    /// The normalization makes the two losses comparable; the claim under
    /// test is only the ordering `perceptual_ratio > pixel_ratio`.
    pub struct SensitivityReport {
        pub pixel_change_mean: f64,
        pub pixel_ratio: f64,
        pub perceptual_ratio: f64,
    }

    pub fn small_feature_sensitivity<F: Scalar>(
        extractor: &PerceptualExtractor<F>,
        norm: InputNorm,
    ) -> Result<SensitivityReport> {
        let scene = small_feature_scene::<F>();
        let mean = scene.original.mean().unwrap();
        let gray_ref = Array3::from_elem(scene.original.raw_dim(), mean);

        let pix_change =
            elementwise_loss(&scene.original, &scene.missing_feature, Reduction::Mean)?.tof64();
        let pix_ref = elementwise_loss(&scene.original, &gray_ref, Reduction::Mean)?.tof64();
        let perc_change = perceptual_loss(
            &scene.original,
            &scene.missing_feature,
            extractor,
            norm,
            Reduction::Mean,
        )?
        .tof64();
        let perc_ref =
            perceptual_loss(&scene.original, &gray_ref, extractor, norm, Reduction::Mean)?.tof64();
        Ok(SensitivityReport {
            pixel_change_mean: pix_change,
            pixel_ratio: pix_change / pix_ref,
            perceptual_ratio: perc_change / perc_ref,
        })
    }

    /// Perceptual losses of the stripe scene against its one-pixel shift and
    /// against the constant mean-gray image. Pixel-wise loss orders these
    /// 1.0 vs 0.25; a feature-level loss is expected to reverse the order.
    pub fn stripe_perceptual_ordering<F: Scalar>(
        extractor: &PerceptualExtractor<F>,
        norm: InputNorm,
    ) -> Result<(f64, f64)> {
        let x = stripes::<F>(64, 0);
        let shifted = stripes::<F>(64, 1);
        let gray = constant::<F>(64, 0.5);
        let vs_shifted = perceptual_loss(&x, &shifted, extractor, norm, Reduction::Mean)?.tof64();
        let vs_gray = perceptual_loss(&x, &gray, extractor, norm, Reduction::Mean)?.tof64();
        Ok((vs_shifted, vs_gray))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use ndarray::Axis;
    use crate::perceptual::random_extractor;
    use crate::seed::rng_for;
    use rand::Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let x = demos::stripes::<f64>(64, 0);
        assert_eq!(elementwise_loss(&x, &x, Reduction::Mean).unwrap(), 0.0);
        let ext = random_extractor::<f64>(1);
        assert_eq!(
            perceptual_loss(&x, &x, &ext, InputNorm::Raw01, Reduction::Mean).unwrap(),
            0.0
        );
    }

    #[test]
    fn stripe_shift_scores_one_and_gray_scores_quarter() {
        let x = demos::stripes::<f64>(64, 0);
        let shifted = demos::stripes::<f64>(64, 1);
        let gray = demos::constant::<f64>(64, 0.5);
        let l_shift = elementwise_loss(&x, &shifted, Reduction::Mean).unwrap();
        let l_gray = elementwise_loss(&x, &gray, Reduction::Mean).unwrap();
        assert!((l_shift - 1.0).abs() < 1e-12);
        assert!((l_gray - 0.25).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = demos::constant::<f64>(64, 0.1);
        let b = Array3::<f64>::zeros((3, 32, 32));
        assert!(elementwise_loss(&a, &b, Reduction::Mean).is_err());
    }

    #[test]
    fn elementwise_loss_is_symmetric() {
        let mut rng = rng_for(7, "loss-sym", 0);
        let a = Array3::from_shape_fn((3, 16, 16), |_| rng.random::<f64>());
        let b = Array3::from_shape_fn((3, 16, 16), |_| rng.random::<f64>());
        let ab = elementwise_loss(&a, &b, Reduction::Sum).unwrap();
        let ba = elementwise_loss(&b, &a, Reduction::Sum).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn kl_closed_forms() {
        use ndarray::array;
        let zero = kl_loss(&array![0.0f64], &array![0.0]).unwrap();
        assert!(zero.abs() < 1e-12);
        let half = kl_loss(&array![1.0f64], &array![0.0]).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let e_case = kl_loss(&array![0.0f64], &array![1.0]).unwrap();
        assert!((e_case - 0.5 * (std::f64::consts::E - 2.0)).abs() < 1e-12);
        assert!(kl_loss(&array![0.0f64], &array![0.0, 0.0]).is_err());
    }

    #[test]
    fn kl_is_nonnegative_on_random_inputs() {
        let mut rng = rng_for(5, "kl-prop", 0);
        for _ in 0..200 {
            let mu = Array1::from_shape_fn(8, |_| rng.random_range(-3.0..3.0));
            let lv = Array1::from_shape_fn(8, |_| rng.random_range(-3.0..3.0));
            assert!(kl_loss(&mu, &lv).unwrap() >= 0.0);
        }
    }

    #[test]
    fn losses_match_double_loop_oracles_on_seeded_pairs() {
        let ext = random_extractor::<f64>(3);
        for pair in 0..10u64 {
            let mut rng = rng_for(pair, "loss-oracle", 0);
            let x = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
            let y = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
            // element-wise vs double loop
            let ours = elementwise_loss(&x, &y, Reduction::Mean).unwrap();
            let naive =
                oracles::naive_squared_error(x.as_slice().unwrap(), y.as_slice().unwrap(), true);
            assert!((ours - naive).abs() / naive.max(1e-12) < 1e-6);
            // perceptual vs straight-line forward + double loop
            let ours_p =
                perceptual_loss(&x, &y, &ext, InputNorm::Raw01, Reduction::Mean).unwrap();
            let (w1, b1, w2, b2) = ext.weight_arrays();
            let weights = oracles::NaiveExtractorWeights {
                conv1_w: w1.as_slice().unwrap(),
                conv1_b: b1.as_slice().unwrap(),
                conv2_w: w2.as_slice().unwrap(),
                conv2_b: b2.as_slice().unwrap(),
            };
            let (fx, _) = oracles::naive_extractor_forward(x.as_slice().unwrap(), 64, &weights);
            let (fy, _) = oracles::naive_extractor_forward(y.as_slice().unwrap(), 64, &weights);
            let naive_p = oracles::naive_squared_error(&fx, &fy, true);
            assert!(
                (ours_p - naive_p).abs() / naive_p.max(1e-12) < 1e-6,
                "pair {pair}: {ours_p} vs {naive_p}"
            );
        }
    }

    #[test]
    fn total_loss_composition() {
        use ndarray::array;
        let x = demos::constant::<f64>(64, 0.4);
        let xh = demos::constant::<f64>(64, 0.6);
        let code = LatentCode {
            mu: array![1.0f64, 0.0],
            logvar: array![0.0f64, 0.0],
            z: array![1.0f64, 0.0],
        };
        // kl_weight = 0: total equals recon exactly
        let spec0 = LossSpec::<f64>::pixelwise(Reduction::Mean, 0.0).unwrap();
        let p0 = total_loss(&spec0, &x, &xh, &code).unwrap();
        assert_eq!(p0.total, p0.recon);
        // kl_weight = 1 with mu=0, logvar=0: kl = 0, total = recon
        let zero_code = LatentCode {
            mu: array![0.0f64, 0.0],
            logvar: array![0.0f64, 0.0],
            z: array![0.0f64, 0.0],
        };
        let spec1 = LossSpec::<f64>::pixelwise(Reduction::Mean, 1.0).unwrap();
        let p1 = total_loss(&spec1, &x, &xh, &zero_code).unwrap();
        assert_eq!(p1.total, p1.recon);
        // increasing kl_weight never decreases the total
        let mut prev = 0.0;
        for w in [0.0, 0.5, 1.0, 2.0, 8.0] {
            let spec = LossSpec::<f64>::pixelwise(Reduction::Mean, w).unwrap();
            let parts = total_loss(&spec, &x, &xh, &code).unwrap();
            assert!(parts.total >= prev);
            prev = parts.total;
        }
    }

    #[test]
    fn batch_losses_agree_with_per_sample() {
        let mut rng = rng_for(11, "batch-loss", 0);
        let x = Array4::from_shape_fn((4, 3, 16, 16), |_| rng.random::<f64>());
        let y = Array4::from_shape_fn((4, 3, 16, 16), |_| rng.random::<f64>());
        let batch = batch_squared_error(&x, &y, Reduction::Mean);
        let mut acc = 0.0;
        for i in 0..4 {
            let xi = x.index_axis(Axis(0), i).to_owned();
            let yi = y.index_axis(Axis(0), i).to_owned();
            acc += elementwise_loss(&xi, &yi, Reduction::Mean).unwrap();
        }
        assert!((batch - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_feature_removal_barely_moves_pixel_loss() {
        let scene = demos::small_feature_scene::<f64>();
        let l = elementwise_loss(&scene.original, &scene.missing_feature, Reduction::Mean).unwrap();
        assert!(l < 0.001, "pixel-wise change {l}");
        assert!(l > 0.0);
        // moving the feature by one pixel is also nearly invisible to it
        let lm = elementwise_loss(&scene.original, &scene.feature_moved, Reduction::Mean).unwrap();
        assert!(lm < 0.001);
    }

    #[test]
    fn small_feature_sensitivity_orders_losses_with_random_extractor() {
        let ext = random_extractor::<f64>(40);
        let report =
            demos::small_feature_sensitivity(&ext, InputNorm::Raw01).unwrap();
        assert!(report.pixel_change_mean < 0.001);
        assert!(
            report.perceptual_ratio > report.pixel_ratio,
            "perceptual {} vs pixel {}",
            report.perceptual_ratio,
            report.pixel_ratio
        );
    }
}
