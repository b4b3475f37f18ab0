//! Independent reference implementations used to verify the optimized
//! numeric paths. Everything here is deliberately written as plain nested
//! loops over `f64` slices and shares no code with [`crate::nn`]. These are
//! the oracles the test suite and the `verify` subcommand check against;
//! keep them boring.

/// Naive direct convolution. `x: [c][h][w]` flattened, `w: [co][ci][kh][kw]`
/// flattened, square stride/pad. Returns `[co][oh][ow]` flattened.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; co * oh * ow];
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = x[(ic * h + iy as usize) * w + ix as usize];
                            let wv = weight[((oc * c + ic) * kh + ky) * kw + kx];
                            acc += xv * wv;
                        }
                    }
                }
                y[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (y, oh, ow)
}

/// Naive max pooling over `[c][h][w]`.
pub fn naive_maxpool(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut y = vec![0.0; c * oh * ow];
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = x[(ic * h + oy * stride + ky) * w + ox * stride + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                y[(ic * oh + oy) * ow + ox] = best;
            }
        }
    }
    (y, oh, ow)
}

/// Parameters of the two-convolution feature extractor in plain arrays, for
/// the straight-line forward pass below.
pub struct NaiveExtractorWeights<'a> {
    pub conv1_w: &'a [f64],
    pub conv1_b: &'a [f64],
    pub conv2_w: &'a [f64],
    pub conv2_b: &'a [f64],
}

/// Straight-line reimplementation of the extractor forward pass:
/// conv(64, k11, s4, p2) -> relu -> maxpool(k3, s2) -> conv(192, k5, s1, p2)
/// -> relu -> sigmoid. Input `[3][s][s]` flattened; returns the flattened
/// feature map and its spatial side length.
pub fn naive_extractor_forward(
    x: &[f64],
    side: usize,
    weights: &NaiveExtractorWeights<'_>,
) -> (Vec<f64>, usize) {
    let (mut a, h1, w1) = naive_conv2d(x, 3, side, side, weights.conv1_w, weights.conv1_b, 64, 11, 11, 4, 2);
    for v in a.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let (p, h2, w2) = naive_maxpool(&a, 64, h1, w1, 3, 2);
    let (mut f, h3, _w3) = naive_conv2d(&p, 64, h2, w2, weights.conv2_w, weights.conv2_b, 192, 5, 5, 1, 2);
    for v in f.iter_mut() {
        let r = if *v < 0.0 { 0.0 } else { *v };
        *v = 1.0 / (1.0 + (-r).exp());
    }
    let _ = w2;
    (f, h3)
}

/// Double-loop mean/sum of squared differences.
pub fn naive_squared_error(a: &[f64], b: &[f64], mean: bool) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    if mean {
        acc / a.len() as f64
    } else {
        acc
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Largest relative discrepancy between two gradient vectors. The
/// denominator is floored at 1e-6 so that near-zero pairs compare by
/// absolute difference.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(1e-6);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// Scans an image for the bright sprite and returns the center of its
/// bounding box as `(x, y)` pixel coordinates, or `None` when no pixel
/// exceeds the threshold. Used to verify rendered labels independently of
/// the renderer's own bookkeeping.
pub fn pixel_scan_sprite_center(
    data: &[u8],
    height: usize,
    width: usize,
    threshold: u8,
) -> Option<(f64, f64)> {
    // Channel 0 is enough: the sprite is the only thing above threshold.
    let mut min_r = usize::MAX;
    let mut max_r = 0usize;
    let mut min_c = usize::MAX;
    let mut max_c = 0usize;
    let mut found = false;
    for r in 0..height {
        for cidx in 0..width {
            if data[r * width + cidx] > threshold {
                found = true;
                min_r = min_r.min(r);
                max_r = max_r.max(r);
                min_c = min_c.min(cidx);
                max_c = max_c.max(cidx);
            }
        }
    }
    if !found {
        return None;
    }
    // Center of the covered pixel span: pixel i covers [i, i+1).
    let cx = (min_c + max_c + 1) as f64 / 2.0;
    let cy = (min_r + max_r + 1) as f64 / 2.0;
    Some((cx, cy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_recovers_polynomial_gradient() {
        // f(x) = x0^2 + 3 x1, grad = (2 x0, 3).
        let g = central_difference_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn pixel_scan_finds_bounding_box_center() {
        let mut img = vec![0u8; 8 * 8];
        // 2x3 sprite with top-left (row 2, col 3).
        for r in 2..4 {
            for c in 3..6 {
                img[r * 8 + c] = 255;
            }
        }
        let (cx, cy) = pixel_scan_sprite_center(&img, 8, 8, 200).unwrap();
        assert_eq!((cx, cy), (4.5, 3.0));
        assert_eq!(pixel_scan_sprite_center(&vec![0u8; 64], 8, 8, 200), None);
    }
}
