//! Convolution and transposed convolution, lowered to GEMM through a patch
//! matrix of shape `[n*positions, c*kh*kw]`. Patch rows for one sample are
//! contiguous, so gathering and scattering parallelize over the batch while
//! all floating-point reductions stay in a fixed order.

use super::Scalar;
use ndarray::{Array1, Array2, Array4, Axis};
use rayon::prelude::*;

/// Output spatial size of a convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Output spatial size of a stride-`s` transposed convolution.
pub fn convt_out_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// Gathers sliding windows of `x` into `[n*oh*ow, c*kh*kw]`. Out-of-bounds
/// (padding) positions read as zero.
fn gather_patches<F: Scalar>(
    x: &Array4<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let positions = oh * ow;
    let k = c * kh * kw;
    let mut rows = Array2::<F>::zeros((n * positions, k));
    let xs = x.as_slice().expect("standard layout");
    let sample_len = c * h * w;

    rows.axis_chunks_iter_mut(Axis(0), positions)
        .into_par_iter()
        .enumerate()
        .for_each(|(sample, mut block)| {
            let xb = &xs[sample * sample_len..(sample + 1) * sample_len];
            let out = block.as_slice_mut().expect("standard layout");
            for oy in 0..oh {
                for ox in 0..ow {
                    let row_off = (oy * ow + ox) * k;
                    for ci in 0..c {
                        let chan_off = ci * h * w;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_off = chan_off + iy as usize * w;
                            let dst_off = row_off + (ci * kh + ky) * kw;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                out[dst_off + kx] = xb[src_off + ix as usize];
                            }
                        }
                    }
                }
            }
        });
    rows
}

/// Inverse of `gather_patches`: accumulates patch rows back into an image
/// tensor of shape `[n, c, h, w]`.
fn scatter_patches<F: Scalar>(
    rows: &Array2<F>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let positions = oh * ow;
    let k = c * kh * kw;
    debug_assert_eq!(rows.dim(), (n * positions, k));
    let rs = rows.as_slice().expect("standard layout");
    let mut x = Array4::<F>::zeros((n, c, h, w));
    let sample_len = c * h * w;
    {
        let xs = x.as_slice_mut().expect("standard layout");
        xs.par_chunks_mut(sample_len)
            .enumerate()
            .for_each(|(sample, xb)| {
                let base = sample * positions;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row_off = (base + oy * ow + ox) * k;
                        for ci in 0..c {
                            let chan_off = ci * h * w;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst_off = chan_off + iy as usize * w;
                                let src_off = row_off + (ci * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    xb[dst_off + ix as usize] =
                                        xb[dst_off + ix as usize] + rs[src_off + kx];
                                }
                            }
                        }
                    }
                }
            });
    }
    x
}

/// `[n, c, oh, ow]` -> `[n*oh*ow, c]`.
fn nchw_to_rows<F: Scalar>(y: &Array4<F>) -> Array2<F> {
    let (n, c, oh, ow) = y.dim();
    let positions = oh * ow;
    let ys = y.as_slice().expect("standard layout");
    let mut rows = Array2::<F>::zeros((n * positions, c));
    {
        let out = rows.as_slice_mut().expect("standard layout");
        out.par_chunks_mut(positions * c)
            .enumerate()
            .for_each(|(sample, block)| {
                let yb = &ys[sample * c * positions..(sample + 1) * c * positions];
                for ci in 0..c {
                    let src = &yb[ci * positions..(ci + 1) * positions];
                    for (s, &v) in src.iter().enumerate() {
                        block[s * c + ci] = v;
                    }
                }
            });
    }
    rows
}

/// `[n*oh*ow, c]` -> `[n, c, oh, ow]`.
fn rows_to_nchw<F: Scalar>(rows: &Array2<F>, n: usize, c: usize, oh: usize, ow: usize) -> Array4<F> {
    let positions = oh * ow;
    let rs = rows.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    {
        let ys = y.as_slice_mut().expect("standard layout");
        ys.par_chunks_mut(c * positions)
            .enumerate()
            .for_each(|(sample, yb)| {
                let block = &rs[sample * positions * c..(sample + 1) * positions * c];
                for ci in 0..c {
                    let dst = &mut yb[ci * positions..(ci + 1) * positions];
                    for (s, d) in dst.iter_mut().enumerate() {
                        *d = block[s * c + ci];
                    }
                }
            });
    }
    y
}

/// 2-D convolution with square stride and padding.
///
/// Weights have shape `[out_channels, in_channels, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct Conv2dGrads<F: Scalar> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(weight: Array4<F>, bias: Array1<F>, stride: usize, pad: usize) -> Self {
        assert_eq!(weight.dim().0, bias.len());
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn output_size(&self, input: usize) -> usize {
        conv_out_dim(input, self.weight.dim().2, self.stride, self.pad)
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (co, ci, kh, kw) = self.weight.dim();
        assert_eq!(c, ci, "conv input channels");
        let oh = conv_out_dim(h, kh, self.stride, self.pad);
        let ow = conv_out_dim(w, kw, self.stride, self.pad);
        let patches = gather_patches(x, kh, kw, self.stride, self.pad);
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        let mut y_rows = patches.dot(&w_mat.t());
        y_rows += &self.bias.view().insert_axis(Axis(0));
        rows_to_nchw(&y_rows, n, co, oh, ow)
    }

    /// Input gradient only, for frozen layers: skips the weight-gradient
    /// GEMM entirely. `input_hw` is the spatial size of the forward input.
    pub fn backward_input(&self, input_hw: (usize, usize), gy: &Array4<F>) -> Array4<F> {
        let (n, _, _, _) = gy.dim();
        let (co, ci, kh, kw) = self.weight.dim();
        let gy_rows = nchw_to_rows(gy);
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        let gpatches = gy_rows.dot(&w_mat);
        scatter_patches(
            &gpatches, n, ci, input_hw.0, input_hw.1, kh, kw, self.stride, self.pad,
        )
    }

    /// Returns `(grad_input, grads)` for incoming gradient `gy`.
    pub fn backward(&self, x: &Array4<F>, gy: &Array4<F>) -> (Array4<F>, Conv2dGrads<F>) {
        let (n, c, h, w) = x.dim();
        let (co, ci, kh, kw) = self.weight.dim();
        let k = ci * kh * kw;
        let patches = gather_patches(x, kh, kw, self.stride, self.pad);
        let gy_rows = nchw_to_rows(gy);
        let w_mat = self.weight.view().into_shape_with_order((co, k)).unwrap();

        let gw_mat = gy_rows.t().dot(&patches);
        let gb = gy_rows.sum_axis(Axis(0));
        let gpatches = gy_rows.dot(&w_mat);
        let gx = scatter_patches(&gpatches, n, c, h, w, kh, kw, self.stride, self.pad);
        let gw = gw_mat.into_shape_with_order((co, ci, kh, kw)).unwrap();
        (gx, Conv2dGrads { weight: gw, bias: gb })
    }
}

/// Stride-`s` transposed convolution (fractionally strided convolution).
///
/// Weights have shape `[in_channels, out_channels, kh, kw]`; output spatial
/// size is `(in - 1) * stride + kernel`.
#[derive(Debug, Clone)]
pub struct ConvT2d<F: Scalar> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
}

#[derive(Debug)]
pub struct ConvT2dGrads<F: Scalar> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> ConvT2d<F> {
    pub fn new(weight: Array4<F>, bias: Array1<F>, stride: usize) -> Self {
        assert_eq!(weight.dim().1, bias.len());
        ConvT2d {
            weight,
            bias,
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn output_size(&self, input: usize) -> usize {
        convt_out_dim(input, self.weight.dim().2, self.stride)
    }

    pub fn forward(&self, u: &Array4<F>) -> Array4<F> {
        let (n, c, ih, iw) = u.dim();
        let (ci, co, kh, kw) = self.weight.dim();
        assert_eq!(c, ci, "convT input channels");
        let oh = convt_out_dim(ih, kh, self.stride);
        let ow = convt_out_dim(iw, kw, self.stride);
        let u_rows = nchw_to_rows(u);
        let w_flat = self
            .weight
            .view()
            .into_shape_with_order((ci, co * kh * kw))
            .unwrap();
        let cols = u_rows.dot(&w_flat);
        // Each input position anchors a kh x kw patch at (iy*stride, ix*stride).
        let mut v = scatter_patches(&cols, n, co, oh, ow, kh, kw, self.stride, 0);
        let vb = self.bias.view().insert_axis(Axis(0)).insert_axis(Axis(2));
        v += &vb.insert_axis(Axis(3));
        v
    }

    pub fn backward(&self, u: &Array4<F>, gv: &Array4<F>) -> (Array4<F>, ConvT2dGrads<F>) {
        let (n, c, ih, iw) = u.dim();
        let (ci, co, kh, kw) = self.weight.dim();
        debug_assert_eq!(c, ci);
        let u_rows = nchw_to_rows(u);
        let w_flat = self
            .weight
            .view()
            .into_shape_with_order((ci, co * kh * kw))
            .unwrap();
        let gcols = gather_patches(gv, kh, kw, self.stride, 0);
        let gu_rows = gcols.dot(&w_flat.t());
        let gu = rows_to_nchw(&gu_rows, n, ci, ih, iw);
        let gw_flat = u_rows.t().dot(&gcols);
        let gw = gw_flat.into_shape_with_order((ci, co, kh, kw)).unwrap();
        let gb = gv.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
        (gu, ConvT2dGrads { weight: gw, bias: gb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn conv_matches_hand_computed_case() {
        // 1 sample, 1 channel, 3x3 input, 2x2 kernel, stride 1, no padding.
        let x = array![[[[1.0f64, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]]];
        let w = array![[[[1.0f64, 0.0], [0.0, -1.0]]]];
        let conv = Conv2d::new(w, array![0.5f64], 1, 0);
        let y = conv.forward(&x);
        // y[i,j] = x[i,j] - x[i+1,j+1] + 0.5
        assert_eq!(
            y,
            array![[[[1.0 - 5.0 + 0.5, 2.0 - 6.0 + 0.5], [4.0 - 8.0 + 0.5, 5.0 - 9.0 + 0.5]]]]
        );
    }

    #[test]
    fn conv_stride_and_padding_shapes() {
        assert_eq!(conv_out_dim(64, 4, 2, 0), 31);
        assert_eq!(conv_out_dim(31, 4, 2, 0), 14);
        assert_eq!(conv_out_dim(14, 4, 2, 0), 6);
        assert_eq!(conv_out_dim(6, 4, 2, 0), 2);
        assert_eq!(conv_out_dim(64, 11, 4, 2), 15);
        assert_eq!(conv_out_dim(15, 3, 2, 0), 7);
        assert_eq!(conv_out_dim(7, 5, 1, 2), 7);
    }

    #[test]
    fn convt_inverts_spatial_trace_of_decoder() {
        assert_eq!(convt_out_dim(1, 5, 2), 5);
        assert_eq!(convt_out_dim(5, 5, 2), 13);
        assert_eq!(convt_out_dim(13, 6, 2), 30);
        assert_eq!(convt_out_dim(30, 6, 2), 64);
    }

    #[test]
    fn convt_matches_hand_computed_case() {
        // 1x1 input "image", 2x2 kernel, stride 2: output is the kernel scaled.
        let u = array![[[[3.0f64]]]];
        let w = array![[[[1.0f64, 2.0], [3.0, 4.0]]]];
        let t = ConvT2d::new(w, array![1.0f64], 2);
        let v = t.forward(&u);
        assert_eq!(v, array![[[[4.0, 7.0], [10.0, 13.0]]]]);
    }

    #[test]
    fn convt_overlapping_contributions_accumulate() {
        // 2x1 input, kernel 3, stride 2: rows 2..3 of the 5-row output overlap.
        let u = array![[[[1.0f64], [1.0]]]];
        let w = array![[[[1.0f64], [1.0], [1.0]]]];
        let t = ConvT2d::new(w, array![0.0f64], 2);
        let v = t.forward(&u);
        assert_eq!(v, array![[[[1.0], [1.0], [2.0], [1.0], [1.0]]]]);
    }
}
