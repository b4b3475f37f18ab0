use super::Scalar;
use ndarray::Array4;
use rayon::prelude::*;

/// Max pooling over square windows. Ties resolve to the first maximum in
/// row-major scan order, so the argmax cache is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

/// Flat within-sample argmax indices, shape `[n, c, oh, ow]` flattened.
pub struct PoolCache {
    pub argmax: Vec<u32>,
    pub in_dim: (usize, usize, usize, usize),
    pub out_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn output_size(&self, input: usize) -> usize {
        (input - self.kernel) / self.stride + 1
    }

    pub fn forward<F: Scalar>(&self, x: &Array4<F>) -> (Array4<F>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let mut y = Array4::<F>::zeros((n, c, oh, ow));
        let mut argmax = vec![0u32; n * c * oh * ow];
        let xs = x.as_slice().expect("standard layout");
        let sample_in = c * h * w;
        let sample_out = c * oh * ow;
        {
            let ys = y.as_slice_mut().expect("standard layout");
            ys.par_chunks_mut(sample_out)
                .zip(argmax.par_chunks_mut(sample_out))
                .enumerate()
                .for_each(|(sample, (yb, ab))| {
                    let xb = &xs[sample * sample_in..(sample + 1) * sample_in];
                    for ci in 0..c {
                        let chan = &xb[ci * h * w..(ci + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = F::neg_infinity();
                                let mut best_idx = 0usize;
                                for ky in 0..self.kernel {
                                    let iy = oy * self.stride + ky;
                                    for kx in 0..self.kernel {
                                        let ix = ox * self.stride + kx;
                                        let v = chan[iy * w + ix];
                                        if v > best {
                                            best = v;
                                            best_idx = iy * w + ix;
                                        }
                                    }
                                }
                                let o = (ci * oh + oy) * ow + ox;
                                yb[o] = best;
                                ab[o] = (ci * h * w + best_idx) as u32;
                            }
                        }
                    }
                });
        }
        let cache = PoolCache {
            argmax,
            in_dim: (n, c, h, w),
            out_dim: (n, c, oh, ow),
        };
        (y, cache)
    }

    pub fn backward<F: Scalar>(&self, cache: &PoolCache, gy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.in_dim;
        let (_, _, oh, ow) = cache.out_dim;
        debug_assert_eq!(gy.dim(), cache.out_dim);
        let gys = gy.as_slice().expect("standard layout");
        let mut gx = Array4::<F>::zeros((n, c, h, w));
        let sample_in = c * h * w;
        let sample_out = c * oh * ow;
        {
            let gs = gx.as_slice_mut().expect("standard layout");
            gs.par_chunks_mut(sample_in)
                .enumerate()
                .for_each(|(sample, gb)| {
                    let gyb = &gys[sample * sample_out..(sample + 1) * sample_out];
                    let ab = &cache.argmax[sample * sample_out..(sample + 1) * sample_out];
                    for (o, &gv) in gyb.iter().enumerate() {
                        let idx = ab[o] as usize;
                        gb[idx] = gb[idx] + gv;
                    }
                });
        }
        gx
    }
}
