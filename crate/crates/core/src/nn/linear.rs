use super::Scalar;
use ndarray::{Array1, Array2, Axis};

/// Affine layer `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug)]
pub struct LinearGrads<F: Scalar> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(weight: Array2<F>, bias: Array1<F>) -> Self {
        assert_eq!(weight.dim().0, bias.len());
        Linear { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias.view().insert_axis(Axis(0));
        y
    }

    pub fn backward(&self, x: &Array2<F>, gy: &Array2<F>) -> (Array2<F>, LinearGrads<F>) {
        let gx = gy.dot(&self.weight);
        let gw = gy.t().dot(x);
        let gb = gy.sum_axis(Axis(0));
        (gx, LinearGrads { weight: gw, bias: gb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_matches_hand_computed_case() {
        let layer = Linear::new(array![[1.0f64, 2.0], [0.0, -1.0]], array![10.0, 20.0]);
        let x = array![[1.0f64, 1.0], [2.0, 3.0]];
        assert_eq!(layer.forward(&x), array![[13.0, 19.0], [18.0, 17.0]]);
    }

    #[test]
    fn backward_matches_hand_computed_case() {
        let layer = Linear::new(array![[1.0f64, 2.0], [0.0, -1.0]], array![0.0, 0.0]);
        let x = array![[1.0f64, 1.0]];
        let gy = array![[1.0f64, 1.0]];
        let (gx, grads) = layer.backward(&x, &gy);
        assert_eq!(gx, array![[1.0, 1.0]]);
        assert_eq!(grads.weight, array![[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(grads.bias, array![1.0, 1.0]);
    }
}
