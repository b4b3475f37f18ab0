use super::Scalar;
use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};
use std::collections::HashMap;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-parameter first/second moment state, keyed by parameter
/// name. Call [`Adam::begin_step`] once per batch, then [`Adam::update`]
/// for each parameter in a fixed order.
pub struct Adam<F: Scalar> {
    pub hp: AdamParams,
    t: u64,
    state: HashMap<String, (ArrayD<F>, ArrayD<F>)>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(hp: AdamParams) -> Self {
        Adam {
            hp,
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, name: &str, mut param: ArrayViewMutD<F>, grad: ArrayViewD<F>) {
        debug_assert_eq!(param.shape(), grad.shape(), "param {name}");
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| {
                (
                    ArrayD::zeros(param.raw_dim()),
                    ArrayD::zeros(param.raw_dim()),
                )
            });
        let b1 = F::fromf64(self.hp.beta1);
        let b2 = F::fromf64(self.hp.beta2);
        let one = F::one();
        let t = self.t.max(1);
        let corr1 = 1.0 - self.hp.beta1.powi(t as i32);
        let corr2 = 1.0 - self.hp.beta2.powi(t as i32);
        let step = F::fromf64(self.hp.lr / corr1);
        let corr2_sqrt = F::fromf64(corr2.sqrt());
        let eps = F::fromf64(self.hp.eps);

        ndarray::Zip::from(&mut *m)
            .and(&grad)
            .for_each(|m, &g| *m = b1 * *m + (one - b1) * g);
        ndarray::Zip::from(&mut *v)
            .and(&grad)
            .for_each(|v, &g| *v = b2 * *v + (one - b2) * g * g);
        ndarray::Zip::from(&mut param)
            .and(&*m)
            .and(&*v)
            .for_each(|p, &m, &v| {
                *p = *p - step * m / (v.sqrt() / corr2_sqrt + eps);
            });
    }
}
