use serde::{Deserialize, Serialize};

use super::params::Moments;
use super::{Grads, ParamStore, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update over every non-frozen group that has at least one
/// gradient. Frozen groups, their moments and their step counts are left
/// exactly as they were.
pub fn optimizer_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Grads<T>, cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    let one = T::one();
    for (gi, group) in store.groups_mut().iter_mut().enumerate() {
        if group.frozen {
            continue;
        }
        let g = grads.group(gi);
        if g.iter().all(Option::is_none) {
            continue;
        }
        let moments = group.moments.get_or_insert_with(|| Moments {
            m: group.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
            v: group.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
            step: 0,
        });
        moments.step += 1;
        let t = moments.step as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for (ti, param) in group.tensors.iter_mut().enumerate() {
            let m = moments.m[ti].data_mut();
            let v = moments.v[ti].data_mut();
            let grad = g[ti].as_ref().map(Tensor::data);
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                let gk = grad.map_or(T::zero(), |d| d[k]);
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
