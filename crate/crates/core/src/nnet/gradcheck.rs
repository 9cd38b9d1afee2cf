use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{Grads, NnetError, ParamId, ParamStore};
use crate::{rng, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Scalars checked per group; groups smaller than this are checked fully.
    pub samples_per_group: usize,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that parameters whose
    /// true gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-3, samples_per_group: 200, tolerance: 1e-4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn into_result(self) -> Result<Self, NnetError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(NnetError::GradCheck { max_rel_err: self.max_rel_err, tolerance: self.tolerance })
        }
    }
}

/// Compares analytic gradients from `f` against the five-point central
/// difference `(-L(θ+2ε) + 8L(θ+ε) - 8L(θ-ε) + L(θ-2ε)) / 12ε` on every
/// non-frozen group. The wider stencil lets ε be large enough that round-off
/// in L stays well under the tolerance. `f` must be a pure function of the store.
pub fn grad_check<T, F>(params: &ParamStore<T>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, NnetError>
where
    T: Scalar,
    F: Fn(&ParamStore<T>) -> Result<(T, Grads<T>), NnetError>,
{
    let (_, analytic) = f(params)?;
    let mut probe = params.clone();
    let mut r = rng::rng(cfg.seed);
    let mut groups = Vec::new();
    let mut worst = 0.0f64;
    for (gi, group) in params.groups().iter().enumerate() {
        if group.frozen {
            continue;
        }
        let sizes: Vec<usize> = group.tensors.iter().map(|t| t.len()).collect();
        let total: usize = sizes.iter().sum();
        let picks: Vec<usize> = if total <= cfg.samples_per_group {
            (0..total).collect()
        } else {
            let mut v = sample(&mut r, total, cfg.samples_per_group).into_vec();
            v.sort_unstable();
            v
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for flat in picks.iter().copied() {
            let (ti, k) = locate(&sizes, flat);
            let id = ParamId { group: gi, index: ti };
            let orig = probe.get(id).data()[k];
            let mut at = |step: f64| -> Result<f64, NnetError> {
                probe.get_mut(id).data_mut()[k] = orig + T::lit(step);
                f(&probe).map(|(l, _)| l.to_f64_lossy())
            };
            let h = cfg.eps;
            let numeric = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
            probe.get_mut(id).data_mut()[k] = orig;
            let a = analytic.value(id, k).to_f64_lossy();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        worst = worst.max(max_rel);
        groups.push(GroupCheck { name: group.name.clone(), checked: picks.len(), max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(GradCheckReport { groups, max_rel_err: worst, tolerance: cfg.tolerance })
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("flat index within group size")
}
