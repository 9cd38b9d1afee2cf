//! Progress rewards and short-horizon return-to-go labels.
//!
//! The reward for step `t` is the geodesic distance gained over the next
//! four actions, z-scored within the episode. The return-to-go sums the next
//! `window` rewards with discount `gamma`.

use serde::{Deserialize, Serialize};

use crate::scalar::softplus;
use crate::{Error, Result, Scalar};

/// Number of actions a reward looks ahead (one action chunk).
pub const PROGRESS_HORIZON: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Softplus,
    Exp,
    None,
}

impl WeightKind {
    /// Per-sample behaviour-cloning weight for a return value.
    pub fn weight<T: Scalar>(self, x: T) -> T {
        match self {
            WeightKind::Softplus => softplus(x),
            WeightKind::Exp => x.exp(),
            WeightKind::None => T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    Rtg,
    Instant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub gamma: f64,
    pub window: usize,
    pub sigma_floor: f64,
    pub weight_kind: WeightKind,
    pub reward_kind: RewardKind,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 0.9,
            window: 4,
            sigma_floor: 1e-6,
            weight_kind: WeightKind::Softplus,
            reward_kind: RewardKind::Rtg,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.window == 0 {
            return Err(Error::Config("reward window must be at least 1".into()));
        }
        if self.sigma_floor.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardLabel {
    pub raw: f64,
    pub r: f64,
    pub rtg: f64,
}

impl RewardLabel {
    /// The value used both as weight argument and regression target.
    pub fn target(&self, kind: RewardKind) -> f64 {
        match kind {
            RewardKind::Rtg => self.rtg,
            RewardKind::Instant => self.r,
        }
    }
}

/// `d_t - d_{t+4}` for each of the `T = distances.len() - 1` actions, with
/// distances past the end clamped to the final one.
pub fn raw_progress<T: Scalar>(distances: &[T]) -> Result<Vec<T>> {
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Precondition("episode passes through cells with no path to the goal".into()));
    }
    let Some(last) = distances.len().checked_sub(1) else {
        return Ok(Vec::new());
    };
    Ok((0..last).map(|t| distances[t] - distances[(t + PROGRESS_HORIZON).min(last)]).collect())
}

/// Per-episode z-score with population statistics. When the spread is below
/// `sigma_floor` the divisor falls back to 1.
pub fn normalize_rewards<T: Scalar>(raw: &[T], cfg: &RewardConfig) -> Vec<T> {
    if raw.is_empty() {
        return Vec::new();
    }
    let n = T::from_usize(raw.len()).unwrap();
    let mean = raw.iter().copied().sum::<T>() / n;
    let var = raw.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let mut sigma = var.sqrt();
    if sigma < T::lit(cfg.sigma_floor) {
        sigma = T::one();
    }
    raw.iter().map(|&x| (x - mean) / sigma).collect()
}

/// `RTG_t = Σ_{k<W} γ^k R_{t+k}`, with rewards past the end counted as zero.
pub fn return_to_go<T: Scalar>(r: &[T], cfg: &RewardConfig) -> Vec<T> {
    let gamma = T::lit(cfg.gamma);
    let w = cfg.window;
    let mut out = vec![T::zero(); r.len()];
    // direct sums keep each value exactly a window sum, with no drift from
    // the subtractive recurrence
    for t in 0..r.len() {
        let mut acc = T::zero();
        let mut g = T::one();
        for &x in r.iter().skip(t).take(w) {
            acc += g * x;
            g *= gamma;
        }
        out[t] = acc;
    }
    out
}

/// Full labelling of one episode from its per-step goal distances
/// (`T + 1` entries for `T` actions).
pub fn label_episode(distances: &[f64], cfg: &RewardConfig) -> Result<Vec<RewardLabel>> {
    cfg.validate()?;
    let raw = raw_progress(distances)?;
    let r = normalize_rewards(&raw, cfg);
    let rtg = return_to_go(&r, cfg);
    Ok(raw.into_iter().zip(r).zip(rtg).map(|((raw, r), rtg)| RewardLabel { raw, r, rtg }).collect())
}
