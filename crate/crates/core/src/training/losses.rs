//! Scalar reference versions of the training losses. The trainer builds the
//! same quantities on the tape; these are for inspection and testing.

use crate::gridsim::Action;
use crate::mapper::MapDescription;
use crate::nnet::{ExpectileSign, Tensor};
use crate::rewards::{RewardConfig, RewardLabel};
use crate::Scalar;

fn log_softmax_at<T: Scalar>(row: &[T], k: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    row[k] - lse
}

/// Mean over rows of `-log softmax(row)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> T {
    let n = T::from_usize(labels.len()).unwrap();
    labels.iter().enumerate().map(|(r, &l)| -log_softmax_at(logits.row(r), l)).sum::<T>() / n
}

/// Behaviour-cloning loss over the four predicted actions.
pub fn loss_bc<T: Scalar>(logits: &Tensor<T>, labels: &[Action]) -> T {
    let idx: Vec<usize> = labels.iter().map(|a| a.index()).collect();
    cross_entropy(logits, &idx)
}

/// `|tau - 1(u < 0)| u²`, with `u = target - pred` under the default sign.
pub fn loss_expectile<T: Scalar>(pred: T, target: T, tau: T, sign: ExpectileSign) -> T {
    let u = match sign {
        ExpectileSign::Intent => target - pred,
        ExpectileSign::Reversed => pred - target,
    };
    let ind = if u < T::zero() { T::one() } else { T::zero() };
    (tau - ind).abs() * u * u
}

/// Reward-weighted behaviour cloning plus `lambda` times the expectile loss
/// of the reward head.
pub fn loss_stage3<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[Action],
    pred: T,
    label: &RewardLabel,
    reward: &RewardConfig,
    lambda: T,
    tau: T,
    sign: ExpectileSign,
) -> T {
    let target = T::lit(label.target(reward.reward_kind));
    reward.weight_kind.weight(target) * loss_bc(logits, labels) + lambda * loss_expectile(pred, target, tau, sign)
}

/// Class labels for the map-description heads: nearest category per sector
/// (0 = none), free-extent bucket per sector, and the latest action.
pub fn description_targets(d: &MapDescription) -> (Vec<usize>, Vec<usize>, usize) {
    let sectors = d.sectors.iter().map(|s| s.nearest.map_or(0, |c| c as usize)).collect();
    let buckets = d.sectors.iter().map(|s| s.free_bucket as usize).collect();
    let action = d.recent_actions.last().map_or(Action::Stop, |a| *a).index();
    (sectors, buckets, action)
}

/// Sum of the per-slot cross-entropies of the map-description heads.
pub fn loss_stage1<T: Scalar>(
    sector_logits: &Tensor<T>,
    bucket_logits: &Tensor<T>,
    action_logits: &Tensor<T>,
    d: &MapDescription,
) -> T {
    let (s, b, a) = description_targets(d);
    let ns = T::from_usize(s.len()).unwrap();
    let nb = T::from_usize(b.len()).unwrap();
    cross_entropy(sector_logits, &s) * ns + cross_entropy(bucket_logits, &b) * nb + cross_entropy(action_logits, &[a])
}
