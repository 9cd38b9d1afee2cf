//! Staged optimisation: observation-encoder pretraining (stage 0), map
//! understanding (1), behaviour cloning (2) and reward-weighted cloning with
//! a return head (3), each with its own freeze set.

mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demogen::{augment_stops, StepRecord};
use crate::nnet::{
    grad_check, optimizer_step, AdamConfig, ExpectileSign, GradCheckConfig, GradCheckReport, Grads, Graph, NnetError,
    NodeId, ParamStore, Tensor,
};
use crate::policy::{
    Policy, PolicyInput, ACTION_HEAD, FUSION, GOAL_EMBEDDING, HISTORY_POOLER, MAP_ENCODER, OBS_DECODER, OBS_ENCODER,
    PROJECTOR, REWARD_HEAD, STAGE1_HEADS, TRUNK,
};
use crate::rewards::RewardConfig;
use crate::{rng, Error, Result, Scalar};

pub use losses::{cross_entropy, description_targets, loss_bc, loss_expectile, loss_stage1, loss_stage3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay to zero over the stage.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub lambda: f64,
    pub tau: f64,
    pub expectile_sign: ExpectileSign,
    pub reward: RewardConfig,
    /// Stop-augmentation factor for stages 2 and 3.
    pub stop_factor: f64,
    pub allow_skip: bool,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::for_stage(2)
    }
}

impl StageConfig {
    pub fn for_stage(stage: u8) -> Self {
        StageConfig {
            stage,
            epochs: match stage {
                1 => 3,
                0 => 2,
                _ => 5,
            },
            batch_size: 64,
            lr: 3e-4,
            lr_schedule: LrSchedule::Constant,
            lambda: 1.0,
            tau: 0.9,
            expectile_sign: ExpectileSign::Intent,
            reward: RewardConfig::default(),
            stop_factor: 3.0,
            allow_skip: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage > 3 {
            return Err(Error::Config(format!("no stage {}", self.stage)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        self.reward.validate()
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => 0.5 * self.lr * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

/// Parameter groups updated in each stage; everything else is frozen.
pub fn trainable_groups(stage: u8) -> &'static [&'static str] {
    match stage {
        0 => &[OBS_ENCODER, OBS_DECODER],
        1 => &[MAP_ENCODER, PROJECTOR, TRUNK, STAGE1_HEADS],
        2 => &[HISTORY_POOLER, FUSION, PROJECTOR, TRUNK, GOAL_EMBEDDING, ACTION_HEAD],
        _ => &[HISTORY_POOLER, FUSION, PROJECTOR, TRUNK, GOAL_EMBEDDING, ACTION_HEAD, REWARD_HEAD],
    }
}

/// Stage `n` expects stage `n - 1` to have run last, unless skipping is
/// allowed. Stages never run out of order either way.
pub fn check_stage_order(done: &[u8], stage: u8, allow_skip: bool) -> Result<()> {
    let last = done.last().copied();
    if let Some(l) = last {
        if stage <= l {
            return Err(Error::StageOrder(format!("stage {stage} cannot follow stage {l}")));
        }
    }
    let expected = stage.checked_sub(1);
    if !allow_skip && expected.is_some() && last != expected {
        let have = last.map_or("no stage".to_string(), |l| format!("stage {l}"));
        return Err(Error::StageOrder(format!(
            "stage {stage} needs stage {} first (have {have}); pass allow_skip for ablations",
            stage - 1
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub bc_loss: f64,
    pub rtg_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub grad_norm: f64,
    /// Largest |reward target| in the batch (stage 3 only).
    pub max_abs_target: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: u8,
    pub samples: usize,
    pub epochs: Vec<EpochStats>,
    pub batches: Vec<BatchStats>,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub checksums_before: BTreeMap<String, String>,
    pub checksums_after: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,bc_loss,rtg_loss,total,grad_norm\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.bc_loss, e.rtg_loss, e.total, e.grad_norm);
        }
        s
    }

    pub fn final_epoch(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Clone, Copy, Default)]
struct SampleLoss {
    bc: f64,
    rtg: f64,
    total: f64,
    target: f64,
}

/// Builds the stage objective for one record on `g` and returns its root.
fn stage_objective<T: Scalar>(
    policy: &Policy<T>,
    g: &mut Graph<'_, T>,
    rec: &StepRecord,
    input: &PolicyInput<T>,
    cached: Option<&Tensor<T>>,
    stage: u8,
    cfg: &StageConfig,
) -> Result<(NodeId, SampleLoss)> {
    let mut out = SampleLoss::default();
    let root = match stage {
        0 => {
            let frames = g.input(input.frames.clone())?;
            let recon = policy.decode_frames(g, frames)?;
            g.mse(recon, &input.frames)?
        }
        1 => {
            let f = policy.forward(g, input, None)?;
            let (s, b, a) = policy.stage1_heads(g, &f)?;
            let (ts, tb, ta) = description_targets(&rec.description);
            let ls = g.cross_entropy(s, &ts)?;
            let ls = g.scale(ls, T::from_usize(ts.len()).unwrap())?;
            let lb = g.cross_entropy(b, &tb)?;
            let lb = g.scale(lb, T::from_usize(tb.len()).unwrap())?;
            let la = g.cross_entropy(a, &[ta])?;
            let l = g.add(ls, lb)?;
            g.add(l, la)?
        }
        2 => {
            let f = policy.forward(g, input, cached)?;
            let labels: Vec<usize> = rec.actions.iter().map(|a| a.index()).collect();
            g.cross_entropy(f.logits, &labels)?
        }
        _ => {
            let f = policy.forward(g, input, cached)?;
            let labels: Vec<usize> = rec.actions.iter().map(|a| a.index()).collect();
            let label = rec.label.ok_or_else(|| Error::Config("stage 3 needs reward labels".into()))?;
            let target = label.target(cfg.reward.reward_kind);
            out.target = target;
            let bc = g.cross_entropy(f.logits, &labels)?;
            out.bc = g.value(bc).item().to_f64_lossy();
            // the weight is a constant: no gradient flows into it
            let w = cfg.reward.weight_kind.weight(T::lit(target));
            let wbc = g.scale(bc, w)?;
            let pred = f.rtg.ok_or_else(|| Error::Precondition("reward head missing".into()))?;
            let e = g.expectile(pred, T::lit(target), T::lit(cfg.tau), cfg.expectile_sign)?;
            out.rtg = g.value(e).item().to_f64_lossy();
            let e = g.scale(e, T::lit(cfg.lambda))?;
            g.add(wbc, e)?
        }
    };
    out.total = g.value(root).item().to_f64_lossy();
    if stage < 3 {
        out.bc = out.total;
    }
    Ok((root, out))
}

/// Loss and gradient of one record under the stage objective.
fn sample_grads<T: Scalar>(
    policy: &Policy<T>,
    rec: &StepRecord,
    cached: Option<&Tensor<T>>,
    cfg: &StageConfig,
) -> Result<(SampleLoss, Grads<T>)> {
    let input: PolicyInput<T> = policy.record_input(rec)?;
    let mut g = Graph::new(&policy.params);
    let (root, out) = stage_objective(policy, &mut g, rec, &input, cached, cfg.stage, cfg)?;
    let grads = g.backward(root)?;
    Ok((out, grads))
}

/// Gradient check over the whole policy graph: every optional head is
/// attached, every group is unfrozen, and the checked loss is the sum of the
/// stage 0, 1 and 3 objectives over `records`. `corrupt` names an op whose
/// backward rule is deliberately perturbed, to show the check has teeth.
pub fn policy_grad_check<T: Scalar>(
    policy: &mut Policy<T>,
    records: &[StepRecord],
    cfg: &StageConfig,
    check: &GradCheckConfig,
    corrupt: Option<&'static str>,
) -> Result<GradCheckReport> {
    if records.is_empty() {
        return Err(Error::Config("gradient check needs at least one record".into()));
    }
    if policy.params.group(OBS_DECODER).is_none() {
        policy.add_obs_decoder()?;
    }
    if policy.params.group(STAGE1_HEADS).is_none() {
        policy.add_stage1_heads()?;
    }
    if !policy.has_reward_head() {
        policy.add_reward_head()?;
    }
    let names: Vec<String> = policy.params.groups().iter().map(|g| g.name.clone()).collect();
    for name in &names {
        policy.params.set_frozen(name, false);
    }
    let inputs: Vec<PolicyInput<T>> = records.iter().map(|r| policy.record_input(r)).collect::<Result<_>>()?;
    let p = &*policy;
    let loss = |store: &ParamStore<T>| -> std::result::Result<(T, Grads<T>), NnetError> {
        let mut g = match corrupt {
            Some(op) => Graph::with_corrupted_backward(store, op),
            None => Graph::new(store),
        };
        let mut root: Option<NodeId> = None;
        for (rec, input) in records.iter().zip(&inputs) {
            for stage in [0u8, 1, 3] {
                let (l, _) = stage_objective(p, &mut g, rec, input, None, stage, cfg).map_err(|e| match e {
                    Error::Numeric(n) => n,
                    other => NnetError::Shape(other.to_string()),
                })?;
                root = Some(match root {
                    Some(r) => g.add(r, l)?,
                    None => l,
                });
            }
        }
        let root = root.expect("records is non-empty");
        let value = g.value(root).item();
        Ok((value, g.backward(root)?))
    };
    Ok(grad_check(&policy.params, loss, check)?)
}

/// Loss and averaged gradient over a batch of record indices. Per-sample
/// work runs in parallel; the reduction is in index order.
fn batch_grads<T: Scalar>(
    policy: &Policy<T>,
    records: &[StepRecord],
    cache: &[Option<Tensor<T>>],
    batch: &[usize],
    cfg: &StageConfig,
) -> Result<(SampleLoss, Grads<T>, f64)> {
    let parts: Vec<(SampleLoss, Grads<T>)> = batch
        .par_iter()
        .map(|&i| sample_grads(policy, &records[i], cache.get(i).and_then(Option::as_ref), cfg))
        .collect::<Result<_>>()?;
    let mut grads = Grads::for_store(&policy.params);
    let mut sum = SampleLoss::default();
    let mut max_target = 0.0f64;
    for (l, g) in &parts {
        grads.merge(g);
        sum.bc += l.bc;
        sum.rtg += l.rtg;
        sum.total += l.total;
        max_target = max_target.max(l.target.abs());
    }
    let n = batch.len() as f64;
    grads.scale(T::lit(1.0 / n));
    Ok((SampleLoss { bc: sum.bc / n, rtg: sum.rtg / n, total: sum.total / n, target: 0.0 }, grads, max_target))
}

fn prepare_groups<T: Scalar>(policy: &mut Policy<T>, stage: u8) -> Result<()> {
    match stage {
        0 => policy.add_obs_decoder()?,
        1 => policy.add_stage1_heads()?,
        3 => policy.add_reward_head()?,
        _ => {}
    }
    let trainable = trainable_groups(stage);
    let names: Vec<String> = policy.params.groups().iter().map(|g| g.name.clone()).collect();
    for name in names {
        policy.params.set_frozen(&name, !trainable.contains(&name.as_str()));
    }
    policy.params.reset_moments();
    Ok(())
}

/// Runs one training stage in place and reports per-epoch losses and the
/// checksums of every group before and after.
pub fn run_stage<T: Scalar>(policy: &mut Policy<T>, records: &[StepRecord], cfg: &StageConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_stage_order(&policy.stages, cfg.stage, cfg.allow_skip)?;
    if records.is_empty() {
        return Err(Error::Config("training needs at least one record".into()));
    }
    if cfg.stage == 3 && records.iter().any(|r| r.label.is_none()) {
        return Err(Error::Config("stage 3 needs reward labels; label the dataset first".into()));
    }
    let start = Instant::now();
    prepare_groups(policy, cfg.stage)?;
    let checksums = |p: &Policy<T>| -> BTreeMap<String, String> {
        p.params.groups().iter().map(|g| (g.name.clone(), g.checksum())).collect()
    };
    let before = checksums(policy);

    let order: Vec<usize> = if cfg.stage >= 2 {
        augment_stops(records, cfg.stop_factor, rng::substream(cfg.seed, "augment"))?
    } else {
        (0..records.len()).collect()
    };
    // the map encoder is frozen from stage 2 on, so its output can be cached
    let cache: Vec<Option<Tensor<T>>> = if cfg.stage >= 2 && policy.params.group(MAP_ENCODER).is_some_and(|g| g.frozen) {
        let p = &*policy;
        records
            .par_iter()
            .map(|r| Ok(Some(p.map_tokens(&p.record_input(r)?)?)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let steps_per_epoch = order.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let shuffle_seed = rng::substream(cfg.seed, "shuffle");
    let mut report = TrainReport { stage: cfg.stage, samples: order.len(), ..Default::default() };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut idx = order.clone();
        idx.shuffle(&mut rng::rng(rng::derive(shuffle_seed, epoch as u64)));
        let mut acc = EpochStats { epoch, ..Default::default() };
        for (b, batch) in idx.chunks(cfg.batch_size).enumerate() {
            let (loss, grads, max_target) = batch_grads(policy, records, &cache, batch, cfg)?;
            let norm = grads.global_norm().to_f64_lossy();
            optimizer_step(&mut policy.params, &grads, &AdamConfig { lr: cfg.lr_at(step, total_steps), ..adam });
            step += 1;
            let w = batch.len() as f64;
            acc.bc_loss += loss.bc * w;
            acc.rtg_loss += loss.rtg * w;
            acc.total += loss.total * w;
            acc.grad_norm += norm;
            report.batches.push(BatchStats { epoch, batch: b, grad_norm: norm, max_abs_target: max_target });
        }
        let n = idx.len() as f64;
        acc.bc_loss /= n;
        acc.rtg_loss /= n;
        acc.total /= n;
        acc.grad_norm /= steps_per_epoch as f64;
        report.epochs.push(acc);
    }

    let after = checksums(policy);
    for g in policy.params.groups() {
        if g.frozen && before.get(&g.name) != after.get(&g.name) {
            return Err(Error::Precondition(format!("frozen group {} changed during stage {}", g.name, cfg.stage)));
        }
    }
    report.trainable = policy.params.groups().iter().filter(|g| !g.frozen).map(|g| g.name.clone()).collect();
    report.frozen = policy.params.groups().iter().filter(|g| g.frozen).map(|g| g.name.clone()).collect();
    report.checksums_before = before;
    report.checksums_after = after;
    match cfg.stage {
        0 => policy.remove_group(OBS_DECODER)?,
        1 => policy.remove_group(STAGE1_HEADS)?,
        _ => {}
    }
    policy.stages.push(cfg.stage);
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
