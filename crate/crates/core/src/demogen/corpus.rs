use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_policy_episode, DemoKind, Episode, EpisodeConfig};
use crate::gridsim::World;
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Expert : Frontier : Noisy.
    pub mix: [u32; 3],
    pub seed: u64,
    pub episode: EpisodeConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { episodes: 300, mix: [2, 5, 3], seed: 0, episode: EpisodeConfig::default() }
    }
}

/// What to run for one corpus episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub index: u64,
    pub world: usize,
    pub goal: u8,
    pub kind: DemoKind,
    pub seed: u64,
}

/// Splits `n` episodes across the mix by largest remainder, so every count
/// is within one of its exact share. Ties go to the earlier kind.
pub fn split_mix(n: usize, mix: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = mix.iter().map(|&m| m as u64).sum();
    if total == 0 {
        return Err(Error::Config("demonstration mix must have a positive entry".into()));
    }
    let mut counts = [0usize; 3];
    let mut rem = [(0u64, 0usize); 3];
    for k in 0..3 {
        let exact = n as u64 * mix[k] as u64;
        counts[k] = (exact / total) as usize;
        rem[k] = (exact % total, k);
    }
    let left = n - counts.iter().sum::<usize>();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in rem.iter().take(left) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// Deterministic episode plan: worlds are visited round-robin, kinds are a
/// seeded permutation of the mix, goals are drawn from the categories
/// present in each world.
pub fn plan_episodes(worlds: &[World], cfg: &CollectConfig) -> Result<Vec<EpisodeSpec>> {
    if worlds.is_empty() {
        return Err(Error::Config("no worlds to collect in".into()));
    }
    let counts = split_mix(cfg.episodes, cfg.mix)?;
    let mut kinds: Vec<DemoKind> =
        DemoKind::ALL.iter().zip(counts).flat_map(|(&k, c)| std::iter::repeat_n(k, c)).collect();
    let base = rng::substream(cfg.seed, "collect");
    kinds.shuffle(&mut rng::rng(base));
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let world = i % worlds.len();
            let seed = rng::derive(base, i as u64);
            let present = worlds[world].present_categories();
            if present.is_empty() {
                return Err(Error::Precondition(format!("world {} has no goal objects", worlds[world].seed)));
            }
            let goal = present[rng::rng(rng::substream(seed, "goal")).gen_range(0..present.len())];
            Ok(EpisodeSpec { index: i as u64, world, goal, kind, seed })
        })
        .collect()
}

/// Runs the plan in parallel; results come back in episode order and do not
/// depend on the worker count.
pub fn collect_corpus(worlds: &[World], cfg: &CollectConfig) -> Result<Vec<(EpisodeSpec, Episode)>> {
    let plan = plan_episodes(worlds, cfg)?;
    plan.into_par_iter()
        .map(|spec| {
            let ep = run_policy_episode(&worlds[spec.world], spec.goal, spec.kind, spec.seed, &cfg.episode)?;
            Ok((spec, ep))
        })
        .collect()
}
