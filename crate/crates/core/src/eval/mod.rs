//! Rollouts in held-out worlds and success / SPL metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demogen::{
    run_episode, spawn_for, AgentView, Controller, Episode, EpisodeConfig, Outcome, RandomController, HISTORY,
};
use crate::gridsim::{Action, World};
use crate::mapper::egocentric_view;
use crate::policy::{select_actions, DecodeMode, Policy};
use crate::{rng, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub world_seed: u64,
    pub goal: u8,
    pub success: bool,
    /// Shortest path length from the spawn, in cells.
    pub shortest: f64,
    /// Forward attempts executed, collisions included.
    pub path: f64,
    pub steps: usize,
    pub stop_issued: bool,
}

impl EpisodeResult {
    pub fn from_episode(ep: &Episode) -> Self {
        EpisodeResult {
            world_seed: ep.world_seed,
            goal: ep.goal,
            success: ep.outcome == Outcome::Success,
            shortest: ep.shortest_path(),
            path: ep.path_length() as f64,
            steps: ep.len(),
            stop_issued: ep.stop_issued(),
        }
    }

    /// This episode's SPL term, `S · l / max(p, l)`.
    pub fn spl(&self) -> f64 {
        if self.success {
            self.shortest / self.path.max(self.shortest)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub mean_steps: f64,
    pub per_category: BTreeMap<u8, CategoryMetrics>,
}

/// `SR = (1/N) Σ S_i`, `SPL = (1/N) Σ S_i l_i / max(p_i, l_i)`.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Precondition("no episodes to score".into()));
    }
    if let Some(r) = results.iter().find(|r| !(r.shortest > 0.0) || !(r.path >= 0.0)) {
        return Err(Error::Precondition(format!(
            "episode needs l > 0 and p >= 0, got l = {}, p = {}",
            r.shortest, r.path
        )));
    }
    let agg = |rs: &[&EpisodeResult]| {
        let n = rs.len() as f64;
        let sr = rs.iter().filter(|r| r.success).count() as f64 / n;
        let spl = rs.iter().map(|r| r.spl()).sum::<f64>() / n;
        (sr, spl)
    };
    let all: Vec<&EpisodeResult> = results.iter().collect();
    let (sr, spl) = agg(&all);
    let mut by_cat: BTreeMap<u8, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        by_cat.entry(r.goal).or_default().push(r);
    }
    let per_category = by_cat
        .into_iter()
        .map(|(c, rs)| {
            let (sr, spl) = agg(&rs);
            (c, CategoryMetrics { n: rs.len(), sr, spl })
        })
        .collect();
    let mean_steps = results.iter().map(|r| r.steps as f64).sum::<f64>() / results.len() as f64;
    Ok(MetricsReport { n: results.len(), sr, spl, mean_steps, per_category })
}

/// Drives a trained policy: builds its inputs from the agent's map and last
/// four observations and returns all four predicted actions.
pub struct PolicyController<'a, T: Scalar> {
    pub policy: &'a Policy<T>,
    pub mode: DecodeMode,
    calls: u64,
}

impl<'a, T: Scalar> PolicyController<'a, T> {
    pub fn new(policy: &'a Policy<T>, mode: DecodeMode) -> Self {
        PolicyController { policy, mode, calls: 0 }
    }
}

impl<T: Scalar> Controller for PolicyController<'_, T> {
    fn plan(&mut self, view: &AgentView<'_>) -> Result<Vec<Action>> {
        let obs = view.observations;
        let t = obs.len() - 1;
        let frames: Vec<_> = (0..HISTORY).map(|k| obs[(t + k).saturating_sub(HISTORY - 1)].clone()).collect();
        let ego = egocentric_view(view.map, view.pose, self.policy.cfg.ego_window)?;
        let input = self.policy.encode_input(&ego, &frames, view.goal)?;
        let (logits, _) = self.policy.predict(&input)?;
        let mode = match self.mode {
            DecodeMode::Sample(seed) => DecodeMode::Sample(rng::derive(seed, self.calls)),
            m => m,
        };
        self.calls += 1;
        select_actions(&logits, mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes_per_world: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
    pub mode: DecodeMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes_per_world: 5, seed: 0, episode: EpisodeConfig::default(), mode: DecodeMode::Greedy }
    }
}

/// Goal and episode seed for episode `k` in world `w`.
pub fn eval_episode_spec(world: &World, w: usize, k: usize, cfg: &EvalConfig) -> Result<(u8, u64)> {
    let seed = rng::derive(rng::substream(cfg.seed, "eval"), (w * cfg.episodes_per_world + k) as u64);
    let present = world.present_categories();
    if present.is_empty() {
        return Err(Error::Precondition(format!("world {} has no goal objects", world.seed)));
    }
    let goal = present[rng::rng(rng::substream(seed, "goal")).gen_range(0..present.len())];
    Ok((goal, seed))
}

/// Runs `episodes_per_world` episodes in every world with controllers from
/// `make`. Results are ordered by (world, episode) whatever the worker count.
pub fn evaluate<'a, F>(worlds: &[World], cfg: &EvalConfig, make: F) -> Result<Vec<EpisodeResult>>
where
    F: Fn(u64) -> Box<dyn Controller + Send + 'a> + Sync,
{
    let jobs: Vec<(usize, usize)> =
        (0..worlds.len()).flat_map(|w| (0..cfg.episodes_per_world).map(move |k| (w, k))).collect();
    jobs.par_iter()
        .map(|&(w, k)| {
            let world = &worlds[w];
            let (goal, seed) = eval_episode_spec(world, w, k, cfg)?;
            let spawn = spawn_for(world, goal, seed, &cfg.episode)?;
            let mut c = make(seed);
            let ep = run_episode(world, goal, spawn, &cfg.episode, c.as_mut())?;
            Ok(EpisodeResult::from_episode(&ep))
        })
        .collect()
}

pub fn evaluate_policy<T: Scalar>(worlds: &[World], policy: &Policy<T>, cfg: &EvalConfig) -> Result<Vec<EpisodeResult>> {
    let mode = cfg.mode;
    evaluate(worlds, cfg, |seed| {
        let mode = match mode {
            DecodeMode::Sample(s) => DecodeMode::Sample(rng::derive(s, seed)),
            m => m,
        };
        Box::new(PolicyController::new(policy, mode)) as Box<dyn Controller + Send + '_>
    })
}

pub fn evaluate_random(worlds: &[World], cfg: &EvalConfig) -> Result<Vec<EpisodeResult>> {
    evaluate(worlds, cfg, |seed| {
        Box::new(RandomController { rng: rng::rng(rng::substream(seed, "random-policy")) }) as Box<dyn Controller + Send>
    })
}

/// One CSV row per episode.
pub fn results_csv(results: &[EpisodeResult]) -> String {
    let mut s = String::from("episode,world_seed,goal,success,shortest,path,steps,stop_issued,spl\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{}",
            r.world_seed,
            r.goal,
            r.success as u8,
            r.shortest,
            r.path,
            r.steps,
            r.stop_issued as u8,
            r.spl()
        );
    }
    s
}
