use std::path::Path;

use anyhow::{Context, Result};
use navlab_core::demogen::EpisodeConfig;
use navlab_core::gridsim::{SensorConfig, WorldConfig};
use navlab_core::policy::PolicyConfig;
use navlab_core::rewards::RewardConfig;
use navlab_core::training::StageConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "NAVLAB_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectSection {
    pub episodes: usize,
    pub mix: String,
    pub budget: usize,
    pub epsilon: f64,
    pub min_spawn_distance: u32,
}

impl Default for CollectSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        CollectSection {
            episodes: 300,
            mix: "2:5:3".into(),
            budget: e.budget,
            epsilon: e.epsilon,
            min_spawn_distance: e.min_spawn_distance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub episodes_per_world: usize,
    pub budget: usize,
    /// `greedy` or `sample`.
    pub decode: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes_per_world: 5, budget: 200, decode: "greedy".into() }
    }
}

/// Stage hyperparameters; unset fields fall back to the stage defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub stop_factor: Option<f64>,
    pub expectile_sign: Option<navlab_core::nnet::ExpectileSign>,
    pub lr_schedule: Option<navlab_core::training::LrSchedule>,
}

/// Everything a run can be configured with. Loaded from a TOML file with
/// one table per section; missing keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub sensor: SensorConfig,
    pub collect: CollectSection,
    pub reward: RewardConfig,
    pub policy: PolicyConfig,
    pub stage0: StageSection,
    pub stage1: StageSection,
    pub stage2: StageSection,
    pub stage3: StageSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Reads `path` (if any), then applies the seed override from the
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s.trim().parse().with_context(|| format!("{SEED_ENV}={s} is not a u64"))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            budget: self.collect.budget,
            sensor: self.sensor,
            epsilon: self.collect.epsilon,
            min_spawn_distance: self.collect.min_spawn_distance,
        }
    }

    pub fn stage(&self, stage: u8) -> StageConfig {
        let s = match stage {
            0 => &self.stage0,
            1 => &self.stage1,
            2 => &self.stage2,
            _ => &self.stage3,
        };
        let d = StageConfig::for_stage(stage);
        StageConfig {
            epochs: s.epochs.unwrap_or(d.epochs),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            lr: s.lr.unwrap_or(d.lr),
            lambda: s.lambda.unwrap_or(d.lambda),
            tau: s.tau.unwrap_or(d.tau),
            stop_factor: s.stop_factor.unwrap_or(d.stop_factor),
            expectile_sign: s.expectile_sign.unwrap_or(d.expectile_sign),
            lr_schedule: s.lr_schedule.unwrap_or(d.lr_schedule),
            reward: self.reward,
            seed: self.seed,
            ..d
        }
    }
}

/// Parses `a:b:c`.
pub fn parse_mix(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("mix {s:?} must look like 2:5:3"))?;
    match parts.as_slice() {
        &[a, b, c] => Ok([a, b, c]),
        _ => anyhow::bail!("mix {s:?} must have three parts"),
    }
}
