use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyConfig, OBS_DECODER, REWARD_HEAD, STAGE1_HEADS};
use crate::nnet::{read_checkpoint, write_checkpoint};
use crate::{Error, Result, Scalar};

/// Sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub policy: PolicyConfig,
    pub stages: Vec<u8>,
    pub config_hash: String,
    /// SHA-256 of each group's parameters.
    pub checksums: BTreeMap<String, String>,
}

pub fn manifest_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

/// Writes the `MUVP` parameter file and its JSON manifest.
pub fn save_policy<T: Scalar>(policy: &Policy<T>, path: &Path, config_hash: &str) -> Result<PolicyManifest> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::new();
    write_checkpoint(&policy.params, &mut bytes)?;
    fs::write(path, bytes)?;
    let manifest = PolicyManifest {
        policy: policy.cfg.clone(),
        stages: policy.stages.clone(),
        config_hash: config_hash.to_string(),
        checksums: policy.params.groups().iter().map(|g| (g.name.clone(), g.checksum())).collect(),
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_policy<T: Scalar>(path: &Path) -> Result<(Policy<T>, PolicyManifest)> {
    let manifest: PolicyManifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    let entries = read_checkpoint(&fs::read(path)?)?;
    let mut policy = Policy::new(manifest.policy.clone())?;
    let has = |name: &str| entries.iter().any(|e| e.group == name);
    if has(REWARD_HEAD) {
        policy.add_reward_head()?;
    }
    if has(STAGE1_HEADS) {
        policy.add_stage1_heads()?;
    }
    if has(OBS_DECODER) {
        policy.add_obs_decoder()?;
    }
    for g in policy.params.groups() {
        if !has(&g.name) {
            return Err(Error::Format(format!("checkpoint has no parameters for {}", g.name)));
        }
    }
    policy.params.load_entries(&entries)?;
    policy.stages = manifest.stages.clone();
    for g in policy.params.groups() {
        if manifest.checksums.get(&g.name) != Some(&g.checksum()) {
            return Err(Error::Format(format!("checksum mismatch for {} in {}", g.name, path.display())));
        }
    }
    Ok((policy, manifest))
}
