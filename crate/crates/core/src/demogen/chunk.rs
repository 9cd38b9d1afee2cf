use rand::seq::SliceRandom;

use super::{DemoKind, Episode};
use crate::gridsim::{Action, Observation, Pose};
use crate::mapper::{describe_map, egocentric_view, MapDescription, SemanticMap, EGO_WINDOW};
use crate::rewards::RewardLabel;
use crate::{rng, Error, Result};

/// Action labels per record.
pub const HORIZON: usize = 4;
/// Observation frames per record (three past plus the current one).
pub const HISTORY: usize = 4;
pub const STOP_SHARE_CAP: f64 = 0.25;

/// One training sample: what the agent had at step `t` and the next four
/// actions it took.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: u64,
    pub t: u32,
    pub world_seed: u64,
    pub kind: Option<DemoKind>,
    pub goal: u8,
    pub pose: Pose,
    /// Egocentric view of the map at `t`.
    pub map: SemanticMap,
    /// `O_{t-3} .. O_t`, earliest duplicated near the episode start.
    pub frames: Vec<Observation>,
    pub actions: [Action; HORIZON],
    pub description: MapDescription,
    /// Goal distance before and after action `t`.
    pub dist: f64,
    pub dist_after: f64,
    pub label: Option<RewardLabel>,
}

impl StepRecord {
    pub fn has_stop(&self) -> bool {
        self.actions.contains(&Action::Stop)
    }
}

/// One record per executed step. Labels past the episode end are Stop.
pub fn chunk_steps(ep: &Episode, episode: u64) -> Result<Vec<StepRecord>> {
    if ep.is_empty() {
        return Err(Error::Precondition("cannot chunk an empty episode".into()));
    }
    let acts = ep.actions();
    let mut out = Vec::with_capacity(ep.len());
    for t in 0..ep.len() {
        let step = &ep.steps[t];
        let mut actions = [Action::Stop; HORIZON];
        for (k, a) in actions.iter_mut().enumerate() {
            if let Some(&x) = acts.get(t + k) {
                *a = x;
            }
        }
        let frames = (0..HISTORY)
            .map(|k| ep.steps[(t + k).saturating_sub(HISTORY - 1)].observation.clone())
            .collect();
        out.push(StepRecord {
            episode,
            t: t as u32,
            world_seed: ep.world_seed,
            kind: ep.kind,
            goal: ep.goal,
            pose: step.pose,
            map: egocentric_view(&ep.maps[t], step.pose, EGO_WINDOW)?,
            frames,
            actions,
            description: describe_map(&ep.maps[t], step.pose, &acts[..=t])?,
            dist: ep.distances[t],
            dist_after: ep.distances[t + 1],
            label: None,
        });
    }
    Ok(out)
}

/// Indices of the augmented corpus: every record once, in order, followed
/// by duplicates of Stop-bearing records until their share reaches
/// `min(factor * share, STOP_SHARE_CAP)`. Duplicates cycle through a
/// seeded permutation of the Stop records.
pub fn augment_stops(records: &[StepRecord], factor: f64, seed: u64) -> Result<Vec<usize>> {
    if !(factor >= 1.0) {
        return Err(Error::Config(format!("stop augmentation factor must be >= 1, got {factor}")));
    }
    let mut out: Vec<usize> = (0..records.len()).collect();
    let mut stops: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.has_stop()).map(|(i, _)| i).collect();
    if stops.is_empty() {
        return Ok(out);
    }
    let n = records.len() as f64;
    let share = stops.len() as f64 / n;
    let target = (factor * share).min(STOP_SHARE_CAP);
    if target <= share {
        return Ok(out);
    }
    // (s + k) / (n + k) = target
    let k = ((target * n - stops.len() as f64) / (1.0 - target)).round() as usize;
    stops.shuffle(&mut rng::rng(rng::substream(seed, "stop-augment")));
    out.extend(stops.iter().cycle().take(k));
    Ok(out)
}

/// Length of [`frame_features`] for a sensor with `rays` rays.
pub fn frame_dim(rays: usize, num_categories: usize) -> usize {
    rays * (1 + num_categories)
}

/// Per-frame input vector: normalised depth per ray, then for every ray a
/// block of one slot per category holding the hit proximity `1 - d / range`
/// when that ray hit that category and zero otherwise.
pub fn frame_features(obs: &Observation, num_categories: usize) -> Vec<f64> {
    let range = obs.sensor.max_range as f64;
    let rays = obs.depth.len();
    let mut v = vec![0.0; frame_dim(rays, num_categories)];
    for (i, &d) in obs.depth.iter().enumerate() {
        v[i] = d as f64 / range;
    }
    for (i, h) in obs.hits.iter().enumerate() {
        if let Some(h) = h {
            if (1..=num_categories).contains(&(h.category as usize)) {
                v[rays + i * num_categories + h.category as usize - 1] = 1.0 - h.distance as f64 / range;
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demogen::{run_episode, EpisodeConfig, ScriptedController};
    use crate::gridsim::{Heading, World};

    fn ten_step_episode() -> Episode {
        let mut sem = vec![0; 144];
        sem[12 + 10] = 1;
        let w = World::from_parts(12, 12, 2, vec![false; 144], sem, 3);
        let mut acts = vec![Action::Forward; 9];
        acts.push(Action::Stop);
        let mut c = ScriptedController { actions: acts, cursor: 0 };
        run_episode(&w, 1, Pose::new(1, 1, Heading::E), &EpisodeConfig::default(), &mut c).unwrap()
    }

    #[test]
    fn one_record_per_step_with_padding() {
        let ep = ten_step_episode();
        assert_eq!(ep.len(), 10);
        let recs = chunk_steps(&ep, 0).unwrap();
        assert_eq!(recs.len(), 10);
        assert!(recs[0].frames.iter().all(|f| *f == ep.steps[0].observation));
        assert_eq!(recs[9].actions, [Action::Stop; 4]);
        assert_eq!(recs[7].actions, [Action::Forward, Action::Forward, Action::Stop, Action::Stop]);
        assert_eq!(recs[5].frames[0], ep.steps[2].observation);
        for (t, r) in recs.iter().enumerate() {
            assert_eq!(r.map, egocentric_view(&ep.maps[t], ep.steps[t].pose, EGO_WINDOW).unwrap());
            assert_eq!(*r.description.recent_actions.last().unwrap(), ep.steps[t].action);
        }
    }

    fn with_stops(n: usize, stops: usize) -> Vec<StepRecord> {
        let base = chunk_steps(&ten_step_episode(), 0).unwrap()[0].clone();
        (0..n)
            .map(|i| {
                let mut r = base.clone();
                r.t = i as u32;
                if i < stops {
                    r.actions[3] = Action::Stop;
                }
                r
            })
            .collect()
    }

    #[test]
    fn stop_augmentation_shares() {
        let recs = with_stops(200, 10);
        assert_eq!(augment_stops(&recs, 1.0, 0).unwrap(), (0..200).collect::<Vec<_>>());
        let idx = augment_stops(&recs, 3.0, 0).unwrap();
        let share = idx.iter().filter(|&&i| recs[i].has_stop()).count() as f64 / idx.len() as f64;
        assert!((share - 0.15).abs() < 0.005, "share {share}");
        assert_eq!(idx, augment_stops(&recs, 3.0, 0).unwrap());
        // capped
        let idx = augment_stops(&recs, 50.0, 0).unwrap();
        let share = idx.iter().filter(|&&i| recs[i].has_stop()).count() as f64 / idx.len() as f64;
        assert!((share - STOP_SHARE_CAP).abs() < 0.005);
        let all = with_stops(20, 20);
        assert_eq!(augment_stops(&all, 3.0, 0).unwrap().len(), 20);
        let none = with_stops(20, 0);
        assert_eq!(augment_stops(&none, 3.0, 0).unwrap().len(), 20);
        assert!(augment_stops(&recs, 0.5, 0).is_err());
    }
}
