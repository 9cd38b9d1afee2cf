use std::fs;

use navlab_core::demogen::{
    chunk_steps, collect_corpus, run_episode, CollectConfig, Dataset, DatasetMeta, DatasetWriter, EpisodeConfig,
    ExpertController,
};
use navlab_core::gridsim::{generate_world, Heading, Pose, World, WorldConfig};
use navlab_core::mapper::EGO_WINDOW;
use navlab_core::rewards::{label_episode, normalize_rewards, raw_progress, return_to_go, RewardConfig};
use navlab_core::rng::rng;
use proptest::prelude::*;
use rand::Rng;

fn rtg_oracle(r: &[f64], gamma: f64, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..r.len() {
        let mut s = 0.0;
        for j in t..r.len() {
            if j - t < w {
                s += gamma.powi((j - t) as i32) * r[j];
            }
        }
        out.push(s);
    }
    out
}

fn cfg(gamma: f64, window: usize) -> RewardConfig {
    RewardConfig { gamma, window, ..Default::default() }
}

#[test]
fn return_to_go_matches_double_loop() {
    let mut g = rng(11);
    for case in 0..1000 {
        let n = g.gen_range(0..60);
        let r: Vec<f64> = (0..n).map(|_| g.gen_range(-3.0..3.0)).collect();
        let gamma = if case % 10 == 0 { [0.0, 1.0][case % 20 / 10] } else { g.gen_range(0.0..=1.0) };
        let w = g.gen_range(1..12);
        let got = return_to_go(&r, &cfg(gamma, w));
        let want = rtg_oracle(&r, gamma, w);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn default_window_on_a_short_sequence() {
    // γ = 0.9, W = 4, hand computed
    let r = [1.0, 0.0, -1.0, 2.0, 1.0];
    let got = return_to_go(&r, &RewardConfig::default());
    let want: [f64; 5] = [1.0 - 0.81 + 2.0 * 0.729, -0.9 + 1.62 + 0.729, -1.0 + 1.8 + 0.81, 2.9, 1.0];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn z_scores_have_zero_mean_and_unit_spread() {
    let mut g = rng(5);
    for _ in 0..300 {
        let n = g.gen_range(2..80);
        let raw: Vec<f64> = (0..n).map(|_| g.gen_range(-4i32..=4) as f64).collect();
        let z = normalize_rewards(&raw, &RewardConfig::default());
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-12);
        if raw.iter().any(|&x| x != raw[0]) {
            assert!((var - 1.0).abs() < 1e-9, "var {var}");
        } else {
            assert!(z.iter().all(|&x| x == 0.0));
        }
    }
}

fn corridor() -> World {
    let (w, h) = (20, 3);
    let mut sem = vec![0; w * h];
    sem[w + 18] = 1;
    World::from_parts(w, h, 1, vec![false; w * h], sem, 0)
}

#[test]
fn straight_expert_run_earns_four_per_chunk() {
    let world = corridor();
    let spawn = Pose::new(2, 1, Heading::E);
    let ep = run_episode(&world, 1, spawn, &EpisodeConfig::default(), &mut ExpertController::default()).unwrap();
    // 16 forwards then stop
    assert_eq!(ep.len(), 17);
    let raw = raw_progress(&ep.distances).unwrap();
    for t in 0..=12 {
        assert_eq!(raw[t], 4.0, "t {t}");
    }
    assert_eq!(&raw[13..], &[3.0, 2.0, 1.0, 0.0]);
    let labels = label_episode(&ep.distances, &RewardConfig::default()).unwrap();
    assert_eq!(labels.len(), ep.len());
    // the plateau shares one z-score
    assert!(labels[..=12].windows(2).all(|p| p[0].r == p[1].r));
    assert!(labels[0].r > 0.0 && labels[16].r < 0.0);
}

#[test]
fn unreachable_distances_are_rejected() {
    assert!(raw_progress(&[3.0, f64::INFINITY, 1.0]).is_err());
    assert!(label_episode(&[1.0, 0.0], &cfg(1.5, 4)).is_err());
    assert!(label_episode(&[1.0, 0.0], &cfg(0.9, 0)).is_err());
}

#[test]
fn dataset_labels_match_per_episode_labelling() {
    let ws: Vec<World> = (1..=3).map(|s| generate_world(s, &WorldConfig::default()).unwrap()).collect();
    let cc = CollectConfig { episodes: 9, seed: 3, ..Default::default() };
    let eps = collect_corpus(&ws, &cc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = DatasetMeta::new(6, cc.episode.sensor, EGO_WINDOW);
    let mut w = DatasetWriter::create(dir.path(), meta).unwrap();
    for (spec, ep) in &eps {
        for r in chunk_steps(ep, spec.index).unwrap() {
            w.append(&r).unwrap();
        }
    }
    w.finish().unwrap();
    let rc = RewardConfig::default();
    let n = navlab_core::demogen::label_dataset(dir.path(), &rc).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(n, ds.len());
    assert!(ds.is_labelled());
    assert_eq!(ds.meta.reward, Some(rc));
    let mut at = 0;
    for (_, ep) in &eps {
        let want = label_episode(&ep.distances, &rc).unwrap();
        for (k, l) in want.iter().enumerate() {
            assert_eq!(ds.headers[at + k].label(), Some(*l));
        }
        at += want.len();
    }
    // labelling twice gives the same index
    let before = fs::read(dir.path().join("index.jsonl")).unwrap();
    navlab_core::demogen::label_dataset(dir.path(), &rc).unwrap();
    assert_eq!(before, fs::read(dir.path().join("index.jsonl")).unwrap());
}

proptest! {
    #[test]
    fn return_to_go_is_linear(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..40),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        gamma in 0.0f64..=1.0,
        w in 1usize..10,
    ) {
        let c = cfg(gamma, w);
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = return_to_go(&mix, &c);
        let (rx, ry) = (return_to_go(&x, &c), return_to_go(&y, &c));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn windows_obey_the_one_step_recurrence(
        r in prop::collection::vec(-5.0f64..5.0, 1..40),
        gamma in 0.0f64..=1.0,
        w in 1usize..10,
    ) {
        let rtg = return_to_go(&r, &cfg(gamma, w));
        let n = r.len();
        for t in 0..n {
            let next = if t + 1 < n { rtg[t + 1] } else { 0.0 };
            let drop = if t + w < n { gamma.powi(w as i32) * r[t + w] } else { 0.0 };
            prop_assert!((rtg[t] - (r[t] + gamma * next - drop)).abs() < 1e-9);
        }
        // a window of one is the reward itself
        prop_assert_eq!(return_to_go(&r, &cfg(gamma, 1)), r.clone());
        // a window covering the episode is the full discounted sum
        let full = return_to_go(&r, &cfg(gamma, n + 3));
        prop_assert!((full[0] - rtg_oracle(&r, gamma, usize::MAX)[0]).abs() < 1e-9);
    }

    #[test]
    fn z_score_ignores_shift_and_positive_scale(
        raw in prop::collection::vec(-5.0f64..5.0, 2..30),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
    ) {
        prop_assume!(raw.iter().any(|&x| (x - raw[0]).abs() > 1e-3));
        let c = RewardConfig::default();
        let z = normalize_rewards(&raw, &c);
        let moved: Vec<f64> = raw.iter().map(|x| scale * x + shift).collect();
        let z2 = normalize_rewards(&moved, &c);
        for (a, b) in z.iter().zip(&z2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
