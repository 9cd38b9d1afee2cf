use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use navlab_core::demogen::{
    augment_stops, chunk_steps, collect_corpus, run_policy_episode, CollectConfig, Dataset, DatasetMeta,
    DatasetWriter, DemoKind, Outcome, StepRecord, BLOB_FILE, HORIZON, INDEX_FILE, META_FILE,
};
use navlab_core::gridsim::{generate_world, geodesic_distance, Action, World, WorldConfig};
use navlab_core::mapper::EGO_WINDOW;

fn worlds(n: u64) -> Vec<World> {
    (1..=n).map(|s| generate_world(s, &WorldConfig::default()).unwrap()).collect()
}

fn corpus(ws: &[World], episodes: usize, seed: u64) -> Vec<StepRecord> {
    let cfg = CollectConfig { episodes, seed, ..Default::default() };
    collect_corpus(ws, &cfg)
        .unwrap()
        .iter()
        .flat_map(|(spec, ep)| chunk_steps(ep, spec.index).unwrap())
        .collect()
}

fn write(dir: &Path, recs: &[StepRecord]) -> DatasetMeta {
    let cfg = CollectConfig::default();
    let meta = DatasetMeta::new(WorldConfig::default().num_categories, cfg.episode.sensor, EGO_WINDOW);
    let mut w = DatasetWriter::create(dir, meta).unwrap();
    for r in recs {
        w.append(r).unwrap();
    }
    w.finish().unwrap()
}

#[test]
fn expert_path_equals_geodesic() {
    let ws = worlds(40);
    let cfg = CollectConfig::default().episode;
    for (i, w) in ws.iter().enumerate() {
        for goal in w.present_categories() {
            let ep = run_policy_episode(w, goal, DemoKind::Expert, i as u64 * 31 + goal as u64, &cfg).unwrap();
            assert_eq!(ep.outcome, Outcome::Success);
            let l = geodesic_distance(w, ep.steps[0].pose.cell, &w.goal_cells(goal));
            assert_eq!(ep.shortest_path(), l as f64);
            assert_eq!(ep.path_length() as f64, ep.shortest_path(), "world {} goal {goal}", w.seed);
            assert!(ep.steps.iter().all(|s| !s.collided));
        }
    }
}

#[test]
fn mix_shares_match_the_request() {
    let ws = worlds(10);
    for (mix, n) in [([2, 5, 3], 300usize), ([1, 1, 1], 301), ([0, 1, 3], 200)] {
        let cfg = CollectConfig { episodes: n, mix, seed: 4, ..Default::default() };
        let eps = collect_corpus(&ws, &cfg).unwrap();
        assert_eq!(eps.len(), n);
        let total: u32 = mix.iter().sum();
        for (k, kind) in DemoKind::ALL.iter().enumerate() {
            let got = eps.iter().filter(|(s, e)| s.kind == *kind && e.kind == Some(*kind)).count() as f64 / n as f64;
            let want = mix[k] as f64 / total as f64;
            assert!((got - want).abs() <= 0.01, "{mix:?} {kind:?}: {got} vs {want}");
        }
    }
}

#[test]
fn chunks_reference_their_episode() {
    let ws = worlds(6);
    let cfg = CollectConfig { episodes: 30, seed: 2, ..Default::default() };
    for (spec, ep) in collect_corpus(&ws, &cfg).unwrap() {
        let recs = chunk_steps(&ep, spec.index).unwrap();
        assert_eq!(recs.len(), ep.len());
        let acts = ep.actions();
        for (t, r) in recs.iter().enumerate() {
            assert_eq!(r.t as usize, t);
            assert_eq!(r.episode, spec.index);
            assert_eq!(r.world_seed, ws[spec.world].seed);
            assert_eq!(r.goal, spec.goal);
            assert_eq!(r.pose, ep.steps[t].pose);
            assert_eq!(r.dist, ep.distances[t]);
            assert_eq!(r.dist_after, ep.distances[t + 1]);
            for k in 0..HORIZON {
                assert_eq!(r.actions[k], acts.get(t + k).copied().unwrap_or(Action::Stop));
            }
            // newest frame is the current observation
            assert_eq!(r.frames.last().unwrap(), &ep.steps[t].observation);
        }
    }
}

#[test]
fn stop_augmentation_lifts_a_natural_share() {
    let recs = corpus(&worlds(10), 60, 8);
    let share = |idx: &[usize]| idx.iter().filter(|&&i| recs[i].has_stop()).count() as f64 / idx.len() as f64;
    let base: Vec<usize> = (0..recs.len()).collect();
    let natural = share(&base);
    assert!(natural > 0.01 && natural < 0.2, "natural stop share {natural}");
    let idx = augment_stops(&recs, 3.0, 0).unwrap();
    let want = (3.0 * natural).min(0.25);
    assert!((share(&idx) - want).abs() < 0.005, "{} vs {want}", share(&idx));
    // only stop records are duplicated, originals stay in place
    assert_eq!(&idx[..recs.len()], &base[..]);
    assert!(idx[recs.len()..].iter().all(|&i| recs[i].has_stop()));
}

#[test]
fn dataset_roundtrip_and_integrity() {
    let recs = corpus(&worlds(4), 12, 1);
    let dir = tempfile::tempdir().unwrap();
    let meta = write(dir.path(), &recs);
    assert_eq!(meta.records, recs.len());
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.meta, meta);
    assert!(!ds.is_labelled());
    assert_eq!(ds.records().unwrap(), recs);

    // blob ranges tile the file exactly, in order
    let blob_len = fs::metadata(dir.path().join(BLOB_FILE)).unwrap().len();
    let mut at = 0;
    for h in &ds.headers {
        assert_eq!(h.map_offset, at);
        assert_eq!(h.frames_offset, h.map_offset + h.map_len);
        at = h.frames_offset + h.frames_len;
    }
    assert_eq!(at, blob_len);

    // episodes are contiguous runs with t = 0, 1, 2, ...
    let mut by_ep: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for h in &ds.headers {
        by_ep.entry(h.episode).or_default().push(h.t);
    }
    assert_eq!(by_ep.len(), meta.episodes);
    for ts in by_ep.values() {
        assert_eq!(*ts, (0..ts.len() as u32).collect::<Vec<_>>());
    }
}

#[test]
fn truncated_blob_is_reported() {
    let recs = corpus(&worlds(2), 2, 1);
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), &recs);
    let blob = dir.path().join(BLOB_FILE);
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 5]).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert!(ds.record(ds.len() - 1).is_err());
}

fn dataset_bytes(threads: usize) -> Vec<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let recs = pool.install(|| corpus(&worlds(5), 20, 77));
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), &recs);
    [INDEX_FILE, BLOB_FILE, META_FILE].iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect()
}

#[test]
fn collection_is_byte_identical_across_worker_counts() {
    let one = dataset_bytes(1);
    assert_eq!(one, dataset_bytes(1));
    assert_eq!(one, dataset_bytes(4));
}
