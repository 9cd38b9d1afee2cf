use navlab_core::demogen::{chunk_steps, run_policy_episode, DemoKind, EpisodeConfig, StepRecord};
use navlab_core::gridsim::{generate_world, WorldConfig};
use navlab_core::nnet::{
    grad_check, optimizer_step, AdamConfig, CrossAttention, GradCheckConfig, Graph, Grads, Linear, NnetError,
    ParamStore, Tensor,
};
use navlab_core::policy::{Policy, PolicyConfig};
use navlab_core::rewards::{label_episode, RewardConfig};
use navlab_core::rng::rng;
use navlab_core::training::{policy_grad_check, StageConfig};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
}

struct Mlp {
    store: ParamStore<f64>,
    x: Tensor<f64>,
    labels: Vec<usize>,
}

fn mlp(seed: u64) -> Mlp {
    let mut r = rng(seed);
    let dims = [5, 7, 6, 4];
    let mut store = ParamStore::new();
    for (i, w) in dims.windows(2).enumerate() {
        let mut t = Linear::tensors(&format!("l{i}"), w[0], w[1], &mut r);
        // non-zero biases so their gradients are exercised too
        t[1].1 = random_tensor(&mut r, 1, w[1]);
        store.add_group(&format!("layer{i}"), t).unwrap();
    }
    let x = random_tensor(&mut r, 3, 5);
    let labels = (0..3).map(|_| r.gen_range(0..4)).collect();
    Mlp { store, x, labels }
}

fn mlp_loss(m: &Mlp, store: &ParamStore<f64>) -> Result<(f64, Grads<f64>), NnetError> {
    let mut g = Graph::new(store);
    let mut h = g.input(m.x.clone())?;
    for i in 0..3 {
        let layer = Linear::bind(store, &format!("layer{i}"), &format!("l{i}")).unwrap();
        h = g.linear(h, &layer)?;
        if i < 2 {
            h = g.tanh(h)?;
        }
    }
    let loss = g.cross_entropy(h, &m.labels)?;
    let v = g.value(loss).data()[0];
    Ok((v, g.backward(loss)?))
}

#[test]
fn three_layer_net_matches_central_differences() {
    for seed in 0..10 {
        let m = mlp(seed);
        let cfg = GradCheckConfig { tolerance: 1e-6, samples_per_group: 1000, seed, ..Default::default() };
        let report = grad_check(&m.store, |s| mlp_loss(&m, s), &cfg).unwrap();
        assert_eq!(report.groups.len(), 3);
        assert!(report.passed(), "seed {seed}: {:?}", report);
    }
}

#[test]
fn hand_rolled_differences_agree_with_the_tape() {
    // independent of grad_check: perturb every scalar of layer1 ourselves
    let m = mlp(42);
    let (_, grads) = mlp_loss(&m, &m.store).unwrap();
    let eps = 1e-6;
    for name in ["l1.w", "l1.b"] {
        let id = m.store.id("layer1", name).unwrap();
        for k in 0..m.store.get(id).len() {
            let mut s = m.store.clone();
            s.get_mut(id).data_mut()[k] += eps;
            let up = mlp_loss(&m, &s).unwrap().0;
            s.get_mut(id).data_mut()[k] -= 2.0 * eps;
            let down = mlp_loss(&m, &s).unwrap().0;
            let fd = (up - down) / (2.0 * eps);
            let an = grads.get(id).unwrap().data()[k];
            assert!((fd - an).abs() < 1e-8, "{name}[{k}]: {an} vs {fd}");
        }
    }
}

#[test]
fn affine_loss_checks_to_roundoff() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    store.add_group("a", Linear::tensors("l", 4, 3, &mut r)).unwrap();
    let x = random_tensor(&mut r, 5, 4);
    let target = random_tensor(&mut r, 5, 3);
    let f = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let xi = g.input(x.clone())?;
        let y = g.linear(xi, &Linear::bind(s, "a", "l").unwrap())?;
        let loss = g.mse(y, &target)?;
        Ok((g.value(loss).data()[0], g.backward(loss)?))
    };
    let cfg = GradCheckConfig { tolerance: 1e-8, ..Default::default() };
    let report = grad_check(&store, f, &cfg).unwrap();
    assert!(report.max_rel_err < 1e-8, "{}", report.max_rel_err);
}

#[test]
fn adam_step_on_half_square() {
    // L = ½ Σ w², so g = w and the first bias-corrected step is lr · w / (|w| + eps)
    let w0 = vec![0.5, -2.0, 1e-3, 0.0, 3.0];
    let mut store = ParamStore::new();
    store.add_group("w", vec![("w".into(), Tensor::from_vec(1, 5, w0.clone()))]).unwrap();
    let id = store.id("w", "w").unwrap();
    let cfg = AdamConfig { lr: 0.01, ..Default::default() };
    let grads = {
        let mut g = Graph::new(&store);
        let w = g.param(id);
        let sq = g.matmul_bt(w, w).unwrap();
        let loss = g.scale(sq, 0.5).unwrap();
        g.backward(loss).unwrap()
    };
    assert_eq!(grads.get(id).unwrap().data(), &w0[..]);
    optimizer_step(&mut store, &grads, &cfg);
    for (k, &w) in w0.iter().enumerate() {
        let want = w - cfg.lr * w / (w.abs() + cfg.eps);
        assert!((store.get(id).data()[k] - want).abs() < 1e-15, "{k}");
    }
}

fn attention_setup(seed: u64) -> (ParamStore<f64>, Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    store.add_group("att", CrossAttention::tensors("x", 3, 5, 4, 6, &mut r)).unwrap();
    (store, random_tensor(&mut r, 2, 3), random_tensor(&mut r, 7, 5))
}

fn attend(store: &ParamStore<f64>, q: &Tensor<f64>, ctx: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new(store);
    let qi = g.input(q.clone()).unwrap();
    let ci = g.input(ctx.clone()).unwrap();
    let out = g.cross_attention(qi, ci, &CrossAttention::bind(store, "att", "x").unwrap()).unwrap();
    g.value(out).clone()
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = t.cols();
    Tensor::from_vec(t.rows(), c, perm.iter().flat_map(|&i| t.data()[i * c..(i + 1) * c].to_vec()).collect())
}

proptest! {
    #[test]
    fn attention_ignores_context_order(seed in any::<u64>(), perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle()) {
        let (store, q, ctx) = attention_setup(seed);
        let a = attend(&store, &q, &ctx);
        let b = attend(&store, &q, &permute_rows(&ctx, &perm));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_permutes_with_queries(seed in any::<u64>()) {
        let (store, q, ctx) = attention_setup(seed);
        let a = attend(&store, &q, &ctx);
        let b = attend(&store, &permute_rows(&q, &[1, 0]), &ctx);
        prop_assert_eq!(permute_rows(&a, &[1, 0]), b);
    }
}

fn labelled_records(n: usize) -> Vec<StepRecord> {
    let world = generate_world(5, &WorldConfig::default()).unwrap();
    let goal = world.present_categories()[0];
    let ep = run_policy_episode(&world, goal, DemoKind::Expert, 1, &EpisodeConfig::default()).unwrap();
    let mut recs = chunk_steps(&ep, 0).unwrap();
    for (r, l) in recs.iter_mut().zip(label_episode(&ep.distances, &RewardConfig::default()).unwrap()) {
        r.label = Some(l);
    }
    let stride = (recs.len() / n).max(1);
    recs.into_iter().step_by(stride).take(n).collect()
}

fn small_policy() -> Policy<f64> {
    Policy::new(PolicyConfig { d: 8, d_v: 8, hidden: 12, queries: 2, seed: 9, ..Default::default() }).unwrap()
}

#[test]
fn full_policy_passes_the_gradient_check() {
    let recs = labelled_records(2);
    let mut p = small_policy();
    let check = GradCheckConfig { samples_per_group: 60, ..Default::default() };
    let report = policy_grad_check(&mut p, &recs, &StageConfig::for_stage(3), &check, None).unwrap();
    // every group of the network, auxiliary heads included
    assert!(report.groups.len() >= 11, "{:?}", report.groups);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn corrupted_backward_fails_the_gradient_check() {
    let recs = labelled_records(2);
    let check = GradCheckConfig { samples_per_group: 60, ..Default::default() };
    for op in ["matmul", "tanh", "softmax"] {
        let mut p = small_policy();
        let report = policy_grad_check(&mut p, &recs, &StageConfig::for_stage(3), &check, Some(op)).unwrap();
        assert!(!report.passed(), "{op}: {}", report.max_rel_err);
        assert!(report.clone().into_result().is_err());
    }
}
