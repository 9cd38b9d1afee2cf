mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use navlab_core::demogen::{chunk_steps, collect_corpus, label_dataset, CollectConfig, Dataset, DatasetMeta, DatasetWriter};
use navlab_core::eval::{compute_metrics, evaluate_policy, evaluate_random, results_csv, EvalConfig};
use navlab_core::gridsim::{generate_world, World};
use navlab_core::mapper::{decode_map, render_map, Frame, Palette};
use navlab_core::nnet::GradCheckConfig;
use navlab_core::policy::{load_policy, save_policy, DecodeMode, PolicyConfig};
use navlab_core::training::{policy_grad_check, run_stage};
use navlab_core::{rng, Error, Policy};
use serde_json::json;

use config::{parse_mix, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "navlab", version, about = "Desk-scale map-conditioned object navigation pipeline")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate procedural worlds, one JSON file per world.
    GenWorlds(GenWorlds),
    /// Roll out demonstrators and write a step dataset.
    Collect(Collect),
    /// Attach reward labels to a dataset in place.
    Label(Label),
    /// Run one training stage.
    Train(Train),
    /// Evaluate a checkpoint (or the random baseline) on a set of worlds.
    Eval(Eval),
    /// Render a map to PNG.
    Render(Render),
    /// Check analytic against numeric gradients over the whole policy.
    Gradcheck(Gradcheck),
}

#[derive(Args, Debug)]
struct GenWorlds {
    #[arg(long)]
    n: usize,
    /// Seed of the first world; world i gets seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Collect {
    #[arg(long)]
    worlds: PathBuf,
    /// Episode shares as expert:frontier:noisy.
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Label {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    stage: u8,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to continue from; a fresh policy is built when absent.
    #[arg(long)]
    in_ckpt: Option<PathBuf>,
    #[arg(long)]
    out_ckpt: PathBuf,
    /// Permit skipping stages, for ablations.
    #[arg(long)]
    allow_skip: bool,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    worlds: PathBuf,
    #[arg(long, required_unless_present = "random")]
    ckpt: Option<PathBuf>,
    /// Episodes per world.
    #[arg(long)]
    episodes: Option<usize>,
    /// JSON metrics report; per-episode CSV goes next to it.
    #[arg(long)]
    report: PathBuf,
    /// Evaluate the uniform random-action baseline instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    random: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Render {
    /// A map file in the binary map format.
    #[arg(long, conflicts_with_all = ["episode", "dataset"])]
    map: Option<PathBuf>,
    /// Episode index within `--dataset`.
    #[arg(long, requires = "dataset")]
    episode: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Step within the episode (default: the last).
    #[arg(long, requires = "episode")]
    step: Option<usize>,
    /// Treat `--map` as an egocentric crop (draws the agent marker).
    #[arg(long, requires = "map")]
    egocentric: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Gradcheck {
    /// Number of synthetic records the checked loss sums over.
    #[arg(long, default_value_t = 2)]
    records: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenWorlds(a) => gen_worlds(&mut cfg, a),
        Command::Collect(a) => collect(&mut cfg, a),
        Command::Label(a) => label(&mut cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
        Command::Render(a) => render(a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
    }
}

fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

fn gen_worlds(cfg: &mut RunConfig, a: GenWorlds) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&a.out)?;
    for i in 0..a.n {
        let seed = cfg.seed + i as u64;
        let w = generate_world(seed, &cfg.world)?;
        fs::write(a.out.join(format!("world_{seed}.json")), w.to_json())?;
    }
    write_config(cfg, &a.out.join("config.toml"))?;
    println!("wrote {} worlds to {}", a.n, a.out.display());
    Ok(())
}

/// Loads every world file in `dir`, ordered by world seed.
fn load_worlds(dir: &Path) -> Result<Vec<World>> {
    let mut worlds = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading world directory {}", dir.display()))? {
        let path = entry?.path();
        let is_world = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("world_") && n.ends_with(".json"));
        if is_world {
            let text = fs::read_to_string(&path)?;
            worlds.push(World::from_json(&text).with_context(|| format!("loading {}", path.display()))?);
        }
    }
    if worlds.is_empty() {
        bail!("no world_*.json files in {}", dir.display());
    }
    worlds.sort_by_key(|w| w.seed);
    Ok(worlds)
}

fn collect(cfg: &mut RunConfig, a: Collect) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mix {
        cfg.collect.mix = m;
    }
    if let Some(n) = a.episodes {
        cfg.collect.episodes = n;
    }
    let worlds = load_worlds(&a.worlds)?;
    let num_categories = worlds[0].num_categories;
    if worlds.iter().any(|w| w.num_categories != num_categories) {
        bail!("worlds disagree on the number of categories");
    }
    let cc = CollectConfig {
        episodes: cfg.collect.episodes,
        mix: parse_mix(&cfg.collect.mix)?,
        seed: rng::substream(cfg.seed, "collect"),
        episode: cfg.episode(),
    };
    let episodes = collect_corpus(&worlds, &cc)?;
    let meta = DatasetMeta::new(num_categories, cfg.sensor, cfg.policy.ego_window);
    let mut w = DatasetWriter::create(&a.out, meta)?;
    for (spec, ep) in &episodes {
        for rec in chunk_steps(ep, spec.index)? {
            w.append(&rec)?;
        }
    }
    let meta = w.finish()?;
    write_config(cfg, &a.out.join("config.toml"))?;
    println!("collected {} episodes, {} records into {}", meta.episodes, meta.records, a.out.display());
    Ok(())
}

fn label(cfg: &mut RunConfig, a: Label) -> Result<()> {
    if let Some(g) = a.gamma {
        cfg.reward.gamma = g;
    }
    if let Some(w) = a.window {
        cfg.reward.window = w;
    }
    let n = label_dataset(&a.dataset, &cfg.reward)?;
    write_config(cfg, &a.dataset.join("label.toml"))?;
    println!("labelled {n} records");
    Ok(())
}

fn train(cfg: &RunConfig, a: Train) -> Result<()> {
    let data = Dataset::open(&a.dataset)?;
    if a.stage == 3 && !data.is_labelled() {
        return Err(Error::StageOrder("stage 3 needs reward labels; run `label` on the dataset first".into()).into());
    }
    let mut policy: Policy = match &a.in_ckpt {
        Some(p) => load_policy(p)?.0,
        None => {
            let pc = PolicyConfig {
                num_categories: data.meta.num_categories,
                rays: data.meta.sensor.rays,
                ego_window: data.meta.ego_window,
                seed: rng::substream(cfg.seed, "policy"),
                ..cfg.policy.clone()
            };
            Policy::new(pc)?
        }
    };
    let records = data.records()?;
    let mut sc = cfg.stage(a.stage);
    sc.allow_skip = a.allow_skip;
    sc.seed = rng::substream(cfg.seed, "train");
    let report = run_stage(&mut policy, &records, &sc)?;
    if let Some(dir) = a.out_ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_policy(&policy, &a.out_ckpt, &cfg.hash()?)?;
    fs::write(a.out_ckpt.with_extension("csv"), report.to_csv())?;
    fs::write(a.out_ckpt.with_extension("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_config(cfg, &a.out_ckpt.with_extension("toml"))?;
    if let Some(e) = report.final_epoch() {
        println!("stage {} done: {} samples, final loss {:.4}", a.stage, report.samples, e.total);
    }
    Ok(())
}

fn eval(cfg: &mut RunConfig, a: Eval) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.episodes {
        cfg.eval.episodes_per_world = n;
    }
    let worlds = load_worlds(&a.worlds)?;
    let mode = match cfg.eval.decode.as_str() {
        "greedy" => DecodeMode::Greedy,
        "sample" => DecodeMode::Sample(rng::substream(cfg.seed, "decode")),
        other => bail!("unknown decode mode {other:?} (greedy or sample)"),
    };
    let ec = EvalConfig {
        episodes_per_world: cfg.eval.episodes_per_world,
        seed: cfg.seed,
        episode: navlab_core::demogen::EpisodeConfig { budget: cfg.eval.budget, ..cfg.episode() },
        mode,
    };
    let results = if a.random {
        evaluate_random(&worlds, &ec)?
    } else {
        let path = a.ckpt.as_ref().ok_or_else(|| anyhow!("--ckpt is required without --random"))?;
        let (policy, _) = load_policy::<f64>(path)?;
        evaluate_policy(&worlds, &policy, &ec)?
    };
    let metrics = compute_metrics(&results)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.report, serde_json::to_string_pretty(&metrics)?)?;
    fs::write(a.report.with_extension("csv"), results_csv(&results))?;
    write_config(cfg, &a.report.with_extension("toml"))?;
    println!("{}", json!({ "sr": metrics.sr, "spl": metrics.spl, "n": metrics.n }));
    Ok(())
}

fn render(a: Render) -> Result<()> {
    let map = match (&a.map, &a.dataset, a.episode) {
        (Some(path), _, _) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let frame = if a.egocentric { Frame::Egocentric } else { Frame::Allocentric };
            decode_map(&bytes, frame, (0, 0))?.0
        }
        (None, Some(dir), Some(ep)) => {
            let data = Dataset::open(dir)?;
            let steps: Vec<usize> = (0..data.len()).filter(|&i| data.headers[i].episode == ep as u64).collect();
            let i = match a.step {
                Some(t) => steps.iter().copied().find(|&i| data.headers[i].t as usize == t),
                None => steps.last().copied(),
            }
            .ok_or_else(|| anyhow!("episode {ep} has no such step in {}", dir.display()))?;
            data.record(i)?.map
        }
        _ => bail!("render needs --map FILE or --episode N --dataset DIR"),
    };
    render_map(&map, &Palette::default()).save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, a: Gradcheck) -> Result<()> {
    if a.records == 0 {
        bail!("--records must be positive");
    }
    let world = generate_world(cfg.seed, &cfg.world)?;
    let cc = CollectConfig { episodes: 1, mix: [1, 0, 0], seed: rng::substream(cfg.seed, "collect"), episode: cfg.episode() };
    let (spec, ep) = collect_corpus(std::slice::from_ref(&world), &cc)?.remove(0);
    let mut records = chunk_steps(&ep, spec.index)?;
    let labels = navlab_core::rewards::label_episode(&ep.distances, &cfg.reward)?;
    for (r, l) in records.iter_mut().zip(labels) {
        r.label = Some(l);
    }
    let stride = (records.len() / a.records).max(1);
    let picked: Vec<_> = records.into_iter().step_by(stride).take(a.records).collect();
    let pc = PolicyConfig {
        num_categories: cfg.world.num_categories,
        rays: cfg.sensor.rays,
        seed: rng::substream(cfg.seed, "policy"),
        ..cfg.policy.clone()
    };
    let mut policy: Policy = Policy::new(pc)?;
    let check = GradCheckConfig { seed: rng::substream(cfg.seed, "gradcheck"), ..GradCheckConfig::default() };
    let report = policy_grad_check(&mut policy, &picked, &cfg.stage(3), &check, None)?;
    for g in &report.groups {
        println!("{:<16} checked {:>4}  max rel {:.3e}  max abs {:.3e}", g.name, g.checked, g.max_rel_err, g.max_abs_err);
    }
    report.clone().into_result()?;
    println!("gradient check passed (max rel err {:.3e})", report.max_rel_err);
    Ok(())
}
