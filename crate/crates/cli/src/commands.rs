use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ctrm_core::features::FeatureConfig;
use ctrm_core::instance::{
    generate_seeded, load_instance, save_instance_with_config, ProblemInstance, Profile, Scenario, ScenarioConfig,
};
use ctrm_core::neural::{load_checkpoint, save_checkpoint, LossWeights, TrainConfig};
use ctrm_core::par::Execution;
use ctrm_core::pipeline::{
    aggregate, build_roadmaps, extract_training_samples, gen_demonstrations, metrics_jsonl, read_samples,
    run_ablation, run_benchmark, train_variant, write_samples, AblationVariant, BenchInstance, DemoConfig, Method,
    MetricsRecord, ModelEntry, SampleSet, Timing,
};
use ctrm_core::planner::{
    prioritized_planning, static_horizon, sum_of_costs, validate_solution, GraphView, PlanLimits, SolutionFile,
    SolutionMetrics,
};
use ctrm_core::rng::derive_seed;
use ctrm_core::roadmap::{Density, RoadmapSetFile, StaticRoadmap, TimedRoadmap};

use crate::config::{resolve, seed_fallback};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn is_false(b: &bool) -> bool {
    !*b
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(fs::write(path, text).with_context(|| format!("writing {}", path.display()))?)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("outputs serialize") + "\n"
}

fn load_instance_file(path: &Path) -> Result<ProblemInstance> {
    load_instance(&read(path)?).map_err(|e| CliError::Op(anyhow!("{}: {e}", path.display())))
}

fn exec(jobs: usize) -> Execution {
    Execution::from_jobs(jobs)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample problem instances.
    GenInstances(GenInstancesArgs),
    /// Solve instances on dense random roadmaps and extract training samples.
    GenDemos(GenDemosArgs),
    /// Train the vertex sampler on a demonstration dataset.
    Train(TrainArgs),
    /// Build roadmaps for one instance.
    BuildRoadmap(BuildRoadmapArgs),
    /// Run prioritized planning on prebuilt roadmaps.
    Plan(PlanArgs),
    /// Run the benchmark matrix over a directory of instances.
    Evaluate(EvaluateArgs),
    /// Compare the full sampler against its ablations.
    Ablate(AblateArgs),
    /// Check a solution file against an instance.
    Validate(ValidateArgs),
}

pub fn run(cmd: Command, config: Option<&Path>, jobs: usize) -> Result<()> {
    match cmd {
        Command::GenInstances(a) => gen_instances(resolve(&a.seeded()?, config, "gen-instances")?),
        Command::GenDemos(a) => gen_demos(resolve(&a.seeded()?, config, "gen-demos")?, jobs),
        Command::Train(a) => train(resolve(&a.seeded()?, config, "train")?),
        Command::BuildRoadmap(a) => build_roadmap(resolve(&a.seeded()?, config, "build-roadmap")?, jobs),
        Command::Plan(a) => plan(resolve(&a, config, "plan")?),
        Command::Evaluate(a) => evaluate(resolve(&a.seeded()?, config, "evaluate")?, jobs),
        Command::Ablate(a) => ablate(resolve(&a.seeded()?, config, "ablate")?, jobs),
        Command::Validate(a) => validate(resolve(&a, config, "validate")?),
    }
}

macro_rules! seeded_args {
    ($t:ty) => {
        impl $t {
            fn seeded(mut self) -> Result<Self> {
                self.seed = seed_fallback(self.seed)?;
                Ok(self)
            }
        }
    };
}

// gen-instances

#[derive(Debug, Args, Serialize)]
pub struct GenInstancesArgs {
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}
seeded_args!(GenInstancesArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenInstancesConfig {
    scenario: Scenario,
    profile: Profile,
    count: usize,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for GenInstancesConfig {
    fn default() -> Self {
        Self { scenario: Scenario::Basic, profile: Profile::Desk, count: 10, seed: 0, out: None }
    }
}

fn gen_instances(cfg: GenInstancesConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let sc = ScenarioConfig::new(cfg.scenario, cfg.profile);
    let embedded = json!({"command": "gen-instances", "config": cfg});
    for k in 0..cfg.count {
        let inst = generate_seeded(&sc, derive_seed(cfg.seed, &[k as u64])).map_err(|e| CliError::Op(e.into()))?;
        write(&out.join(format!("inst_{k:04}.json")), &save_instance_with_config(&inst, Some(embedded.clone())))?;
    }
    println!("wrote {} instances to {}", cfg.count, out.display());
    Ok(())
}

// gen-demos

#[derive(Debug, Args, Serialize)]
pub struct GenDemosArgs {
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    profile: Option<Profile>,
    /// Training instances.
    #[arg(long)]
    train: Option<usize>,
    /// Validation instances.
    #[arg(long)]
    val: Option<usize>,
    /// Random-roadmap samples used to solve each instance.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    grid_resolution: Option<usize>,
    #[arg(long)]
    fov_size: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    max_expansions: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}
seeded_args!(GenDemosArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDemosConfig {
    scenario: Scenario,
    profile: Profile,
    train: usize,
    val: usize,
    samples: usize,
    grid_resolution: usize,
    fov_size: usize,
    neighbors: usize,
    max_expansions: u64,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for GenDemosConfig {
    fn default() -> Self {
        let f = FeatureConfig::desk();
        Self {
            scenario: Scenario::Basic,
            profile: Profile::Desk,
            train: 50,
            val: 10,
            samples: 3000,
            grid_resolution: f.grid_resolution,
            fov_size: f.fov_size,
            neighbors: f.neighbors,
            max_expansions: 2_000_000,
            seed: 0,
            out: None,
        }
    }
}

impl GenDemosConfig {
    fn features(&self) -> FeatureConfig {
        FeatureConfig { grid_resolution: self.grid_resolution, fov_size: self.fov_size, neighbors: self.neighbors }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: Value,
    features: FeatureConfig,
    train: Vec<String>,
    val: Vec<String>,
    train_samples: usize,
    val_samples: usize,
}

fn gen_demos(cfg: GenDemosConfig, jobs: usize) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    if cfg.fov_size.is_multiple_of(2) {
        return Err(usage("--fov-size must be odd"));
    }
    let mut demo = DemoConfig::desk(ScenarioConfig::new(cfg.scenario, cfg.profile), cfg.seed);
    demo.n_train = cfg.train;
    demo.n_val = cfg.val;
    demo.roadmap_samples = cfg.samples;
    demo.limits.max_expansions = Some(cfg.max_expansions);
    let set = gen_demonstrations(&demo, exec(jobs)).map_err(|e| CliError::Op(e.into()))?;
    let embedded = json!({"command": "gen-demos", "config": cfg});
    for d in set.train.iter().chain(&set.val) {
        write(&out.join("instances").join(format!("{}.json", d.id)), &save_instance_with_config(&d.instance, Some(embedded.clone())))?;
        let metrics = SolutionMetrics {
            success: true,
            sum_of_costs: Some(sum_of_costs(&d.instance, &d.solution)),
            makespan: Some(d.solution.makespan()),
            expanded_nodes: 0,
            wall_time_ms: None,
            failure: None,
        };
        let file = SolutionFile::from_solution(&d.solution, metrics, embedded.clone());
        write(&out.join("solutions").join(format!("{}.json", d.id)), &pretty(&file))?;
    }
    let features = cfg.features();
    let samples = SampleSet {
        fov_len: features.fov_len(),
        train: extract_training_samples(&set.train, features, exec(jobs)),
        val: extract_training_samples(&set.val, features, exec(jobs)),
    };
    let mut bytes = Vec::new();
    write_samples(&mut bytes, &samples).map_err(|e| CliError::Op(e.into()))?;
    let path = out.join("samples.bin");
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let manifest = Manifest {
        config: embedded,
        features,
        train: set.train.iter().map(|d| d.id.clone()).collect(),
        val: set.val.iter().map(|d| d.id.clone()).collect(),
        train_samples: samples.train.len(),
        val_samples: samples.val.len(),
    };
    write(&out.join("manifest.json"), &pretty(&manifest))?;
    println!(
        "wrote {} + {} demonstrations ({} + {} samples) to {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.train_samples,
        manifest.val_samples,
        out.display()
    );
    Ok(())
}

// train

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by gen-demos.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Option<AblationVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}
seeded_args!(TrainArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCliConfig {
    data: Option<PathBuf>,
    variant: AblationVariant,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let t = TrainConfig::desk(0);
        Self {
            data: None,
            variant: AblationVariant::Full,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: 0,
            out: None,
        }
    }
}

fn train(cfg: TrainCliConfig) -> Result<()> {
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    if cfg.batch_size < 2 || cfg.epochs == 0 {
        return Err(usage("--batch-size must be at least 2 and --epochs positive"));
    }
    let manifest: Manifest = serde_json::from_str(&read(&data.join("manifest.json"))?)
        .map_err(|e| CliError::Op(anyhow!("manifest.json: {e}")))?;
    let path = data.join("samples.bin");
    let mut file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_samples(&mut file).map_err(|e| CliError::Op(e.into()))?;
    if samples.fov_len != manifest.features.fov_len() {
        return Err(CliError::Op(anyhow!("samples.bin does not match the manifest's feature configuration")));
    }
    if samples.train.is_empty() || samples.val.is_empty() {
        return Err(CliError::Op(anyhow!("dataset needs both training and validation samples")));
    }
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        loss: LossWeights::default(),
        seed: cfg.seed,
    };
    let clock = Instant::now();
    let (entry, report) = train_variant(cfg.variant, manifest.features, &samples.train, &samples.val, &tc);
    log::info!("trained in {:.1}s", clock.elapsed().as_secs_f64());
    let training = json!({
        "command": "train",
        "config": cfg,
        "train": tc,
        "variant": cfg.variant,
        "features": manifest.features,
        "report": report,
    });
    write(&out, &save_checkpoint(&entry.model, training))?;
    println!(
        "{}: best validation loss {:.5} at epoch {}; indicator accuracy {:.3} -> {:.3}",
        cfg.variant,
        report.best_val_loss,
        report.best_epoch,
        report.indicator_accuracy_before,
        report.indicator_accuracy_after
    );
    Ok(())
}

/// `label=path` or a bare path labelled by the checkpoint's variant.
fn load_models(specs: &[String]) -> Result<Vec<ModelEntry>> {
    let mut out: Vec<ModelEntry> = Vec::new();
    for spec in specs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(spec)),
        };
        let (model, training) =
            load_checkpoint(&read(&path)?, None).map_err(|e| CliError::Op(anyhow!("{}: {e}", path.display())))?;
        let features: FeatureConfig = serde_json::from_value(training["features"].clone())
            .map_err(|_| CliError::Op(anyhow!("{}: checkpoint lacks its feature configuration", path.display())))?;
        let label = label.unwrap_or_else(|| {
            serde_json::from_value::<AblationVariant>(training["variant"].clone())
                .map(|v| v.model_label().to_string())
                .unwrap_or_else(|_| "full".into())
        });
        if out.iter().any(|m| m.label == label) {
            return Err(usage(format!("model label `{label}` given twice")));
        }
        out.push(ModelEntry { label, model, features });
    }
    Ok(out)
}

// build-roadmap

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum MethodKind {
    Ctrm,
    Random,
    Grid,
    Square,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildRoadmapArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodKind>,
    /// Sampler checkpoint (ctrm only).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    density: Option<Density>,
    /// Always use the learned sampler (ctrm only).
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_random_walk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}
seeded_args!(BuildRoadmapArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BuildRoadmapConfig {
    instance: Option<PathBuf>,
    method: MethodKind,
    model: Option<String>,
    n_traj: usize,
    samples: usize,
    side: usize,
    density: Density,
    no_random_walk: bool,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for BuildRoadmapConfig {
    fn default() -> Self {
        Self {
            instance: None,
            method: MethodKind::Ctrm,
            model: None,
            n_traj: 25,
            samples: 3000,
            side: 32,
            density: Density::Low,
            no_random_walk: false,
            seed: 0,
            out: None,
        }
    }
}

fn build_roadmap(cfg: BuildRoadmapConfig, jobs: usize) -> Result<()> {
    let inst = load_instance_file(&required(&cfg.instance, "instance")?)?;
    let out = required(&cfg.out, "out")?;
    let (method, models) = match cfg.method {
        MethodKind::Ctrm => {
            let spec = cfg.model.clone().ok_or_else(|| usage("--method ctrm needs --model"))?;
            let mut models = load_models(&[spec])?;
            models[0].label = "full".into();
            (Method::Ctrm { n_traj: cfg.n_traj, model: "full".into(), random_walk: !cfg.no_random_walk }, models)
        }
        MethodKind::Random => (Method::Random { samples: cfg.samples }, vec![]),
        MethodKind::Grid if cfg.side < 2 => return Err(usage("--side must be at least 2")),
        MethodKind::Grid => (Method::Grid { side: cfg.side }, vec![]),
        MethodKind::Square => (Method::Square { density: cfg.density }, vec![]),
    };
    if let Method::Ctrm { n_traj: 0, .. } = method {
        return Err(usage("--n-traj must be at least 1"));
    }
    let clock = Instant::now();
    let built = build_roadmaps(&inst, &method, &models, cfg.seed, exec(jobs)).map_err(|e| CliError::Op(anyhow!(e)))?;
    let ms = clock.elapsed().as_secs_f64() * 1e3;
    let file = built.to_file(&method, json!({"command": "build-roadmap", "config": cfg}));
    write(&out, &file.to_json())?;
    println!(
        "{}: {} roadmaps, {:.1} vertices per agent per timestep, {ms:.0} ms",
        method.id(),
        file.roadmaps.len(),
        built.vertices_per_agent_per_timestep()
    );
    if let ctrm_core::pipeline::BuiltRoadmaps::Timed(b) = &built {
        if let Err(e) = b.status() {
            eprintln!("warning: {e}");
        }
    }
    Ok(())
}

// plan

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    roadmap: Option<PathBuf>,
    #[arg(long)]
    max_expansions: Option<u64>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    #[arg(long)]
    horizon_factor: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlanConfig {
    instance: Option<PathBuf>,
    roadmap: Option<PathBuf>,
    max_expansions: Option<u64>,
    time_limit_ms: Option<u64>,
    horizon_factor: usize,
    out: Option<PathBuf>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let l = PlanLimits::default();
        Self {
            instance: None,
            roadmap: None,
            max_expansions: l.max_expansions,
            time_limit_ms: l.time_limit_ms,
            horizon_factor: l.horizon_factor,
            out: None,
        }
    }
}

enum Loaded {
    Timed(Vec<TimedRoadmap>),
    Static(Vec<StaticRoadmap>),
}

fn plan(cfg: PlanConfig) -> Result<()> {
    let inst = load_instance_file(&required(&cfg.instance, "instance")?)?;
    let rpath = required(&cfg.roadmap, "roadmap")?;
    let set = RoadmapSetFile::from_json(&read(&rpath)?).map_err(|e| CliError::Op(anyhow!("{}: {e}", rpath.display())))?;
    if set.assignment.len() != inst.num_agents() {
        return Err(CliError::Op(anyhow!("roadmap file covers {} agents, instance has {}", set.assignment.len(), inst.num_agents())));
    }
    let limits = PlanLimits {
        max_expansions: cfg.max_expansions,
        time_limit_ms: cfg.time_limit_ms,
        horizon_factor: cfg.horizon_factor,
        ..PlanLimits::default()
    };
    let timed = set.roadmaps.iter().all(|r| r.kind == "timed");
    let bad = |e: ctrm_core::roadmap::DumpError| CliError::Op(anyhow!("{}: {e}", rpath.display()));
    let loaded = if timed {
        Loaded::Timed(set.roadmaps.iter().cloned().map(|r| r.into_timed()).collect::<std::result::Result<_, _>>().map_err(bad)?)
    } else {
        Loaded::Static(set.roadmaps.iter().cloned().map(|r| r.into_static()).collect::<std::result::Result<_, _>>().map_err(bad)?)
    };
    let views: Vec<GraphView> = match &loaded {
        Loaded::Timed(ds) => set.assignment.iter().map(|&k| GraphView::Timed(&ds[k])).collect(),
        Loaded::Static(ms) => {
            let h = static_horizon(&inst, limits.horizon_resolution, limits.horizon_factor);
            set.assignment
                .iter()
                .enumerate()
                .map(|(i, &k)| GraphView::for_static(&ms[k], i, h).ok_or_else(|| CliError::Op(anyhow!("roadmap {k} has no terminals for agent {i}"))))
                .collect::<Result<_>>()?
        }
    };
    let clock = Instant::now();
    let outcome = prioritized_planning(&inst, &views, &limits);
    let wall = clock.elapsed().as_secs_f64() * 1e3;
    let embedded = json!({"command": "plan", "config": cfg});
    let (file, failure) = match &outcome.result {
        Ok(sol) => {
            let metrics = SolutionMetrics {
                success: true,
                sum_of_costs: Some(sum_of_costs(&inst, sol)),
                makespan: Some(sol.makespan()),
                expanded_nodes: outcome.expanded,
                wall_time_ms: Some(wall),
                failure: None,
            };
            (SolutionFile::from_solution(sol, metrics, embedded), None)
        }
        Err(f) => {
            let metrics = SolutionMetrics {
                success: false,
                sum_of_costs: None,
                makespan: None,
                expanded_nodes: outcome.expanded,
                wall_time_ms: Some(wall),
                failure: Some(f.to_string()),
            };
            (SolutionFile { paths: vec![], metrics, config: embedded }, Some(*f))
        }
    };
    if let Some(out) = &cfg.out {
        write(out, &pretty(&file))?;
    }
    match failure {
        None => {
            println!(
                "solved: sum of costs {}, makespan {}, {} nodes expanded",
                file.metrics.sum_of_costs.unwrap(),
                file.metrics.makespan.unwrap(),
                outcome.expanded
            );
            Ok(())
        }
        Some(f) => Err(CliError::Op(anyhow!("{f} ({} nodes expanded)", outcome.expanded))),
    }
}

// evaluate / ablate

fn load_suite(dir: &Path) -> Result<Vec<BenchInstance>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Op(anyhow!("no instance files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(BenchInstance {
                id: p.file_stem().unwrap().to_string_lossy().into_owned(),
                instance: load_instance_file(p)?,
            })
        })
        .collect()
}

/// `ctrm:25[:label]`, `random:3000`, `grid:32` or `square:low`.
fn parse_method(s: &str) -> Result<Method> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |k: usize| -> Result<usize> {
        parts.get(k).ok_or_else(|| usage(format!("method `{s}` lacks a size")))?.parse().map_err(|_| usage(format!("bad size in method `{s}`")))
    };
    let m = match parts[0] {
        "ctrm" => Method::Ctrm {
            n_traj: num(1)?,
            model: parts.get(2).copied().unwrap_or("full").into(),
            random_walk: parts.get(3) != Some(&"no_random_walk"),
        },
        "random" => Method::Random { samples: num(1)? },
        "grid" => Method::Grid { side: num(1)? },
        "square" => Method::Square {
            density: parts.get(1).copied().unwrap_or("low").parse().map_err(|e: String| usage(e))?,
        },
        other => return Err(usage(format!("unknown method `{other}`"))),
    };
    match m {
        Method::Ctrm { n_traj: 0, .. } | Method::Random { samples: 0 } => Err(usage(format!("method `{s}` needs a positive size"))),
        Method::Grid { side } if side < 2 => Err(usage("grid side must be at least 2")),
        m => Ok(m),
    }
}

fn write_metrics(out: &Path, aggregate_out: Option<&Path>, records: &[MetricsRecord], threshold: f64, embedded: Value) -> Result<()> {
    write(out, &metrics_jsonl(records))?;
    let mut run = out.as_os_str().to_owned();
    run.push(".run.json");
    write(Path::new(&run), &pretty(&embedded))?;
    let agg = aggregate(records, threshold);
    if let Some(p) = aggregate_out {
        write(p, &pretty(&json!({"config": embedded, "aggregate": agg})))?;
    }
    for m in &agg.methods {
        println!(
            "{:<32} success {:>5.1}%  cost/agent {:>8}  expanded/agent {:>10}",
            m.method,
            100.0 * m.success_rate,
            m.cost_per_agent.map_or("-".into(), |c| format!("{c:.2}")),
            m.expanded_per_agent.map_or("-".into(), |c| format!("{c:.1}")),
        );
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory of instance files.
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Methods such as `ctrm:25`, `random:3000`, `grid:32`, `square:low`.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Sampler checkpoints as `label=path` or `path`.
    #[arg(long = "model")]
    models: Option<Vec<String>>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_expansions: Option<u64>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    /// Leave timings out of the metrics for byte-identical reruns.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_timings: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    aggregate: Option<PathBuf>,
}
seeded_args!(EvaluateArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    instances: Option<PathBuf>,
    methods: Vec<String>,
    models: Vec<String>,
    threshold: f64,
    max_expansions: Option<u64>,
    time_limit_ms: Option<u64>,
    no_timings: bool,
    seed: u64,
    out: Option<PathBuf>,
    aggregate: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            instances: None,
            methods: vec!["ctrm:25".into(), "random:3000".into()],
            models: vec![],
            threshold: 0.7,
            max_expansions: PlanLimits::default().max_expansions,
            time_limit_ms: None,
            no_timings: false,
            seed: 0,
            out: None,
            aggregate: None,
        }
    }
}

fn limits_of(max_expansions: Option<u64>, time_limit_ms: Option<u64>) -> PlanLimits {
    PlanLimits { max_expansions, time_limit_ms, ..PlanLimits::default() }
}

fn timing(no_timings: bool) -> Timing {
    if no_timings {
        Timing::Omit
    } else {
        Timing::Record
    }
}

fn evaluate(cfg: EvaluateConfig, jobs: usize) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let methods = cfg.methods.iter().map(|s| parse_method(s)).collect::<Result<Vec<_>>>()?;
    let models = load_models(&cfg.models)?;
    for m in &methods {
        if let Method::Ctrm { model, .. } = m {
            if !models.iter().any(|e| &e.label == model) {
                return Err(usage(format!("method {} needs a model labelled `{model}`", m.id())));
            }
        }
    }
    let suite = load_suite(&required(&cfg.instances, "instances")?)?;
    let limits = limits_of(cfg.max_expansions, cfg.time_limit_ms);
    let records = run_benchmark(&suite, &methods, &models, &limits, cfg.seed, timing(cfg.no_timings), exec(jobs));
    let embedded = json!({"command": "evaluate", "config": cfg});
    write_metrics(&out, cfg.aggregate.as_deref(), &records, cfg.threshold, embedded)
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Checkpoints as `label=path` or `path`; labels are full, no_comm, no_ind.
    #[arg(long = "model")]
    models: Option<Vec<String>>,
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Option<Vec<AblationVariant>>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_expansions: Option<u64>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_timings: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    aggregate: Option<PathBuf>,
}
seeded_args!(AblateArgs);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblateConfig {
    instances: Option<PathBuf>,
    models: Vec<String>,
    variants: Vec<AblationVariant>,
    n_traj: usize,
    threshold: f64,
    max_expansions: Option<u64>,
    time_limit_ms: Option<u64>,
    no_timings: bool,
    seed: u64,
    out: Option<PathBuf>,
    aggregate: Option<PathBuf>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            instances: None,
            models: vec![],
            variants: AblationVariant::ALL.to_vec(),
            n_traj: 25,
            threshold: 0.0,
            max_expansions: PlanLimits::default().max_expansions,
            time_limit_ms: None,
            no_timings: false,
            seed: 0,
            out: None,
            aggregate: None,
        }
    }
}

fn ablate(cfg: AblateConfig, jobs: usize) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    if cfg.n_traj == 0 {
        return Err(usage("--n-traj must be at least 1"));
    }
    let models = load_models(&cfg.models)?;
    for v in &cfg.variants {
        if !models.iter().any(|m| m.label == v.model_label()) {
            return Err(usage(format!("variant {v} needs a model labelled `{}`", v.model_label())));
        }
    }
    let suite = load_suite(&required(&cfg.instances, "instances")?)?;
    let limits = limits_of(cfg.max_expansions, cfg.time_limit_ms);
    let mut records = Vec::new();
    for &v in &cfg.variants {
        records.extend(run_ablation(v, &suite, &models, cfg.n_traj, &limits, cfg.seed, timing(cfg.no_timings), exec(jobs)));
    }
    let embedded = json!({"command": "ablate", "config": cfg});
    write_metrics(&out, cfg.aggregate.as_deref(), &records, cfg.threshold, embedded)
}

// validate

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateConfig {
    instance: Option<PathBuf>,
    solution: Option<PathBuf>,
}

fn validate(cfg: ValidateConfig) -> Result<()> {
    let inst = load_instance_file(&required(&cfg.instance, "instance")?)?;
    let spath = required(&cfg.solution, "solution")?;
    let file: SolutionFile =
        serde_json::from_str(&read(&spath)?).map_err(|e| CliError::Op(anyhow!("{}: {e}", spath.display())))?;
    if !file.metrics.success {
        return Err(CliError::Op(anyhow!("solution file records a failed run: {}", file.metrics.failure.unwrap_or_default())));
    }
    let report = validate_solution(&inst, &file.solution());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::Op(anyhow!("{} violations", report.violations.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings() {
        assert_eq!(parse_method("ctrm:25").unwrap(), Method::Ctrm { n_traj: 25, model: "full".into(), random_walk: true });
        assert_eq!(
            parse_method("ctrm:10:no_comm").unwrap(),
            Method::Ctrm { n_traj: 10, model: "no_comm".into(), random_walk: true }
        );
        assert_eq!(parse_method("square:high").unwrap(), Method::Square { density: Density::High });
        assert_eq!(parse_method("grid:32").unwrap(), Method::Grid { side: 32 });
        for bad in ["ctrm", "ctrm:0", "grid:1", "walk:3", "random:x", "square:dense"] {
            assert!(matches!(parse_method(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
