use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use psn_game::harness::{
    self, generate_dataset, generate_scenario, run_monte_carlo, runs_to_csv, summary_to_csv,
    DatasetConfig, MethodResources, MonteCarloConfig, ScenarioConfig, Task,
};
use psn_game::metrics::MetricConfig;
use psn_game::nn::{
    load_params, save_params, train_gin, train_psn, Dataset, EncoderKind, NetworkParams, PsnTask,
    TrainConfig,
};
use psn_game::plot::render_trace_svg;
use psn_game::rollout::{plan, predict, GoalSource, RolloutConfig, RolloutTrace, Selector};
use psn_game::selection::{MethodSpec, SelectionParams};
use psn_game::solver::SolverConfig;
use psn_game::{GameSpec, ObservationKind};

use crate::manifest::{load_config_value, ManifestBuilder};
use crate::ValidationError;

fn ensure_out_dir(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(())
}

fn parse_task(s: &str) -> anyhow::Result<Task> {
    match s {
        "prediction" => Ok(Task::Prediction),
        "planning" => Ok(Task::Planning),
        other => Err(ValidationError(format!("unknown task `{other}`")).into()),
    }
}

fn parse_goal_source(s: &str) -> anyhow::Result<GoalSource> {
    match s {
        "ground_truth" => Ok(GoalSource::GroundTruth),
        "gin" => Ok(GoalSource::Gin),
        other => Err(ValidationError(format!("unknown goal source `{other}`")).into()),
    }
}

fn parse_encoder(s: &str) -> anyhow::Result<EncoderKind> {
    match s {
        "flatten_mlp" => Ok(EncoderKind::FlattenMlp),
        "gru" => Ok(EncoderKind::Gru),
        other => Err(ValidationError(format!("unknown encoder `{other}`")).into()),
    }
}

fn parse_observation(s: &str) -> anyhow::Result<ObservationKind> {
    match s {
        "full" => Ok(ObservationKind::Full),
        "partial" => Ok(ObservationKind::Partial),
        other => Err(ValidationError(format!("unknown observation kind `{other}`")).into()),
    }
}

fn parse_methods(specs: &str) -> anyhow::Result<Vec<SelectionParams>> {
    specs
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok(SelectionParams::new(MethodSpec::parse(s)?)))
        .collect()
}

fn load_checkpoint(path: &Path) -> anyhow::Result<NetworkParams> {
    load_params(path)
        .map_err(|e| ValidationError(format!("checkpoint {}: {e}", path.display())).into())
}

fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("PSN_GAME_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Merge precedence: CLI flag beats config file beats default.
macro_rules! merge {
    ($cfg:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $field { $cfg.$field = v; })+
    };
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub agents: usize,
    pub count: usize,
    pub seed: u64,
    pub rollout_steps: usize,
    pub observation_steps: usize,
    pub stride: usize,
    pub horizon: usize,
    pub all_egos: bool,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            agents: 4,
            count: 50,
            seed: 0,
            rollout_steps: 50,
            observation_steps: 10,
            stride: 10,
            horizon: 10,
            all_egos: false,
        }
    }
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rollout_steps: Option<usize>,
    #[arg(long)]
    observation_steps: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    all_egos: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

pub fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let mut cfg: GenDataConfig = match &args.config {
        Some(path) => serde_json::from_value(load_config_value(path)?)
            .map_err(|e| ValidationError(format!("config: {e}")))?,
        None => GenDataConfig::default(),
    };
    let GenDataArgs {
        agents, count, seed, rollout_steps, observation_steps, stride, horizon, ..
    } = args;
    merge!(cfg, agents, count, seed, rollout_steps, observation_steps, stride, horizon);
    if args.all_egos {
        cfg.all_egos = true;
    }

    let scenario = ScenarioConfig { horizon: cfg.horizon, ..ScenarioConfig::for_agents(cfg.agents) }
        .with_seed(cfg.seed);
    let dataset_cfg = DatasetConfig {
        count: cfg.count,
        rollout_steps: cfg.rollout_steps,
        observation_steps: cfg.observation_steps,
        stride: cfg.stride,
        all_egos: cfg.all_egos,
        ..DatasetConfig::default()
    };
    let dataset = generate_dataset(&scenario, &dataset_cfg, &SolverConfig::default())?;

    ensure_out_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("gen-data", serde_json::to_value(&cfg)?).seed(cfg.seed);
    let data_path = args.out.join("dataset.json");
    std::fs::write(&data_path, dataset.to_json())?;
    manifest.output(&data_path);
    manifest.write(&args.out)?;
    println!("wrote {} samples to {}", dataset.samples.len(), data_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub network: String,
    pub task: String,
    pub data: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoder: String,
    pub observation: String,
    pub dropout: f64,
    pub momentum: f64,
    pub sigma_sparsity: Option<f64>,
    pub sigma_task: Option<f64>,
    pub json_checkpoint: bool,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        Self {
            network: "psn".into(),
            task: "prediction".into(),
            data: "dataset.json".into(),
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            encoder: "flatten_mlp".into(),
            observation: "full".into(),
            dropout: 0.3,
            momentum: 0.0,
            sigma_sparsity: None,
            sigma_task: None,
            json_checkpoint: false,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Network to train: `gin` or `psn`.
    network: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    observation: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    sigma_sparsity: Option<f64>,
    #[arg(long)]
    sigma_task: Option<f64>,
    /// Write the checkpoint as JSON instead of the binary format.
    #[arg(long)]
    json_checkpoint: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainCliConfig = match &args.config {
        Some(path) => serde_json::from_value(load_config_value(path)?)
            .map_err(|e| ValidationError(format!("config: {e}")))?,
        None => TrainCliConfig::default(),
    };
    if let Some(n) = &args.network {
        cfg.network = n.clone();
    }
    let TrainArgs {
        task,
        epochs,
        batch_size,
        learning_rate,
        seed,
        encoder,
        observation,
        dropout,
        momentum,
        ..
    } = &args;
    let task = task.clone();
    let encoder = encoder.clone();
    let observation = observation.clone();
    let (epochs, batch_size, learning_rate, seed, dropout, momentum) =
        (*epochs, *batch_size, *learning_rate, *seed, *dropout, *momentum);
    merge!(cfg, task, epochs, batch_size, learning_rate, seed, encoder, observation, dropout, momentum);
    if let Some(d) = &args.data {
        cfg.data = d.display().to_string();
    }
    if let Some(s) = args.sigma_sparsity {
        cfg.sigma_sparsity = Some(s);
    }
    if let Some(s) = args.sigma_task {
        cfg.sigma_task = Some(s);
    }
    if args.json_checkpoint {
        cfg.json_checkpoint = true;
    }

    let task = match cfg.task.as_str() {
        "prediction" => PsnTask::Prediction,
        "planning" => PsnTask::Planning,
        other => return Err(ValidationError(format!("unknown task `{other}`")).into()),
    };
    let data_path = PathBuf::from(&cfg.data);
    let text = std::fs::read_to_string(&data_path)
        .map_err(|e| ValidationError(format!("cannot read dataset {}: {e}", data_path.display())))?;
    let dataset = Dataset::from_json(&text)?;

    let mut train_cfg = match task {
        PsnTask::Prediction => TrainConfig::prediction(),
        PsnTask::Planning => TrainConfig::planning(),
    };
    train_cfg.epochs = cfg.epochs;
    train_cfg.batch_size = cfg.batch_size;
    train_cfg.learning_rate = cfg.learning_rate;
    train_cfg.seed = cfg.seed;
    train_cfg.encoder = parse_encoder(&cfg.encoder)?;
    train_cfg.observation = parse_observation(&cfg.observation)?;
    train_cfg.dropout = cfg.dropout;
    train_cfg.momentum = cfg.momentum;
    if let Some(s) = cfg.sigma_sparsity {
        train_cfg.sigma_sparsity = s;
    }
    if let Some(s) = cfg.sigma_task {
        train_cfg.sigma_task = s;
    }

    ensure_out_dir(&args.out)?;
    let ext = if cfg.json_checkpoint { "json" } else { "ckpt" };
    let ckpt_path = args.out.join(format!("{}.{ext}", cfg.network));
    let curve_path = args.out.join("loss_curve.csv");

    let mut manifest = ManifestBuilder::new("train", serde_json::to_value(&cfg)?)
        .seed(cfg.seed)
        .input(&data_path);

    match cfg.network.as_str() {
        "gin" => {
            let trained = train_gin(&dataset, &train_cfg)?;
            save_params(&ckpt_path, &trained.params)?;
            let mut csv = String::from("epoch,loss\n");
            for r in &trained.history {
                csv.push_str(&format!("{},{}\n", r.epoch, r.loss));
            }
            std::fs::write(&curve_path, csv)?;
        }
        "psn" => {
            let trained = train_psn(&dataset, task, &train_cfg, &SolverConfig::default())?;
            save_params(&ckpt_path, &trained.params)?;
            let mut csv = String::from("epoch,total,binary,sparsity,task,skipped\n");
            for r in &trained.history {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.epoch, r.total, r.binary, r.sparsity, r.task, r.skipped
                ));
            }
            std::fs::write(&curve_path, csv)?;
        }
        other => return Err(ValidationError(format!("unknown network `{other}`")).into()),
    }

    manifest.output(&ckpt_path);
    manifest.output(&curve_path);
    manifest.write(&args.out)?;
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub task: String,
    pub agents: usize,
    pub count: usize,
    pub seed: u64,
    pub resamples: usize,
    pub methods: Vec<String>,
    pub observation_steps: usize,
    pub horizon: usize,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub reference_speed: f64,
    pub goal_source: String,
    pub psn: Option<String>,
    pub gin: Option<String>,
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: "prediction".into(),
            agents: 4,
            count: 50,
            seed: 0,
            resamples: 1000,
            methods: vec!["all".into()],
            observation_steps: 10,
            horizon: 10,
            max_steps: 50,
            goal_radius: 0.1,
            reference_speed: 0.5,
            goal_source: "ground_truth".into(),
            psn: None,
            gin: None,
            workers: None,
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Comma-separated method specs, e.g. `all,knn:1,distance:1.0,psn-rank:1`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    observation_steps: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    goal_source: Option<String>,
    #[arg(long)]
    psn: Option<PathBuf>,
    #[arg(long)]
    gin: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg: EvalConfig = match &args.config {
        Some(path) => serde_json::from_value(load_config_value(path)?)
            .map_err(|e| ValidationError(format!("config: {e}")))?,
        None => EvalConfig::default(),
    };
    let EvalArgs {
        task, agents, count, seed, resamples, observation_steps, horizon, max_steps, goal_source, ..
    } = &args;
    let task = task.clone();
    let goal_source = goal_source.clone();
    let (agents, count, seed, resamples, observation_steps, horizon, max_steps) = (
        *agents,
        *count,
        *seed,
        *resamples,
        *observation_steps,
        *horizon,
        *max_steps,
    );
    merge!(cfg, task, agents, count, seed, resamples, observation_steps, horizon, max_steps, goal_source);
    if let Some(m) = &args.methods {
        cfg.methods = m.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(p) = &args.psn {
        cfg.psn = Some(p.display().to_string());
    }
    if let Some(p) = &args.gin {
        cfg.gin = Some(p.display().to_string());
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }

    let task = parse_task(&cfg.task)?;
    let methods = parse_methods(&cfg.methods.join(","))?;
    if methods.is_empty() {
        return Err(ValidationError("no methods given".into()).into());
    }
    let goal_source = parse_goal_source(&cfg.goal_source)?;
    let resources = MethodResources {
        psn: cfg.psn.as_ref().map(|p| load_checkpoint(Path::new(p))).transpose()?,
        gin: cfg.gin.as_ref().map(|p| load_checkpoint(Path::new(p))).transpose()?,
    };
    for m in &methods {
        if m.method.needs_psn() && resources.psn.is_none() {
            return Err(ValidationError(format!(
                "method {} needs --psn <checkpoint>",
                m.method.label()
            ))
            .into());
        }
    }
    if goal_source == GoalSource::Gin && resources.gin.is_none() {
        return Err(ValidationError("--goal-source gin needs --gin <checkpoint>".into()).into());
    }

    let mc = MonteCarloConfig {
        task,
        count: cfg.count,
        resamples: cfg.resamples,
        seed: cfg.seed,
        rollout: RolloutConfig {
            observation_steps: cfg.observation_steps,
            horizon: cfg.horizon,
            max_steps: cfg.max_steps,
            goal_radius: cfg.goal_radius,
            reference_speed: cfg.reference_speed,
            selection: SelectionParams::new(MethodSpec::All),
            goal_source,
        },
        solver: SolverConfig::default(),
        metric: MetricConfig::default(),
        workers: resolve_workers(cfg.workers),
    };
    let scenario = ScenarioConfig {
        horizon: cfg.horizon,
        ..ScenarioConfig::for_agents(cfg.agents)
    }
    .with_seed(cfg.seed);

    let (records, summary) = run_monte_carlo(&methods, &mc, &scenario, &resources)?;

    ensure_out_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("eval", serde_json::to_value(&cfg)?).seed(cfg.seed);
    let runs_path = args.out.join("runs.csv");
    std::fs::write(&runs_path, runs_to_csv(&records))?;
    manifest.output(&runs_path);
    let summary_path = args.out.join("summary.csv");
    std::fs::write(&summary_path, summary_to_csv(&summary))?;
    manifest.output(&summary_path);
    manifest.write(&args.out)?;
    println!(
        "evaluated {} methods on {} scenarios ({} excluded); wrote {}",
        methods.len(),
        summary.scenario_count,
        summary.excluded_scenarios,
        summary_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sim

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub task: String,
    pub agents: usize,
    pub seed: u64,
    pub ego: usize,
    pub method: String,
    pub scenario: Option<String>,
    pub observation_steps: usize,
    pub horizon: usize,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub reference_speed: f64,
    pub goal_source: String,
    pub psn: Option<String>,
    pub gin: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            task: "planning".into(),
            agents: 4,
            seed: 0,
            ego: 0,
            method: "all".into(),
            scenario: None,
            observation_steps: 10,
            horizon: 10,
            max_steps: 50,
            goal_radius: 0.1,
            reference_speed: 0.5,
            goal_source: "ground_truth".into(),
            psn: None,
            gin: None,
        }
    }
}

#[derive(Args)]
pub struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ego: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    /// Scenario JSON file; a random scenario is generated when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    goal_source: Option<String>,
    #[arg(long)]
    psn: Option<PathBuf>,
    #[arg(long)]
    gin: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

pub fn sim(args: SimArgs) -> anyhow::Result<()> {
    let mut cfg: SimConfig = match &args.config {
        Some(path) => serde_json::from_value(load_config_value(path)?)
            .map_err(|e| ValidationError(format!("config: {e}")))?,
        None => SimConfig::default(),
    };
    let SimArgs { task, agents, seed, ego, method, max_steps, goal_source, .. } = &args;
    let task = task.clone();
    let method = method.clone();
    let goal_source = goal_source.clone();
    let (agents, seed, ego, max_steps) = (*agents, *seed, *ego, *max_steps);
    merge!(cfg, task, agents, seed, ego, method, max_steps, goal_source);
    if let Some(p) = &args.scenario {
        cfg.scenario = Some(p.display().to_string());
    }
    if let Some(p) = &args.psn {
        cfg.psn = Some(p.display().to_string());
    }
    if let Some(p) = &args.gin {
        cfg.gin = Some(p.display().to_string());
    }

    let task = parse_task(&cfg.task)?;
    let method = SelectionParams::new(MethodSpec::parse(&cfg.method)?);
    let goal_source = parse_goal_source(&cfg.goal_source)?;
    let psn = cfg.psn.as_ref().map(|p| load_checkpoint(Path::new(p))).transpose()?;
    let gin = cfg.gin.as_ref().map(|p| load_checkpoint(Path::new(p))).transpose()?;
    if method.method.needs_psn() && psn.is_none() {
        return Err(ValidationError(format!(
            "method {} needs --psn <checkpoint>",
            method.method.label()
        ))
        .into());
    }
    if goal_source == GoalSource::Gin && gin.is_none() {
        return Err(ValidationError("--goal-source gin needs --gin <checkpoint>".into()).into());
    }

    let scene: GameSpec = match &cfg.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ValidationError(format!("cannot read scenario {path}: {e}")))?;
            GameSpec::from_json(&text)?
        }
        None => generate_scenario(
            &ScenarioConfig { horizon: cfg.horizon, ..ScenarioConfig::for_agents(cfg.agents) }
                .with_seed(cfg.seed),
        )?,
    };

    let rollout_cfg = RolloutConfig {
        observation_steps: cfg.observation_steps,
        horizon: cfg.horizon,
        max_steps: cfg.max_steps,
        goal_radius: cfg.goal_radius,
        reference_speed: cfg.reference_speed,
        selection: method.clone(),
        goal_source,
    };
    let selector = match psn.as_ref() {
        Some(net) if method.method.needs_psn() => Selector::psn(method.clone(), net),
        _ => Selector::explicit(method.clone()),
    };
    let solver = SolverConfig::default();

    let trace: RolloutTrace = match task {
        Task::Prediction => {
            let gt = harness::full_game_rollout(
                &scene,
                cfg.observation_steps - 1 + cfg.max_steps,
                rollout_cfg.reference_speed,
                &solver,
            )?;
            predict(&scene, &gt, cfg.ego, &rollout_cfg, &selector, &solver, gin.as_ref())?
        }
        Task::Planning => {
            plan(&scene, cfg.ego, &rollout_cfg, &selector, &solver, gin.as_ref(), None)?
        }
    };

    ensure_out_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("sim", serde_json::to_value(&cfg)?).seed(cfg.seed);
    let scene_path = args.out.join("scenario.json");
    std::fs::write(&scene_path, scene.to_json())?;
    manifest.output(&scene_path);
    let trace_path = args.out.join("trace.jsonl");
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf)?;
    std::fs::write(&trace_path, buf)?;
    manifest.output(&trace_path);
    manifest.write(&args.out)?;
    if let Some(reason) = &trace.meta.truncated {
        eprintln!("warning: trace truncated: {reason}");
    }
    println!("wrote {} ({} steps)", trace_path.display(), trace.steps.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// plot

#[derive(Args)]
pub struct PlotArgs {
    /// Trace file (JSON lines) produced by `sim`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "trace.svg")]
    out: PathBuf,
}

pub fn plot(args: PlotArgs) -> anyhow::Result<()> {
    let file = std::fs::File::open(&args.trace)
        .map_err(|e| ValidationError(format!("cannot read trace {}: {e}", args.trace.display())))?;
    let trace = RolloutTrace::read_jsonl(std::io::BufReader::new(file))?;
    let svg = render_trace_svg(&trace)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_out_dir(dir)?;
        }
    }
    std::fs::write(&args.out, svg)?;
    let manifest_dir = args.out.parent().map(Path::to_path_buf).unwrap_or_else(|| ".".into());
    let mut manifest = ManifestBuilder::new(
        "plot",
        serde_json::json!({ "trace": args.trace.display().to_string() }),
    )
    .input(&args.trace);
    manifest.output(&args.out);
    manifest.write(&manifest_dir)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
