//! Scenario generation, dataset generation, the Monte Carlo benchmark with
//! bootstrap statistics, and the nearest-neighbor candidate pre-filter for
//! scenes larger than a network's training size.

pub mod ingest;

pub use ingest::{export_trajectory_csv, ingest_trajectory_csv, IngestedScene};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, HarnessError};
use crate::game::{
    step_dynamics, AgentState, CostWeights, DynamicsSpec, GameSpec, JointTrajectory,
    ObservationKind, ObservationWindow, Vec2,
};
use crate::metrics::{compute_metrics, MetricConfig, MetricReport};
use crate::nn::{Dataset, NetworkParams, TrainingSample};
use crate::rollout::{plan, predict, RolloutConfig, Selector};
use crate::selection::SelectionParams;
use crate::solver::{solve_olne, SolverConfig};

/// Random-scene parameters: the arena, spacing constraints and game
/// constants. Positions are sampled uniformly in the axis-aligned arena
/// centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    /// Arena side lengths in meters.
    pub arena: [f64; 2],
    /// Minimum initial pairwise spacing in meters.
    pub min_spacing: f64,
    /// Minimum start-to-goal distance in meters.
    pub min_goal_distance: f64,
    pub weights: CostWeights,
    pub dt: f64,
    /// Inner game horizon T.
    pub horizon: usize,
    pub seed: u64,
    /// Rejection-sampling attempt cap per point.
    pub max_attempts: usize,
}

impl ScenarioConfig {
    /// Benchmark defaults: 5×5 m arena for 4 agents, 7×7 m for larger scenes.
    pub fn for_agents(n_agents: usize) -> Self {
        let side = if n_agents <= 4 { 5.0 } else { 7.0 };
        Self {
            n_agents,
            arena: [side, side],
            min_spacing: 0.5,
            min_goal_distance: 2.0,
            weights: CostWeights::benchmark(),
            dt: 0.1,
            horizon: 10,
            seed: 0,
            max_attempts: 10_000,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Sample one scenario: initial positions uniform in the arena subject to
/// the pairwise spacing, zero initial velocities, goals uniform subject to
/// the start-goal distance. Deterministic in the seed.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<GameSpec, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = [config.arena[0] / 2.0, config.arena[1] / 2.0];
    let sample_point =
        |rng: &mut ChaCha8Rng| Vec2::new(rng.random_range(-half[0]..half[0]), rng.random_range(-half[1]..half[1]));

    let mut positions: Vec<Vec2> = Vec::with_capacity(config.n_agents);
    for _ in 0..config.n_agents {
        let mut attempts = 0;
        loop {
            let p = sample_point(&mut rng);
            if positions.iter().all(|q| (p - q).norm() >= config.min_spacing) {
                positions.push(p);
                break;
            }
            attempts += 1;
            if attempts >= config.max_attempts {
                return Err(HarnessError::SamplingBudget { attempts });
            }
        }
    }
    let mut goals: Vec<Vec2> = Vec::with_capacity(config.n_agents);
    for p in &positions {
        let mut attempts = 0;
        loop {
            let g = sample_point(&mut rng);
            if (g - p).norm() >= config.min_goal_distance {
                goals.push(g);
                break;
            }
            attempts += 1;
            if attempts >= config.max_attempts {
                return Err(HarnessError::SamplingBudget { attempts });
            }
        }
    }

    Ok(GameSpec::new(
        DynamicsSpec { dt: config.dt, horizon: config.horizon },
        vec![config.weights; config.n_agents],
        positions.into_iter().map(|p| AgentState { position: p, velocity: Vec2::zeros() }).collect(),
        goals,
    )?)
}

/// Simulate every agent playing the full game in receding horizon for
/// `steps` steps; the data-generating process behind datasets and prediction
/// ground truth. References are paced at `reference_speed` (see
/// [`crate::rollout::paced_goals`]). Returns all joint states (length
/// steps+1) and controls.
pub fn full_game_rollout(
    scene: &GameSpec,
    steps: usize,
    reference_speed: f64,
    solver: &SolverConfig,
) -> Result<JointTrajectory, HarnessError> {
    let mut states = vec![scene.initial_states.clone()];
    let mut controls: Vec<Vec<crate::game::Control>> = Vec::with_capacity(steps);
    let mut warm: Option<JointTrajectory> = None;
    for _ in 0..steps {
        let current = states.last().unwrap().clone();
        let mut game = scene.clone();
        game.initial_states = current.clone();
        game.goals = crate::rollout::paced_goals(
            &current,
            &scene.goals,
            reference_speed,
            scene.horizon(),
            scene.dt(),
        );
        let warm_shifted = warm.as_ref().and_then(|w| {
            let mut c = w.controls[1..].to_vec();
            c.push(w.controls.last()?.clone());
            JointTrajectory::rollout(&current, &c, game.dt()).ok()
        });
        let sol = solve_olne(&game, None, warm_shifted.as_ref(), solver, None)?;
        if !sol.converged {
            return Err(HarnessError::Rollout(format!(
                "full-game data rollout did not converge (residual {:.3e})",
                sol.final_kkt_residual
            )));
        }
        let first = sol.trajectory.controls[0].clone();
        let next: Vec<AgentState> = current
            .iter()
            .zip(&first)
            .map(|(s, c)| step_dynamics(s, c, game.dt()).expect("finite step"))
            .collect();
        warm = Some(sol.trajectory);
        states.push(next);
        controls.push(first);
    }
    Ok(JointTrajectory { states, controls })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Number of scenarios to simulate.
    pub count: usize,
    /// Rollout length per scenario in steps.
    pub rollout_steps: usize,
    /// Observation window length K+1.
    pub observation_steps: usize,
    /// Window start stride; one window every this many steps.
    pub stride: usize,
    /// Emit one sample per agent per window instead of round-robin egos.
    pub all_egos: bool,
    /// Reference pacing used by the data-generating rollouts.
    pub reference_speed: f64,
    /// Permitted fraction of non-convergent scenarios before erroring.
    pub max_drop_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 50,
            rollout_steps: 50,
            observation_steps: 10,
            stride: 10,
            all_egos: false,
            reference_speed: 0.5,
            max_drop_fraction: 0.1,
        }
    }
}

/// Generate a training dataset from full-game receding-horizon rollouts:
/// scenarios are sampled from `scenario` (seed + index), each rollout is cut
/// into observation windows with the game snapshot at the prediction instant
/// and the realized future. Non-convergent scenarios are dropped and counted.
pub fn generate_dataset(
    scenario: &ScenarioConfig,
    config: &DatasetConfig,
    solver: &SolverConfig,
) -> Result<Dataset, HarnessError> {
    let t = scenario.horizon;
    let k_obs = config.observation_steps;
    if config.rollout_steps + 1 < k_obs + t + 1 {
        return Err(HarnessError::Parse(
            "rollout too short for one observation window plus horizon".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut dropped = 0usize;
    let mut ego_cursor = 0usize;
    for i in 0..config.count {
        let cfg = scenario.clone().with_seed(scenario.seed.wrapping_add(i as u64));
        let scene = generate_scenario(&cfg)?;
        let rollout = match full_game_rollout(&scene, config.rollout_steps, config.reference_speed, solver) {
            Ok(r) => r,
            Err(HarnessError::Rollout(_)) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut start = 0;
        while start + k_obs + t <= config.rollout_steps + 1 {
            let window_frames = rollout.states[start..start + k_obs].to_vec();
            let instant = start + k_obs - 1;
            // The snapshot is exactly the game the data-generating rollout
            // solved at this instant: references paced toward the goals.
            let snapshot = GameSpec {
                n_agents: scene.n_agents,
                dynamics: DynamicsSpec { dt: scenario.dt, horizon: t },
                weights: scene.weights.clone(),
                initial_states: rollout.states[instant].clone(),
                goals: crate::rollout::paced_goals(
                    &rollout.states[instant],
                    &scene.goals,
                    config.reference_speed,
                    t,
                    scenario.dt,
                ),
            };
            let future = rollout.states[instant + 1..=instant + t].to_vec();
            let egos: Vec<usize> = if config.all_egos {
                (0..scene.n_agents).collect()
            } else {
                let e = ego_cursor % scene.n_agents;
                ego_cursor += 1;
                vec![e]
            };
            for ego in egos {
                samples.push(TrainingSample {
                    observation: ObservationWindow {
                        kind: ObservationKind::Full,
                        frames: window_frames.clone(),
                    },
                    ego,
                    goals: scene.goals.clone(),
                    snapshot: snapshot.clone(),
                    future_states: future.clone(),
                });
            }
            start += config.stride.max(1);
        }
    }
    if (dropped as f64) > config.max_drop_fraction * config.count as f64 {
        return Err(HarnessError::DropRate {
            dropped,
            total: config.count,
            permitted_percent: (config.max_drop_fraction * 100.0) as u32,
        });
    }
    let dataset = Dataset {
        n_agents: scenario.n_agents,
        window: k_obs,
        horizon: t,
        samples,
    };
    dataset.validate().map_err(HarnessError::Train)?;
    Ok(dataset)
}

/// The `budget` nearest agents to the ego by Euclidean distance, ascending
/// original index on ties; all others when the budget covers everyone.
pub fn prefilter_candidates(
    positions: &[Vec2],
    ego: usize,
    budget: usize,
) -> Result<Vec<usize>, GameError> {
    if ego >= positions.len() {
        return Err(GameError::IndexOutOfRange { index: ego, len: positions.len() });
    }
    if budget == 0 {
        return Err(GameError::BadParameter("pre-filter budget must be >= 1".into()));
    }
    let mut others: Vec<usize> = (0..positions.len()).filter(|&j| j != ego).collect();
    others.sort_by(|&a, &b| {
        let da = (positions[a] - positions[ego]).norm();
        let db = (positions[b] - positions[ego]).norm();
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    others.truncate(budget);
    others.sort_unstable();
    Ok(others)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Prediction,
    Planning,
}

impl Task {
    /// The metric columns the bootstrap summary reports, mirroring the
    /// benchmark tables.
    pub fn summary_metrics(self) -> &'static [&'static str] {
        match self {
            Task::Prediction => &["ade", "fde", "consistency", "mean_selected_players"],
            Task::Planning => &[
                "nav_cost",
                "col_cost",
                "ctrl_cost",
                "traj_smoothness",
                "traj_length",
                "consistency",
                "min_distance",
                "mean_selected_players",
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub scenario: usize,
    pub seed: u64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub metric: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub cells: Vec<SummaryCell>,
}

/// Bootstrapped per-method metric means and standard errors over a paired
/// scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub task: Task,
    pub scenario_count: usize,
    pub resamples: usize,
    pub excluded_scenarios: usize,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub task: Task,
    /// Scenario count.
    pub count: usize,
    /// Bootstrap resample count B.
    pub resamples: usize,
    pub seed: u64,
    pub rollout: RolloutConfig,
    pub solver: SolverConfig,
    pub metric: MetricConfig,
    /// Worker threads for the scenario × method fan-out (results are
    /// deterministic regardless of the count).
    pub workers: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            task: Task::Prediction,
            count: 50,
            resamples: 1000,
            seed: 0,
            rollout: RolloutConfig::default(),
            solver: SolverConfig::default(),
            metric: MetricConfig::default(),
            workers: 1,
        }
    }
}

/// Checkpoints available to PSN/GIN-backed methods.
#[derive(Default)]
pub struct MethodResources {
    pub psn: Option<NetworkParams>,
    pub gin: Option<NetworkParams>,
}

/// Deterministic indexed fan-out: applies `f` to 0..n on `workers` threads
/// and returns results in index order regardless of scheduling.
pub fn parallel_map_indexed<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let slot_refs: Vec<std::sync::Mutex<&mut Option<T>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                **slot_refs[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}

/// Evaluate every method on the same scenario list (paired design, shared
/// seeds). A scenario on which any method fails is excluded for all methods.
/// Returns the per-run records and the bootstrap summary.
pub fn run_monte_carlo(
    methods: &[SelectionParams],
    config: &MonteCarloConfig,
    scenario: &ScenarioConfig,
    resources: &MethodResources,
) -> Result<(Vec<RunRecord>, BootstrapSummary), HarnessError> {
    for m in methods {
        if m.method.needs_psn() && resources.psn.is_none() {
            return Err(HarnessError::MissingParameter {
                method: m.method.label(),
                param: "psn checkpoint".into(),
            });
        }
    }
    if config.rollout.goal_source == crate::rollout::GoalSource::Gin && resources.gin.is_none() {
        return Err(HarnessError::MissingParameter {
            method: "gin".into(),
            param: "checkpoint".into(),
        });
    }

    // Per-scenario evaluation of all methods, fanned out over scenarios.
    type ScenarioResult = Result<Vec<(String, MetricReport)>, String>;
    let eval_scenario = |idx: usize| -> (u64, ScenarioResult) {
        let seed = config.seed.wrapping_add(idx as u64);
        let cfg = scenario.clone().with_seed(seed);
        let run = || -> Result<Vec<(String, MetricReport)>, HarnessError> {
            let scene = generate_scenario(&cfg)?;
            let ground_truth = match config.task {
                Task::Prediction => Some(full_game_rollout(
                    &scene,
                    config.rollout.observation_steps - 1 + config.rollout.max_steps,
                    config.rollout.reference_speed,
                    &config.solver,
                )?),
                Task::Planning => None,
            };
            let mut out = Vec::with_capacity(methods.len());
            for m in methods {
                let mut rcfg = config.rollout.clone();
                rcfg.selection = m.clone();
                let selector = match resources.psn.as_ref() {
                    Some(psn) if m.method.needs_psn() => Selector::psn(m.clone(), psn),
                    _ => Selector::explicit(m.clone()),
                };
                let trace = match config.task {
                    Task::Prediction => predict(
                        &scene,
                        ground_truth.as_ref().unwrap(),
                        0,
                        &rcfg,
                        &selector,
                        &config.solver,
                        resources.gin.as_ref(),
                    )?,
                    Task::Planning => plan(
                        &scene,
                        0,
                        &rcfg,
                        &selector,
                        &config.solver,
                        resources.gin.as_ref(),
                        None,
                    )?,
                };
                if let Some(reason) = &trace.meta.truncated {
                    return Err(HarnessError::Rollout(format!(
                        "{}: {reason}",
                        m.method.label()
                    )));
                }
                let report = compute_metrics(
                    &trace,
                    ground_truth.as_ref(),
                    0,
                    &scene.weights[0],
                    &config.metric,
                )?;
                out.push((m.method.label(), report));
            }
            Ok(out)
        };
        (seed, run().map_err(|e| e.to_string()))
    };

    let results = parallel_map_indexed(config.count, config.workers, eval_scenario);

    let mut records = Vec::new();
    let mut included: Vec<Vec<MetricReport>> = Vec::new(); // [scenario][method]
    let mut excluded = 0usize;
    for (idx, (seed, result)) in results.into_iter().enumerate() {
        match result {
            Ok(rows) => {
                included.push(rows.iter().map(|(_, r)| *r).collect());
                for (method, report) in rows {
                    records.push(RunRecord { method, scenario: idx, seed, report });
                }
            }
            Err(reason) => {
                eprintln!("scenario {idx} (seed {seed}) excluded for all methods: {reason}");
                excluded += 1;
            }
        }
    }

    let summary = bootstrap_summary(
        config.task,
        methods,
        &included,
        config.resamples,
        config.seed,
        excluded,
    );
    Ok((records, summary))
}

/// Bootstrap means and standard errors over scenarios (resampling with
/// replacement, seeded). With fewer than two resamples the SE is zero.
fn bootstrap_summary(
    task: Task,
    methods: &[SelectionParams],
    included: &[Vec<MetricReport>],
    resamples: usize,
    seed: u64,
    excluded: usize,
) -> BootstrapSummary {
    let metric_names = task.summary_metrics();
    let n = included.len();
    let mut rows = Vec::with_capacity(methods.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007_5EED);
    // One shared resample index table keeps the design paired.
    let tables: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.random_range(0..n.max(1))).collect())
        .collect();

    for (m_idx, m) in methods.iter().enumerate() {
        let mut cells = Vec::with_capacity(metric_names.len());
        for &metric in metric_names {
            let values: Vec<f64> = included
                .iter()
                .map(|row| row[m_idx].get(metric).unwrap_or(f64::NAN))
                .collect();
            let (mean, se) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let means: Vec<f64> = tables
                    .iter()
                    .map(|t| t.iter().map(|&i| values[i]).sum::<f64>() / n as f64)
                    .collect();
                let mean = if means.is_empty() {
                    values.iter().sum::<f64>() / n as f64
                } else {
                    means.iter().sum::<f64>() / means.len() as f64
                };
                let se = if means.len() < 2 {
                    0.0
                } else {
                    let mu = means.iter().sum::<f64>() / means.len() as f64;
                    (means.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                        / (means.len() - 1) as f64)
                        .sqrt()
                };
                (mean, se)
            };
            cells.push(SummaryCell { metric: metric.into(), mean, se });
        }
        rows.push(SummaryRow { method: m.method.label(), cells });
    }

    BootstrapSummary {
        task,
        scenario_count: n,
        resamples,
        excluded_scenarios: excluded,
        rows,
    }
}

/// Per-run CSV: method, scenario, seed, then the metric columns.
pub fn runs_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("method,scenario,seed,");
    out.push_str(crate::metrics::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.method, r.scenario, r.seed, r.report.csv_row()));
    }
    out
}

/// Summary CSV: one row per method, mean and standard error per metric.
pub fn summary_to_csv(summary: &BootstrapSummary) -> String {
    let metric_names = summary.task.summary_metrics();
    let mut out = String::from("method");
    for m in metric_names {
        out.push_str(&format!(",{m}_mean,{m}_se"));
    }
    out.push('\n');
    for row in &summary.rows {
        out.push_str(&row.method);
        for cell in &row.cells {
            out.push_str(&format!(",{},{}", cell.mean, cell.se));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
