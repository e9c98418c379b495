//! Receding-horizon prediction and planning loops wiring observation windows,
//! player selection, goal inference and the equilibrium solver into
//! closed-loop traces.
//!
//! Prediction: the ego's next state comes from the masked game's first
//! control, every other agent's from the full game, and predictions roll
//! forward on predicted states without peeking at ground truth after the
//! observation window. Planning: the ego applies its masked-game control
//! toward its own goal while the other agents are simulated with full-game
//! first controls under their true goals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GameError, HarnessError, TrainError};
use crate::game::{
    build_masked_game, step_dynamics, AgentState, Control, GameSpec,
    JointTrajectory, ObservationKind, ObservationWindow, SelectionMask, Vec2,
};
use crate::harness::prefilter_candidates;
use crate::nn::{psn_soft_mask, NetworkParams};
use crate::selection::{
    apply_threshold, apply_topk, select_mask, MethodSpec, SelectionContext, SelectionParams,
    ThresholdRule,
};
use crate::solver::{solve_olne, OlneSolution, SolverConfig};

/// Where the goals fed to the masked games come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoalSource {
    #[default]
    GroundTruth,
    /// Non-ego goals inferred once at initialization by a GIN.
    Gin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Observation window length K+1.
    pub observation_steps: usize,
    /// Inner planning horizon T of each receding-horizon solve.
    pub horizon: usize,
    /// Prediction interval / maximum planning steps.
    pub max_steps: usize,
    /// Planning stops when the ego is within this distance of its goal.
    pub goal_radius: f64,
    /// Pace of the reference schedule: each receding-horizon solve aims at a
    /// waypoint at most `reference_speed · T · dt` toward the goal, so the
    /// reference never demands covering the whole remaining distance within
    /// one inner horizon.
    pub reference_speed: f64,
    pub selection: SelectionParams,
    pub goal_source: GoalSource,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            observation_steps: 10,
            horizon: 10,
            max_steps: 50,
            goal_radius: 0.1,
            reference_speed: 0.5,
            selection: SelectionParams::new(MethodSpec::All),
            goal_source: GoalSource::GroundTruth,
        }
    }
}

/// A selection policy: either an explicit method or a PSN applied in
/// threshold or rank mode. Scenes with more agents than the network was
/// trained for are pre-filtered to the nearest candidates.
pub struct Selector<'a> {
    pub params: SelectionParams,
    pub psn: Option<&'a NetworkParams>,
}

impl<'a> Selector<'a> {
    pub fn explicit(params: SelectionParams) -> Self {
        Self { params, psn: None }
    }

    pub fn psn(params: SelectionParams, network: &'a NetworkParams) -> Self {
        Self { params, psn: Some(network) }
    }

    fn mask(
        &self,
        ctx: &SelectionContext,
        window: &ObservationWindow,
    ) -> Result<SelectionMask, HarnessError> {
        if !self.params.method.needs_psn() {
            return Ok(select_mask(ctx, &self.params)?);
        }
        let net = self.psn.ok_or_else(|| {
            HarnessError::MissingParameter {
                method: self.params.method.label(),
                param: "psn checkpoint".into(),
            }
        })?;
        let n = window.n_agents();
        let ego = ctx.ego;
        let trained_n = net.config.n_agents;

        // Candidate set: all others when the scene fits the network, else the
        // nearest (trained_n − 1) agents by current distance.
        let candidates: Vec<usize> = if n == trained_n {
            (0..n).filter(|&j| j != ego).collect()
        } else if n > trained_n {
            let positions: Vec<Vec2> = ctx.current.iter().map(|s| s.position).collect();
            prefilter_candidates(&positions, ego, trained_n - 1)?
        } else {
            return Err(TrainError::ShapeMismatch(format!(
                "scene has {n} agents but the network was trained for {trained_n}"
            ))
            .into());
        };

        // Sub-scene in ego-first order, soft mask over the candidates.
        let mut sub_agents = Vec::with_capacity(trained_n);
        sub_agents.push(ego);
        sub_agents.extend(&candidates);
        let sub_window = window.select_agents(&sub_agents);
        let soft = psn_soft_mask(net, &sub_window, 0)?;

        let sub_mask = match self.params.method {
            MethodSpec::PsnThreshold { m_th } => {
                apply_threshold(0, &soft, ThresholdRule::MaskAtLeast(m_th))
            }
            MethodSpec::PsnRank { k } => apply_topk(0, &soft, k.min(soft.len()))?,
            _ => unreachable!("needs_psn gated"),
        };

        // Scatter candidate decisions back onto the full agent set.
        let mut values = vec![0.0; n - 1];
        for (slot, &agent) in candidates.iter().enumerate() {
            let full_slot = if agent < ego { agent } else { agent - 1 };
            values[full_slot] = sub_mask.values[slot];
        }
        Ok(SelectionMask { ego, values })
    }
}

/// Per-step solver health recorded in traces. Wall time is deliberately
/// omitted so traces stay byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiag {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl From<&OlneSolution> for SolverDiag {
    fn from(s: &OlneSolution) -> Self {
        Self { iterations: s.iterations, residual: s.final_kkt_residual, converged: s.converged }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global step index of the resulting state (first record is K+1).
    pub step: usize,
    /// Joint state after applying this step's controls.
    pub states: Vec<AgentState>,
    /// Control applied by each agent this step.
    pub controls: Vec<Control>,
    pub mask: SelectionMask,
    pub masked_game_size: usize,
    pub solver: SolverDiag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub ego: usize,
    pub n_agents: usize,
    pub dt: f64,
    /// Goals the rollout actually used (inferred when goal source is GIN).
    pub goals: Vec<Vec2>,
    pub inferred_goals: Option<Vec<Vec2>>,
    /// Global index of the first planning instant (K).
    pub start_step: usize,
    /// Joint state at the first planning instant.
    pub start_states: Vec<AgentState>,
    /// Set when the rollout stopped early (solver failure).
    pub truncated: Option<String>,
}

/// Closed-loop rollout output: per-step joint states, the masks used, the
/// masked-game sizes and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub meta: TraceMeta,
    pub steps: Vec<StepRecord>,
}

impl RolloutTrace {
    /// Ego positions over the trace, starting at the first planning instant.
    pub fn ego_positions(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.meta.start_states[self.meta.ego].position);
        out.extend(self.steps.iter().map(|s| s.states[self.meta.ego].position));
        out
    }

    /// Joint positions (all agents) over the trace.
    pub fn joint_positions(&self) -> Vec<Vec<Vec2>> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.meta.start_states.iter().map(|s| s.position).collect());
        out.extend(
            self.steps.iter().map(|s| s.states.iter().map(|a| a.position).collect::<Vec<_>>()),
        );
        out
    }

    pub fn masks(&self) -> Vec<&SelectionMask> {
        self.steps.iter().map(|s| &s.mask).collect()
    }

    /// Largest dynamics defect over all recorded transitions.
    pub fn feasibility_violation(&self) -> f64 {
        let mut prev: &Vec<AgentState> = &self.meta.start_states;
        let mut worst = 0.0f64;
        for rec in &self.steps {
            for (i, c) in rec.controls.iter().enumerate() {
                let pred = step_dynamics(&prev[i], c, self.meta.dt).expect("finite");
                let got = &rec.states[i];
                worst = worst
                    .max((pred.position - got.position).abs().max())
                    .max((pred.velocity - got.velocity).abs().max());
            }
            prev = &rec.states;
        }
        worst
    }

    /// One JSON object per line: the meta record first, then each step.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct MetaLine<'a> {
            meta: &'a TraceMeta,
        }
        #[derive(Serialize)]
        struct StepLine<'a> {
            step: &'a StepRecord,
        }
        writeln!(w, "{}", serde_json::to_string(&MetaLine { meta: &self.meta })?)?;
        for s in &self.steps {
            writeln!(w, "{}", serde_json::to_string(&StepLine { step: s })?)?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, GameError> {
        #[derive(Deserialize)]
        struct MetaLine {
            meta: TraceMeta,
        }
        #[derive(Deserialize)]
        struct StepLine {
            step: StepRecord,
        }
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| GameError::Parse("empty trace file".into()))?
            .map_err(|e| GameError::Parse(e.to_string()))?;
        let meta: MetaLine =
            serde_json::from_str(&first).map_err(|e| GameError::Parse(e.to_string()))?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line.map_err(|e| GameError::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: StepLine =
                serde_json::from_str(&line).map_err(|e| GameError::Parse(e.to_string()))?;
            steps.push(s.step);
        }
        let trace = Self { meta: meta.meta, steps };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let n = self.meta.n_agents;
        if self.meta.ego >= n || self.meta.start_states.len() != n || self.meta.goals.len() != n {
            return Err(GameError::DimensionMismatch("trace meta".into()));
        }
        for s in &self.steps {
            if s.states.len() != n || s.controls.len() != n || s.mask.values.len() != n - 1 {
                return Err(GameError::DimensionMismatch("trace step".into()));
            }
            if s.masked_game_size != 1 + s.mask.count_selected() {
                return Err(GameError::BadParameter("masked game size mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Previous solution shifted one step and re-rolled from new initial states:
/// the receding-horizon warm start.
fn shift_warm_start(
    prev: &JointTrajectory,
    initial: &[AgentState],
    dt: f64,
) -> Option<JointTrajectory> {
    let mut controls = prev.controls[1..].to_vec();
    controls.push(prev.controls.last()?.clone());
    JointTrajectory::rollout(initial, &controls, dt).ok()
}

/// Waypoint the reference schedule targets over one inner horizon: the goal
/// itself once within reach, otherwise a point `speed · T · dt` toward it.
pub fn paced_goals(
    current: &[AgentState],
    goals: &[Vec2],
    speed: f64,
    horizon: usize,
    dt: f64,
) -> Vec<Vec2> {
    let reach = speed * horizon as f64 * dt;
    current
        .iter()
        .zip(goals)
        .map(|(s, g)| {
            let d = g - s.position;
            let dist = d.norm();
            if dist <= reach || dist < 1e-12 {
                *g
            } else {
                s.position + d * (reach / dist)
            }
        })
        .collect()
}

/// History of the K+1 most recent joint states.
struct SlidingWindow {
    frames: Vec<Vec<AgentState>>,
    len: usize,
}

impl SlidingWindow {
    fn new(bootstrap: &[Vec<AgentState>], len: usize) -> Self {
        assert!(bootstrap.len() >= len, "bootstrap shorter than the window");
        Self { frames: bootstrap[bootstrap.len() - len..].to_vec(), len }
    }

    fn push(&mut self, frame: Vec<AgentState>) {
        self.frames.push(frame);
        if self.frames.len() > self.len {
            self.frames.remove(0);
        }
    }

    fn observation(&self) -> ObservationWindow {
        ObservationWindow { kind: ObservationKind::Full, frames: self.frames.clone() }
    }

    fn current(&self) -> &Vec<AgentState> {
        self.frames.last().unwrap()
    }

    fn context(&self, ego: usize, game: &GameSpec) -> SelectionContext {
        let n = game.n_agents;
        let current = self.current().clone();
        let previous = (self.frames.len() >= 2).then(|| {
            self.frames[self.frames.len() - 2].clone()
        });
        // Latest controls recovered from the last velocity change; exact for
        // simulated histories, a consistent estimate for observed ones.
        let controls = previous.as_ref().map(|prev| {
            (0..n)
                .map(|i| Control {
                    acceleration: (current[i].velocity - prev[i].velocity) / game.dt(),
                })
                .collect()
        });
        SelectionContext {
            ego,
            current,
            previous,
            controls,
            ego_weights: game.weights[ego],
            dt: game.dt(),
        }
    }
}

struct MaskedSolveCache {
    index_map: Vec<usize>,
    solution: JointTrajectory,
}

/// One engine drives both prediction and planning; they differ only in goal
/// handling and the stop condition.
struct Engine<'a> {
    scene: &'a GameSpec,
    ego: usize,
    config: &'a RolloutConfig,
    selector: &'a Selector<'a>,
    solver: &'a SolverConfig,
    /// Goals used inside the ego's masked game.
    ego_view_goals: Vec<Vec2>,
    /// Goals driving the other agents (prediction: same inferred/true set;
    /// planning: the agents' true goals).
    world_goals: Vec<Vec2>,
    full_warm: Option<JointTrajectory>,
    masked_warm: Option<MaskedSolveCache>,
}

impl<'a> Engine<'a> {
    fn solve_game(
        &self,
        states: &[AgentState],
        goals: &[Vec2],
        warm: Option<&JointTrajectory>,
    ) -> Result<OlneSolution, HarnessError> {
        let mut game = self.scene.clone();
        game.initial_states = states.to_vec();
        game.goals = paced_goals(
            states,
            goals,
            self.config.reference_speed,
            self.config.horizon,
            self.scene.dt(),
        );
        game.dynamics.horizon = self.config.horizon;
        let warm_shifted = warm.and_then(|w| shift_warm_start(w, states, game.dt()));
        Ok(solve_olne(&game, None, warm_shifted.as_ref(), self.solver, None)?)
    }

    /// Advance one step: returns the resulting record, or an error string
    /// describing the failure (the trace is truncated there).
    fn step(&mut self, window: &SlidingWindow, step_index: usize) -> Result<StepRecord, String> {
        let n = self.scene.n_agents;
        let current = window.current().clone();
        let ctx = window.context(self.ego, self.scene);
        let mask = self
            .selector
            .mask(&ctx, &window.observation())
            .map_err(|e| format!("selection failed: {e}"))?;

        // Full-game solve drives the other agents (and the ego when the mask
        // selects everyone, where the masked game is the full game).
        let full = self
            .solve_game(&current, &self.world_goals.clone(), self.full_warm.as_ref())
            .map_err(|e| format!("full-game solve failed: {e}"))?;
        if !full.converged {
            return Err(format!(
                "full-game solve did not converge (residual {:.3e})",
                full.final_kkt_residual
            ));
        }

        let all_selected = mask.count_selected() == n - 1;
        let same_goals = self.ego_view_goals == self.world_goals;
        let (ego_control, diag, masked_size) = if all_selected && same_goals {
            self.masked_warm = None;
            (full.trajectory.controls[0][self.ego], SolverDiag::from(&full), n)
        } else {
            let masked = build_masked_game(self.scene, self.ego, &mask)
                .map_err(|e| format!("masked game: {e}"))?;
            let m_states: Vec<AgentState> =
                masked.index_map.iter().map(|&j| current[j]).collect();
            let m_goals: Vec<Vec2> =
                masked.index_map.iter().map(|&j| self.ego_view_goals[j]).collect();
            let mut m_game = masked.game.clone();
            m_game.initial_states = m_states.clone();
            m_game.goals = paced_goals(
                &m_states,
                &m_goals,
                self.config.reference_speed,
                self.config.horizon,
                self.scene.dt(),
            );
            m_game.dynamics.horizon = self.config.horizon;
            let warm = self
                .masked_warm
                .as_ref()
                .filter(|c| c.index_map == masked.index_map)
                .and_then(|c| shift_warm_start(&c.solution, &m_states, m_game.dt()));
            let sol = solve_olne(&m_game, None, warm.as_ref(), self.solver, None)
                .map_err(|e| format!("masked solve failed: {e}"))?;
            if !sol.converged {
                return Err(format!(
                    "masked solve did not converge (residual {:.3e})",
                    sol.final_kkt_residual
                ));
            }
            let control = sol.trajectory.controls[0][masked.ego];
            let size = masked.game.n_agents;
            self.masked_warm = Some(MaskedSolveCache {
                index_map: masked.index_map,
                solution: sol.trajectory.clone(),
            });
            (control, SolverDiag::from(&sol), size)
        };

        // Everyone advances: the ego by its masked-game control, the others
        // by their full-game first controls.
        let mut controls = full.trajectory.controls[0].clone();
        controls[self.ego] = ego_control;
        let dt = self.scene.dt();
        let next: Vec<AgentState> = current
            .iter()
            .zip(&controls)
            .map(|(s, c)| step_dynamics(s, c, dt).expect("finite step"))
            .collect();

        self.full_warm = Some(full.trajectory);

        Ok(StepRecord {
            step: step_index,
            states: next,
            controls,
            mask,
            masked_game_size: masked_size,
            solver: diag,
        })
    }
}

fn infer_goals_from_history(
    gin: Option<&NetworkParams>,
    history: &[Vec<AgentState>],
    k_plus_1: usize,
) -> Result<Vec<Vec2>, HarnessError> {
    let net = gin.ok_or_else(|| HarnessError::MissingParameter {
        method: "gin".into(),
        param: "checkpoint".into(),
    })?;
    let window = ObservationWindow {
        kind: ObservationKind::Full,
        frames: history[..k_plus_1].to_vec(),
    };
    Ok(crate::nn::infer_goals(net, &window)?)
}

/// Receding-horizon trajectory prediction for all agents of a scene whose
/// ground-truth rollout is known for at least the first K+1 steps. Goals are
/// inferred once from the observation window when the goal source is GIN;
/// after step K the loop feeds on its own predictions only.
pub fn predict(
    scene: &GameSpec,
    ground_truth: &JointTrajectory,
    ego: usize,
    config: &RolloutConfig,
    selector: &Selector,
    solver: &SolverConfig,
    gin: Option<&NetworkParams>,
) -> Result<RolloutTrace, HarnessError> {
    let k_obs = config.observation_steps;
    if ground_truth.states.len() < k_obs {
        return Err(GameError::DimensionMismatch(format!(
            "ground truth supplies {} states, observation needs {k_obs}",
            ground_truth.states.len()
        ))
        .into());
    }
    if ego >= scene.n_agents {
        return Err(GameError::IndexOutOfRange { index: ego, len: scene.n_agents }.into());
    }
    let history: Vec<Vec<AgentState>> = ground_truth.states[..k_obs].to_vec();
    let (goals, inferred) = match config.goal_source {
        GoalSource::GroundTruth => (scene.goals.clone(), None),
        GoalSource::Gin => {
            let g = infer_goals_from_history(gin, &history, k_obs)?;
            (g.clone(), Some(g))
        }
    };

    let mut window = SlidingWindow::new(&history, k_obs);
    let mut engine = Engine {
        scene,
        ego,
        config,
        selector,
        solver,
        ego_view_goals: goals.clone(),
        world_goals: goals.clone(),
        full_warm: None,
        masked_warm: None,
    };

    let mut meta = TraceMeta {
        ego,
        n_agents: scene.n_agents,
        dt: scene.dt(),
        goals,
        inferred_goals: inferred,
        start_step: k_obs - 1,
        start_states: window.current().clone(),
        truncated: None,
    };
    let mut steps = Vec::with_capacity(config.max_steps);
    for i in 0..config.max_steps {
        match engine.step(&window, k_obs + i) {
            Ok(rec) => {
                window.push(rec.states.clone());
                steps.push(rec);
            }
            Err(reason) => {
                meta.truncated = Some(reason);
                break;
            }
        }
    }
    Ok(RolloutTrace { meta, steps })
}

/// Receding-horizon planning: the ego walks toward its goal with masked-game
/// controls until it is within the goal radius or the step cap. The bootstrap
/// observation history is a K-step full-game warmup rollout unless one is
/// supplied.
pub fn plan(
    scene: &GameSpec,
    ego: usize,
    config: &RolloutConfig,
    selector: &Selector,
    solver: &SolverConfig,
    gin: Option<&NetworkParams>,
    history: Option<&[Vec<AgentState>]>,
) -> Result<RolloutTrace, HarnessError> {
    if ego >= scene.n_agents {
        return Err(GameError::IndexOutOfRange { index: ego, len: scene.n_agents }.into());
    }
    let k_obs = config.observation_steps;

    let bootstrap: Vec<Vec<AgentState>> = match history {
        Some(h) => {
            if h.len() < k_obs {
                return Err(GameError::DimensionMismatch(format!(
                    "bootstrap history has {} frames, observation needs {k_obs}",
                    h.len()
                ))
                .into());
            }
            h.to_vec()
        }
        None => {
            // Full-game warmup: everyone plays the full game for K steps.
            let mut frames = vec![scene.initial_states.clone()];
            let mut warm: Option<JointTrajectory> = None;
            let engine = Engine {
                scene,
                ego,
                config,
                selector,
                solver,
                ego_view_goals: scene.goals.clone(),
                world_goals: scene.goals.clone(),
                full_warm: None,
                masked_warm: None,
            };
            for _ in 0..k_obs - 1 {
                let current = frames.last().unwrap().clone();
                let sol = engine
                    .solve_game(&current, &scene.goals, warm.as_ref())
                    .map_err(|e| HarnessError::Rollout(format!("warmup solve: {e}")))?;
                if !sol.converged {
                    return Err(HarnessError::Rollout("warmup solve did not converge".into()));
                }
                let dt = scene.dt();
                let next: Vec<AgentState> = current
                    .iter()
                    .zip(&sol.trajectory.controls[0])
                    .map(|(s, c)| step_dynamics(s, c, dt).expect("finite step"))
                    .collect();
                warm = Some(sol.trajectory);
                frames.push(next);
            }
            frames
        }
    };

    let (ego_view_goals, inferred) = match config.goal_source {
        GoalSource::GroundTruth => (scene.goals.clone(), None),
        GoalSource::Gin => {
            let mut g = infer_goals_from_history(gin, &bootstrap, k_obs)?;
            // The ego knows its own goal; only the others' are inferred.
            g[ego] = scene.goals[ego];
            (g.clone(), Some(g))
        }
    };

    let mut window = SlidingWindow::new(&bootstrap, k_obs);
    let mut engine = Engine {
        scene,
        ego,
        config,
        selector,
        solver,
        ego_view_goals,
        world_goals: scene.goals.clone(),
        full_warm: None,
        masked_warm: None,
    };

    let mut meta = TraceMeta {
        ego,
        n_agents: scene.n_agents,
        dt: scene.dt(),
        goals: engine.ego_view_goals.clone(),
        inferred_goals: inferred,
        start_step: k_obs - 1,
        start_states: window.current().clone(),
        truncated: None,
    };
    let goal = scene.goals[ego];
    let mut steps = Vec::with_capacity(config.max_steps);
    for i in 0..config.max_steps {
        let at_goal = (window.current()[ego].position - goal).norm() <= config.goal_radius;
        if at_goal {
            break;
        }
        match engine.step(&window, k_obs + i) {
            Ok(rec) => {
                window.push(rec.states.clone());
                steps.push(rec);
            }
            Err(reason) => {
                meta.truncated = Some(reason);
                break;
            }
        }
    }
    Ok(RolloutTrace { meta, steps })
}

#[cfg(test)]
mod tests;
