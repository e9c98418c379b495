//! Open-loop Nash equilibrium solver for masked and full trajectory games.
//!
//! The outer loop is a Newton-type iteration on the stacked first-order
//! conditions of all agents' coupled optimal-control problems, with a
//! backtracking line search on the costate-eliminated residual norm. Each
//! step solves the dense stacked KKT system assembled in [`kkt`]; the step
//! matrix clamps collision Hessian blocks to positive semidefinite while the
//! residual (and thus the converged solution) uses exact derivatives.
//!
//! The solver is deterministic: identical inputs and configuration produce
//! bit-identical outputs.

mod kkt;
mod problem;
mod sensitivity;

pub use kkt::{KktLayout, KktSystem};
pub use sensitivity::{
    adjoint_product, equilibrium_sensitivity, EquilibriumSensitivity, FlatLayout,
    SensitivityParameter,
};

use std::io::Write;
use std::time::Instant;

use crate::error::{GameError, SolverError};
use crate::game::{Control, GameSpec, JointTrajectory, SelectionMask, Vec2};

use problem::{HessianMode, Problem};

/// Backtracking line-search parameters: step shrink factor, backtrack budget
/// and the Armijo-style sufficient-decrease constant applied to the residual
/// norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub beta: f64,
    pub max_backtracks: usize,
    pub sufficient_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { beta: 0.5, max_backtracks: 20, sufficient_decrease: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    /// Convergence threshold on the ∞-norm of the stationarity residual.
    pub kkt_tolerance: f64,
    pub line_search: LineSearchConfig,
    /// Eigenvalue floor for the PSD projection of collision Hessian blocks
    /// in the step matrix.
    pub regularization: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            kkt_tolerance: 1e-6,
            line_search: LineSearchConfig::default(),
            regularization: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(GameError::BadParameter("kkt_tolerance must be > 0".into()));
        }
        if !(self.line_search.beta > 0.0 && self.line_search.beta < 1.0) {
            return Err(GameError::BadParameter("line-search beta must lie in (0, 1)".into()));
        }
        if self.regularization < 0.0 {
            return Err(GameError::BadParameter("regularization must be >= 0".into()));
        }
        Ok(())
    }
}

/// Result of one equilibrium solve.
#[derive(Debug, Clone)]
pub struct OlneSolution {
    pub trajectory: JointTrajectory,
    pub converged: bool,
    pub iterations: usize,
    pub final_kkt_residual: f64,
    /// Wall-clock seconds spent in the solve. Not serialized anywhere; kept
    /// out of output artifacts so runs stay byte-reproducible.
    pub wall_time: f64,
}

/// Per-iteration diagnostic sink. Lines are CSV:
/// `iteration,residual,step_norm,backtracks`.
pub type DiagnosticSink<'a> = &'a mut dyn Write;

/// Quadraticized stacked first-order conditions of the (optionally
/// soft-masked) game at a feasible linearization trajectory, with exact
/// second derivatives. The returned rhs is the Newton right-hand side −G.
pub fn assemble_kkt(
    game: &GameSpec,
    soft_mask: Option<&SelectionMask>,
    linearization: &JointTrajectory,
) -> Result<KktSystem, SolverError> {
    validate_inputs(game, soft_mask)?;
    linearization.validate(game.n_agents, game.horizon())?;
    let problem = Problem::full(game, soft_mask);
    Ok(kkt::assemble(&problem, linearization, HessianMode::Exact))
}

/// ∞-norm of the stacked stationarity conditions at a feasible trajectory,
/// costates eliminated by backward recursion. Zero exactly at an open-loop
/// Nash equilibrium of the (optionally soft-masked) game.
pub fn kkt_residual(
    game: &GameSpec,
    soft_mask: Option<&SelectionMask>,
    trajectory: &JointTrajectory,
) -> Result<f64, SolverError> {
    validate_inputs(game, soft_mask)?;
    trajectory.validate(game.n_agents, game.horizon())?;
    Ok(Problem::full(game, soft_mask).residual_inf(trajectory))
}

/// Solve for an open-loop Nash equilibrium of the game, with the ego's shared
/// cost soft-masked when a mask is supplied (the mask reweights interaction
/// terms; all agents stay in the game). Cold start is zero controls rolled
/// forward from the initial states.
pub fn solve_olne(
    game: &GameSpec,
    soft_mask: Option<&SelectionMask>,
    warm_start: Option<&JointTrajectory>,
    config: &SolverConfig,
    diagnostics: Option<DiagnosticSink>,
) -> Result<OlneSolution, SolverError> {
    validate_inputs(game, soft_mask)?;
    config.validate()?;
    let problem = Problem::full(game, soft_mask);
    solve_problem(&problem, warm_start, config, diagnostics)
}

/// Best response of one agent against the other agents' trajectories frozen
/// at `frozen`: a single-agent solve where the others appear as moving
/// obstacles. Used by the unilateral-deviation (Nash) check.
pub fn solve_best_response(
    game: &GameSpec,
    agent: usize,
    frozen: &JointTrajectory,
    warm_start: Option<&JointTrajectory>,
    config: &SolverConfig,
) -> Result<OlneSolution, SolverError> {
    if agent >= game.n_agents {
        return Err(GameError::IndexOutOfRange { index: agent, len: game.n_agents }.into());
    }
    frozen.validate(game.n_agents, game.horizon())?;
    config.validate()?;
    let single = GameSpec {
        n_agents: 1,
        dynamics: game.dynamics,
        weights: vec![game.weights[agent]],
        initial_states: vec![game.initial_states[agent]],
        goals: vec![game.goals[agent]],
    };
    let external: Vec<Vec<Vec2>> = frozen
        .states
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != agent)
                .map(|(_, s)| s.position)
                .collect()
        })
        .collect();
    let problem = Problem { game: &single, soft_mask: None, external: Some(&external) };
    let warm = warm_start.cloned().or_else(|| {
        // Warm-start from the agent's own column of the frozen trajectory.
        let controls: Vec<Vec<Control>> =
            frozen.controls.iter().map(|row| vec![row[agent]]).collect();
        JointTrajectory::rollout(&single.initial_states, &controls, game.dt()).ok()
    });
    solve_problem(&problem, warm.as_ref(), config, None)
}

fn validate_inputs(game: &GameSpec, soft_mask: Option<&SelectionMask>) -> Result<(), SolverError> {
    game.validate()?;
    if let Some(m) = soft_mask {
        SelectionMask::new(m.ego, m.values.clone())?;
        if m.ego >= game.n_agents {
            return Err(GameError::IndexOutOfRange { index: m.ego, len: game.n_agents }.into());
        }
        if m.values.len() != game.n_agents - 1 {
            return Err(GameError::DimensionMismatch(format!(
                "mask has {} entries for a {}-agent game",
                m.values.len(),
                game.n_agents
            ))
            .into());
        }
    }
    Ok(())
}

fn zero_controls(n: usize, t: usize) -> Vec<Vec<Control>> {
    vec![vec![Control::zero(); n]; t]
}

fn solve_problem(
    problem: &Problem,
    warm_start: Option<&JointTrajectory>,
    config: &SolverConfig,
    mut diagnostics: Option<DiagnosticSink>,
) -> Result<OlneSolution, SolverError> {
    let start = Instant::now();
    let n = problem.n();
    let t = problem.horizon();
    let dt = problem.dt();

    let mut controls = match warm_start {
        Some(ws) => ws.controls.clone(),
        None => zero_controls(n, t),
    };
    let mut traj = JointTrajectory::rollout(&problem.game.initial_states, &controls, dt)
        .map_err(SolverError::Game)?;
    let mut residual = problem.residual_inf(&traj);

    let mut iterations = 0;
    let mut converged = residual <= config.kkt_tolerance;

    while !converged && iterations < config.max_outer_iterations {
        let system = kkt::assemble(problem, &traj, HessianMode::Clamped(config.regularization));
        let delta = system
            .matrix
            .lu()
            .solve(&system.rhs)
            .ok_or(SolverError::SingularKkt { iteration: iterations })?;

        // Pull the control increments out of the stacked step; states are
        // re-rolled from controls so feasibility holds to machine precision.
        let layout = system.layout;
        let mut du = vec![vec![Vec2::zeros(); n]; t];
        let mut step_norm = 0.0f64;
        for i in 0..n {
            for k in 0..t {
                let dx = delta[layout.u_col(i, k, 0)];
                let dy = delta[layout.u_col(i, k, 1)];
                du[k][i] = Vec2::new(dx, dy);
                step_norm = step_norm.max(dx.abs()).max(dy.abs());
            }
        }

        let trial = |alpha: f64| -> Result<(Vec<Vec<Control>>, JointTrajectory, f64), SolverError> {
            let mut cand = controls.clone();
            for k in 0..t {
                for i in 0..n {
                    cand[k][i] = Control {
                        acceleration: cand[k][i].acceleration + du[k][i] * alpha,
                    };
                }
            }
            let cand_traj = JointTrajectory::rollout(&problem.game.initial_states, &cand, dt)
                .map_err(SolverError::Game)?;
            let res = problem.residual_inf(&cand_traj);
            Ok((cand, cand_traj, res))
        };

        let mut alpha = 1.0;
        let mut backtracks = 0;
        let mut best: Option<(Vec<Vec<Control>>, JointTrajectory, f64)> = None;
        let accepted = loop {
            let (cand, cand_traj, res) = trial(alpha)?;
            if res.is_finite()
                && res <= (1.0 - config.line_search.sufficient_decrease * alpha) * residual
            {
                break Some((cand, cand_traj, res));
            }
            if res.is_finite() && best.as_ref().is_none_or(|b| res < b.2) {
                best = Some((cand, cand_traj, res));
            }
            backtracks += 1;
            if backtracks > config.line_search.max_backtracks {
                break None;
            }
            alpha *= config.line_search.beta;
        };

        iterations += 1;
        let stalled = match accepted.or(best.filter(|b| b.2 < residual)) {
            Some((cand, cand_traj, res)) => {
                controls = cand;
                traj = cand_traj;
                residual = res;
                false
            }
            None => true,
        };

        if let Some(sink) = diagnostics.as_deref_mut() {
            let _ = writeln!(sink, "{iterations},{residual:.6e},{step_norm:.6e},{backtracks}");
        }

        converged = residual <= config.kkt_tolerance;
        if stalled {
            break;
        }
    }

    Ok(OlneSolution {
        trajectory: traj,
        converged,
        iterations,
        final_kkt_residual: residual,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
