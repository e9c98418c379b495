//! Differentiation of the equilibrium with respect to problem parameters via
//! the implicit function theorem: with G the stacked first-order-condition
//! map and z* a converged solution, dz*/dθ = −(∂G/∂z)⁻¹ ∂G/∂θ. The Jacobian
//! here uses exact (unclamped) second derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{GameError, SolverError};
use crate::game::{GameSpec, JointTrajectory, SelectionMask};

use super::kkt;
use super::problem::{HessianMode, Problem};
use super::{KktLayout, OlneSolution};

/// Which parameter vector the equilibrium is differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityParameter {
    /// All N−1 soft-mask entries of the masked ego, in mask slot order.
    Mask,
    /// The 2-D goal position of one agent.
    Goal { agent: usize },
}

/// Index arithmetic for the flattened solution vector: all states
/// (time-major, agent, then px py vx vy) followed by all controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatLayout {
    pub n_agents: usize,
    pub horizon: usize,
}

impl FlatLayout {
    pub fn len(&self) -> usize {
        (self.horizon + 1) * self.n_agents * 4 + self.horizon * self.n_agents * 2
    }

    pub fn state_idx(&self, k: usize, agent: usize, component: usize) -> usize {
        (k * self.n_agents + agent) * 4 + component
    }

    pub fn control_idx(&self, k: usize, agent: usize, component: usize) -> usize {
        (self.horizon + 1) * self.n_agents * 4 + (k * self.n_agents + agent) * 2 + component
    }
}

/// Dense Jacobian of the flattened equilibrium with respect to a parameter
/// vector. Row order matches [`FlatLayout`] (and `JointTrajectory::flatten`).
#[derive(Debug, Clone)]
pub struct EquilibriumSensitivity {
    pub jacobian: DMatrix<f64>,
    pub layout: FlatLayout,
    pub parameter: SensitivityParameter,
}

fn param_dim(game: &GameSpec, parameter: SensitivityParameter) -> usize {
    match parameter {
        SensitivityParameter::Mask => game.n_agents - 1,
        SensitivityParameter::Goal { .. } => 2,
    }
}

/// ∂G/∂θ at the linearization point. Rows follow the stacked KKT layout,
/// columns the parameter vector.
fn param_jacobian(
    problem: &Problem,
    traj: &JointTrajectory,
    parameter: SensitivityParameter,
    layout: &KktLayout,
) -> Result<DMatrix<f64>, SolverError> {
    let t = problem.horizon();
    let mut out = DMatrix::<f64>::zeros(layout.dim(), param_dim(problem.game, parameter));
    match parameter {
        SensitivityParameter::Mask => {
            let mask = problem.soft_mask.ok_or_else(|| {
                SolverError::Game(GameError::BadParameter(
                    "mask sensitivity needs a soft-masked game".into(),
                ))
            })?;
            let ego = mask.ego;
            let w4 = problem.game.weights[ego].w4;
            for k in 1..=t {
                let pe = traj.states[k][ego].position;
                for (slot, j) in (0..problem.n()).filter(|&j| j != ego).enumerate() {
                    let d = pe - traj.states[k][j].position;
                    let coef = -2.0 * w4 * (-d.norm_squared()).exp();
                    out[(layout.stat_x_row(ego, k, 0), slot)] = coef * d.x;
                    out[(layout.stat_x_row(ego, k, 1), slot)] = coef * d.y;
                }
            }
        }
        SensitivityParameter::Goal { agent } => {
            if agent >= problem.n() {
                return Err(
                    GameError::IndexOutOfRange { index: agent, len: problem.n() }.into()
                );
            }
            let w1 = problem.game.weights[agent].w1;
            for k in 1..=t {
                let coef = -2.0 * w1 * (k as f64 / t as f64);
                out[(layout.stat_x_row(agent, k, 0), 0)] = coef;
                out[(layout.stat_x_row(agent, k, 1), 1)] = coef;
            }
        }
    }
    Ok(out)
}

/// Crude reciprocal-condition estimate from an LU factorization's U diagonal.
fn lu_rcond(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    let min = diag.iter().fold(f64::INFINITY, |a, &d| a.min(d.abs()));
    if max == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Full dense Jacobian of the flattened equilibrium (states then controls)
/// with respect to the chosen parameter vector.
pub fn equilibrium_sensitivity(
    game: &GameSpec,
    soft_mask: Option<&SelectionMask>,
    solution: &OlneSolution,
    parameter: SensitivityParameter,
) -> Result<EquilibriumSensitivity, SolverError> {
    if !solution.converged {
        return Err(SolverError::NotConverged);
    }
    let traj = &solution.trajectory;
    traj.validate(game.n_agents, game.horizon())?;
    let problem = Problem::full(game, soft_mask);
    let system = kkt::assemble(&problem, traj, HessianMode::Exact);
    let dg_dtheta = param_jacobian(&problem, traj, parameter, &system.layout)?;

    let lu = system.matrix.lu();
    let dz = lu.solve(&(-&dg_dtheta)).ok_or_else(|| SolverError::SingularSensitivity {
        cond_estimate: lu_rcond(&lu),
    })?;

    let layout = FlatLayout { n_agents: game.n_agents, horizon: game.horizon() };
    let p = dg_dtheta.ncols();
    let mut jac = DMatrix::<f64>::zeros(layout.len(), p);
    let kl = system.layout;
    for i in 0..game.n_agents {
        for k in 1..=game.horizon() {
            for c in 0..4 {
                let row = layout.state_idx(k, i, c);
                for col in 0..p {
                    jac[(row, col)] = dz[(kl.x_col(i, k, c), col)];
                }
            }
        }
        for k in 0..game.horizon() {
            for c in 0..2 {
                let row = layout.control_idx(k, i, c);
                for col in 0..p {
                    jac[(row, col)] = dz[(kl.u_col(i, k, c), col)];
                }
            }
        }
    }
    Ok(EquilibriumSensitivity { jacobian: jac, layout, parameter })
}

/// Adjoint product vᵀ·(dz*/dθ) for a cotangent v in the flattened-solution
/// space, computed with a single transposed linear solve instead of forming
/// the full Jacobian. Returns one entry per parameter component.
pub fn adjoint_product(
    game: &GameSpec,
    soft_mask: Option<&SelectionMask>,
    solution: &OlneSolution,
    v: &[f64],
    parameter: SensitivityParameter,
) -> Result<Vec<f64>, SolverError> {
    if !solution.converged {
        return Err(SolverError::NotConverged);
    }
    let traj = &solution.trajectory;
    traj.validate(game.n_agents, game.horizon())?;
    let layout = FlatLayout { n_agents: game.n_agents, horizon: game.horizon() };
    if v.len() != layout.len() {
        return Err(GameError::DimensionMismatch(format!(
            "cotangent has {} entries, expected {}",
            v.len(),
            layout.len()
        ))
        .into());
    }
    let problem = Problem::full(game, soft_mask);
    let system = kkt::assemble(&problem, traj, HessianMode::Exact);
    let dg_dtheta = param_jacobian(&problem, traj, parameter, &system.layout)?;

    // Lift v into the stacked variable space; x_0 has no variables and its
    // sensitivity is identically zero, costate rows carry no cotangent.
    let kl = system.layout;
    let mut v_z = DVector::<f64>::zeros(kl.dim());
    for i in 0..game.n_agents {
        for k in 1..=game.horizon() {
            for c in 0..4 {
                v_z[kl.x_col(i, k, c)] = v[layout.state_idx(k, i, c)];
            }
        }
        for k in 0..game.horizon() {
            for c in 0..2 {
                v_z[kl.u_col(i, k, c)] = v[layout.control_idx(k, i, c)];
            }
        }
    }

    let lu_t = system.matrix.transpose().lu();
    let w = lu_t.solve(&v_z).ok_or_else(|| SolverError::SingularSensitivity {
        cond_estimate: lu_rcond(&lu_t),
    })?;

    Ok((0..dg_dtheta.ncols()).map(|p| -w.dot(&dg_dtheta.column(p).into_owned())).collect())
}
