//! Stacked first-order conditions of all agents' coupled optimal-control
//! problems, quadraticized about a linearization trajectory.
//!
//! Variable and equation layout (per decision agent, blocks concatenated by
//! agent index):
//!
//! ```text
//!   columns: [ x_1 .. x_T | u_0 .. u_{T-1} | λ_1 .. λ_T ]   (4T + 2T + 4T)
//!   rows:    [ ∇_x L rows | ∇_u L rows     | dynamics    ]
//! ```
//!
//! States are (px, py, vx, vy), controls (ax, ay). The initial state x_0 is
//! a constant of the problem and carries no variables.

use nalgebra::{DMatrix, DVector, Vector4};

use crate::game::JointTrajectory;

use super::problem::{HessianMode, PairTerm, Problem};

/// Index arithmetic for the stacked system of `n` agents over horizon `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KktLayout {
    pub n_agents: usize,
    pub horizon: usize,
}

impl KktLayout {
    const PER_STATE: usize = 4;
    const PER_CONTROL: usize = 2;

    pub fn agent_block(&self) -> usize {
        10 * self.horizon
    }

    pub fn dim(&self) -> usize {
        self.n_agents * self.agent_block()
    }

    /// Column of state component `c` of agent `i` at step `k` (1 ≤ k ≤ T).
    pub fn x_col(&self, i: usize, k: usize, c: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&k));
        i * self.agent_block() + (k - 1) * Self::PER_STATE + c
    }

    /// Column of control component `c` of agent `i` at step `k` (0 ≤ k < T).
    pub fn u_col(&self, i: usize, k: usize, c: usize) -> usize {
        debug_assert!(k < self.horizon);
        i * self.agent_block() + 4 * self.horizon + k * Self::PER_CONTROL + c
    }

    /// Column of costate component `c` of agent `i` at step `k` (1 ≤ k ≤ T).
    pub fn lam_col(&self, i: usize, k: usize, c: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&k));
        i * self.agent_block() + 6 * self.horizon + (k - 1) * Self::PER_STATE + c
    }

    /// Row of the ∇_{x_k} stationarity equation (aligned with `x_col`).
    pub fn stat_x_row(&self, i: usize, k: usize, c: usize) -> usize {
        self.x_col(i, k, c)
    }

    /// Row of the ∇_{u_k} stationarity equation (aligned with `u_col`).
    pub fn stat_u_row(&self, i: usize, k: usize, c: usize) -> usize {
        self.u_col(i, k, c)
    }

    /// Row of the dynamics equation defining x_{k+1} (aligned with `lam_col`
    /// of step k+1).
    pub fn dyn_row(&self, i: usize, k: usize, c: usize) -> usize {
        self.lam_col(i, k + 1, c)
    }
}

/// Assembled Newton system `matrix · Δz = rhs` (rhs = −G at the
/// linearization point).
pub struct KktSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: KktLayout,
}

pub(crate) fn assemble(
    problem: &Problem,
    linearization: &JointTrajectory,
    mode: HessianMode,
) -> KktSystem {
    let n = problem.n();
    let t = problem.horizon();
    let dt = problem.dt();
    let layout = KktLayout { n_agents: n, horizon: t };
    let dim = layout.dim();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);

    let floor = match mode {
        HessianMode::Exact => 0.0,
        HessianMode::Clamped(f) => f,
    };
    let clamped = matches!(mode, HessianMode::Clamped(_));

    let lambda = problem.costates(linearization);

    for i in 0..n {
        let w = &problem.game.weights[i];

        // ∇_x stationarity rows, k = 1..=T.
        for k in 1..=t {
            let gx = problem.grad_x(linearization, i, k);
            let lam_k = lambda[i][k - 1];
            let mut r = gx - lam_k;
            if k < t {
                let nl = lambda[i][k]; // λ_{k+1}
                r += Vector4::new(nl.x, nl.y, dt * nl.x + nl.z, dt * nl.y + nl.w);
            }
            for c in 0..4 {
                g[layout.stat_x_row(i, k, c)] = r[c];
            }

            // Private Hessian: diag(2w1, 2w1, 2w2, 2w2).
            for c in 0..2 {
                let row = layout.stat_x_row(i, k, c);
                m[(row, layout.x_col(i, k, c))] += 2.0 * w.w1;
            }
            for c in 2..4 {
                let row = layout.stat_x_row(i, k, c);
                m[(row, layout.x_col(i, k, c))] += 2.0 * w.w2;
            }

            // Collision interactions with other decision agents.
            let pi = linearization.states[k][i].position;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let scale = problem.pair_scale(i, j);
                if scale == 0.0 {
                    continue;
                }
                let pj = linearization.states[k][j].position;
                let term = PairTerm::evaluate(&pi, &pj, scale, floor);
                let (h_own, h_mix) = if clamped {
                    (term.h_own_clamped, term.h_mix_clamped)
                } else {
                    (term.h_own, -term.h_own)
                };
                for r in 0..2 {
                    let row = layout.stat_x_row(i, k, r);
                    for c in 0..2 {
                        m[(row, layout.x_col(i, k, c))] += h_own[(r, c)];
                        m[(row, layout.x_col(j, k, c))] += h_mix[(r, c)];
                    }
                }
            }

            // Frozen external obstacles (best-response solves).
            if let Some(ext) = problem.external {
                for q in &ext[k] {
                    let term = PairTerm::evaluate(&pi, q, w.w4, floor);
                    let h = if clamped { term.h_own_solo_clamped(floor) } else { term.h_own };
                    for r in 0..2 {
                        let row = layout.stat_x_row(i, k, r);
                        for c in 0..2 {
                            m[(row, layout.x_col(i, k, c))] += h[(r, c)];
                        }
                    }
                }
            }

            // Costate columns: −λ_k, and Aᵀ λ_{k+1} when k < T.
            for c in 0..4 {
                let row = layout.stat_x_row(i, k, c);
                m[(row, layout.lam_col(i, k, c))] -= 1.0;
            }
            if k < t {
                for c in 0..4 {
                    let row = layout.stat_x_row(i, k, c);
                    m[(row, layout.lam_col(i, k + 1, c))] += 1.0;
                }
                // Aᵀ puts dt·λ_p into the velocity rows.
                m[(layout.stat_x_row(i, k, 2), layout.lam_col(i, k + 1, 0))] += dt;
                m[(layout.stat_x_row(i, k, 3), layout.lam_col(i, k + 1, 1))] += dt;
            }
        }

        // ∇_u stationarity rows, k = 0..T−1: 2w3·u + dt·Bᵀλ_{k+1}.
        for k in 0..t {
            let u = linearization.controls[k][i].acceleration;
            let lam_next = lambda[i][k];
            g[layout.stat_u_row(i, k, 0)] = 2.0 * w.w3 * u.x + dt * lam_next.z;
            g[layout.stat_u_row(i, k, 1)] = 2.0 * w.w3 * u.y + dt * lam_next.w;
            for c in 0..2 {
                let row = layout.stat_u_row(i, k, c);
                m[(row, layout.u_col(i, k, c))] += 2.0 * w.w3;
                m[(row, layout.lam_col(i, k + 1, c + 2))] += dt;
            }
        }

        // Dynamics rows, k = 0..T−1: A x_k + B dt u_k − x_{k+1} = 0.
        for k in 0..t {
            let s = &linearization.states[k][i];
            let u = &linearization.controls[k][i];
            let next = &linearization.states[k + 1][i];
            let defect = [
                s.position.x + dt * s.velocity.x - next.position.x,
                s.position.y + dt * s.velocity.y - next.position.y,
                s.velocity.x + dt * u.acceleration.x - next.velocity.x,
                s.velocity.y + dt * u.acceleration.y - next.velocity.y,
            ];
            for c in 0..4 {
                let row = layout.dyn_row(i, k, c);
                g[row] = defect[c];
                m[(row, layout.x_col(i, k + 1, c))] -= 1.0;
            }
            if k >= 1 {
                for c in 0..4 {
                    m[(layout.dyn_row(i, k, c), layout.x_col(i, k, c))] += 1.0;
                }
                m[(layout.dyn_row(i, k, 0), layout.x_col(i, k, 2))] += dt;
                m[(layout.dyn_row(i, k, 1), layout.x_col(i, k, 3))] += dt;
            }
            m[(layout.dyn_row(i, k, 2), layout.u_col(i, k, 0))] += dt;
            m[(layout.dyn_row(i, k, 3), layout.u_col(i, k, 1))] += dt;
        }
    }

    KktSystem { matrix: m, rhs: -g, layout }
}
