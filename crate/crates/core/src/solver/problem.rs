//! Internal description of one coupled optimal-control problem instance:
//! the decision agents, optional soft mask on the ego's shared cost, and
//! optional frozen external obstacle tracks (used by best-response solves).

use nalgebra::{Matrix2, Vector2, Vector4};

use crate::game::{GameSpec, JointTrajectory, SelectionMask, Vec2};

/// How collision-term Hessian blocks enter an assembled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum HessianMode {
    /// Exact second derivatives (residual Jacobian, sensitivities).
    Exact,
    /// Eigenvalues of each pairwise positional block clamped to at least the
    /// given floor, so the quadratic subproblem stays convex (step matrix).
    Clamped(f64),
}

pub(crate) struct Problem<'a> {
    pub game: &'a GameSpec,
    pub soft_mask: Option<&'a SelectionMask>,
    /// Obstacle positions per step, `external[k][q]`, length T+1. Every
    /// decision agent avoids them with its own collision weight.
    pub external: Option<&'a [Vec<Vec2>]>,
}

/// One collision interaction evaluated at a linearization point: positional
/// Hessian pieces of s·exp(−‖d‖²) with d = p_i − p_j.
pub(crate) struct PairTerm {
    /// Exact ∂²/∂p_i∂p_i block (the mixed block ∂²/∂p_i∂p_j is its negation).
    pub h_own: Matrix2<f64>,
    /// ∂²/∂p_i∂p_i after PSD projection of the stacked (p_i, p_j) block.
    pub h_own_clamped: Matrix2<f64>,
    /// ∂²/∂p_i∂p_j after the same projection.
    pub h_mix_clamped: Matrix2<f64>,
}

impl PairTerm {
    /// Evaluate scale·exp(−‖pi − pj‖²) derivatives. `floor` is the eigenvalue
    /// floor used for the clamped blocks.
    pub fn evaluate(pi: &Vec2, pj: &Vec2, scale: f64, floor: f64) -> Self {
        let d = pi - pj;
        let e = scale * (-d.norm_squared()).exp();

        // H = ∂²/∂p_i∂p_i = e(4ddᵀ − 2I); eigenvectors are d̂ and its
        // perpendicular with eigenvalues e(4‖d‖²−2) and −2e.
        let norm = d.norm();
        let q1 = if norm > 1e-300 { d / norm } else { Vector2::new(1.0, 0.0) };
        let q2 = Vector2::new(-q1.y, q1.x);
        let l1 = e * (4.0 * norm * norm - 2.0);
        let l2 = -2.0 * e;
        let h_own = q1 * q1.transpose() * l1 + q2 * q2.transpose() * l2;

        // The stacked (p_i, p_j) Hessian [[H, −H], [−H, H]] has eigenpairs
        // (q, −q)/√2 ↦ 2λ and (q, q)/√2 ↦ 0 for each eigenpair (λ, q) of H.
        // Clamping every eigenvalue to ≥ floor and re-assembling gives the
        // blocks below.
        let mut h_own_clamped = Matrix2::zeros();
        let mut h_mix_clamped = Matrix2::zeros();
        for (l, q) in [(l1, q1), (l2, q2)] {
            let a = (2.0 * l).max(floor);
            h_own_clamped += q * q.transpose() * (0.5 * (a + floor));
            h_mix_clamped += q * q.transpose() * (0.5 * (floor - a));
        }
        Self { h_own, h_own_clamped, h_mix_clamped }
    }

    /// Clamped own-block for an interaction whose partner is not a decision
    /// variable (external obstacle): project the 2×2 block itself.
    pub fn h_own_solo_clamped(&self, floor: f64) -> Matrix2<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.h_own);
        let mut out = Matrix2::zeros();
        for (idx, &l) in eig.eigenvalues.iter().enumerate() {
            let q = eig.eigenvectors.column(idx);
            out += q * q.transpose() * l.max(floor);
        }
        out
    }
}

impl<'a> Problem<'a> {
    pub fn full(game: &'a GameSpec, soft_mask: Option<&'a SelectionMask>) -> Self {
        Self { game, soft_mask, external: None }
    }

    pub fn n(&self) -> usize {
        self.game.n_agents
    }

    pub fn horizon(&self) -> usize {
        self.game.horizon()
    }

    pub fn dt(&self) -> f64 {
        self.game.dt()
    }

    /// Collision weight of the (i ← j) term in agent i's cost: w4 of agent i,
    /// soft-mask reweighted when i is the masked ego.
    pub fn pair_scale(&self, i: usize, j: usize) -> f64 {
        let w4 = self.game.weights[i].w4;
        match self.soft_mask {
            Some(m) if m.ego == i => w4 * m.weight_for(j),
            _ => w4,
        }
    }

    /// ∇ of agent i's stage cost at step k with respect to its own state.
    /// Pure function of the joint positions at step k; costate terms are the
    /// caller's business.
    pub fn grad_x(&self, traj: &JointTrajectory, i: usize, k: usize) -> Vector4<f64> {
        let w = &self.game.weights[i];
        let s = &traj.states[k][i];
        let p_ref = crate::game::reference_position(
            &self.game.initial_states[i].position,
            &self.game.goals[i],
            k,
            self.horizon(),
        )
        .expect("step within horizon");
        let mut gp = (s.position - p_ref) * (2.0 * w.w1);
        for j in 0..self.n() {
            if j == i {
                continue;
            }
            let scale = self.pair_scale(i, j);
            if scale == 0.0 {
                continue;
            }
            let d = s.position - traj.states[k][j].position;
            gp += d * (-2.0 * scale * (-d.norm_squared()).exp());
        }
        if let Some(ext) = self.external {
            for q in &ext[k] {
                let d = s.position - q;
                gp += d * (-2.0 * w.w4 * (-d.norm_squared()).exp());
            }
        }
        let gv = s.velocity * (2.0 * w.w2);
        Vector4::new(gp.x, gp.y, gv.x, gv.y)
    }

    /// Costates of every agent eliminated by the backward recursion
    /// λ_T = ∇_x c_T, λ_k = ∇_x c_k + Aᵀ λ_{k+1}. Returned as
    /// `lambda[i][k-1]` for k = 1..=T.
    pub fn costates(&self, traj: &JointTrajectory) -> Vec<Vec<Vector4<f64>>> {
        let t = self.horizon();
        let dt = self.dt();
        let mut out = vec![vec![Vector4::zeros(); t]; self.n()];
        for i in 0..self.n() {
            let mut next = self.grad_x(traj, i, t);
            out[i][t - 1] = next;
            for k in (1..t).rev() {
                // Aᵀλ = [λ_p; dt·λ_p + λ_v]
                let g = self.grad_x(traj, i, k);
                let cur = Vector4::new(
                    g.x + next.x,
                    g.y + next.y,
                    g.z + dt * next.x + next.z,
                    g.w + dt * next.y + next.w,
                );
                out[i][k - 1] = cur;
                next = cur;
            }
        }
        out
    }

    /// ∞-norm of the stacked stationarity-in-control rows with costates
    /// eliminated — zero exactly at an open-loop Nash point.
    pub fn residual_inf(&self, traj: &JointTrajectory) -> f64 {
        let lambda = self.costates(traj);
        let dt = self.dt();
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let w3 = self.game.weights[i].w3;
            for k in 0..self.horizon() {
                let u = &traj.controls[k][i].acceleration;
                let lam = &lambda[i][k]; // λ_{k+1}
                let rx = 2.0 * w3 * u.x + dt * lam.z;
                let ry = 2.0 * w3 * u.y + dt * lam.w;
                worst = worst.max(rx.abs()).max(ry.abs());
            }
        }
        worst
    }
}
