//! Game data types, double-integrator dynamics, stage costs and masked-game
//! construction.
//!
//! All quantities are SI (meters, seconds). Types are immutable value objects
//! and every operation here is a pure function.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::GameError;

pub type Vec2 = Vector2<f64>;

/// Position and velocity of one agent in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl AgentState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self {
            position: Vec2::new(px, py),
            velocity: Vec2::new(vx, vy),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

impl From<AgentState> for [f64; 4] {
    fn from(s: AgentState) -> Self {
        [s.position.x, s.position.y, s.velocity.x, s.velocity.y]
    }
}

impl TryFrom<[f64; 4]> for AgentState {
    type Error = GameError;
    fn try_from(v: [f64; 4]) -> Result<Self, GameError> {
        let s = AgentState::new(v[0], v[1], v[2], v[3]);
        if !s.is_finite() {
            return Err(GameError::NonFinite("agent state"));
        }
        Ok(s)
    }
}

/// Acceleration input of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct Control {
    pub acceleration: Vec2,
}

impl Control {
    pub fn new(ax: f64, ay: f64) -> Self {
        Self { acceleration: Vec2::new(ax, ay) }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.acceleration.iter().all(|v| v.is_finite())
    }
}

impl From<Control> for [f64; 2] {
    fn from(c: Control) -> Self {
        [c.acceleration.x, c.acceleration.y]
    }
}

impl TryFrom<[f64; 2]> for Control {
    type Error = GameError;
    fn try_from(v: [f64; 2]) -> Result<Self, GameError> {
        let c = Control::new(v[0], v[1]);
        if !c.is_finite() {
            return Err(GameError::NonFinite("control"));
        }
        Ok(c)
    }
}

/// Time discretization of the game: step length and number of planned steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    /// Step length Δt in seconds.
    pub dt: f64,
    /// Number of planned steps T (so a trajectory holds T+1 states).
    pub horizon: usize,
}

impl DynamicsSpec {
    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(GameError::BadParameter("dt must be finite and > 0".into()));
        }
        if self.horizon < 1 {
            return Err(GameError::BadParameter("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// Nonnegative stage-cost weights: reference tracking, velocity, control
/// effort and collision avoidance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl CostWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Self {
        Self { w1, w2, w3, w4 }
    }

    /// The benchmark scenario weights used throughout the test harness.
    pub fn benchmark() -> Self {
        Self::new(0.1, 0.001, 0.1, 0.1)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !w.is_finite() || w < 0.0 {
                return Err(GameError::BadParameter(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Full parameterization of an N-player trajectory game: dynamics constants,
/// per-agent cost weights, initial states and goal positions.
///
/// This is the canonical scenario object; it serializes to/from the JSON
/// scenario file consumed by the CLI and the benchmark harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameSpecWire", into = "GameSpecWire")]
pub struct GameSpec {
    pub n_agents: usize,
    pub dynamics: DynamicsSpec,
    pub weights: Vec<CostWeights>,
    pub initial_states: Vec<AgentState>,
    pub goals: Vec<Vec2>,
}

/// Wire form of [`GameSpec`]: row-major numeric arrays, validated on read.
#[derive(Serialize, Deserialize)]
struct GameSpecWire {
    n_agents: usize,
    dynamics: DynamicsSpec,
    weights: Vec<CostWeights>,
    initial_states: Vec<[f64; 4]>,
    goals: Vec<[f64; 2]>,
}

impl From<GameSpec> for GameSpecWire {
    fn from(g: GameSpec) -> Self {
        Self {
            n_agents: g.n_agents,
            dynamics: g.dynamics,
            weights: g.weights,
            initial_states: g.initial_states.into_iter().map(Into::into).collect(),
            goals: g.goals.into_iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

impl TryFrom<GameSpecWire> for GameSpec {
    type Error = GameError;
    fn try_from(w: GameSpecWire) -> Result<Self, GameError> {
        let initial_states = w
            .initial_states
            .into_iter()
            .map(AgentState::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let goals: Vec<Vec2> = w.goals.into_iter().map(|g| Vec2::new(g[0], g[1])).collect();
        let spec = GameSpec {
            n_agents: w.n_agents,
            dynamics: w.dynamics,
            weights: w.weights,
            initial_states,
            goals,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl GameSpec {
    pub fn new(
        dynamics: DynamicsSpec,
        weights: Vec<CostWeights>,
        initial_states: Vec<AgentState>,
        goals: Vec<Vec2>,
    ) -> Result<Self, GameError> {
        let spec = Self { n_agents: initial_states.len(), dynamics, weights, initial_states, goals };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.n_agents < 1 {
            return Err(GameError::BadParameter("need at least one agent".into()));
        }
        self.dynamics.validate()?;
        for (name, len) in [
            ("weights", self.weights.len()),
            ("initial_states", self.initial_states.len()),
            ("goals", self.goals.len()),
        ] {
            if len != self.n_agents {
                return Err(GameError::DimensionMismatch(format!(
                    "{name} has {len} entries for {} agents",
                    self.n_agents
                )));
            }
        }
        for w in &self.weights {
            w.validate()?;
        }
        for s in &self.initial_states {
            if !s.is_finite() {
                return Err(GameError::NonFinite("initial state"));
            }
        }
        for g in &self.goals {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(GameError::NonFinite("goal"));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.dynamics.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("GameSpec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GameError> {
        serde_json::from_str(s).map_err(|e| GameError::Parse(e.to_string()))
    }

    /// Same game re-rooted at a new set of initial states; the reference path
    /// of each agent is re-anchored at its new start position.
    pub fn with_initial_states(&self, states: Vec<AgentState>) -> Result<Self, GameError> {
        let mut g = self.clone();
        g.initial_states = states;
        g.validate()?;
        Ok(g)
    }
}

/// Ego-centric selection mask over the other N−1 agents, indexed by the
/// non-ego agents in ascending agent-index order. Entries lie in [0, 1];
/// a mask is binary iff every entry is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub ego: usize,
    pub values: Vec<f64>,
}

impl SelectionMask {
    pub fn new(ego: usize, values: Vec<f64>) -> Result<Self, GameError> {
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(GameError::BadParameter(format!("mask entry {v} outside [0, 1]")));
            }
        }
        Ok(Self { ego, values })
    }

    pub fn all_ones(ego: usize, n_agents: usize) -> Self {
        Self { ego, values: vec![1.0; n_agents - 1] }
    }

    pub fn all_zeros(ego: usize, n_agents: usize) -> Self {
        Self { ego, values: vec![0.0; n_agents - 1] }
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Mask weight applied to the pair (ego, other). `other` must differ
    /// from the ego index.
    pub fn weight_for(&self, other: usize) -> f64 {
        debug_assert_ne!(other, self.ego);
        let idx = if other < self.ego { other } else { other - 1 };
        self.values[idx]
    }

    /// Original indices of the selected (mask entry 1) agents, ascending.
    /// Only meaningful for binary masks.
    pub fn selected_agents(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (slot, &v) in self.values.iter().enumerate() {
            let agent = if slot < self.ego { slot } else { slot + 1 };
            if v == 1.0 {
                out.push(agent);
            }
        }
        out
    }

    pub fn count_selected(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    fn check_for_game(&self, game: &GameSpec) -> Result<(), GameError> {
        if self.ego >= game.n_agents {
            return Err(GameError::IndexOutOfRange { index: self.ego, len: game.n_agents });
        }
        if self.values.len() != game.n_agents - 1 {
            return Err(GameError::DimensionMismatch(format!(
                "mask has {} entries for a {}-agent game",
                self.values.len(),
                game.n_agents
            )));
        }
        Ok(())
    }
}

/// All agents' states and controls over a horizon: (T+1)×N states and T×N
/// controls. Row index is the time step, column index the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub states: Vec<Vec<AgentState>>,
    pub controls: Vec<Vec<Control>>,
}

impl JointTrajectory {
    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, |row| row.len())
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Forward-integrate the controls from the given initial joint state.
    pub fn rollout(
        initial: &[AgentState],
        controls: &[Vec<Control>],
        dt: f64,
    ) -> Result<Self, GameError> {
        let n = initial.len();
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(initial.to_vec());
        for row in controls {
            if row.len() != n {
                return Err(GameError::DimensionMismatch(format!(
                    "control row has {} entries for {n} agents",
                    row.len()
                )));
            }
            let prev = states.last().unwrap();
            let mut next = Vec::with_capacity(n);
            for (s, c) in prev.iter().zip(row) {
                next.push(step_dynamics(s, c, dt)?);
            }
            states.push(next);
        }
        Ok(Self { states, controls: controls.to_vec() })
    }

    /// Maximum absolute defect of the discrete dynamics over all transitions.
    pub fn feasibility_violation(&self, dt: f64) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.controls.len() {
            for (i, c) in self.controls[k].iter().enumerate() {
                let pred = step_dynamics_unchecked(&self.states[k][i], c, dt);
                let got = &self.states[k + 1][i];
                let d = (pred.position - got.position)
                    .abs()
                    .max()
                    .max((pred.velocity - got.velocity).abs().max());
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn validate(&self, n_agents: usize, horizon: usize) -> Result<(), GameError> {
        if self.states.len() != horizon + 1 || self.controls.len() != horizon {
            return Err(GameError::DimensionMismatch(format!(
                "trajectory has {} states / {} controls for horizon {horizon}",
                self.states.len(),
                self.controls.len()
            )));
        }
        if self.states.iter().any(|r| r.len() != n_agents)
            || self.controls.iter().any(|r| r.len() != n_agents)
        {
            return Err(GameError::DimensionMismatch("trajectory agent count".into()));
        }
        Ok(())
    }

    /// Trajectory with agent `agent`'s states and controls replaced by the
    /// corresponding column of `other`.
    pub fn with_agent_replaced(&self, agent: usize, other: &JointTrajectory, other_agent: usize) -> Self {
        let mut out = self.clone();
        for (k, row) in out.states.iter_mut().enumerate() {
            row[agent] = other.states[k][other_agent];
        }
        for (k, row) in out.controls.iter_mut().enumerate() {
            row[agent] = other.controls[k][other_agent];
        }
        out
    }

    /// Flat vector view: all states (time-major, then agent, then px py vx vy)
    /// followed by all controls (time-major, then agent, then ax ay).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len() * self.n_agents() * 4 + self.controls.len() * self.n_agents() * 2);
        for row in &self.states {
            for s in row {
                out.extend_from_slice(&[s.position.x, s.position.y, s.velocity.x, s.velocity.y]);
            }
        }
        for row in &self.controls {
            for c in row {
                out.extend_from_slice(&[c.acceleration.x, c.acceleration.y]);
            }
        }
        out
    }

    /// Largest absolute state/control difference between two trajectories.
    pub fn max_abs_difference(&self, other: &JointTrajectory) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        assert_eq!(a.len(), b.len(), "trajectory shapes differ");
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// One Euler step of the double-integrator: p' = p + v·Δt, v' = v + a·Δt.
pub fn step_dynamics(state: &AgentState, control: &Control, dt: f64) -> Result<AgentState, GameError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GameError::BadParameter("dt must be finite and > 0".into()));
    }
    if !state.is_finite() {
        return Err(GameError::NonFinite("state"));
    }
    if !control.is_finite() {
        return Err(GameError::NonFinite("control"));
    }
    Ok(step_dynamics_unchecked(state, control, dt))
}

#[inline]
pub(crate) fn step_dynamics_unchecked(state: &AgentState, control: &Control, dt: f64) -> AgentState {
    AgentState {
        position: state.position + state.velocity * dt,
        velocity: state.velocity + control.acceleration * dt,
    }
}

/// Point on the straight reference path from `p0` to `pg` at step `k` of `t`:
/// the convex combination (1 − k/T)·p0 + (k/T)·pg.
pub fn reference_position(p0: &Vec2, pg: &Vec2, k: usize, t: usize) -> Result<Vec2, GameError> {
    if t < 1 {
        return Err(GameError::BadParameter("horizon must be >= 1".into()));
    }
    if k > t {
        return Err(GameError::BadParameter(format!("step {k} beyond horizon {t}")));
    }
    let alpha = k as f64 / t as f64;
    Ok(p0 * (1.0 - alpha) + pg * alpha)
}

/// Private, shared and total stage cost of one agent at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    pub private: f64,
    pub shared: f64,
    pub total: f64,
}

/// Stage cost of agent `ego` at step `k` of the game's horizon.
///
/// Private part: w1‖p − p_ref,k‖² + w2‖v‖² + w3‖u‖². Shared part:
/// w4 Σ_{j≠i} exp(−‖p_i − p_j‖²), each term reweighted by the mask entry for
/// agent j when a soft mask is supplied.
pub fn stage_cost(
    spec: &GameSpec,
    ego: usize,
    joint_state: &[AgentState],
    joint_control: &[Control],
    k: usize,
    mask: Option<&SelectionMask>,
) -> Result<StageCost, GameError> {
    let n = spec.n_agents;
    if ego >= n {
        return Err(GameError::IndexOutOfRange { index: ego, len: n });
    }
    if joint_state.len() != n || joint_control.len() != n {
        return Err(GameError::DimensionMismatch(format!(
            "joint state/control rows ({}, {}) for {n} agents",
            joint_state.len(),
            joint_control.len()
        )));
    }
    if let Some(m) = mask {
        m.check_for_game(spec)?;
        if m.ego != ego {
            return Err(GameError::MaskEgoMismatch { mask_ego: m.ego, ego });
        }
    }
    let w = &spec.weights[ego];
    let p_ref = reference_position(
        &spec.initial_states[ego].position,
        &spec.goals[ego],
        k,
        spec.horizon(),
    )?;
    let s = &joint_state[ego];
    let u = &joint_control[ego];
    let private = w.w1 * (s.position - p_ref).norm_squared()
        + w.w2 * s.velocity.norm_squared()
        + w.w3 * u.acceleration.norm_squared();
    let mut shared = 0.0;
    for j in 0..n {
        if j == ego {
            continue;
        }
        let m = mask.map_or(1.0, |m| m.weight_for(j));
        let d2 = (s.position - joint_state[j].position).norm_squared();
        shared += w.w4 * m * (-d2).exp();
    }
    Ok(StageCost { private, shared, total: private + shared })
}

/// Cumulative cost of one agent along a joint trajectory, optionally with the
/// agent's shared cost soft-masked. The terminal stage carries no control term.
pub fn agent_total_cost(
    spec: &GameSpec,
    agent: usize,
    trajectory: &JointTrajectory,
    mask: Option<&SelectionMask>,
) -> Result<f64, GameError> {
    trajectory.validate(spec.n_agents, spec.horizon())?;
    let zero = vec![Control::zero(); spec.n_agents];
    let mut total = 0.0;
    for k in 0..=spec.horizon() {
        let controls = if k < spec.horizon() { &trajectory.controls[k] } else { &zero };
        total += stage_cost(spec, agent, &trajectory.states[k], controls, k, mask)?.total;
    }
    Ok(total)
}

/// Reduced game for an ego agent under a binary selection mask, plus the map
/// from reduced agent indices back to the original ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGame {
    pub game: GameSpec,
    /// Ego's index inside the reduced game.
    pub ego: usize,
    /// `index_map[reduced] == original`.
    pub index_map: Vec<usize>,
}

/// Build the reduced game containing the ego agent plus exactly the agents
/// with mask entry 1, preserving their initial states, goals and weights.
pub fn build_masked_game(
    game: &GameSpec,
    ego: usize,
    mask: &SelectionMask,
) -> Result<MaskedGame, GameError> {
    if ego >= game.n_agents {
        return Err(GameError::IndexOutOfRange { index: ego, len: game.n_agents });
    }
    mask.check_for_game(game)?;
    if mask.ego != ego {
        return Err(GameError::MaskEgoMismatch { mask_ego: mask.ego, ego });
    }
    if !mask.is_binary() {
        return Err(GameError::MaskNotBinary);
    }
    let mut index_map = Vec::new();
    for j in 0..game.n_agents {
        if j == ego || mask.weight_for(j) == 1.0 {
            index_map.push(j);
        }
    }
    let reduced = GameSpec {
        n_agents: index_map.len(),
        dynamics: game.dynamics,
        weights: index_map.iter().map(|&j| game.weights[j]).collect(),
        initial_states: index_map.iter().map(|&j| game.initial_states[j]).collect(),
        goals: index_map.iter().map(|&j| game.goals[j]).collect(),
    };
    let new_ego = index_map.iter().position(|&j| j == ego).unwrap();
    Ok(MaskedGame { game: reduced, ego: new_ego, index_map })
}

/// Which part of the state an observation exposes: the full state or the
/// position only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Full,
    Partial,
}

impl ObservationKind {
    pub fn feature_dim(self) -> usize {
        match self {
            ObservationKind::Full => 4,
            ObservationKind::Partial => 2,
        }
    }
}

/// K+1 observed frames of all agents. Frames always store full states; the
/// kind flag controls which features an observer may read (partial readers
/// see positions only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub kind: ObservationKind,
    pub frames: Vec<Vec<AgentState>>,
}

impl ObservationWindow {
    pub fn new(kind: ObservationKind, frames: Vec<Vec<AgentState>>) -> Result<Self, GameError> {
        let w = Self { kind, frames };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.frames.is_empty() {
            return Err(GameError::BadParameter("observation window is empty".into()));
        }
        let n = self.frames[0].len();
        if n == 0 {
            return Err(GameError::BadParameter("observation window has no agents".into()));
        }
        if self.frames.iter().any(|f| f.len() != n) {
            return Err(GameError::DimensionMismatch("observation frame agent counts".into()));
        }
        Ok(())
    }

    /// Number of frames, K+1.
    pub fn n_steps(&self) -> usize {
        self.frames.len()
    }

    pub fn n_agents(&self) -> usize {
        self.frames[0].len()
    }

    /// Flattened network input size: (K+1) · N · d.
    pub fn input_size(&self) -> usize {
        self.n_steps() * self.n_agents() * self.kind.feature_dim()
    }

    fn push_features(&self, state: &AgentState, out: &mut Vec<f64>) {
        out.push(state.position.x);
        out.push(state.position.y);
        if self.kind == ObservationKind::Full {
            out.push(state.velocity.x);
            out.push(state.velocity.y);
        }
    }

    /// Time-major flattening with the agent axis permuted by `order`
    /// (e.g. ego first): [k][order[a]][feature].
    pub fn flatten_with_order(&self, order: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps() * order.len() * self.kind.feature_dim());
        for frame in &self.frames {
            for &a in order {
                self.push_features(&frame[a], &mut out);
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let order: Vec<usize> = (0..self.n_agents()).collect();
        self.flatten_with_order(&order)
    }

    /// Feature sequence of one agent over the window, for sequence encoders.
    pub fn agent_sequence(&self, agent: usize) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|frame| {
                let mut f = Vec::with_capacity(self.kind.feature_dim());
                self.push_features(&frame[agent], &mut f);
                f
            })
            .collect()
    }

    /// Same frames exposed under a different observation kind.
    pub fn with_kind(&self, kind: ObservationKind) -> Self {
        Self { kind, frames: self.frames.clone() }
    }

    /// Window restricted to a subset of agents (in the order given).
    pub fn select_agents(&self, agents: &[usize]) -> Self {
        Self {
            kind: self.kind,
            frames: self
                .frames
                .iter()
                .map(|frame| agents.iter().map(|&a| frame[a]).collect())
                .collect(),
        }
    }
}

/// Agent ordering that puts the ego first and the rest in ascending index
/// order — the convention mask entries are aligned to.
pub fn ego_first_order(ego: usize, n_agents: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n_agents);
    order.push(ego);
    order.extend((0..n_agents).filter(|&j| j != ego));
    order
}
