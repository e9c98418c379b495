//! Training loops for the GIN and the PSN, and the PSN loss whose task term
//! backpropagates through the game solver via its adjoint sensitivity.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::game::{
    ego_first_order, reference_position, AgentState, GameSpec, JointTrajectory, ObservationKind,
    ObservationWindow, SelectionMask, Vec2,
};
use crate::solver::{
    adjoint_product, solve_olne, FlatLayout, OlneSolution, SensitivityParameter, SolverConfig,
};

use super::{nn_backward, nn_forward, EncoderKind, HeadKind, NetworkConfig, NetworkParams};

/// One supervised example: an observation window, the scene's ground-truth
/// goals, the game snapshot at the prediction instant, and the realized
/// full-game future over the snapshot horizon (`future_states[k-1]` is the
/// joint state at step k of the snapshot game).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub observation: ObservationWindow,
    pub ego: usize,
    pub goals: Vec<Vec2>,
    pub snapshot: GameSpec,
    pub future_states: Vec<Vec<AgentState>>,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<(), TrainError> {
        let n = self.snapshot.n_agents;
        self.observation.validate().map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
        if self.observation.n_agents() != n
            || self.goals.len() != n
            || self.ego >= n
            || self.future_states.len() != self.snapshot.horizon()
            || self.future_states.iter().any(|row| row.len() != n)
        {
            return Err(TrainError::ShapeMismatch("inconsistent training sample".into()));
        }
        Ok(())
    }

    /// Ego's observed future positions, the targets of the similarity loss.
    pub fn future_ego_positions(&self) -> Vec<Vec2> {
        self.future_states.iter().map(|row| row[self.ego].position).collect()
    }
}

/// A homogeneous set of training samples. Windows are stored with full
/// states; partial-observation networks read the position features only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_agents: usize,
    /// Window length K+1.
    pub window: usize,
    /// Snapshot-game horizon T.
    pub horizon: usize,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for s in &self.samples {
            s.validate()?;
            if s.observation.n_steps() != self.window
                || s.snapshot.n_agents != self.n_agents
                || s.snapshot.horizon() != self.horizon
            {
                return Err(TrainError::ShapeMismatch("sample does not match dataset".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let d: Dataset =
            serde_json::from_str(text).map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnTask {
    Prediction,
    Planning,
}

/// Parameter-update rule for the training loops. Adam is the default: the
/// benchmark learning rate (1e-3) is an Adam-scale step, and plain gradient
/// descent at that rate cannot binarize the masks within the stated epoch
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, lr: f64, momentum: f64, n: usize) -> Self {
        Self { kind, lr, momentum, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..params.len() {
                    self.m[i] = self.momentum * self.m[i] + grad[i];
                    params[i] -= self.lr * self.m[i];
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
                let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
                for i in 0..params.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Normalization of the binarization loss Σ m(1−m): the paper's formula
/// divides by N while summing the N−1 mask entries; dividing by N−1 is the
/// natural alternative, exposed as a config flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinaryDivisor {
    #[default]
    NAgents,
    NOthers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight on the sparsity loss (σ1 for prediction, σ3 for planning).
    pub sigma_sparsity: f64,
    /// Weight on the task loss (σ2 similarity / σ4 game cost).
    pub sigma_task: f64,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub observation: ObservationKind,
    pub optimizer: OptimizerKind,
    /// Heavy-ball coefficient, used by the SGD optimizer only.
    pub momentum: f64,
    pub binary_divisor: BinaryDivisor,
    /// Dropout rate between the head's hidden layers during training.
    pub dropout: f64,
    /// An epoch whose skipped-sample fraction exceeds this aborts training.
    pub max_skip_fraction: f64,
}

impl TrainConfig {
    fn base(sigma_sparsity: f64, sigma_task: f64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            sigma_sparsity,
            sigma_task,
            seed: 0,
            encoder: EncoderKind::FlattenMlp,
            observation: ObservationKind::Full,
            optimizer: OptimizerKind::default(),
            momentum: 0.0,
            binary_divisor: BinaryDivisor::default(),
            dropout: 0.3,
            max_skip_fraction: 0.2,
        }
    }

    /// Prediction-task defaults: σ = (0.075, 0.075).
    pub fn prediction() -> Self {
        Self::base(0.075, 0.075)
    }

    /// Planning-task defaults: σ = (0.5, 0.5).
    pub fn planning() -> Self {
        Self::base(0.5, 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnLossParts {
    pub binary: f64,
    pub sparsity: f64,
    pub task: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PsnLossConfig {
    pub task: PsnTask,
    pub sigma_sparsity: f64,
    pub sigma_task: f64,
    pub binary_divisor: BinaryDivisor,
    pub solver: SolverConfig,
}

pub struct PsnLossOutput {
    pub parts: PsnLossParts,
    /// dLoss/dMask per mask slot.
    pub d_mask: Vec<f64>,
    /// The relaxed-game solution, returned for warm-start reuse.
    pub solution: OlneSolution,
}

/// The PSN training loss for one sample at one soft mask:
/// binarization + σ·sparsity + σ·task, where the task term is either the
/// similarity of the relaxed-game ego trajectory to the observed one
/// (prediction) or the ego's true game cost against the frozen full-game
/// futures (planning). The task term's mask gradient flows through the
/// solver's adjoint sensitivity.
pub fn psn_loss(
    mask: &SelectionMask,
    sample: &TrainingSample,
    cfg: &PsnLossConfig,
    warm_start: Option<&JointTrajectory>,
) -> Result<PsnLossOutput, TrainError> {
    sample.validate()?;
    let n = sample.snapshot.n_agents;
    let t = sample.snapshot.horizon();
    if mask.ego != sample.ego || mask.values.len() != n - 1 {
        return Err(TrainError::ShapeMismatch("mask does not fit the sample".into()));
    }

    let solution = solve_olne(&sample.snapshot, Some(mask), warm_start, &cfg.solver, None)?;
    if !solution.converged {
        return Err(TrainError::SolveNotConverged);
    }

    let divisor = match cfg.binary_divisor {
        BinaryDivisor::NAgents => n as f64,
        BinaryDivisor::NOthers => (n - 1) as f64,
    };
    let binary: f64 = mask.values.iter().map(|m| m * (1.0 - m)).sum::<f64>() / divisor;
    let sparsity: f64 = mask.values.iter().sum::<f64>() / n as f64;

    // Task loss and its cotangent over the flattened relaxed solution.
    let layout = FlatLayout { n_agents: n, horizon: t };
    let mut v = vec![0.0; layout.len()];
    let ego = sample.ego;
    let traj = &solution.trajectory;
    let task = match cfg.task {
        PsnTask::Prediction => {
            let mut total = 0.0;
            for k in 1..=t {
                let diff = traj.states[k][ego].position - sample.future_states[k - 1][ego].position;
                let nrm = diff.norm();
                total += nrm;
                if nrm > 1e-12 {
                    v[layout.state_idx(k, ego, 0)] += diff.x / nrm;
                    v[layout.state_idx(k, ego, 1)] += diff.y / nrm;
                }
            }
            total
        }
        PsnTask::Planning => {
            let w = sample.snapshot.weights[ego];
            let p0 = sample.snapshot.initial_states[ego].position;
            let goal = sample.snapshot.goals[ego];
            let mut total = 0.0;
            for k in 0..=t {
                let s = &traj.states[k][ego];
                let p_ref = reference_position(&p0, &goal, k, t)
                    .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
                total += w.w1 * (s.position - p_ref).norm_squared()
                    + w.w2 * s.velocity.norm_squared();
                if k >= 1 {
                    let gp = (s.position - p_ref) * (2.0 * w.w1);
                    v[layout.state_idx(k, ego, 0)] += gp.x;
                    v[layout.state_idx(k, ego, 1)] += gp.y;
                    v[layout.state_idx(k, ego, 2)] += 2.0 * w.w2 * s.velocity.x;
                    v[layout.state_idx(k, ego, 3)] += 2.0 * w.w2 * s.velocity.y;
                }
                if k < t {
                    let u = &traj.controls[k][ego].acceleration;
                    total += w.w3 * u.norm_squared();
                    v[layout.control_idx(k, ego, 0)] += 2.0 * w.w3 * u.x;
                    v[layout.control_idx(k, ego, 1)] += 2.0 * w.w3 * u.y;
                }
                for j in (0..n).filter(|&j| j != ego) {
                    let q = if k == 0 {
                        sample.snapshot.initial_states[j].position
                    } else {
                        sample.future_states[k - 1][j].position
                    };
                    let d = s.position - q;
                    let e = (-d.norm_squared()).exp();
                    total += w.w4 * e;
                    if k >= 1 {
                        let g = d * (-2.0 * w.w4 * e);
                        v[layout.state_idx(k, ego, 0)] += g.x;
                        v[layout.state_idx(k, ego, 1)] += g.y;
                    }
                }
            }
            total
        }
    };

    let adjoint =
        adjoint_product(&sample.snapshot, Some(mask), &solution, &v, SensitivityParameter::Mask)?;
    let d_mask: Vec<f64> = mask
        .values
        .iter()
        .zip(&adjoint)
        .map(|(m, a)| (1.0 - 2.0 * m) / divisor + cfg.sigma_sparsity / n as f64 + cfg.sigma_task * a)
        .collect();

    let total = binary + cfg.sigma_sparsity * sparsity + cfg.sigma_task * task;
    Ok(PsnLossOutput {
        parts: PsnLossParts { binary, sparsity, task, total },
        d_mask,
        solution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub binary: f64,
    pub sparsity: f64,
    pub task: f64,
    pub skipped: usize,
}

pub struct TrainedPsn {
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GinEpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

pub struct TrainedGin {
    pub params: NetworkParams,
    pub history: Vec<GinEpochRecord>,
}

fn seeded_shuffle(indices: &mut [usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

fn dropout_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (sample as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Mini-batch gradient descent on the PSN task loss. Samples whose relaxed
/// game fails to converge are skipped and counted; an epoch skipping more
/// than the configured fraction aborts.
pub fn train_psn(
    dataset: &Dataset,
    task: PsnTask,
    config: &TrainConfig,
    solver: &SolverConfig,
) -> Result<TrainedPsn, TrainError> {
    dataset.validate()?;
    let n = dataset.n_agents;
    let mut net_config = NetworkConfig::new(
        HeadKind::Psn,
        config.encoder,
        config.observation,
        n,
        dataset.window,
    );
    net_config.dropout = config.dropout;
    let mut params = NetworkParams::init(net_config, config.seed)?;
    let loss_cfg = PsnLossConfig {
        task,
        sigma_sparsity: config.sigma_sparsity,
        sigma_task: config.sigma_task,
        binary_divisor: config.binary_divisor,
        solver: *solver,
    };

    let n_samples = dataset.samples.len();
    let mut warm: Vec<Option<JointTrajectory>> = vec![None; n_samples];
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.momentum,
        params.n_params(),
    );
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_samples).collect();
        seeded_shuffle(&mut order, dropout_seed(config.seed, epoch, usize::MAX));

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut processed = 0usize;
        let mut skipped = 0usize;

        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grad_sum = vec![0.0; params.n_params()];
            let mut batch_count = 0usize;
            for &idx in batch {
                let sample = &dataset.samples[idx];
                let agent_order = ego_first_order(sample.ego, n);
                let obs = sample.observation.with_kind(config.observation);
                let (y, tape) = nn_forward(
                    &params,
                    &obs,
                    &agent_order,
                    true,
                    dropout_seed(config.seed, epoch, idx),
                )?;
                let mask = SelectionMask { ego: sample.ego, values: y.iter().copied().collect() };
                match psn_loss(&mask, sample, &loss_cfg, warm[idx].as_ref()) {
                    Ok(out) => {
                        if !out.parts.total.is_finite() {
                            return Err(TrainError::Diverged { epoch });
                        }
                        warm[idx] = Some(out.solution.trajectory.clone());
                        let g = nn_backward(&params, &tape.expect("train mode"), &out.d_mask)?;
                        for (acc, gi) in grad_sum.iter_mut().zip(&g) {
                            *acc += gi;
                        }
                        batch_count += 1;
                        processed += 1;
                        sums.0 += out.parts.total;
                        sums.1 += out.parts.binary;
                        sums.2 += out.parts.sparsity;
                        sums.3 += out.parts.task;
                    }
                    Err(TrainError::SolveNotConverged) => {
                        skipped += 1;
                        warm[idx] = None;
                    }
                    Err(e) => return Err(e),
                }
            }
            if batch_count > 0 {
                let mut flat = params.flat();
                let scale = 1.0 / batch_count as f64;
                for g in grad_sum.iter_mut() {
                    *g *= scale;
                }
                optimizer.apply(&mut flat, &grad_sum);
                params.set_flat(&flat)?;
            }
        }

        if (skipped as f64) > config.max_skip_fraction * n_samples as f64 {
            return Err(TrainError::TooManySkipped { epoch, skipped, total: n_samples });
        }
        let denom = processed.max(1) as f64;
        let record = EpochRecord {
            epoch,
            total: sums.0 / denom,
            binary: sums.1 / denom,
            sparsity: sums.2 / denom,
            task: sums.3 / denom,
            skipped,
        };
        if !record.total.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(record);
    }

    Ok(TrainedPsn { params, history })
}

/// Mini-batch gradient descent on the mean goal-inference error
/// (1/(|D|·N)) Σ_d Σ_i ‖p_g,ref − ĝ_i‖.
pub fn train_gin(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedGin, TrainError> {
    dataset.validate()?;
    let n = dataset.n_agents;
    let mut net_config = NetworkConfig::new(
        HeadKind::Gin,
        config.encoder,
        config.observation,
        n,
        dataset.window,
    );
    net_config.dropout = config.dropout;
    let mut params = NetworkParams::init(net_config, config.seed)?;
    let natural: Vec<usize> = (0..n).collect();
    let n_samples = dataset.samples.len();
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.momentum,
        params.n_params(),
    );
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_samples).collect();
        seeded_shuffle(&mut order, dropout_seed(config.seed, epoch, usize::MAX));
        let mut loss_sum = 0.0;

        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grad_sum = vec![0.0; params.n_params()];
            for &idx in batch {
                let sample = &dataset.samples[idx];
                let obs = sample.observation.with_kind(config.observation);
                let (y, tape) = nn_forward(
                    &params,
                    &obs,
                    &natural,
                    true,
                    dropout_seed(config.seed, epoch, idx),
                )?;
                let mut d_out = vec![0.0; y.len()];
                for i in 0..n {
                    let est = Vec2::new(y[2 * i], y[2 * i + 1]);
                    let diff = est - sample.goals[i];
                    let nrm = diff.norm();
                    loss_sum += nrm;
                    if nrm > 1e-12 {
                        d_out[2 * i] = diff.x / nrm;
                        d_out[2 * i + 1] = diff.y / nrm;
                    }
                }
                let g = nn_backward(&params, &tape.expect("train mode"), &d_out)?;
                for (acc, gi) in grad_sum.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let mut flat = params.flat();
            let scale = 1.0 / (batch.len() as f64 * n as f64);
            for g in grad_sum.iter_mut() {
                *g *= scale;
            }
            optimizer.apply(&mut flat, &grad_sum);
            params.set_flat(&flat)?;
        }

        let loss = loss_sum / (n_samples as f64 * n as f64);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(GinEpochRecord { epoch, loss });
    }

    Ok(TrainedGin { params, history })
}

/// Goal estimates for every agent from an observation window (inference
/// mode, natural agent order).
pub fn infer_goals(
    params: &NetworkParams,
    observation: &ObservationWindow,
) -> Result<Vec<Vec2>, TrainError> {
    if params.config.head != HeadKind::Gin {
        return Err(TrainError::ShapeMismatch("not a goal-inference network".into()));
    }
    let natural: Vec<usize> = (0..observation.n_agents()).collect();
    let obs = observation.with_kind(params.config.observation);
    let (y, _) = nn_forward(params, &obs, &natural, false, 0)?;
    Ok((0..observation.n_agents()).map(|i| Vec2::new(y[2 * i], y[2 * i + 1])).collect())
}

/// Soft selection mask from a PSN for the given ego (inference mode, ego
/// first in the input ordering; output slots follow the mask convention).
pub fn psn_soft_mask(
    params: &NetworkParams,
    observation: &ObservationWindow,
    ego: usize,
) -> Result<Vec<f64>, TrainError> {
    if params.config.head != HeadKind::Psn {
        return Err(TrainError::ShapeMismatch("not a player-selection network".into()));
    }
    let order = ego_first_order(ego, observation.n_agents());
    let obs = observation.with_kind(params.config.observation);
    let (y, _) = nn_forward(params, &obs, &order, false, 0)?;
    Ok(y.iter().copied().collect())
}

/// Compute the L_Goal of a network on a dataset without training (used for
/// held-out evaluation).
pub fn gin_goal_error(params: &NetworkParams, dataset: &Dataset) -> Result<f64, TrainError> {
    dataset.validate()?;
    let mut total = 0.0;
    for sample in &dataset.samples {
        let goals = infer_goals(params, &sample.observation)?;
        for (est, truth) in goals.iter().zip(&sample.goals) {
            total += (est - truth).norm();
        }
    }
    Ok(total / (dataset.samples.len() as f64 * dataset.n_agents as f64))
}

pub use super::checkpoint::{decode_binary, decode_json, encode_binary, encode_json};
