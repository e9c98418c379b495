//! Minimal reverse-mode differentiable network kernel and the two task
//! networks built on it: the Goal Inference Network (GIN) and the Player
//! Selection Network (PSN).
//!
//! Both networks share one architecture: a per-agent sequence encoder (either
//! a flatten-only encoder feeding the head directly, or a GRU with shared
//! weights across agents), an MLP head 256→128→32 with rectified-linear
//! activations and dropout between the hidden layers, and a task-specific
//! output layer — linear to 2N goal coordinates for the GIN, linear plus a
//! logistic squash to N−1 mask entries for the PSN.
//!
//! Everything runs on f64 so gradients can be verified against central
//! finite differences tightly.

mod checkpoint;
mod gru;
pub mod train;

pub use checkpoint::{load_params, save_params};
pub use train::{
    gin_goal_error, infer_goals, psn_loss, psn_soft_mask, train_gin, train_psn, BinaryDivisor,
    Dataset, EpochRecord, GinEpochRecord, OptimizerKind, PsnLossConfig, PsnLossParts, PsnTask,
    TrainConfig, TrainedGin, TrainedPsn, TrainingSample,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::game::{ObservationKind, ObservationWindow};
use gru::{GruParams, GruTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Flatten the observation window into one vector and feed the head.
    FlattenMlp,
    /// Shared-weight GRU over each agent's sequence; final hidden states are
    /// concatenated.
    Gru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear output of size 2N, reshaped to per-agent goal estimates.
    Gin,
    /// Linear output of size N−1 squashed through a logistic, one soft-mask
    /// entry per non-ego agent.
    Psn,
}

/// Static shape description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub head: HeadKind,
    pub encoder: EncoderKind,
    pub observation: ObservationKind,
    pub n_agents: usize,
    /// Window length K+1.
    pub window: usize,
    pub hidden: Vec<usize>,
    pub gru_hidden: usize,
    pub dropout: f64,
}

impl NetworkConfig {
    pub fn new(
        head: HeadKind,
        encoder: EncoderKind,
        observation: ObservationKind,
        n_agents: usize,
        window: usize,
    ) -> Self {
        Self {
            head,
            encoder,
            observation,
            n_agents,
            window,
            hidden: vec![256, 128, 32],
            gru_hidden: 64,
            dropout: 0.3,
        }
    }

    /// Flattened observation size (K+1)·N·d.
    pub fn input_size(&self) -> usize {
        self.window * self.n_agents * self.observation.feature_dim()
    }

    pub fn encoder_output(&self) -> usize {
        match self.encoder {
            EncoderKind::FlattenMlp => self.input_size(),
            EncoderKind::Gru => self.gru_hidden * self.n_agents,
        }
    }

    pub fn output_size(&self) -> usize {
        match self.head {
            HeadKind::Gin => 2 * self.n_agents,
            HeadKind::Psn => self.n_agents - 1,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.n_agents < 2 || self.window == 0 {
            return Err(TrainError::ShapeMismatch("degenerate network config".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::ShapeMismatch("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a)),
            b: DVector::zeros(rows),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { w: DMatrix::zeros(self.w.nrows(), self.w.ncols()), b: DVector::zeros(self.b.len()) }
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

/// All weights of one network plus its shape description. The parameter
/// vector is exposed as a flat view for optimizers and checkpoints; the flat
/// order is: GRU (w_ih, w_hh, b_ih, b_hh, when present), hidden layers
/// (w then b each), output layer (w then b), matrices column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub gru: Option<GruParams>,
    pub layers: Vec<Linear>,
    pub output: Linear,
}

impl NetworkParams {
    /// Fresh network with uniform(−a, a) weights, a = √(6/(fan_in+fan_out)),
    /// and zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = match config.encoder {
            EncoderKind::FlattenMlp => None,
            EncoderKind::Gru => Some(GruParams::init(
                &mut rng,
                config.observation.feature_dim(),
                config.gru_hidden,
            )),
        };
        let mut layers = Vec::new();
        let mut prev = config.encoder_output();
        for &h in &config.hidden {
            layers.push(Linear::init(&mut rng, h, prev));
            prev = h;
        }
        let output = Linear::init(&mut rng, config.output_size(), prev);
        Ok(Self { config, gru, layers, output })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            gru: self.gru.as_ref().map(GruParams::zeros_like),
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    fn for_each(&self, mut f: impl FnMut(&f64)) {
        if let Some(g) = &self.gru {
            for v in g.w_ih.iter().chain(g.w_hh.iter()).chain(g.b_ih.iter()).chain(g.b_hh.iter()) {
                f(v);
            }
        }
        for l in self.layers.iter().chain(std::iter::once(&self.output)) {
            for v in l.w.iter().chain(l.b.iter()) {
                f(v);
            }
        }
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        if let Some(g) = &mut self.gru {
            for v in g
                .w_ih
                .iter_mut()
                .chain(g.w_hh.iter_mut())
                .chain(g.b_ih.iter_mut())
                .chain(g.b_hh.iter_mut())
            {
                f(v);
            }
        }
        for l in self.layers.iter_mut().chain(std::iter::once(&mut self.output)) {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                f(v);
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.for_each(|v| out.push(*v));
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), TrainError> {
        if values.len() != self.n_params() {
            return Err(TrainError::ShapeMismatch(format!(
                "flat vector has {} entries for {} parameters",
                values.len(),
                self.n_params()
            )));
        }
        let mut it = values.iter();
        self.for_each_mut(|v| *v = *it.next().unwrap());
        Ok(())
    }

    /// self += alpha · other, shape-checked.
    pub fn axpy(&mut self, alpha: f64, other: &NetworkParams) {
        let flat = other.flat();
        let mut it = flat.iter();
        self.for_each_mut(|v| *v += alpha * *it.next().unwrap());
    }

    fn check_observation(&self, observation: &ObservationWindow) -> Result<(), TrainError> {
        let c = &self.config;
        if observation.kind != c.observation
            || observation.n_agents() != c.n_agents
            || observation.n_steps() != c.window
        {
            return Err(TrainError::ShapeMismatch(format!(
                "observation is {:?} {}x{} agents, network wants {:?} {}x{}",
                observation.kind,
                observation.n_steps(),
                observation.n_agents(),
                c.observation,
                c.window,
                c.n_agents,
            )));
        }
        Ok(())
    }
}

/// Activation record of one forward pass in train mode; consumed by
/// [`nn_backward`].
pub struct Tape {
    n_params: usize,
    encoder_input: EncoderInput,
    gru_traces: Vec<GruTrace>,
    /// Input activation of each hidden layer (index 0 = encoder output).
    layer_inputs: Vec<DVector<f64>>,
    /// Pre-activations of each hidden layer.
    layer_pre: Vec<DVector<f64>>,
    dropout_masks: Vec<Option<DVector<f64>>>,
    output_input: DVector<f64>,
    output: DVector<f64>,
}

enum EncoderInput {
    Flat,
    Sequences(Vec<Vec<DVector<f64>>>),
}

fn relu(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

fn sigmoid(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Forward pass. `agent_order` permutes the observation's agent axis before
/// encoding (PSN inputs put the ego first; GIN uses the natural order).
/// In train mode, dropout is active — seeded by `dropout_seed` — and an
/// activation tape is returned for the backward pass.
pub fn nn_forward(
    params: &NetworkParams,
    observation: &ObservationWindow,
    agent_order: &[usize],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(DVector<f64>, Option<Tape>), TrainError> {
    params.check_observation(observation)?;
    if agent_order.len() != params.config.n_agents {
        return Err(TrainError::ShapeMismatch("agent order length".into()));
    }

    // Encoder.
    let mut gru_traces = Vec::new();
    let (enc, encoder_input) = match params.config.encoder {
        EncoderKind::FlattenMlp => (
            DVector::from_vec(observation.flatten_with_order(agent_order)),
            EncoderInput::Flat,
        ),
        EncoderKind::Gru => {
            let g = params.gru.as_ref().expect("gru params present");
            let mut enc = DVector::zeros(params.config.encoder_output());
            let mut seqs = Vec::with_capacity(agent_order.len());
            for (slot, &agent) in agent_order.iter().enumerate() {
                let seq: Vec<DVector<f64>> = observation
                    .agent_sequence(agent)
                    .into_iter()
                    .map(DVector::from_vec)
                    .collect();
                let (h, trace) = g.forward(&seq, train_mode);
                enc.rows_mut(slot * params.config.gru_hidden, params.config.gru_hidden)
                    .copy_from(&h);
                if let Some(t) = trace {
                    gru_traces.push(t);
                }
                seqs.push(seq);
            }
            (enc, EncoderInput::Sequences(seqs))
        }
    };

    // Head with dropout between hidden layers.
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut layer_inputs = Vec::new();
    let mut layer_pre = Vec::new();
    let mut dropout_masks = Vec::new();
    let mut a = enc;
    let n_hidden = params.layers.len();
    for (l, layer) in params.layers.iter().enumerate() {
        layer_inputs.push(a.clone());
        let z = layer.forward(&a);
        a = relu(&z);
        layer_pre.push(z);
        let mask = if train_mode && l + 1 < n_hidden && params.config.dropout > 0.0 {
            let p = params.config.dropout;
            let keep = 1.0 - p;
            let m = DVector::from_fn(a.len(), |_, _| {
                if dropout_rng.random_range(0.0..1.0) < p {
                    0.0
                } else {
                    1.0 / keep
                }
            });
            a.component_mul_assign(&m);
            Some(m)
        } else {
            None
        };
        dropout_masks.push(mask);
    }

    let output_input = a;
    let z_out = params.output.forward(&output_input);
    let y = match params.config.head {
        HeadKind::Gin => z_out,
        HeadKind::Psn => sigmoid(&z_out),
    };

    let tape = train_mode.then(|| Tape {
        n_params: params.n_params(),
        encoder_input,
        gru_traces,
        layer_inputs,
        layer_pre,
        dropout_masks,
        output_input,
        output: y.clone(),
    });
    Ok((y, tape))
}

/// Reverse-mode accumulation: dLoss/dParams for a given dLoss/dOutput, as a
/// flat vector aligned with [`NetworkParams::flat`].
pub fn nn_backward(
    params: &NetworkParams,
    tape: &Tape,
    d_output: &[f64],
) -> Result<Vec<f64>, TrainError> {
    if tape.n_params != params.n_params() {
        return Err(TrainError::ShapeMismatch("tape does not match these parameters".into()));
    }
    if d_output.len() != params.config.output_size() {
        return Err(TrainError::ShapeMismatch(format!(
            "output gradient has {} entries for output size {}",
            d_output.len(),
            params.config.output_size()
        )));
    }
    let mut grad = params.zeros_like();
    let dy = DVector::from_column_slice(d_output);

    // Output layer (logistic squash for the PSN head).
    let dz_out = match params.config.head {
        HeadKind::Gin => dy,
        HeadKind::Psn => {
            let y = &tape.output;
            DVector::from_fn(dy.len(), |i, _| dy[i] * y[i] * (1.0 - y[i]))
        }
    };
    grad.output.w.gemm(1.0, &dz_out, &tape.output_input.transpose(), 1.0);
    grad.output.b += &dz_out;
    let mut da = params.output.w.transpose() * &dz_out;

    // Hidden layers in reverse.
    for l in (0..params.layers.len()).rev() {
        if let Some(mask) = &tape.dropout_masks[l] {
            da.component_mul_assign(mask);
        }
        let dz = DVector::from_fn(da.len(), |i, _| {
            if tape.layer_pre[l][i] > 0.0 {
                da[i]
            } else {
                0.0
            }
        });
        grad.layers[l].w.gemm(1.0, &dz, &tape.layer_inputs[l].transpose(), 1.0);
        grad.layers[l].b += &dz;
        da = params.layers[l].w.transpose() * &dz;
    }

    // Encoder.
    if let EncoderInput::Sequences(seqs) = &tape.encoder_input {
        let g = params.gru.as_ref().expect("gru params present");
        let gg = grad.gru.as_mut().expect("gru grads present");
        let h = params.config.gru_hidden;
        for (slot, seq) in seqs.iter().enumerate() {
            let dh_final = da.rows(slot * h, h).into_owned();
            g.backward(seq, &tape.gru_traces[slot], &dh_final, gg);
        }
    }

    Ok(grad.flat())
}
