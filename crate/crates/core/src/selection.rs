//! Explicit player-selection baselines and the two mask-application modes
//! (threshold and top-k rank). All selectors are pure functions from scene
//! context to a binary [`SelectionMask`].

use serde::{Deserialize, Serialize};

use crate::error::{GameError, HarnessError};
use crate::game::{AgentState, Control, CostWeights, SelectionMask, Vec2};

/// Scene information a selector may read: the ego index, current and previous
/// joint states, the other agents' latest control inputs, the ego's cost
/// weights and the step length. `previous` feeds Cost Evolution; `controls`
/// feed the Gradient/Hessian/CBF baselines.
#[derive(Debug, Clone)]
pub struct SelectionContext {
    pub ego: usize,
    pub current: Vec<AgentState>,
    pub previous: Option<Vec<AgentState>>,
    pub controls: Option<Vec<Control>>,
    pub ego_weights: CostWeights,
    pub dt: f64,
}

impl SelectionContext {
    pub fn n_agents(&self) -> usize {
        self.current.len()
    }

    fn validate(&self) -> Result<(), GameError> {
        let n = self.n_agents();
        if self.ego >= n {
            return Err(GameError::IndexOutOfRange { index: self.ego, len: n });
        }
        if self.previous.as_ref().is_some_and(|p| p.len() != n)
            || self.controls.as_ref().is_some_and(|c| c.len() != n)
        {
            return Err(GameError::DimensionMismatch("selection context field lengths".into()));
        }
        Ok(())
    }
}

/// Barrier-function constants for the BF/CBF baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Safety radius in meters.
    pub d_safe: f64,
    /// Class-K gain in 1/second.
    pub alpha: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { d_safe: 0.5, alpha: 1.0 }
    }
}

/// A selection method with its parameter, as written on the command line
/// (`distance:1.0`, `knn:2`, `psn-th:0.5`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodSpec {
    /// Full game: every other agent selected.
    All,
    /// Empty selection: the ego plans alone.
    None,
    Distance { d_th: f64 },
    Knn { k: usize },
    Gradient { k: usize },
    Hessian { k: usize },
    CostEvolution { k: usize },
    Bf { k: usize },
    Cbf { k: usize },
    PsnThreshold { m_th: f64 },
    PsnRank { k: usize },
}

impl MethodSpec {
    /// Parse the `name[:param]` mini-syntax.
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let float = |m: &str| -> Result<f64, HarnessError> {
            param
                .ok_or_else(|| HarnessError::MissingParameter {
                    method: name.into(),
                    param: m.into(),
                })?
                .parse::<f64>()
                .map_err(|e| HarnessError::Parse(format!("{name}: {e}")))
        };
        let int = |m: &str| -> Result<usize, HarnessError> {
            param
                .ok_or_else(|| HarnessError::MissingParameter {
                    method: name.into(),
                    param: m.into(),
                })?
                .parse::<usize>()
                .map_err(|e| HarnessError::Parse(format!("{name}: {e}")))
        };
        match name.to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "none" => Ok(Self::None),
            "distance" => Ok(Self::Distance { d_th: float("d_th")? }),
            "knn" => Ok(Self::Knn { k: int("k")? }),
            "gradient" => Ok(Self::Gradient { k: int("k")? }),
            "hessian" => Ok(Self::Hessian { k: int("k")? }),
            "cost-evolution" | "costevolution" | "cost-evo" => {
                Ok(Self::CostEvolution { k: int("k")? })
            }
            "bf" => Ok(Self::Bf { k: int("k")? }),
            "cbf" => Ok(Self::Cbf { k: int("k")? }),
            "psn-th" | "psn-threshold" => Ok(Self::PsnThreshold { m_th: float("m_th")? }),
            "psn-rank" => Ok(Self::PsnRank { k: int("k")? }),
            other => Err(HarnessError::UnknownMethod(other.into())),
        }
    }

    /// Canonical label used in CSV output and plots.
    pub fn label(&self) -> String {
        match self {
            Self::All => "all".into(),
            Self::None => "none".into(),
            Self::Distance { d_th } => format!("distance:{d_th}"),
            Self::Knn { k } => format!("knn:{k}"),
            Self::Gradient { k } => format!("gradient:{k}"),
            Self::Hessian { k } => format!("hessian:{k}"),
            Self::CostEvolution { k } => format!("cost-evolution:{k}"),
            Self::Bf { k } => format!("bf:{k}"),
            Self::Cbf { k } => format!("cbf:{k}"),
            Self::PsnThreshold { m_th } => format!("psn-th:{m_th}"),
            Self::PsnRank { k } => format!("psn-rank:{k}"),
        }
    }

    pub fn needs_psn(&self) -> bool {
        matches!(self, Self::PsnThreshold { .. } | Self::PsnRank { .. })
    }
}

/// Method plus the barrier constants shared by BF/CBF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub method: MethodSpec,
    #[serde(default)]
    pub barrier: BarrierParams,
}

impl SelectionParams {
    pub fn new(method: MethodSpec) -> Self {
        Self { method, barrier: BarrierParams::default() }
    }
}

/// Scoring rule behind a ranking method (higher = more important).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMethod {
    /// −‖p_i − p_j‖ (Distance and kNN).
    NegativeDistance,
    /// ‖∂c_s/∂u_j‖ through one step of the dynamics.
    Gradient,
    /// Frobenius norm of ∂²c_s/∂u_j² through one step of the dynamics.
    Hessian,
    /// Per-pair shared stage-cost increase over the last step.
    CostEvolution,
    /// −h with h = ‖Δp‖² − d_safe².
    Barrier(BarrierParams),
    /// −(ḣ + α·h) with ḣ = 2Δpᵀ Δv.
    ControlBarrier(BarrierParams),
}

/// Position after the control acts on the velocity and the velocity on the
/// position: p + v·dt + u·dt². This is the earliest position the current
/// control input influences under the discrete dynamics, so it carries the
/// dt² control sensitivity the Gradient/Hessian baselines differentiate.
fn propagated_position(state: &AgentState, control: &Control, dt: f64) -> Vec2 {
    state.position + state.velocity * dt + control.acceleration * (dt * dt)
}

/// Importance score of every non-ego agent (ascending agent index, ego
/// omitted — the same slot order as [`SelectionMask::values`]).
pub fn score_agents(ctx: &SelectionContext, method: ScoreMethod) -> Result<Vec<f64>, GameError> {
    ctx.validate()?;
    let n = ctx.n_agents();
    let ego = ctx.ego;
    let ego_state = &ctx.current[ego];
    let w4 = ctx.ego_weights.w4;

    let controls = match method {
        ScoreMethod::Gradient | ScoreMethod::Hessian | ScoreMethod::ControlBarrier(_) => {
            Some(ctx.controls.as_ref().ok_or_else(|| {
                GameError::BadParameter("method needs the agents' latest controls".into())
            })?)
        }
        _ => None,
    };
    let previous = match method {
        ScoreMethod::CostEvolution => Some(ctx.previous.as_ref().ok_or_else(|| {
            GameError::BadParameter("cost evolution needs the previous joint state".into())
        })?),
        _ => None,
    };

    let mut scores = Vec::with_capacity(n - 1);
    for j in (0..n).filter(|&j| j != ego) {
        let other = &ctx.current[j];
        let score = match method {
            ScoreMethod::NegativeDistance => -(ego_state.position - other.position).norm(),
            ScoreMethod::Gradient => {
                let controls = controls.unwrap();
                let pi = propagated_position(ego_state, &controls[ego], ctx.dt);
                let pj = propagated_position(other, &controls[j], ctx.dt);
                let d = pi - pj;
                let e = w4 * (-d.norm_squared()).exp();
                // ∂c/∂p_j = 2e·d, chained with ∂p_j/∂u_j = dt²·I.
                ctx.dt * ctx.dt * 2.0 * e * d.norm()
            }
            ScoreMethod::Hessian => {
                let controls = controls.unwrap();
                let pi = propagated_position(ego_state, &controls[ego], ctx.dt);
                let pj = propagated_position(other, &controls[j], ctx.dt);
                let d = pi - pj;
                let e = w4 * (-d.norm_squared()).exp();
                let h = nalgebra::Matrix2::new(
                    4.0 * d.x * d.x - 2.0,
                    4.0 * d.x * d.y,
                    4.0 * d.x * d.y,
                    4.0 * d.y * d.y - 2.0,
                ) * e;
                ctx.dt.powi(4) * h.norm()
            }
            ScoreMethod::CostEvolution => {
                let prev = previous.unwrap();
                let d_now = (ego_state.position - other.position).norm_squared();
                let d_prev = (prev[ego].position - prev[j].position).norm_squared();
                w4 * ((-d_now).exp() - (-d_prev).exp())
            }
            ScoreMethod::Barrier(b) => {
                let h = (ego_state.position - other.position).norm_squared() - b.d_safe * b.d_safe;
                -h
            }
            ScoreMethod::ControlBarrier(b) => {
                let dp = ego_state.position - other.position;
                let dv = ego_state.velocity - other.velocity;
                let h = dp.norm_squared() - b.d_safe * b.d_safe;
                let h_dot = 2.0 * dp.dot(&dv);
                -(h_dot + b.alpha * h)
            }
        };
        scores.push(score);
    }
    Ok(scores)
}

/// Threshold rules. All boundaries are inclusive, so ties at the threshold
/// select the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Select agents whose score is ≥ τ.
    ScoreAtLeast(f64),
    /// Select agents whose value (a distance) is ≤ d_th.
    DistanceAtMost(f64),
    /// Select agents whose soft-mask entry is ≥ m_th.
    MaskAtLeast(f64),
}

/// Binary mask from per-agent values and a threshold rule. `values` are in
/// mask slot order (non-ego agents ascending).
pub fn apply_threshold(ego: usize, values: &[f64], rule: ThresholdRule) -> SelectionMask {
    let selected = values.iter().map(|&v| {
        let keep = match rule {
            ThresholdRule::ScoreAtLeast(t) => v >= t,
            ThresholdRule::DistanceAtMost(d) => v <= d,
            ThresholdRule::MaskAtLeast(m) => v >= m,
        };
        if keep {
            1.0
        } else {
            0.0
        }
    });
    SelectionMask { ego, values: selected.collect() }
}

/// Binary mask selecting exactly the k largest scores; ties break toward the
/// lower original agent index.
pub fn apply_topk(ego: usize, scores: &[f64], k: usize) -> Result<SelectionMask, GameError> {
    if k < 1 || k > scores.len() {
        return Err(GameError::BadParameter(format!(
            "k = {k} out of range for {} candidates",
            scores.len()
        )));
    }
    let mut slots: Vec<usize> = (0..scores.len()).collect();
    slots.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut values = vec![0.0; scores.len()];
    for &slot in &slots[..k] {
        values[slot] = 1.0;
    }
    Ok(SelectionMask { ego, values })
}

/// Run one explicit (non-PSN) selection method on a scene context.
pub fn select_mask(
    ctx: &SelectionContext,
    params: &SelectionParams,
) -> Result<SelectionMask, GameError> {
    ctx.validate()?;
    let n = ctx.n_agents();
    let clamp_k = |k: usize| k.min(n - 1);
    match &params.method {
        MethodSpec::All => Ok(SelectionMask::all_ones(ctx.ego, n)),
        MethodSpec::None => Ok(SelectionMask::all_zeros(ctx.ego, n)),
        MethodSpec::Distance { d_th } => {
            let dists: Vec<f64> = score_agents(ctx, ScoreMethod::NegativeDistance)?
                .iter()
                .map(|s| -s)
                .collect();
            Ok(apply_threshold(ctx.ego, &dists, ThresholdRule::DistanceAtMost(*d_th)))
        }
        MethodSpec::Knn { k } => {
            let scores = score_agents(ctx, ScoreMethod::NegativeDistance)?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::Gradient { k } => {
            let scores = score_agents(ctx, ScoreMethod::Gradient)?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::Hessian { k } => {
            let scores = score_agents(ctx, ScoreMethod::Hessian)?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::CostEvolution { k } => {
            let scores = score_agents(ctx, ScoreMethod::CostEvolution)?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::Bf { k } => {
            let scores = score_agents(ctx, ScoreMethod::Barrier(params.barrier))?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::Cbf { k } => {
            let scores = score_agents(ctx, ScoreMethod::ControlBarrier(params.barrier))?;
            apply_topk(ctx.ego, &scores, clamp_k(*k))
        }
        MethodSpec::PsnThreshold { .. } | MethodSpec::PsnRank { .. } => Err(
            GameError::BadParameter("PSN methods need a network; use the PSN selector".into()),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(states: Vec<AgentState>) -> SelectionContext {
        let n = states.len();
        SelectionContext {
            ego: 0,
            current: states,
            previous: None,
            controls: Some(vec![Control::zero(); n]),
            ego_weights: CostWeights::benchmark(),
            dt: 0.1,
        }
    }

    #[test]
    fn distance_ranks_nearest_first() {
        let c = ctx(vec![
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            AgentState::new(3.0, 0.0, 0.0, 0.0),
            AgentState::new(0.5, 0.0, 0.0, 0.0),
        ]);
        let s = score_agents(&c, ScoreMethod::NegativeDistance).unwrap();
        assert!(s[1] > s[0]);
        let mask = apply_topk(0, &s, 1).unwrap();
        assert_eq!(mask.values, vec![0.0, 1.0]);
    }

    #[test]
    fn cost_evolution_sign_follows_approach() {
        let mut c = ctx(vec![
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            AgentState::new(1.0, 0.0, 0.0, 0.0), // approached from 3 m
            AgentState::new(3.0, 0.0, 0.0, 0.0), // receded from 1 m
        ]);
        c.previous = Some(vec![
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            AgentState::new(3.0, 0.0, 0.0, 0.0),
            AgentState::new(1.0, 0.0, 0.0, 0.0),
        ]);
        let s = score_agents(&c, ScoreMethod::CostEvolution).unwrap();
        assert!(s[0] > 0.0);
        assert!(s[1] < 0.0);
    }

    #[test]
    fn gradient_score_matches_finite_differences() {
        let mut c = ctx(vec![
            AgentState::new(0.0, 0.0, 0.3, -0.1),
            AgentState::new(0.8, 0.4, -0.2, 0.5),
        ]);
        c.controls = Some(vec![Control::new(0.2, -0.3), Control::new(0.4, 0.1)]);
        let score = score_agents(&c, ScoreMethod::Gradient).unwrap()[0];

        // Oracle: perturb agent 1's control, propagate one step, evaluate the
        // shared stage cost, central-difference.
        let dt = c.dt;
        let w4 = c.ego_weights.w4;
        let cost = |uj: Vec2| {
            let pi = propagated_position(&c.current[0], &c.controls.as_ref().unwrap()[0], dt);
            let pj = propagated_position(&c.current[1], &Control { acceleration: uj }, dt);
            w4 * (-(pi - pj).norm_squared()).exp()
        };
        let u = c.controls.as_ref().unwrap()[1].acceleration;
        let h = 1e-6;
        let gx = (cost(u + Vec2::new(h, 0.0)) - cost(u - Vec2::new(h, 0.0))) / (2.0 * h);
        let gy = (cost(u + Vec2::new(0.0, h)) - cost(u - Vec2::new(0.0, h))) / (2.0 * h);
        let fd = (gx * gx + gy * gy).sqrt();
        assert!(
            (fd - score).abs() / fd.max(1e-12) <= 1e-5,
            "gradient score {score:.9e} vs fd {fd:.9e}"
        );
    }

    #[test]
    fn hessian_score_matches_finite_differences() {
        let mut c = ctx(vec![
            AgentState::new(0.0, 0.0, 0.3, -0.1),
            AgentState::new(0.6, -0.2, 0.0, 0.2),
        ]);
        c.controls = Some(vec![Control::new(0.0, 0.0), Control::new(-0.1, 0.2)]);
        let score = score_agents(&c, ScoreMethod::Hessian).unwrap()[0];

        let dt = c.dt;
        let w4 = c.ego_weights.w4;
        let cost = |uj: Vec2| {
            let pi = propagated_position(&c.current[0], &c.controls.as_ref().unwrap()[0], dt);
            let pj = propagated_position(&c.current[1], &Control { acceleration: uj }, dt);
            w4 * (-(pi - pj).norm_squared()).exp()
        };
        let u = c.controls.as_ref().unwrap()[1].acceleration;
        let h = 1e-4;
        let mut hess = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut ea = Vec2::zeros();
                ea[a] = h;
                let mut eb = Vec2::zeros();
                eb[b] = h;
                hess[a][b] = (cost(u + ea + eb) - cost(u + ea - eb) - cost(u - ea + eb)
                    + cost(u - ea - eb))
                    / (4.0 * h * h);
            }
        }
        let fd = (hess[0][0].powi(2) + hess[0][1].powi(2) + hess[1][0].powi(2)
            + hess[1][1].powi(2))
        .sqrt();
        assert!(
            (fd - score).abs() / fd.max(1e-12) <= 1e-4,
            "hessian score {score:.9e} vs fd {fd:.9e}"
        );
    }

    #[test]
    fn barrier_scores_prefer_close_and_approaching() {
        let c = SelectionContext {
            ego: 0,
            current: vec![
                AgentState::new(0.0, 0.0, 1.0, 0.0),
                AgentState::new(1.0, 0.0, -1.0, 0.0), // head-on
                AgentState::new(1.0, 1.0, 1.0, 0.0),  // same speed, parallel course
            ],
            previous: None,
            controls: Some(vec![Control::zero(); 3]),
            ego_weights: CostWeights::benchmark(),
            dt: 0.1,
        };
        let bf = score_agents(&c, ScoreMethod::Barrier(BarrierParams::default())).unwrap();
        assert!((bf[0] - -(1.0 - 0.25)).abs() < 1e-12);
        let cbf = score_agents(&c, ScoreMethod::ControlBarrier(BarrierParams::default())).unwrap();
        // The approaching agent has more negative ḣ, hence a larger score.
        assert!(cbf[0] > cbf[1]);
    }

    #[test]
    fn missing_context_is_a_domain_error() {
        let mut c = ctx(vec![
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            AgentState::new(1.0, 0.0, 0.0, 0.0),
        ]);
        c.controls = None;
        assert!(score_agents(&c, ScoreMethod::Gradient).is_err());
        assert!(score_agents(&c, ScoreMethod::CostEvolution).is_err());
    }

    #[test]
    fn threshold_rules_and_inclusive_boundary() {
        let m = apply_threshold(0, &[0.9, 0.3, 0.6], ThresholdRule::MaskAtLeast(0.5));
        assert_eq!(m.values, vec![1.0, 0.0, 1.0]);
        let tie = apply_threshold(0, &[0.5], ThresholdRule::MaskAtLeast(0.5));
        assert_eq!(tie.values, vec![1.0]);
        let far = apply_threshold(0, &[2.0, 3.0], ThresholdRule::DistanceAtMost(1.0));
        assert_eq!(far.count_selected(), 0);
        let d_tie = apply_threshold(0, &[1.0], ThresholdRule::DistanceAtMost(1.0));
        assert_eq!(d_tie.values, vec![1.0]);
    }

    #[test]
    fn topk_ties_break_to_lower_index() {
        let m = apply_topk(0, &[0.2, 0.9, 0.9, 0.1], 2).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 1.0, 0.0]);
        let three_way = apply_topk(0, &[0.9, 0.9, 0.9, 0.1], 2).unwrap();
        assert_eq!(three_way.values, vec![1.0, 1.0, 0.0, 0.0]);
        let all = apply_topk(0, &[0.2, 0.9, 0.9], 3).unwrap();
        assert_eq!(all.count_selected(), 3);
        assert!(apply_topk(0, &[0.2, 0.9], 0).is_err());
        assert!(apply_topk(0, &[0.2, 0.9], 3).is_err());
    }

    #[test]
    fn topk_is_invariant_to_monotone_rescale_threshold_is_not() {
        let scores = [0.1, 0.7, 0.4, 0.65];
        let warped: Vec<f64> = scores.iter().map(|s| (3.0_f64 * s + 1.0).exp()).collect();
        for k in 1..=4 {
            assert_eq!(
                apply_topk(0, &scores, k).unwrap().values,
                apply_topk(0, &warped, k).unwrap().values
            );
        }
        let plain = apply_threshold(0, &scores, ThresholdRule::ScoreAtLeast(0.5));
        let squashed = apply_threshold(0, &warped, ThresholdRule::ScoreAtLeast(0.5));
        assert_ne!(plain.values, squashed.values);
    }

    #[test]
    fn method_spec_parsing_round_trip() {
        for s in [
            "all",
            "none",
            "distance:1.5",
            "knn:2",
            "gradient:1",
            "hessian:3",
            "cost-evolution:2",
            "bf:1",
            "cbf:2",
            "psn-th:0.5",
            "psn-rank:1",
        ] {
            let spec = MethodSpec::parse(s).unwrap();
            assert_eq!(spec.label(), s);
            assert_eq!(MethodSpec::parse(&spec.label()).unwrap(), spec);
        }
        assert!(MethodSpec::parse("frobnicate:3").is_err());
        assert!(MethodSpec::parse("knn").is_err());
        assert!(MethodSpec::parse("knn:x").is_err());
    }
}
