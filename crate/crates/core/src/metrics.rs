//! The evaluation metric suite: displacement errors against ground truth,
//! planning costs, trajectory geometry, minimum separation, selection
//! consistency and mean selected-player count.

use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::game::{reference_position, CostWeights, JointTrajectory, Vec2};
use crate::rollout::RolloutTrace;

/// Per-run metric values. Displacement errors are present only when ground
/// truth was supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub consistency: f64,
    pub nav_cost: f64,
    pub col_cost: f64,
    pub ctrl_cost: f64,
    pub traj_smoothness: f64,
    pub traj_length: f64,
    pub min_distance: f64,
    pub mean_selected_players: f64,
}

/// Aggregation flags. The displacement and consistency formulas are written
/// as sums in their source; the mean reading keeps ADE in meters and
/// consistency in [0, 1] and is the default. The literal sums stay available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricConfig {
    pub displacement_mean: bool,
    pub consistency_mean: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { displacement_mean: true, consistency_mean: true }
    }
}

/// Segments shorter than this are skipped by the smoothness metric to avoid
/// dividing by a vanishing norm.
pub const MIN_SEGMENT: f64 = 1e-9;

pub const CSV_HEADER: &str = "ade,fde,consistency,nav_cost,col_cost,ctrl_cost,traj_smoothness,traj_length,min_distance,mean_selected_players";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            opt(self.ade),
            opt(self.fde),
            self.consistency,
            self.nav_cost,
            self.col_cost,
            self.ctrl_cost,
            self.traj_smoothness,
            self.traj_length,
            self.min_distance,
            self.mean_selected_players
        )
    }

    /// Metric value by column name (used by the bootstrap summaries).
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ade" => self.ade,
            "fde" => self.fde,
            "consistency" => Some(self.consistency),
            "nav_cost" => Some(self.nav_cost),
            "col_cost" => Some(self.col_cost),
            "ctrl_cost" => Some(self.ctrl_cost),
            "traj_smoothness" => Some(self.traj_smoothness),
            "traj_length" => Some(self.traj_length),
            "min_distance" => Some(self.min_distance),
            "mean_selected_players" => Some(self.mean_selected_players),
            _ => None,
        }
    }
}

/// Evaluate every metric on a rollout trace. Ground truth (aligned with the
/// trace's global step indices) is needed for ADE/FDE only. The navigation
/// reference path runs from the trace's start position to the ego goal over
/// the trace length.
pub fn compute_metrics(
    trace: &RolloutTrace,
    ground_truth: Option<&JointTrajectory>,
    ego: usize,
    _weights: &CostWeights,
    config: &MetricConfig,
) -> Result<MetricReport, GameError> {
    if ego != trace.meta.ego {
        return Err(GameError::BadParameter(format!(
            "trace belongs to ego {}, metrics requested for {ego}",
            trace.meta.ego
        )));
    }
    // Zero-step planning traces are legal (the ego starts inside its goal
    // radius); every path metric degenerates to zero.
    let ego_pos = trace.ego_positions();
    let joint_pos = trace.joint_positions();
    let n = trace.meta.n_agents;
    let steps = trace.steps.len();

    // Displacement errors against ground truth at matching global steps.
    let (ade, fde) = match ground_truth {
        Some(gt) => {
            let start = trace.meta.start_step;
            if gt.states.len() < start + steps + 1 {
                return Err(GameError::DimensionMismatch(format!(
                    "ground truth has {} states, trace spans {}..={}",
                    gt.states.len(),
                    start,
                    start + steps
                )));
            }
            let mut sum = 0.0;
            let mut last = 0.0;
            for (t, p) in ego_pos.iter().enumerate() {
                last = (p - gt.states[start + t][ego].position).norm();
                sum += last;
            }
            let ade = if config.displacement_mean { sum / ego_pos.len() as f64 } else { sum };
            (Some(ade), Some(last))
        }
        None => (None, None),
    };

    // Navigation cost along the straight reference to the goal.
    let goal = trace.meta.goals[ego];
    let nav_cost = if steps == 0 {
        0.0
    } else {
        let mut nav = 0.0;
        for (k, p) in ego_pos.iter().enumerate() {
            let r = reference_position(&ego_pos[0], &goal, k, steps)?;
            nav += (p - r).norm_squared();
        }
        nav
    };

    let mut col_cost = 0.0;
    let mut min_distance = f64::INFINITY;
    for row in &joint_pos {
        for j in (0..n).filter(|&j| j != ego) {
            let d2 = (row[ego] - row[j]).norm_squared();
            col_cost += (-d2).exp();
            min_distance = min_distance.min(d2.sqrt());
        }
    }

    let ctrl_cost: f64 = trace
        .steps
        .iter()
        .map(|s| s.controls[ego].acceleration.norm_squared())
        .sum();

    // Geometry of the ego path.
    let mut traj_length = 0.0;
    let mut segments: Vec<Vec2> = Vec::with_capacity(ego_pos.len());
    for w in ego_pos.windows(2) {
        let d = w[1] - w[0];
        traj_length += d.norm();
        segments.push(d);
    }
    let mut traj_smoothness = 0.0;
    for w in segments.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.norm() < MIN_SEGMENT || b.norm() < MIN_SEGMENT {
            continue;
        }
        traj_smoothness += (b / b.norm() - a / a.norm()).norm();
    }

    // Mask statistics.
    let masks = trace.masks();
    let mut consistency_sum = 0.0;
    let mut transitions = 0usize;
    for w in masks.windows(2) {
        let l1: f64 =
            w[0].values.iter().zip(&w[1].values).map(|(a, b)| (a - b).abs()).sum();
        consistency_sum += 1.0 - l1 / (n as f64 - 1.0);
        transitions += 1;
    }
    let consistency = if transitions == 0 {
        1.0
    } else if config.consistency_mean {
        consistency_sum / transitions as f64
    } else {
        consistency_sum
    };
    let mean_selected_players = if masks.is_empty() {
        0.0
    } else {
        masks.iter().map(|m| m.count_selected() as f64).sum::<f64>() / masks.len() as f64
    };

    Ok(MetricReport {
        ade,
        fde,
        consistency,
        nav_cost,
        col_cost,
        ctrl_cost,
        traj_smoothness,
        traj_length,
        min_distance,
        mean_selected_players,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentState, Control, SelectionMask};
    use crate::rollout::{SolverDiag, StepRecord, TraceMeta};
    use approx::assert_relative_eq;

    fn diag() -> SolverDiag {
        SolverDiag { iterations: 1, residual: 0.0, converged: true }
    }

    /// Hand-built trace: ego walks +x at 1 m/s (dt 0.1), one other agent
    /// parked at (5, 5).
    fn straight_trace(steps: usize, mask_fn: impl Fn(usize) -> Vec<f64>) -> RolloutTrace {
        let dt = 0.1;
        let state_at = |k: usize| {
            vec![
                AgentState::new(k as f64 * 0.1, 0.0, 1.0, 0.0),
                AgentState::new(5.0, 5.0, 0.0, 0.0),
            ]
        };
        RolloutTrace {
            meta: TraceMeta {
                ego: 0,
                n_agents: 2,
                dt,
                goals: vec![Vec2::new(steps as f64 * 0.1, 0.0), Vec2::new(5.0, 5.0)],
                inferred_goals: None,
                start_step: 0,
                start_states: state_at(0),
                truncated: None,
            },
            steps: (1..=steps)
                .map(|k| StepRecord {
                    step: k,
                    states: state_at(k),
                    controls: vec![Control::zero(), Control::zero()],
                    mask: SelectionMask { ego: 0, values: mask_fn(k) },
                    masked_game_size: 1 + mask_fn(k).iter().filter(|&&v| v == 1.0).count(),
                    solver: diag(),
                })
                .collect(),
        }
    }

    fn gt_from_trace(trace: &RolloutTrace, offset: Vec2) -> JointTrajectory {
        let states = std::iter::once(&trace.meta.start_states)
            .chain(trace.steps.iter().map(|s| &s.states))
            .map(|row| {
                row.iter()
                    .map(|s| AgentState {
                        position: s.position + offset,
                        velocity: s.velocity,
                    })
                    .collect()
            })
            .collect();
        let controls = trace.steps.iter().map(|s| s.controls.clone()).collect();
        JointTrajectory { states, controls }
    }

    #[test]
    fn identical_trace_has_zero_displacement() {
        let trace = straight_trace(10, |_| vec![1.0]);
        let gt = gt_from_trace(&trace, Vec2::zeros());
        let r = compute_metrics(&trace, Some(&gt), 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_relative_eq!(r.ade.unwrap(), 0.0);
        assert_relative_eq!(r.fde.unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_displacement_is_its_norm() {
        let trace = straight_trace(10, |_| vec![1.0]);
        let gt = gt_from_trace(&trace, Vec2::new(0.3, 0.4));
        let r = compute_metrics(&trace, Some(&gt), 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_relative_eq!(r.ade.unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.fde.unwrap(), 0.5, epsilon = 1e-12);
        // The literal-sum reading scales by the number of evaluated steps.
        let sum_cfg = MetricConfig { displacement_mean: false, consistency_mean: true };
        let r2 = compute_metrics(&trace, Some(&gt), 0, &CostWeights::benchmark(), &sum_cfg).unwrap();
        assert_relative_eq!(r2.ade.unwrap(), 0.5 * 11.0, epsilon = 1e-12);
    }

    #[test]
    fn consistency_extremes() {
        let constant = straight_trace(10, |_| vec![1.0]);
        let r = compute_metrics(&constant, None, 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_relative_eq!(r.consistency, 1.0);
        assert_relative_eq!(r.mean_selected_players, 1.0);

        let flipping = straight_trace(10, |k| vec![if k % 2 == 0 { 1.0 } else { 0.0 }]);
        let r = compute_metrics(&flipping, None, 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_relative_eq!(r.consistency, 0.0);
    }

    #[test]
    fn straight_line_geometry() {
        let trace = straight_trace(10, |_| vec![1.0]);
        let r = compute_metrics(&trace, None, 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_relative_eq!(r.traj_smoothness, 0.0);
        assert_relative_eq!(r.traj_length, 1.0, epsilon = 1e-12);
        // Ego tracks its straight reference exactly.
        assert_relative_eq!(r.nav_cost, 0.0, epsilon = 1e-20);
        assert!(r.min_distance >= 5.0);
    }

    #[test]
    fn zero_step_trace_is_degenerate_but_legal() {
        let mut trace = straight_trace(0, |_| vec![1.0]);
        trace.steps.clear();
        let r = compute_metrics(&trace, None, 0, &CostWeights::benchmark(), &Default::default())
            .unwrap();
        assert_eq!(r.traj_length, 0.0);
        assert_eq!(r.consistency, 1.0);
        assert_eq!(r.mean_selected_players, 0.0);
    }

    #[test]
    fn ground_truth_length_mismatch_is_an_error() {
        let trace = straight_trace(10, |_| vec![1.0]);
        let mut gt = gt_from_trace(&trace, Vec2::zeros());
        gt.states.truncate(5);
        assert!(compute_metrics(&trace, Some(&gt), 0, &CostWeights::benchmark(), &Default::default())
            .is_err());
    }
}
