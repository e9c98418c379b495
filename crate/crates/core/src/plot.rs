//! Static SVG rendering of rollout traces: one polyline per agent, the ego
//! in blue, other agents marked per step in red when selected and gray when
//! excluded, goals as crosses.

use crate::error::GameError;
use crate::game::Vec2;
use crate::rollout::RolloutTrace;

pub const COLOR_EGO: &str = "#1f77b4";
pub const COLOR_SELECTED: &str = "#d62728";
pub const COLOR_EXCLUDED: &str = "#7f7f7f";

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 40.0;

struct Frame {
    min: Vec2,
    scale: f64,
}

impl Frame {
    fn fit(points: &[Vec2]) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        let span = (max.x - min.x).max(max.y - min.y).max(1e-6);
        Frame { min, scale: (CANVAS - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: &Vec2) -> (f64, f64) {
        // Flip y so the plot is in the usual math orientation.
        (
            MARGIN + (p.x - self.min.x) * self.scale,
            CANVAS - MARGIN - (p.y - self.min.y) * self.scale,
        )
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a trace to a standalone SVG document.
pub fn render_trace_svg(trace: &RolloutTrace) -> Result<String, GameError> {
    trace.validate()?;
    if trace.steps.is_empty() {
        return Err(GameError::BadParameter("trace has no steps to draw".into()));
    }
    let joint = trace.joint_positions();
    let n = trace.meta.n_agents;
    let ego = trace.meta.ego;

    let mut all_points: Vec<Vec2> = joint.iter().flatten().copied().collect();
    all_points.extend(trace.meta.goals.iter().copied());
    let frame = Frame::fit(&all_points);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{c}\" height=\"{c}\" viewBox=\"0 0 {c} {c}\">\n",
        c = CANVAS
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Trajectories.
    for agent in 0..n {
        let color = if agent == ego { COLOR_EGO } else { COLOR_EXCLUDED };
        let pts: Vec<String> = joint
            .iter()
            .map(|row| {
                let (x, y) = frame.map(&row[agent]);
                format!("{},{}", fmt(x), fmt(y))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" data-agent=\"{agent}\"/>\n",
            pts.join(" ")
        ));
    }

    // Per-step markers: ego in blue, others red when selected at that step.
    for (s, rec) in trace.steps.iter().enumerate() {
        let row = &joint[s + 1];
        for agent in 0..n {
            let (x, y) = frame.map(&row[agent]);
            let color = if agent == ego {
                COLOR_EGO
            } else if rec.mask.weight_for(agent) == 1.0 {
                COLOR_SELECTED
            } else {
                COLOR_EXCLUDED
            };
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.2\" fill=\"{color}\"/>\n",
                fmt(x),
                fmt(y)
            ));
        }
    }

    // Goals as crosses.
    for (agent, g) in trace.meta.goals.iter().enumerate() {
        let (x, y) = frame.map(g);
        let color = if agent == ego { COLOR_EGO } else { COLOR_EXCLUDED };
        let d = 5.0;
        svg.push_str(&format!(
            "<path d=\"M {} {} L {} {} M {} {} L {} {}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            fmt(x - d), fmt(y - d), fmt(x + d), fmt(y + d),
            fmt(x - d), fmt(y + d), fmt(x + d), fmt(y - d),
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentState, Control, SelectionMask};
    use crate::rollout::{SolverDiag, StepRecord, TraceMeta};

    fn trace(mask_values: Vec<f64>) -> RolloutTrace {
        let n = mask_values.len() + 1;
        let state = |k: usize| {
            (0..n)
                .map(|i| AgentState::new(k as f64 * 0.1 + i as f64, i as f64, 1.0, 0.0))
                .collect::<Vec<_>>()
        };
        RolloutTrace {
            meta: TraceMeta {
                ego: 0,
                n_agents: n,
                dt: 0.1,
                goals: (0..n).map(|i| Vec2::new(3.0, i as f64)).collect(),
                inferred_goals: None,
                start_step: 0,
                start_states: state(0),
                truncated: None,
            },
            steps: (1..=5)
                .map(|k| StepRecord {
                    step: k,
                    states: state(k),
                    controls: vec![Control::zero(); n],
                    mask: SelectionMask { ego: 0, values: mask_values.clone() },
                    masked_game_size: 1
                        + mask_values.iter().filter(|&&v| v == 1.0).count(),
                    solver: SolverDiag { iterations: 1, residual: 0.0, converged: true },
                })
                .collect(),
        }
    }

    #[test]
    fn svg_has_one_path_per_agent() {
        let svg = render_trace_svg(&trace(vec![1.0, 0.0])).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains(COLOR_EGO));
    }

    #[test]
    fn all_ones_masks_draw_every_other_agent_selected() {
        let svg = render_trace_svg(&trace(vec![1.0, 1.0])).unwrap();
        // 5 steps × 2 non-ego agents, all selected.
        assert_eq!(svg.matches(&format!("fill=\"{COLOR_SELECTED}\"")).count(), 10);
        // Excluded color appears only on trajectories/goals, not markers.
        let excluded_markers = svg
            .lines()
            .filter(|l| l.starts_with("<circle") && l.contains(COLOR_EXCLUDED))
            .count();
        assert_eq!(excluded_markers, 0);
    }

    #[test]
    fn empty_trace_is_rejected() {
        let mut t = trace(vec![1.0]);
        t.steps.clear();
        assert!(render_trace_svg(&t).is_err());
    }
}
