//! Pedestrian trajectory-file ingestion: CSV rows `agent_id,t,x,y` (seconds
//! and meters), linearly resampled onto a common clock. Velocities come from
//! finite differences, goal proxies from the final observed positions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::IngestError;
use crate::game::{AgentState, Control, GameSpec, JointTrajectory, Vec2};

/// Resampled multi-agent position series on a uniform clock.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedScene {
    /// Agent identifiers in deterministic (sorted) order.
    pub agent_ids: Vec<String>,
    /// `positions[step][agent]`.
    pub positions: Vec<Vec<Vec2>>,
    pub dt: f64,
}

impl IngestedScene {
    pub fn n_steps(&self) -> usize {
        self.positions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    /// Final observed position per agent, the goal proxy for evaluation.
    pub fn goal_proxies(&self) -> Vec<Vec2> {
        self.positions.last().map(|row| row.clone()).unwrap_or_default()
    }

    /// Convert to a game plus a dynamically feasible ground-truth trajectory:
    /// velocities v_k = (p_{k+1} − p_k)/dt (so the position recursion holds
    /// exactly) and controls from the velocity differences.
    pub fn to_game(&self, template: &GameSpec) -> (GameSpec, JointTrajectory) {
        let n = self.n_agents();
        let steps = self.n_steps() - 1;
        let dt = self.dt;
        let mut states: Vec<Vec<AgentState>> = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let row = (0..n)
                .map(|i| {
                    let p = self.positions[k][i];
                    let v = if k < steps {
                        (self.positions[k + 1][i] - p) / dt
                    } else {
                        (p - self.positions[k - 1][i]) / dt
                    };
                    AgentState { position: p, velocity: v }
                })
                .collect();
            states.push(row);
        }
        let controls: Vec<Vec<Control>> = (0..steps)
            .map(|k| {
                (0..n)
                    .map(|i| Control {
                        acceleration: (states[k + 1][i].velocity - states[k][i].velocity) / dt,
                    })
                    .collect()
            })
            .collect();
        let spec = GameSpec {
            n_agents: n,
            dynamics: crate::game::DynamicsSpec { dt, horizon: template.horizon() },
            weights: vec![template.weights[0]; n],
            initial_states: states[0].clone(),
            goals: self.goal_proxies(),
        };
        (spec, JointTrajectory { states, controls })
    }
}

/// Parse and resample a trajectory CSV. `min_frames` is the smallest usable
/// series length after resampling (K+2 for an observation window of K+1
/// plus one prediction step).
pub fn ingest_trajectory_csv(
    path: &Path,
    dt_target: f64,
    min_frames: usize,
) -> Result<IngestedScene, IngestError> {
    let file = std::fs::File::open(path)?;
    ingest_trajectory_reader(file, dt_target, min_frames)
}

pub fn ingest_trajectory_reader(
    reader: impl std::io::Read,
    dt_target: f64,
    min_frames: usize,
) -> Result<IngestedScene, IngestError> {
    if !(dt_target.is_finite() && dt_target > 0.0) {
        return Err(IngestError::Malformed { line: 0, message: "dt must be > 0".into() });
    }
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv.headers().map_err(|e| IngestError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        let expected = ["agent_id", "t", "x", "y"];
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expected {
            return Err(IngestError::Malformed {
                line: 1,
                message: format!("header must be agent_id,t,x,y (got {})", got.join(",")),
            });
        }
    }

    let mut series: BTreeMap<String, Vec<(f64, Vec2)>> = BTreeMap::new();
    for record in csv.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let parse = |idx: usize, name: &str| -> Result<f64, IngestError> {
            let v: f64 = record[idx].trim().parse().map_err(|_| IngestError::Malformed {
                line,
                message: format!("bad {name}: {:?}", &record[idx]),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Malformed {
                    line,
                    message: format!("non-finite {name}"),
                });
            }
            Ok(v)
        };
        let id = record[0].trim().to_string();
        let t = parse(1, "t")?;
        let x = parse(2, "x")?;
        let y = parse(3, "y")?;
        let points = series.entry(id.clone()).or_default();
        if let Some(&(last_t, _)) = points.last() {
            if t <= last_t {
                return Err(IngestError::NonMonotone { agent: id, line });
            }
        }
        points.push((t, Vec2::new(x, y)));
    }
    if series.is_empty() {
        return Err(IngestError::NoCommonClock);
    }

    // Common clock: the overlap of all agents' time ranges.
    let t0 = series
        .values()
        .map(|s| s.first().unwrap().0)
        .fold(f64::NEG_INFINITY, f64::max);
    let t1 = series.values().map(|s| s.last().unwrap().0).fold(f64::INFINITY, f64::min);
    if t0 > t1 {
        return Err(IngestError::NoCommonClock);
    }
    let frames = ((t1 - t0) / dt_target + 1e-9).floor() as usize + 1;
    if frames < min_frames {
        return Err(IngestError::TooShort { got: frames, need: min_frames });
    }

    let agent_ids: Vec<String> = series.keys().cloned().collect();
    let mut positions = vec![Vec::with_capacity(agent_ids.len()); frames];
    for id in &agent_ids {
        let points = &series[id];
        let mut cursor = 0usize;
        for (k, row) in positions.iter_mut().enumerate() {
            let t = t0 + k as f64 * dt_target;
            while cursor + 1 < points.len() && points[cursor + 1].0 < t {
                cursor += 1;
            }
            let (ta, pa) = points[cursor];
            let p = if t <= ta {
                pa
            } else {
                let (tb, pb) = points[cursor + 1];
                let alpha = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
                pa * (1.0 - alpha) + pb * alpha
            };
            row.push(p);
        }
    }

    Ok(IngestedScene { agent_ids, positions, dt: dt_target })
}

/// Export a joint trajectory to the same CSV schema (`agent_id,t,x,y`).
pub fn export_trajectory_csv(
    trajectory: &JointTrajectory,
    dt: f64,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "agent_id,t,x,y")?;
    for i in 0..trajectory.n_agents() {
        for (k, row) in trajectory.states.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", k as f64 * dt, row[i].position.x, row[i].position.y)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(text: &str, dt: f64, min_frames: usize) -> Result<IngestedScene, IngestError> {
        ingest_trajectory_reader(text.as_bytes(), dt, min_frames)
    }

    #[test]
    fn straight_line_resamples_exactly() {
        // One agent at 1 m/s sampled at 0.25 s, resampled to 0.1 s.
        let mut csv = String::from("agent_id,t,x,y\n");
        for k in 0..9 {
            let t = k as f64 * 0.25;
            csv.push_str(&format!("a,{t},{t},0\n"));
        }
        let scene = ingest_str(&csv, 0.1, 2).unwrap();
        assert_eq!(scene.n_agents(), 1);
        assert_eq!(scene.n_steps(), 21);
        for (k, row) in scene.positions.iter().enumerate() {
            let expect = k as f64 * 0.1;
            assert!((row[0].x - expect).abs() < 1e-9, "step {k}: {} vs {expect}", row[0].x);
            assert_eq!(row[0].y, 0.0);
        }
    }

    #[test]
    fn disjoint_time_ranges_are_rejected() {
        let csv = "agent_id,t,x,y\na,0.0,0,0\na,1.0,1,0\nb,2.0,0,0\nb,3.0,1,0\n";
        assert!(matches!(ingest_str(csv, 0.1, 2), Err(IngestError::NoCommonClock)));
    }

    #[test]
    fn malformed_and_non_monotone_rows_carry_line_numbers() {
        let csv = "agent_id,t,x,y\na,0.0,0,0\na,0.5,zzz,0\n";
        match ingest_str(csv, 0.1, 2) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed row, got {other:?}"),
        }
        let csv = "agent_id,t,x,y\na,0.5,0,0\na,0.25,1,0\n";
        match ingest_str(csv, 0.1, 2) {
            Err(IngestError::NonMonotone { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected non-monotone error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let csv = "agent_id,t,x,y\na,0.0,0,0\na,0.15,1,0\n";
        assert!(matches!(
            ingest_str(csv, 0.1, 12),
            Err(IngestError::TooShort { got: 2, need: 12 })
        ));
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let initial = vec![
            AgentState::new(0.0, 0.0, 1.0, 0.0),
            AgentState::new(2.0, 1.0, -0.5, 0.3),
        ];
        let controls = vec![vec![Control::new(0.1, -0.2), Control::new(0.0, 0.1)]; 20];
        let traj = JointTrajectory::rollout(&initial, &controls, 0.1).unwrap();
        let mut buf = Vec::new();
        export_trajectory_csv(&traj, 0.1, &mut buf).unwrap();
        let scene = ingest_trajectory_reader(buf.as_slice(), 0.1, 2).unwrap();
        assert_eq!(scene.n_agents(), 2);
        assert_eq!(scene.n_steps(), 21);
        for (k, row) in scene.positions.iter().enumerate() {
            for i in 0..2 {
                let d = (row[i] - traj.states[k][i].position).norm();
                assert!(d <= 1e-9, "step {k} agent {i}: {d}");
            }
        }
    }

    #[test]
    fn goal_proxies_are_final_positions() {
        let csv = "agent_id,t,x,y\na,0.0,0,0\na,1.0,3,4\n";
        let scene = ingest_str(csv, 0.5, 2).unwrap();
        assert_eq!(scene.goal_proxies()[0], Vec2::new(3.0, 4.0));
    }
}
