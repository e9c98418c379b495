use super::*;
use crate::game::{CostWeights, DynamicsSpec};
use crate::harness::{full_game_rollout, generate_scenario, ScenarioConfig};
use crate::metrics::{compute_metrics, MetricConfig};
use crate::selection::MethodSpec;

fn four_agent_scene(seed: u64) -> GameSpec {
    generate_scenario(&ScenarioConfig::for_agents(4).with_seed(seed)).unwrap()
}

fn config_with(method: MethodSpec) -> RolloutConfig {
    RolloutConfig {
        max_steps: 20,
        selection: SelectionParams::new(method),
        ..RolloutConfig::default()
    }
}

fn predict_with(
    scene: &GameSpec,
    gt: &JointTrajectory,
    method: MethodSpec,
) -> RolloutTrace {
    let cfg = config_with(method.clone());
    let selector = Selector::explicit(SelectionParams::new(method));
    predict(scene, gt, 0, &cfg, &selector, &SolverConfig::default(), None).unwrap()
}

#[test]
fn all_ones_prediction_matches_full_game_exactly() {
    let scene = four_agent_scene(5);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let all = predict_with(&scene, &gt, MethodSpec::All);
    assert!(all.meta.truncated.is_none());
    assert_eq!(all.steps.len(), 20);
    // The masked game with everyone selected IS the full game; the recorded
    // ego controls must come from the same solution.
    for rec in &all.steps {
        assert_eq!(rec.masked_game_size, 4);
    }
    // Self-consistency: the prediction reproduces the data-generating
    // rollout (same solver, same config).
    let report = compute_metrics(&all, Some(&gt), 0, &scene.weights[0], &MetricConfig::default())
        .unwrap();
    assert!(report.ade.unwrap() < 1e-4, "self-consistency ADE {}", report.ade.unwrap());
}

#[test]
fn single_agent_prediction_is_exactly_self_consistent() {
    let scene = GameSpec::new(
        DynamicsSpec { dt: 0.1, horizon: 10 },
        vec![CostWeights::benchmark()],
        vec![AgentState::new(-1.0, 0.3, 0.0, 0.0)],
        vec![Vec2::new(1.5, -0.5)],
    )
    .unwrap();
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let trace = predict_with(&scene, &gt, MethodSpec::All);
    let report = compute_metrics(&trace, Some(&gt), 0, &scene.weights[0], &MetricConfig::default())
        .unwrap();
    assert!(report.ade.unwrap() < 1e-9, "ADE {}", report.ade.unwrap());
    assert!(report.fde.unwrap() < 1e-9);
}

#[test]
fn knn_prediction_deviates_but_not_wildly() {
    let scene = four_agent_scene(11);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let all = predict_with(&scene, &gt, MethodSpec::All);
    let knn = predict_with(&scene, &gt, MethodSpec::Knn { k: 1 });
    let m = MetricConfig::default();
    let ade_all = compute_metrics(&all, Some(&gt), 0, &scene.weights[0], &m).unwrap().ade.unwrap();
    let ade_knn = compute_metrics(&knn, Some(&gt), 0, &scene.weights[0], &m).unwrap().ade.unwrap();
    // The reduced game ignores real interactions, so it must deviate from the
    // full-game data; the full game itself reproduces it near-exactly.
    assert!(ade_knn > 0.0);
    assert!(ade_all <= ade_knn + 1e-9, "all {ade_all} vs knn {ade_knn}");
}

#[test]
fn predictions_never_peek_past_the_window() {
    let scene = four_agent_scene(13);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let base = predict_with(&scene, &gt, MethodSpec::Knn { k: 2 });

    // Corrupt the ground truth after the observation window.
    let mut corrupted = gt.clone();
    for row in corrupted.states.iter_mut().skip(10) {
        for s in row.iter_mut() {
            s.position += Vec2::new(3.0, -2.0);
        }
    }
    let again = predict_with(&scene, &corrupted, MethodSpec::Knn { k: 2 });
    assert_eq!(base.steps, again.steps);
}

#[test]
fn traces_are_feasible_and_sized() {
    let scene = four_agent_scene(17);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let trace = predict_with(&scene, &gt, MethodSpec::Cbf { k: 2 });
    assert!(trace.feasibility_violation() < 1e-12);
    trace.validate().unwrap();
    for rec in &trace.steps {
        assert_eq!(rec.masked_game_size, 1 + rec.mask.count_selected());
    }
}

#[test]
fn plan_with_empty_selection_matches_single_agent_optimum() {
    // Other agents parked far away: the decoupled plan must coincide with
    // the single-agent receding-horizon optimum.
    let scene = GameSpec::new(
        DynamicsSpec { dt: 0.1, horizon: 10 },
        vec![CostWeights::benchmark(); 3],
        vec![
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            AgentState::new(50.0, 50.0, 0.0, 0.0),
            AgentState::new(-50.0, 40.0, 0.0, 0.0),
        ],
        vec![Vec2::new(2.0, 1.0), Vec2::new(50.0, 50.0), Vec2::new(-50.0, 40.0)],
    )
    .unwrap();
    let cfg = config_with(MethodSpec::None);
    let selector = Selector::explicit(SelectionParams::new(MethodSpec::None));
    let trace = plan(&scene, 0, &cfg, &selector, &SolverConfig::default(), None, None).unwrap();
    assert!(trace.meta.truncated.is_none());

    let solo = GameSpec::new(
        scene.dynamics,
        vec![scene.weights[0]],
        vec![scene.initial_states[0]],
        vec![scene.goals[0]],
    )
    .unwrap();
    let solo_cfg = config_with(MethodSpec::All);
    let solo_selector = Selector::explicit(SelectionParams::new(MethodSpec::All));
    let solo_trace =
        plan(&solo, 0, &solo_cfg, &solo_selector, &SolverConfig::default(), None, None).unwrap();

    let n = trace.steps.len().min(solo_trace.steps.len());
    assert!(n > 0);
    for k in 0..n {
        let a = trace.steps[k].states[0];
        let b = solo_trace.steps[k].states[0];
        assert!(
            (a.position - b.position).norm() < 1e-6,
            "step {k}: {:?} vs {:?}",
            a.position,
            b.position
        );
    }

    // Path length dominates the straight-line distance.
    let report =
        compute_metrics(&trace, None, 0, &scene.weights[0], &MetricConfig::default()).unwrap();
    let straight = (trace.ego_positions().last().unwrap()
        - trace.ego_positions().first().unwrap())
    .norm();
    assert!(report.traj_length >= straight - 1e-12);
}

#[test]
fn plan_stops_immediately_inside_goal_radius() {
    let scene = GameSpec::new(
        DynamicsSpec { dt: 0.1, horizon: 10 },
        vec![CostWeights::benchmark(); 2],
        vec![AgentState::new(1.0, 1.0, 0.0, 0.0), AgentState::new(-2.0, -2.0, 0.0, 0.0)],
        vec![Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)],
    )
    .unwrap();
    let cfg = config_with(MethodSpec::All);
    let selector = Selector::explicit(SelectionParams::new(MethodSpec::All));
    let trace = plan(&scene, 0, &cfg, &selector, &SolverConfig::default(), None, None).unwrap();
    assert!(trace.steps.is_empty());
}

#[test]
fn antipodal_planning_full_game_keeps_larger_separation() {
    // Four agents around a circle with goals diametrically opposite, radii
    // and angles staggered so the crossings are genuine negotiations rather
    // than the degenerate simultaneous pile-up at the exact center (where
    // the Gaussian repulsion has zero gradient).
    let radii = [1.5_f64, 1.9, 1.4, 1.7];
    let angles = [0.1_f64, 1.65, 3.3, 4.8];
    let positions: Vec<Vec2> = radii
        .iter()
        .zip(&angles)
        .map(|(r, a)| Vec2::new(r * a.cos(), r * a.sin()))
        .collect();
    let scene = GameSpec::new(
        DynamicsSpec { dt: 0.1, horizon: 10 },
        vec![CostWeights::benchmark(); 4],
        positions.iter().map(|p| AgentState { position: *p, velocity: Vec2::zeros() }).collect(),
        positions.iter().map(|p| -p).collect::<Vec<_>>(),
    )
    .unwrap();
    let solver = SolverConfig::default();
    let run = |method: MethodSpec| {
        let cfg = RolloutConfig {
            max_steps: 50,
            selection: SelectionParams::new(method.clone()),
            ..RolloutConfig::default()
        };
        let selector = Selector::explicit(SelectionParams::new(method));
        let trace = plan(&scene, 0, &cfg, &selector, &solver, None, None).unwrap();
        assert!(trace.meta.truncated.is_none());
        compute_metrics(&trace, None, 0, &scene.weights[0], &MetricConfig::default()).unwrap()
    };
    let full = run(MethodSpec::All);
    let blind = run(MethodSpec::None);
    assert!(full.min_distance > 0.0);
    assert!(
        full.min_distance > blind.min_distance,
        "full {} vs blind {}",
        full.min_distance,
        blind.min_distance
    );
}

#[test]
fn trace_jsonl_round_trips() {
    let scene = four_agent_scene(23);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let trace = predict_with(&scene, &gt, MethodSpec::Distance { d_th: 1.0 });
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    let parsed = RolloutTrace::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(trace, parsed);

    assert!(RolloutTrace::read_jsonl(&b""[..]).is_err());
    assert!(RolloutTrace::read_jsonl(&b"not json\n"[..]).is_err());
}

#[test]
fn psn_selector_requires_network() {
    let scene = four_agent_scene(29);
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let cfg = config_with(MethodSpec::PsnRank { k: 1 });
    let selector = Selector::explicit(SelectionParams::new(MethodSpec::PsnRank { k: 1 }));
    let trace = predict(&scene, &gt, 0, &cfg, &selector, &SolverConfig::default(), None).unwrap();
    // Selection fails on the first step; the trace is truncated with the
    // failure recorded.
    assert!(trace.steps.is_empty());
    assert!(trace.meta.truncated.as_deref().unwrap().contains("psn"));
}

#[test]
fn psn_selector_runs_and_scatters_through_prefilter() {
    use crate::nn::{HeadKind, NetworkConfig, NetworkParams};
    // A 4-agent-trained PSN driving selection inside a 6-agent scene.
    let psn = NetworkParams::init(
        NetworkConfig::new(
            HeadKind::Psn,
            crate::nn::EncoderKind::FlattenMlp,
            ObservationKind::Full,
            4,
            10,
        ),
        3,
    )
    .unwrap();
    let scene = generate_scenario(&ScenarioConfig::for_agents(6).with_seed(31)).unwrap();
    let gt = full_game_rollout(&scene, 30, 0.5, &SolverConfig::default()).unwrap();
    let cfg = config_with(MethodSpec::PsnRank { k: 2 });
    let selector = Selector::psn(SelectionParams::new(MethodSpec::PsnRank { k: 2 }), &psn);
    let trace =
        predict(&scene, &gt, 0, &cfg, &selector, &SolverConfig::default(), None).unwrap();
    assert!(trace.meta.truncated.is_none(), "{:?}", trace.meta.truncated);
    for rec in &trace.steps {
        assert_eq!(rec.mask.count_selected(), 2);
        assert_eq!(rec.mask.values.len(), 5);
    }
}
