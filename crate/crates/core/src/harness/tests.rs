use super::*;
use crate::selection::MethodSpec;

#[test]
fn scenarios_are_deterministic_and_respect_constraints() {
    let cfg = ScenarioConfig::for_agents(4).with_seed(7);
    let a = generate_scenario(&cfg).unwrap();
    let b = generate_scenario(&cfg).unwrap();
    assert_eq!(a, b);

    for seed in 0..50 {
        let cfg = ScenarioConfig::for_agents(10).with_seed(seed);
        let scene = generate_scenario(&cfg).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                let d = (scene.initial_states[i].position - scene.initial_states[j].position)
                    .norm();
                assert!(d >= cfg.min_spacing, "seed {seed}: spacing {d}");
            }
            let g = (scene.goals[i] - scene.initial_states[i].position).norm();
            assert!(g >= cfg.min_goal_distance, "seed {seed}: goal distance {g}");
            assert!(scene.initial_states[i].position.x.abs() <= cfg.arena[0] / 2.0);
            assert_eq!(scene.initial_states[i].velocity, Vec2::zeros());
        }
    }
}

#[test]
fn dataset_generation_is_reproducible_and_feasible() {
    let scenario = ScenarioConfig::for_agents(4).with_seed(3);
    let cfg = DatasetConfig { count: 2, ..DatasetConfig::default() };
    let solver = SolverConfig::default();
    let a = generate_dataset(&scenario, &cfg, &solver).unwrap();
    let b = generate_dataset(&scenario, &cfg, &solver).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(!a.samples.is_empty());
    for s in &a.samples {
        assert_eq!(s.observation.n_steps(), 10);
        // The stored future continues the window under the dynamics: the
        // snapshot initial state is the window's last frame, and the first
        // future frame must be one feasible step away.
        let last = s.observation.frames.last().unwrap();
        for (i, st) in last.iter().enumerate() {
            assert_eq!(*st, s.snapshot.initial_states[i]);
            let next = &s.future_states[0][i];
            let dp = (st.position + st.velocity * 0.1 - next.position).norm();
            assert!(dp < 1e-9, "future frame breaks the position recursion: {dp}");
        }
    }
    // Round-robin egos cover multiple agents.
    let egos: std::collections::BTreeSet<usize> = a.samples.iter().map(|s| s.ego).collect();
    assert!(egos.len() > 1);
}

#[test]
fn dataset_round_trips_through_json() {
    let scenario = ScenarioConfig::for_agents(4).with_seed(9);
    let cfg = DatasetConfig { count: 1, ..DatasetConfig::default() };
    let d = generate_dataset(&scenario, &cfg, &SolverConfig::default()).unwrap();
    let parsed = Dataset::from_json(&d.to_json()).unwrap();
    assert_eq!(d, parsed);
}

#[test]
fn prefilter_picks_nearest_with_index_ties() {
    let positions: Vec<Vec2> = vec![
        Vec2::new(0.0, 0.0),  // ego
        Vec2::new(1.0, 0.0),  // d = 1
        Vec2::new(0.0, 2.0),  // d = 2
        Vec2::new(-1.0, 0.0), // d = 1 (ties with agent 1, higher index)
        Vec2::new(5.0, 0.0),  // d = 5
    ];
    assert_eq!(prefilter_candidates(&positions, 0, 2).unwrap(), vec![1, 3]);
    assert_eq!(prefilter_candidates(&positions, 0, 10).unwrap(), vec![1, 2, 3, 4]);
    assert!(prefilter_candidates(&positions, 0, 0).is_err());
}

#[test]
fn prefilter_composed_with_knn_equals_direct_knn() {
    use crate::selection::{apply_topk, score_agents, ScoreMethod, SelectionContext};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let n = 20;
        let states: Vec<AgentState> = (0..n)
            .map(|_| {
                AgentState::new(
                    rng.random_range(-3.5..3.5),
                    rng.random_range(-3.5..3.5),
                    0.0,
                    0.0,
                )
            })
            .collect();
        let positions: Vec<Vec2> = states.iter().map(|s| s.position).collect();
        let ego = rng.random_range(0..n);
        let k = rng.random_range(1..=10);

        // Direct kNN over the full set.
        let ctx = SelectionContext {
            ego,
            current: states.clone(),
            previous: None,
            controls: None,
            ego_weights: CostWeights::benchmark(),
            dt: 0.1,
        };
        let scores = score_agents(&ctx, ScoreMethod::NegativeDistance).unwrap();
        let direct = apply_topk(ego, &scores, k).unwrap();

        // Pre-filter to 10 candidates, kNN inside, scatter back.
        let candidates = prefilter_candidates(&positions, ego, 10).unwrap();
        let sub_scores: Vec<f64> = candidates
            .iter()
            .map(|&j| -(positions[ego] - positions[j]).norm())
            .collect();
        let sub = apply_topk(0, &sub_scores, k).unwrap();
        let mut scattered = vec![0.0; n - 1];
        for (slot, &agent) in candidates.iter().enumerate() {
            if sub.values[slot] == 1.0 {
                scattered[if agent < ego { agent } else { agent - 1 }] = 1.0;
            }
        }
        assert_eq!(direct.values, scattered, "ego {ego} k {k}");
    }
}

#[test]
fn degenerate_bootstrap_is_the_single_run() {
    let methods = vec![
        SelectionParams::new(MethodSpec::All),
        SelectionParams::new(MethodSpec::Knn { k: 1 }),
    ];
    let config = MonteCarloConfig {
        task: Task::Prediction,
        count: 1,
        resamples: 1,
        seed: 42,
        rollout: crate::rollout::RolloutConfig {
            max_steps: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let scenario = ScenarioConfig::for_agents(4).with_seed(42);
    let (records, summary) =
        run_monte_carlo(&methods, &config, &scenario, &MethodResources::default()).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(summary.scenario_count, 1);
    for row in &summary.rows {
        let rec = records.iter().find(|r| r.method == row.method).unwrap();
        for cell in &row.cells {
            assert_eq!(cell.se, 0.0);
            let direct = rec.report.get(&cell.metric).unwrap();
            assert!((cell.mean - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_methods_get_identical_rows() {
    let methods = vec![
        SelectionParams::new(MethodSpec::Knn { k: 1 }),
        SelectionParams::new(MethodSpec::Knn { k: 1 }),
    ];
    let config = MonteCarloConfig {
        task: Task::Prediction,
        count: 3,
        resamples: 25,
        seed: 7,
        rollout: crate::rollout::RolloutConfig { max_steps: 8, ..Default::default() },
        ..Default::default()
    };
    let scenario = ScenarioConfig::for_agents(4).with_seed(7);
    let (_, summary) =
        run_monte_carlo(&methods, &config, &scenario, &MethodResources::default()).unwrap();
    assert_eq!(summary.rows[0].cells, summary.rows[1].cells);
}

#[test]
fn monte_carlo_is_deterministic_across_worker_counts() {
    let methods = vec![
        SelectionParams::new(MethodSpec::All),
        SelectionParams::new(MethodSpec::Bf { k: 1 }),
    ];
    let scenario = ScenarioConfig::for_agents(4).with_seed(19);
    let mut config = MonteCarloConfig {
        task: Task::Planning,
        count: 4,
        resamples: 50,
        seed: 19,
        rollout: crate::rollout::RolloutConfig { max_steps: 12, ..Default::default() },
        ..Default::default()
    };
    config.workers = 1;
    let (runs_a, summary_a) =
        run_monte_carlo(&methods, &config, &scenario, &MethodResources::default()).unwrap();
    config.workers = 4;
    let (runs_b, summary_b) =
        run_monte_carlo(&methods, &config, &scenario, &MethodResources::default()).unwrap();
    assert_eq!(runs_to_csv(&runs_a), runs_to_csv(&runs_b));
    assert_eq!(summary_to_csv(&summary_a), summary_to_csv(&summary_b));
}

#[test]
fn psn_method_without_checkpoint_is_rejected() {
    let methods = vec![SelectionParams::new(MethodSpec::PsnRank { k: 1 })];
    let config = MonteCarloConfig::default();
    let scenario = ScenarioConfig::for_agents(4);
    assert!(matches!(
        run_monte_carlo(&methods, &config, &scenario, &MethodResources::default()),
        Err(HarnessError::MissingParameter { .. })
    ));
}

#[test]
fn parallel_map_preserves_index_order() {
    let out = parallel_map_indexed(100, 8, |i| i * i);
    assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    let empty: Vec<usize> = parallel_map_indexed(0, 4, |i| i);
    assert!(empty.is_empty());
}
