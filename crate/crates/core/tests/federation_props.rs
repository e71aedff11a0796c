mod common;

use airfl::attacks::AttackKind;
use airfl::federation::DatasetKind;
use airfl::model::ModelParams;
use airfl::{run_experiment, AggregationMode, ExperimentConfig, Simulation};

fn setting(mode: AggregationMode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        devices: 10,
        mode,
        rounds: 40,
        batch: 50,
        lr: 0.5,
        sigma2: 0.0,
        cmult: f64::INFINITY,
        tol: 1e-12,
        dataset: DatasetKind::Synthetic,
        n_train: 2000,
        n_test: 1000,
        features: 20,
        classes: 10,
        seed,
        ..ExperimentConfig::default()
    }
}

/// Noiseless, unclipped over-the-air aggregation follows the ideal trajectory.
#[test]
fn noiseless_aircomp_tracks_ideal_trajectory() {
    let mut ideal = Simulation::new(setting(AggregationMode::IdealGm, 3)).unwrap();
    let mut air = Simulation::new(setting(AggregationMode::AirCompGm, 3)).unwrap();
    let mut wi = ModelParams::zeros(ideal.dim());
    let mut wa = wi.clone();
    for t in 0..40 {
        // both start each round from the ideal model so that local steps match
        let (next_i, _) = ideal.run_round(t, &wi).unwrap();
        let (next_a, row) = air.run_round(t, &wa).unwrap();
        assert!(!row.aggregation_failed);
        let err = common::rel_err(&next_a, &next_i, 1e-12);
        assert!(err <= 1e-9, "round {t}: relative error {err}");
        wi = next_i;
        wa = next_a;
    }
}

/// With no attackers both aggregators see near-identical IID updates. The
/// curves agree to half a point once past the steep first rounds, where a
/// small difference in the aggregate flips many predictions at once.
#[test]
fn mean_and_gm_agree_without_attackers() {
    const WARMUP: usize = 10;
    for seed in [0, 1, 2] {
        let desk = |mode| ExperimentConfig {
            devices: 20,
            rounds: 150,
            n_train: 5000,
            ..setting(mode, seed)
        };
        let gm = run_experiment(&desk(AggregationMode::IdealGm)).unwrap();
        let mean = run_experiment(&desk(AggregationMode::Mean)).unwrap();
        for (a, b) in gm.metrics.iter().zip(&mean.metrics) {
            let gap = (a.test_accuracy - b.test_accuracy).abs();
            let limit = if a.round < WARMUP { 0.25 } else { 0.005 };
            assert!(gap <= limit, "seed {seed} round {}: accuracy gap {gap}", a.round);
        }
    }
}

#[test]
fn attackers_do_not_change_honest_shards() {
    let clean = Simulation::new(setting(AggregationMode::IdealGm, 5)).unwrap();
    let attacked = Simulation::new(ExperimentConfig {
        byzantine: 3,
        attack: AttackKind::ClassFlip,
        ..setting(AggregationMode::IdealGm, 5)
    })
    .unwrap();
    for (a, b) in clean.devices().iter().zip(attacked.devices()).skip(3) {
        assert_eq!(a.shard.indices, b.shard.indices);
        assert_eq!(b.attack, AttackKind::None);
    }
}
