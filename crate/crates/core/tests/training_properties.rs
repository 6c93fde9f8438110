use koopflow::data::{synthetic_system, SyntheticConfig};
use koopflow::flow::FlowConfig;
use koopflow::hurwitz;
use koopflow::training::{self, TrainConfig, TrainError};

fn small_config(seed: u64, batch: Option<usize>) -> TrainConfig {
    TrainConfig {
        p_bar: 2,
        flow: FlowConfig { layers: 2, hidden: vec![6], final_tanh: false },
        epochs: 12,
        batch_size: batch,
        learning_rate: 5e-2,
        seed,
        init_noise: 0.3,
        selection_interval: 4,
        ..TrainConfig::default()
    }
}

fn dataset() -> koopflow::data::Dataset {
    let sys = synthetic_system(&SyntheticConfig { samples: 60, ..SyntheticConfig::default() }).unwrap();
    sys.dataset.preprocess(Some(&[0.0, 0.0])).unwrap().0
}

#[test]
fn every_step_keeps_the_latent_matrix_hurwitz() {
    let ds = dataset();
    for (seed, batch) in [(0, None), (1, Some(16)), (2, Some(7))] {
        let mut steps = 0;
        training::train_with_observer(&ds, &small_config(seed, batch), |r| {
            let a = r.objective.latent_matrix(r.params);
            let worst = hurwitz::max_real_part(&hurwitz::spectrum(&a).unwrap());
            assert!(worst < 0.0, "epoch {}: max real part {worst}", r.epoch);
            steps += 1;
        })
        .unwrap();
        assert!(steps >= 12);
    }
}

#[test]
fn training_is_deterministic() {
    let ds = dataset();
    for batch in [None, Some(16)] {
        let cfg = small_config(5, batch);
        let a = training::train(&ds, &cfg).unwrap();
        let b = training::train(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    }
}

#[test]
fn selection_returns_the_best_checked_epoch() {
    let ds = dataset();
    let out = training::train(&ds, &small_config(3, None)).unwrap();
    let checked: Vec<(usize, f64)> = out.history.records.iter().filter_map(|r| r.rmse.map(|v| (r.epoch, v))).collect();
    assert_eq!(checked.iter().map(|c| c.0).collect::<Vec<_>>(), vec![4, 8, 12]);
    let best = checked.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!((out.best_epoch, out.best_rmse), *best);
    assert_eq!(training::rollout_rmse(&out.model, &ds).unwrap(), out.best_rmse);
}

#[test]
fn divergence_is_reported() {
    let ds = dataset();
    let cfg = TrainConfig { divergence_threshold: 1e-12, ..small_config(0, None) };
    match training::train(&ds, &cfg) {
        Err(TrainError::Diverged { epoch, history, .. }) => {
            assert_eq!(epoch, 1);
            assert_eq!(history.records.len(), 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn unscaled_data_is_rejected() {
    let sys = synthetic_system(&SyntheticConfig { samples: 20, ..SyntheticConfig::default() }).unwrap();
    assert!(matches!(training::train(&sys.dataset, &small_config(0, None)), Err(TrainError::NotPreprocessed)));
}
