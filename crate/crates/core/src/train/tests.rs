use super::*;
use crate::propagate::precompute;
use crate::testutil::toy_graph;

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        heads: 2,
        l1: 2,
        l2: 2,
        lr: 5e-3,
        max_epochs: 15,
        ..TrainConfig::default()
    }
}

fn toy_model() -> Model<f64> {
    let cache = precompute(&toy_graph(), 2, 2).unwrap();
    Model::for_cache(small_config().model_config(), &cache, 2, 1).unwrap()
}

#[test]
fn zero_gradient_zero_decay_is_identity() {
    let mut m = toy_model();
    let before = m.clone();
    let grads: BTreeMap<String, Tensor<f64>> = m
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, Tensor::zeros(t.shape().to_vec())))
        .collect();
    adam_step(&mut m.params, &grads, &mut AdamState::new(), 1e-3, 0.0).unwrap();
    assert_eq!(m, before);
}

#[test]
fn first_step_moves_by_lr() {
    let mut m = toy_model();
    let mut grads = BTreeMap::new();
    grads.insert("fusion.gate".to_string(), Tensor::scalar(1.0));
    adam_step(&mut m.params, &grads, &mut AdamState::new(), 1e-3, 0.0).unwrap();
    let delta = m.params.fusion.gate.data()[0];
    assert!((delta + 1e-3).abs() < 1e-10, "{delta}");
}

#[test]
fn non_finite_gradient_is_rejected() {
    let mut m = toy_model();
    let before = m.clone();
    let mut grads = BTreeMap::new();
    grads.insert("fusion.gate".to_string(), Tensor::scalar(f64::NAN));
    let mut state = AdamState::new();
    let err = adam_step(&mut m.params, &grads, &mut state, 1e-3, 0.0).unwrap_err();
    assert_eq!(err.parameter, "fusion.gate");
    assert_eq!(m, before);
    assert_eq!(state.step, 0);
}

#[test]
fn decay_only_shrinks_norms() {
    let mut m = toy_model();
    let grads: BTreeMap<String, Tensor<f64>> = m
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, Tensor::zeros(t.shape().to_vec())))
        .collect();
    let norm = |m: &Model<f64>| {
        m.params
            .named()
            .iter()
            .map(|(_, t)| t.norm().powi(2))
            .sum::<f64>()
    };
    let mut state = AdamState::new();
    let mut last = norm(&m);
    for _ in 0..5 {
        adam_step(&mut m.params, &grads, &mut state, 1e-2, 0.5).unwrap();
        let now = norm(&m);
        assert!(now < last);
        last = now;
    }
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut m = toy_model();
        let mut state = AdamState::new();
        for step in 0..10 {
            let grads: BTreeMap<String, Tensor<f64>> = m
                .params
                .named()
                .into_iter()
                .map(|(n, t)| {
                    let data = t
                        .data()
                        .iter()
                        .map(|v| v.sin() + step as f64 * 0.1)
                        .collect();
                    (n, Tensor::new(t.shape().to_vec(), data))
                })
                .collect();
            adam_step(&mut m.params, &grads, &mut state, 1e-3, 5e-6).unwrap();
        }
        m
    };
    assert_eq!(run(), run());
}

#[test]
fn config_json_defaults_and_unknown_fields() {
    let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.005, "precision": "f64"}"#).unwrap();
    assert_eq!(c.lr, 0.005);
    assert_eq!(c.precision, Precision::F64);
    assert_eq!(c.max_epochs, 200);
    assert_eq!(c.hidden, 256);
    assert_eq!((c.lambda1, c.lambda2), (1e-4, 1e-4));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    let bad = TrainConfig {
        hidden: 10,
        heads: 4,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn stale_depth_is_refused() {
    let g = toy_graph();
    let cache = precompute(&g, 3, 2).unwrap();
    let err = train(&g, &cache, &small_config()).unwrap_err();
    assert!(matches!(
        err,
        TrainError::Propagate(PropagateError::Stale { what: "L1", .. })
    ));
}

#[test]
fn same_seed_same_history() {
    let g = toy_graph();
    let cache = precompute(&g, 2, 2).unwrap();
    let a = train(&g, &cache, &small_config()).unwrap();
    let b = train(&g, &cache, &small_config()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn patience_zero_stops_at_first_plateau() {
    let g = toy_graph();
    let cache = precompute(&g, 2, 2).unwrap();
    let config = TrainConfig {
        patience: 0,
        max_epochs: 50,
        ..small_config()
    };
    let out = train(&g, &cache, &config).unwrap();
    let h = &out.history;
    assert_eq!(out.stop, StopReason::EarlyStop);
    // Every epoch but the last improved on all previous ones.
    for i in 1..h.len() - 1 {
        assert!(h[i].val_micro > h[i - 1].val_micro);
    }
    assert!(
        h[h.len() - 1].val_micro
            <= h[..h.len() - 1]
                .iter()
                .map(|r| r.val_micro)
                .fold(f64::MIN, f64::max)
    );
}

#[test]
fn mini_batches_match_full_batch_loss() {
    let g = toy_graph();
    let cache = precompute(&g, 2, 2).unwrap();
    let config = TrainConfig {
        max_epochs: 3,
        precision: Precision::F64,
        ..small_config()
    };
    let full = train(&g, &cache, &config).unwrap();
    let mini = train(
        &g,
        &cache,
        &TrainConfig {
            batch_size: 1,
            ..config
        },
    )
    .unwrap();
    for (a, b) in full.history.iter().zip(&mini.history) {
        assert!((a.loss - b.loss).abs() < 1e-9, "{} vs {}", a.loss, b.loss);
    }
}

#[test]
fn csv_reports() {
    let g = toy_graph();
    let cache = precompute(&g, 2, 2).unwrap();
    let out = train(
        &g,
        &cache,
        &TrainConfig {
            max_epochs: 2,
            ..small_config()
        },
    )
    .unwrap();
    let m = metrics_csv(&out.history);
    assert!(m.starts_with("epoch,loss,val_macro,val_micro\n1,"));
    assert_eq!(m.lines().count(), out.history.len() + 1);
    let gcsv = gamma_csv(&out.model);
    assert!(gcsv.starts_with("path,hop,value\nA-B,0,"));
    assert!(gcsv.contains("label:A-B-A,0,"));
    let fwd = out.model.forward(&cache, 0).unwrap();
    let means = beta_means(&out.model.layout, &fwd);
    assert!((means.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(beta_csv(&out.model.layout, &fwd).starts_with("path,beta\n"));
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let g = toy_graph();
    let cache = precompute(&g, 2, 2).unwrap();
    let config = TrainConfig {
        lambda1: 0.1,
        lambda2: 0.1,
        ..small_config()
    };
    let rep = loss_grad_check(&g, &cache, &config, 50, 1e-4).unwrap();
    assert_eq!(rep.coordinates, 50);
    assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
}
