//! Library-level pipeline coverage: train, persist, reload, and re-score
//! through the public API only.

use std::collections::BTreeSet;

use tempograph_core::graph::sampling::destination_pool;
use tempograph_core::graph::split::{chronological_split, SplitSpec};
use tempograph_core::graph::synthetic::{gen_recurrent_bipartite, SyntheticSpec};
use tempograph_core::model::GraphContext;
use tempograph_core::tasks::eval::{evaluate_link_prediction, EvalOptions, EvalSetting};
use tempograph_core::tasks::sweep::{run_sweep, rows_to_csv, SweepConfig, SweepGrid};
use tempograph_core::tasks::train::{train_link_prediction, TrainConfig};
use tempograph_core::{EventLog, Model, ModelConfig, TeParams};

fn small_log() -> EventLog {
    gen_recurrent_bipartite(&SyntheticSpec {
        sources: 10,
        targets: 20,
        events: 400,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small_config(feat_dim: usize) -> ModelConfig {
    ModelConfig {
        feat_dim,
        d_mem: 4,
        d_time: 4,
        d_traj: 4,
        d_emb: 4,
        heads: 2,
        layers: 1,
        n_neighbors: 5,
        te: TeParams::new(2.0, 0.1).unwrap(),
        seed: 0,
        ..ModelConfig::default()
    }
}

#[test]
fn train_save_load_eval_roundtrip() {
    let log = small_log();
    let split = chronological_split(&log, SplitSpec::default()).unwrap();
    let mut model = Model::new(small_config(log.feat_dim())).unwrap();
    model.set_context(GraphContext::build(log.view()));
    let outcome = train_link_prediction(
        &mut model,
        split.train(),
        split.val(),
        &BTreeSet::new(),
        &TrainConfig {
            lr: 1e-3,
            batch_size: 50,
            n_neg: 2,
            epochs: 8,
            patience: 10,
            seed: 0,
        },
    )
    .unwrap();
    assert_eq!(outcome.epochs.len(), 8);
    assert!(outcome.best_val_ap > 0.5, "best val AP {}", outcome.best_val_ap);

    let pool = destination_pool(split.train());
    let opts = EvalOptions {
        batch_size: 50,
        seed: 0,
        pool: &pool,
        setting: EvalSetting::Transductive,
        unseen: &BTreeSet::new(),
        warmup: Some(split.val()),
    };
    let before = evaluate_link_prediction(&mut model, split.test(), &opts).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    let mut reloaded = Model::load(&path).unwrap();
    reloaded.set_context(GraphContext::build(log.view()));
    let after = evaluate_link_prediction(&mut reloaded, split.test(), &opts).unwrap();

    assert_eq!(before.n_scored, after.n_scored);
    assert_eq!(before.ap.to_bits(), after.ap.to_bits());
    assert_eq!(before.auc.to_bits(), after.auc.to_bits());
}

#[test]
fn inductive_evaluation_requires_masked_nodes() {
    let log = small_log();
    let split = chronological_split(&log, SplitSpec::default()).unwrap();
    let mut model = Model::new(small_config(log.feat_dim())).unwrap();
    model.set_context(GraphContext::build(log.view()));
    let pool = destination_pool(split.train());
    let err = evaluate_link_prediction(
        &mut model,
        split.test(),
        &EvalOptions {
            batch_size: 50,
            seed: 0,
            pool: &pool,
            setting: EvalSetting::Inductive,
            unseen: &BTreeSet::new(),
            warmup: None,
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("unseen"), "unexpected error: {err}");
}

#[test]
fn sweep_is_reproducible_at_the_library_level() {
    let cfg = SweepConfig {
        grid: SweepGrid {
            alphas: vec![2.0],
            betas: vec![0.1],
            dims: vec![4],
        },
        repeats: 2,
        base_seed: 5,
        data: SyntheticSpec {
            sources: 8,
            targets: 16,
            events: 200,
            seed: 2,
            ..SyntheticSpec::default()
        },
        split: SplitSpec::default(),
        train: TrainConfig {
            lr: 1e-3,
            batch_size: 40,
            n_neg: 2,
            epochs: 2,
            patience: 10,
            seed: 0,
        },
    };
    let first = rows_to_csv(&run_sweep(&cfg).unwrap());
    let second = rows_to_csv(&run_sweep(&cfg).unwrap());
    assert_eq!(first, second);
    assert_eq!(first.lines().count(), 2);
}
