mod common;

use jointdrive::model::{Model, ModelConfig};
use jointdrive::train::{evaluate, LrUnit, Stage, TrainConfig, Trainer};
use jointdrive::CoreError;
use jointdrive_numerics::ParamStore;

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 2,
        lr: 1e-3,
        lr_unit: LrUnit::Step,
        step_size: 100,
        stage_steps: [2, 3, 2],
        ..TrainConfig::default()
    }
}

fn bits(store: &ParamStore) -> Vec<Vec<u64>> {
    store
        .iter()
        .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn perception_bits(store: &ParamStore) -> Vec<Vec<u64>> {
    Model::perception_params(store)
        .into_iter()
        .map(|id| store.get(id).value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn stage_two_leaves_perception_bit_identical() {
    let data = common::samples(1, 1);
    let mut t = Trainer::new(ModelConfig::tiny(), config(1)).unwrap();
    t.train_stages(&data, &[Stage::Perception], None).unwrap();
    let before = perception_bits(&t.store);
    let all_before = bits(&t.store);
    t.train_stages(&data, &[Stage::Joint], None).unwrap();
    assert_eq!(perception_bits(&t.store), before);
    assert_ne!(bits(&t.store), all_before);
    t.train_stages(&data, &[Stage::Full], None).unwrap();
    assert_ne!(perception_bits(&t.store), before);
}

#[test]
fn stage_one_only_moves_perception() {
    let data = common::samples(1, 1);
    let mut t = Trainer::new(ModelConfig::tiny(), config(1)).unwrap();
    let perception: Vec<_> = Model::perception_params(&t.store);
    let before = bits(&t.store);
    t.train_stages(&data, &[Stage::Perception], None).unwrap();
    let after = bits(&t.store);
    for (k, (a, b)) in before.iter().zip(&after).enumerate() {
        let is_perception = perception.iter().any(|id| id.index() == k);
        assert_eq!(a != b, is_perception, "{}", t.store.get(t.store.ids().nth(k).unwrap()).name);
    }
}

#[test]
fn seeded_runs_agree_and_seeds_matter() {
    let data = common::samples(2, 1);
    let run = |seed| {
        let mut t = Trainer::new(ModelConfig::tiny(), config(seed)).unwrap();
        let records = t.train_stages(&data, &Stage::ALL, None).unwrap();
        (bits(&t.store), records)
    };
    let (a, ra) = run(4);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = run(5);
    assert_ne!(a, c);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let data = common::samples(3, 1);
    let cfg = TrainConfig {
        stage_steps: [1, 6, 1],
        ..config(9)
    };
    let mut straight = Trainer::new(ModelConfig::tiny(), cfg.clone()).unwrap();
    straight.train_stages(&data, &[Stage::Perception, Stage::Joint], None).unwrap();

    let mut first = Trainer::new(ModelConfig::tiny(), cfg).unwrap();
    first.train_stages(&data, &[Stage::Perception], None).unwrap();
    first.set_stage(Stage::Joint);
    for _ in 0..4 {
        first.train_step(&data).unwrap();
    }
    let bytes = first.checkpoint().to_bytes().unwrap();
    let ckpt = jointdrive::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
    assert_eq!((resumed.stage, resumed.step), (Stage::Joint, 4));
    resumed.run_stage(&data, |_| {}).unwrap();
    assert_eq!(bits(&resumed.store), bits(&straight.store));
    // Optimizer moments were restored as well.
    for ((_, a), (_, b)) in resumed.store.iter().zip(straight.store.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn training_reduces_the_loss_on_a_small_set() {
    let data: Vec<_> = common::samples(4, 1).into_iter().take(4).collect();
    let cfg = TrainConfig {
        batch_size: 4,
        lr: 3e-3,
        stage_steps: [0, 60, 0],
        random_subsets: false,
        ..config(2)
    };
    let mut t = Trainer::new(ModelConfig::tiny(), cfg).unwrap();
    let before = evaluate(&t.model, &t.store, &data).unwrap();
    t.train_stages(&data, &[Stage::Joint], None).unwrap();
    let after = evaluate(&t.model, &t.store, &data).unwrap();
    assert!(after.joint_per_wp < 0.7 * before.joint_per_wp, "{before:?} → {after:?}");
    assert_eq!(after.samples, data.len());
}

#[test]
fn metrics_and_checkpoints_are_written_per_stage() {
    let data = common::samples(1, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(ModelConfig::tiny(), config(1)).unwrap();
    let records = t.train_stages(&data, &Stage::ALL, Some(dir.path())).unwrap();
    assert_eq!(records.len(), 7);
    for k in 1..=3 {
        assert!(dir.path().join(format!("stage{k}.ckpt")).exists());
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "stage,epoch,steps,lr,seg,planning,prediction,total");
    let steps: usize = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(steps, 7);
}

#[test]
fn empty_data_and_bad_settings_are_rejected() {
    let mut t = Trainer::new(ModelConfig::tiny(), config(1)).unwrap();
    assert!(matches!(t.train_step(&[]), Err(CoreError::EmptyDataset)));
    assert!(matches!(evaluate(&t.model, &t.store, &[]), Err(CoreError::EmptyDataset)));
    for bad in [
        TrainConfig { lr: 0.0, ..config(1) },
        TrainConfig { batch_size: 0, ..config(1) },
        TrainConfig { lambda: -1.0, ..config(1) },
    ] {
        assert!(Trainer::new(ModelConfig::tiny(), bad).is_err());
    }
}
