use std::fs;
use std::path::Path;

use udit::checkpoint::{load_train_state, model_checksum, save_train_state};
use udit::data::{generate_biased_shapes, load_domain_data};
use udit::train::{read_log, train, TrainRunConfig, FINAL_CHECKPOINT, LOG_FILE};
use udit_core::datasets::BiasedDatasetConfig;
use udit_core::trainer::{batch_indices, train_step, TrainConfig};
use udit_core::{ArchConfig, Domain, Tensor};

fn dataset(root: &Path) {
    generate_biased_shapes(&BiasedDatasetConfig::biased_shapes(3, 1, 64, 2), root).unwrap();
}

fn tiny_run(root: &Path, iterations: u64, every: u64) -> TrainRunConfig {
    let mut train = TrainConfig {
        arch: ArchConfig { image_size: 64, base_channels: 4, res_blocks: 1, mlp_dim: 16, ..ArchConfig::default() },
        batch_size: 2,
        iterations,
        checkpoint_every: every,
        seed: 5,
        ..TrainConfig::default()
    };
    train.weights = train.weights.baseline();
    TrainRunConfig { dataset: root.to_path_buf(), extractor: None, train }
}

fn checkpoints(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ckpt"))
        .collect();
    v.sort();
    v
}

#[test]
fn cadence_one_writes_every_step_plus_final() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dataset(data.path());
    let fin = train(&tiny_run(data.path(), 2, 1), out.path(), None, false).unwrap();
    assert_eq!(fin, out.path().join(FINAL_CHECKPOINT));
    assert_eq!(checkpoints(out.path()), ["final.ckpt", "step_000001.ckpt", "step_000002.ckpt"]);
    let log = read_log(&out.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.iter().map(|e| e.step).collect::<Vec<_>>(), [1, 2]);
}

#[test]
fn resumed_run_matches_uninterrupted_log() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&tiny_run(data.path(), 10, 5), full.path(), None, false).unwrap();
    train(&tiny_run(data.path(), 5, 5), part.path(), None, false).unwrap();
    let ckpt = part.path().join("step_000005.ckpt");
    train(&tiny_run(data.path(), 10, 5), part.path(), Some(&ckpt), false).unwrap();
    assert_eq!(read_log(&full.path().join(LOG_FILE)).unwrap(), read_log(&part.path().join(LOG_FILE)).unwrap());
    assert_eq!(
        fs::read_to_string(full.path().join(LOG_FILE)).unwrap(),
        fs::read_to_string(part.path().join(LOG_FILE)).unwrap()
    );
    let (a, _) = load_train_state(&full.path().join(FINAL_CHECKPOINT)).unwrap();
    let (b, _) = load_train_state(&part.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(model_checksum(&a.model), model_checksum(&b.model));
}

#[test]
fn semantic_weight_without_extractor_fails_before_training() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dataset(data.path());
    let mut run = tiny_run(data.path(), 2, 1);
    run.train.weights.lambda_u = 1.0;
    let err = train(&run, out.path(), None, false).unwrap_err();
    assert!(matches!(err, udit::Error::Config(_)), "{err}");
    assert!(checkpoints(out.path()).is_empty());
    assert!(!out.path().join(LOG_FILE).exists());
}

#[test]
fn architecture_mismatch_on_resume_is_a_checkpoint_error() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dataset(data.path());
    let fin = train(&tiny_run(data.path(), 1, 0), out.path(), None, false).unwrap();
    let mut run = tiny_run(data.path(), 2, 0);
    run.train.arch.base_channels = 8;
    let err = train(&run, out.path(), Some(&fin), false).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn checkpoint_round_trip_continues_identically() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path());
    let run = tiny_run(data.path(), 3, 0);
    let cfg = &run.train;
    let a = load_domain_data(data.path(), Domain::A).unwrap().images;
    let b = load_domain_data(data.path(), Domain::B).unwrap().images;
    let batch = |imgs: &[Tensor<f32>], it: u64, d: Domain| {
        let idx = batch_indices(cfg.seed, it, d, imgs.len(), cfg.batch_size).unwrap();
        Tensor::stack_batch(&idx.iter().map(|&i| imgs[i].clone()).collect::<Vec<_>>()).unwrap()
    };
    let mut state = cfg.init_state::<f32>().unwrap();
    train_step(&mut state, &batch(&a, 0, Domain::A), &batch(&b, 0, Domain::B), None, &cfg.weights).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_train_state(&path, &state, &cfg.weights).unwrap();
    let (mut loaded, manifest) = load_train_state(&path).unwrap();
    assert_eq!(manifest.arch, cfg.arch);
    assert_eq!(manifest.iteration, 1);
    assert_eq!(loaded.model.gen, state.model.gen);
    assert_eq!(loaded.model.disc, state.model.disc);

    let (xa, xb) = (batch(&a, 1, Domain::A), batch(&b, 1, Domain::B));
    let l1 = train_step(&mut state, &xa, &xb, None, &cfg.weights).unwrap();
    let l2 = train_step(&mut loaded, &xa, &xb, None, &cfg.weights).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(model_checksum(&state.model), model_checksum(&loaded.model));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    fs::write(&path, b"not a checkpoint").unwrap();
    let err = load_train_state(&path).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}
