//! End-to-end bias experiment on the synthetic shapes data: baseline versus
//! semantically constrained translation.
//!
//! Every stage writes into `work_dir` and is skipped when its artifact is
//! already there, so an interrupted run picks up where it stopped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udit_core::datasets::BiasedDatasetConfig;
use udit_core::metrics::{BiasReport, Direction};
use udit_core::semext::{ClassifierArch, ClassifierTrainConfig};
use udit_core::trainer::TrainConfig;
use udit_core::ArchConfig;

use crate::checkpoint::{load_classifier, save_classifier, save_extractor};
use crate::data::{generate_biased_shapes, read_json, write_json};
use crate::error::{Error, Result};
use crate::eval::{run_evaluation, EvalConfig};
use crate::extractor::{train_classifier, train_extractor, ClassifierRunConfig, ExtractorRunConfig};
use crate::train::{train, TrainRunConfig, FINAL_CHECKPOINT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasExperimentConfig {
    pub work_dir: PathBuf,
    pub seed: u64,
    pub image_size: usize,
    pub major: usize,
    pub minor: usize,
    /// Per (shape, fill) cell in the balanced extractor / classifier sets.
    pub labelled_per_cell: usize,
    pub test_per_cell: usize,
    pub base_channels: usize,
    pub res_blocks: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub lambda_u: f64,
    pub classifier: ClassifierTrainConfig,
    pub extractor_tau: f64,
    pub samples_per_input: usize,
    pub max_eval_inputs: Option<usize>,
    pub verbose: bool,
}

impl Default for BiasExperimentConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("bias_experiment"),
            seed: 7,
            image_size: 64,
            major: 1330,
            minor: 70,
            labelled_per_cell: 200,
            test_per_cell: 50,
            base_channels: 8,
            res_blocks: 6,
            iterations: 5000,
            batch_size: 4,
            lambda_u: 1.0,
            classifier: ClassifierTrainConfig {
                epochs: 6,
                batch_size: 16,
                lr: 1e-3,
                seed: 0,
                arch: ClassifierArch { channels: vec![16, 32, 64, 64] },
            },
            extractor_tau: 4.0,
            samples_per_input: 10,
            max_eval_inputs: None,
            verbose: false,
        }
    }
}

impl BiasExperimentConfig {
    /// The fields that shape cached artifacts. Evaluation settings are applied fresh
    /// on every run and may change freely.
    fn cached_part(&self) -> Self {
        Self { work_dir: PathBuf::new(), samples_per_input: 0, max_eval_inputs: None, verbose: false, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasExperimentResult {
    /// Held-out accuracy (percent) of the shape classifier used for scoring.
    pub shape_classifier_accuracy: f64,
    pub fill_classifier_accuracy: f64,
    pub extractor_d: usize,
    pub baseline: Vec<BiasReport>,
    pub udit: Vec<BiasReport>,
}

impl BiasExperimentResult {
    pub fn report(&self, method: &str, direction: Direction) -> Option<&BiasReport> {
        let list = if method == "udit" { &self.udit } else { &self.baseline };
        list.iter().find(|r| r.direction == direction)
    }

    fn mean(list: &[BiasReport], f: impl Fn(&BiasReport) -> f64) -> f64 {
        list.iter().map(f).sum::<f64>() / list.len().max(1) as f64
    }

    pub fn mean_misclassification(&self, method: &str) -> f64 {
        let list = if method == "udit" { &self.udit } else { &self.baseline };
        Self::mean(list, |r| r.misclassification_rate)
    }

    pub fn mean_wanted_success(&self, method: &str) -> f64 {
        let list = if method == "udit" { &self.udit } else { &self.baseline };
        Self::mean(list, |r| r.wanted_success_rate.unwrap_or(0.0))
    }
}

fn generate(cfg: &BiasedDatasetConfig, dir: &Path) -> Result<()> {
    if dir.join("labels.csv").exists() {
        return Ok(());
    }
    generate_biased_shapes(cfg, dir).map(|_| ())
}

fn log(cfg: &BiasExperimentConfig, msg: &str) {
    if cfg.verbose {
        eprintln!("[experiment] {msg}");
    }
}

fn classifier_stage(
    cfg: &BiasExperimentConfig,
    dataset: &Path,
    val: &Path,
    attribute: &str,
    seed_offset: u64,
    out: &Path,
) -> Result<f64> {
    if out.exists() {
        return Ok(load_classifier(out)?.accuracy);
    }
    log(cfg, &format!("training {attribute} classifier"));
    let run = ClassifierRunConfig {
        dataset: dataset.to_path_buf(),
        val_dataset: Some(val.to_path_buf()),
        attribute: attribute.into(),
        training: ClassifierTrainConfig { seed: cfg.seed + seed_offset, ..cfg.classifier.clone() },
        ..ClassifierRunConfig::default()
    };
    let clf = train_classifier(&run)?;
    save_classifier(out, &clf)?;
    Ok(clf.accuracy)
}

fn translation_stage(
    cfg: &BiasExperimentConfig,
    name: &str,
    lambda_u: f64,
    indices: bool,
    extractor: &Path,
) -> Result<PathBuf> {
    let out = cfg.work_dir.join(name);
    let final_path = out.join(FINAL_CHECKPOINT);
    if final_path.exists() {
        return Ok(final_path);
    }
    log(cfg, &format!("training {name}"));
    let mut train_cfg = TrainConfig {
        arch: ArchConfig {
            image_size: cfg.image_size,
            base_channels: cfg.base_channels,
            res_blocks: cfg.res_blocks,
            use_pooling_indices: indices,
            ..ArchConfig::default()
        },
        batch_size: cfg.batch_size,
        iterations: cfg.iterations,
        seed: cfg.seed,
        checkpoint_every: 500,
        ..TrainConfig::default()
    };
    train_cfg.weights.lambda_u = lambda_u;
    let run = TrainRunConfig {
        dataset: cfg.work_dir.join("train"),
        extractor: (lambda_u > 0.0).then(|| extractor.to_path_buf()),
        train: train_cfg,
    };
    // Continue from the newest periodic checkpoint if one exists.
    let resume = latest_checkpoint(&out)?;
    train(&run, &out, resume.as_deref(), cfg.verbose)
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("step_") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    Ok(found.pop())
}

/// Run the full pipeline. Results are also written to `work_dir/result.json`.
pub fn run_bias_experiment(cfg: &BiasExperimentConfig) -> Result<BiasExperimentResult> {
    let w = &cfg.work_dir;
    fs::create_dir_all(w).map_err(|e| Error::io(w, e))?;
    let cfg_path = w.join("experiment_config.json");
    if cfg_path.exists() {
        let prev: BiasExperimentConfig = read_json(&cfg_path)?;
        if prev.cached_part() != cfg.cached_part() {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration; use a fresh work_dir",
                w.display()
            )));
        }
    }
    write_json(&cfg_path, cfg)?;
    let (s, size) = (cfg.seed, cfg.image_size);

    log(cfg, "generating data");
    generate(&BiasedDatasetConfig::biased_shapes(cfg.major, cfg.minor, size, s), &w.join("train"))?;
    // Disjoint labelled sets: extractor training, scoring classifiers, their validation, test.
    generate(&BiasedDatasetConfig::balanced_shapes(cfg.labelled_per_cell, size, s + 1), &w.join("extractor_data"))?;
    generate(&BiasedDatasetConfig::balanced_shapes(cfg.labelled_per_cell, size, s + 2), &w.join("classifier_data"))?;
    generate(&BiasedDatasetConfig::balanced_shapes(cfg.test_per_cell, size, s + 3), &w.join("classifier_val"))?;
    generate(&BiasedDatasetConfig::balanced_shapes(cfg.test_per_cell, size, s + 4), &w.join("test"))?;

    let ext_path = w.join("extractor.ckpt");
    let extractor_d = if ext_path.exists() {
        read_json::<serde_json::Value>(&w.join("sweep.json"))?["selected_d"].as_u64().unwrap_or(0) as usize
    } else {
        log(cfg, "training semantic extractor");
        let run = ExtractorRunConfig {
            data: ClassifierRunConfig {
                dataset: w.join("extractor_data"),
                val_dataset: Some(w.join("classifier_val")),
                attribute: "shape".into(),
                training: ClassifierTrainConfig { seed: s + 10, ..cfg.classifier.clone() },
                ..ClassifierRunConfig::default()
            },
            tau: cfg.extractor_tau,
            ..ExtractorRunConfig::default()
        };
        let outcome = train_extractor(&run)?;
        write_json(&w.join("sweep.json"), &outcome.report)?;
        save_extractor(&ext_path, &outcome.extractor)?;
        outcome.report.selected_d
    };

    let shape_clf = w.join("shape_classifier.ckpt");
    let fill_clf = w.join("fill_classifier.ckpt");
    let shape_acc =
        classifier_stage(cfg, &w.join("classifier_data"), &w.join("classifier_val"), "shape", 20, &shape_clf)?;
    let fill_acc = classifier_stage(cfg, &w.join("classifier_data"), &w.join("classifier_val"), "fill", 30, &fill_clf)?;

    let baseline = translation_stage(cfg, "baseline", 0.0, false, &ext_path)?;
    let udit = translation_stage(cfg, "udit", cfg.lambda_u, true, &ext_path)?;

    log(cfg, "evaluating");
    let eval_for = |path: &Path, which: &str| -> Result<Vec<BiasReport>> {
        let e = EvalConfig {
            test_dataset: w.join("test"),
            classifier: shape_clf.clone(),
            wanted_classifier: Some(fill_clf.clone()),
            embedder: Some(ext_path.clone()),
            baseline: (which == "baseline").then(|| path.to_path_buf()),
            udit: (which == "udit").then(|| path.to_path_buf()),
            // Inputs carrying the shape that is rare in the target domain.
            filter_a: Some("shape=circle".into()),
            filter_b: Some("shape=square".into()),
            samples_per_input: cfg.samples_per_input,
            max_inputs: cfg.max_eval_inputs,
            seed: s,
            ..EvalConfig::default()
        };
        run_evaluation(&e)
    };
    let result = BiasExperimentResult {
        shape_classifier_accuracy: shape_acc,
        fill_classifier_accuracy: fill_acc,
        extractor_d,
        baseline: eval_for(&baseline, "baseline")?,
        udit: eval_for(&udit, "udit")?,
    };
    write_json(&w.join("result.json"), &result)?;
    Ok(result)
}
