//! Training runs over on-disk datasets with a JSON-lines loss log and
//! periodic checkpoints.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udit_core::losses::LossBreakdown;
use udit_core::semext::SemanticExtractor;
use udit_core::trainer::{batch_indices, train_step, TrainConfig, TrainState};
use udit_core::{Domain, Tensor};

use crate::checkpoint::{load_extractor, load_train_state, save_train_state};
use crate::data::{load_domain_data, validate_manifest};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    /// Required when `weights.lambda_u > 0`.
    pub extractor: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self { dataset: PathBuf::from("data"), extractor: None, train: TrainConfig::default() }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.weights.lambda_u > 0.0 && self.extractor.is_none() {
            return Err(Error::Config("lambda_u > 0 requires an extractor path".into()));
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

fn stack(images: &[Tensor<f32>], idx: &[usize]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = idx.iter().map(|&i| images[i].clone()).collect();
    Ok(Tensor::stack_batch(&items)?)
}

/// Run steps `state.iteration .. iterations` in memory, calling `on_step`
/// after each one.
pub fn train_in_memory(
    cfg: &TrainConfig,
    state: &mut TrainState<f32>,
    images_a: &[Tensor<f32>],
    images_b: &[Tensor<f32>],
    extractor: Option<&SemanticExtractor<f32>>,
    mut on_step: impl FnMut(&TrainState<f32>, &LossBreakdown) -> Result<()>,
) -> Result<()> {
    while state.iteration < cfg.iterations {
        let it = state.iteration;
        let ia = batch_indices(cfg.seed, it, Domain::A, images_a.len(), cfg.batch_size)?;
        let ib = batch_indices(cfg.seed, it, Domain::B, images_b.len(), cfg.batch_size)?;
        let (xa, xb) = (stack(images_a, &ia)?, stack(images_b, &ib)?);
        let loss = train_step(state, &xa, &xb, extractor, &cfg.weights)?;
        on_step(state, &loss)?;
    }
    Ok(())
}

/// Log entries with `step <= upto` from an existing log.
fn read_log_prefix(path: &Path, upto: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut keep = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if entry.step <= upto {
            keep.push(line);
        }
    }
    Ok(keep)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    read_log_prefix(path, u64::MAX)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(e.to_string())))
        .collect()
}

/// Train from `run.dataset` into `out`, optionally resuming from a checkpoint.
/// Returns the path of the final checkpoint.
pub fn train(run: &TrainRunConfig, out: &Path, resume: Option<&Path>, verbose: bool) -> Result<PathBuf> {
    run.validate()?;
    let violations = validate_manifest(&run.dataset);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Data(format!("dataset {} is invalid: {}", run.dataset.display(), list.join("; "))));
    }
    let extractor = match (&run.extractor, run.train.weights.lambda_u > 0.0) {
        (Some(p), true) => Some(load_extractor(p)?),
        _ => None,
    };
    let a = load_domain_data(&run.dataset, Domain::A)?;
    let b = load_domain_data(&run.dataset, Domain::B)?;
    let size = a.images[0].shape()[2];
    if size != run.train.arch.image_size {
        return Err(Error::Config(format!(
            "dataset images are {size}px but arch.image_size is {}",
            run.train.arch.image_size
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut state = match resume {
        Some(p) => {
            let (state, manifest) = load_train_state(p)?;
            if manifest.arch != run.train.arch {
                return Err(Error::Checkpoint(format!("{} was trained with a different architecture", p.display())));
            }
            state
        }
        None => run.train.init_state()?,
    };
    let log_path = out.join(LOG_FILE);
    let kept = read_log_prefix(&log_path, if resume.is_some() { state.iteration } else { 0 })?;
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    for line in kept {
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
    }
    let cfg = &run.train;
    let weights = cfg.weights;
    train_in_memory(cfg, &mut state, &a.images, &b.images, extractor.as_ref(), |st, loss| {
        let entry = LogEntry { step: st.iteration, loss: *loss };
        let line = serde_json::to_string(&entry).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if verbose && cfg.log_every > 0 && st.iteration % cfg.log_every == 0 {
            eprintln!(
                "step {:>6}  total {:.4}  gan {:.4}/{:.4}  disc {:.4}/{:.4}  sem {:.4}/{:.4}",
                st.iteration, loss.total, loss.gan_a, loss.gan_b, loss.disc_a, loss.disc_b, loss.sem_a, loss.sem_b
            );
        }
        if cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0 {
            save_train_state(&out.join(checkpoint_name(st.iteration)), st, &weights)?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_path = out.join(FINAL_CHECKPOINT);
    save_train_state(&final_path, &state, &weights)?;
    Ok(final_path)
}
