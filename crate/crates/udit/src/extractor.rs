//! Attribute classifiers and semantic extractors trained from on-disk datasets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udit_core::datasets::AttributeSpec;
use udit_core::rng::{keyed, stream};
use udit_core::semext::{
    parse_tap_point, select_reduction_dim, sweep_reduction_dim, train_attribute_classifier, AttributeClassifier,
    ClassifierTrainConfig, LabeledSet, SemanticExtractor, SweepResult,
};
use udit_core::Domain;

use crate::data::{load_domain_data, read_schema};
use crate::error::{Error, Result};

/// Images of both domains labelled by one attribute.
pub fn labeled_set(root: &Path, attribute: &str) -> Result<(LabeledSet<f32>, AttributeSpec)> {
    let schema = read_schema(root)?;
    let spec = schema
        .into_iter()
        .find(|a| a.name == attribute)
        .ok_or_else(|| Error::Config(format!("dataset {} has no attribute '{attribute}'", root.display())))?;
    let mut set = LabeledSet::default();
    for d in [Domain::A, Domain::B] {
        let data = load_domain_data(root, d)?;
        for (r, img) in data.records.iter().zip(data.images) {
            let v = &r.labels[&spec.name];
            set.labels.push(spec.index_of(v).expect("labels validated against schema"));
            set.images.push(img);
        }
    }
    Ok((set, spec))
}

/// Deterministic shuffled split; `val_fraction` of the samples go to validation.
pub fn split(set: LabeledSet<f32>, val_fraction: f64, seed: u64) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
    }
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut keyed(seed, stream::CLASSIFIER + (1 << 40)));
    let n_val = ((set.len() as f64 * val_fraction).round() as usize).clamp(1, set.len().saturating_sub(1));
    let pick = |idx: &[usize]| LabeledSet {
        images: idx.iter().map(|&i| set.images[i].clone()).collect(),
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
    };
    Ok((pick(&order[n_val..]), pick(&order[..n_val])))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierRunConfig {
    pub dataset: PathBuf,
    /// Separate validation data; otherwise `val_fraction` of `dataset` is held out.
    pub val_dataset: Option<PathBuf>,
    pub val_fraction: f64,
    pub attribute: String,
    pub training: ClassifierTrainConfig,
}

impl Default for ClassifierRunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            val_dataset: None,
            val_fraction: 0.2,
            attribute: "shape".into(),
            training: ClassifierTrainConfig::default(),
        }
    }
}

impl ClassifierRunConfig {
    pub fn load_sets(&self) -> Result<(LabeledSet<f32>, LabeledSet<f32>, AttributeSpec)> {
        let (set, spec) = labeled_set(&self.dataset, &self.attribute)?;
        match &self.val_dataset {
            Some(v) => {
                let (val, vspec) = labeled_set(v, &self.attribute)?;
                if vspec != spec {
                    return Err(Error::Data(format!("'{}' differs between training and validation data", spec.name)));
                }
                Ok((set, val, spec))
            }
            None => {
                let (train, val) = split(set, self.val_fraction, self.training.seed)?;
                Ok((train, val, spec))
            }
        }
    }
}

pub fn train_classifier(cfg: &ClassifierRunConfig) -> Result<AttributeClassifier<f32>> {
    let (train, val, spec) = cfg.load_sets()?;
    Ok(train_attribute_classifier(&train, &val, &spec, &cfg.training)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorRunConfig {
    #[serde(flatten)]
    pub data: ClassifierRunConfig,
    pub tap: String,
    pub grid: Vec<usize>,
    pub tau: f64,
    /// Epochs used to fit each reduction layer during the sweep.
    pub sweep_epochs: usize,
}

impl Default for ExtractorRunConfig {
    fn default() -> Self {
        Self {
            data: ClassifierRunConfig::default(),
            tap: "stage3".into(),
            grid: vec![2, 8, 16, 32, 64, 128, 256],
            tau: 4.0,
            sweep_epochs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub attribute: String,
    pub tap: String,
    pub classifier_accuracy: f64,
    pub tau: f64,
    pub sweep: SweepResult,
    pub selected_d: usize,
}

pub struct ExtractorOutcome {
    pub classifier: AttributeClassifier<f32>,
    pub extractor: SemanticExtractor<f32>,
    pub report: SweepReport,
}

/// Train the classifier, sweep reduction widths at the tap point, and keep
/// the extractor at the selected width.
pub fn train_extractor(cfg: &ExtractorRunConfig) -> Result<ExtractorOutcome> {
    if !(cfg.tau >= 0.0 && cfg.tau.is_finite()) {
        return Err(Error::Config(format!("tau must be finite and >= 0, got {}", cfg.tau)));
    }
    let tap = parse_tap_point(&cfg.tap, cfg.data.training.arch.channels.len())?;
    let (train, val, spec) = cfg.data.load_sets()?;
    let classifier = train_attribute_classifier(&train, &val, &spec, &cfg.data.training)?;
    let sweep_cfg = ClassifierTrainConfig { epochs: cfg.sweep_epochs, ..cfg.data.training.clone() };
    let sweep = sweep_reduction_dim(&classifier, &train, &val, &cfg.grid, tap, &sweep_cfg)?;
    let selected_d = select_reduction_dim(&sweep.result, cfg.tau);
    let report = SweepReport {
        attribute: spec.name.clone(),
        tap: cfg.tap.clone(),
        classifier_accuracy: classifier.accuracy,
        tau: cfg.tau,
        sweep: sweep.result.clone(),
        selected_d,
    };
    let extractor = sweep.take(selected_d).expect("selected width comes from the grid");
    Ok(ExtractorOutcome { classifier, extractor, report })
}
