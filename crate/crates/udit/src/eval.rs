//! Evaluation of trained translators on a held-out labelled test set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udit_core::datasets::{AttrKind, AttributeSpec};
use udit_core::metrics::{
    evaluate, AttributeFilter, BiasReport, Classifier, Direction, Embedder, EvalSample, EvalSettings,
    IdentityTranslator, PixelEmbedder, RandomConvFeatures, Translator,
};
use udit_core::semext::{AttributeClassifier, SemanticExtractor};
use udit_core::Domain;

use crate::checkpoint::{load_classifier, load_extractor, load_train_state, model_checksum};
use crate::data::{load_domain_data, read_schema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub test_dataset: PathBuf,
    /// Unwanted-attribute classifier trained on data disjoint from the
    /// translation training set.
    pub classifier: PathBuf,
    /// Optional wanted-attribute classifier for the translation success rate.
    pub wanted_classifier: Option<PathBuf>,
    /// Semantic extractor whose pooled features give the feature distance;
    /// raw pixels when absent.
    pub embedder: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub udit: Option<PathBuf>,
    pub identity: bool,
    pub directions: Vec<Direction>,
    /// `attr=value` applied to inputs of every direction.
    pub filter: Option<String>,
    pub filter_a: Option<String>,
    pub filter_b: Option<String>,
    pub samples_per_input: usize,
    pub pair_count: usize,
    /// Use at most this many (filtered) inputs per direction.
    pub max_inputs: Option<usize>,
    pub diversity_seed: u64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_dataset: PathBuf::from("test"),
            classifier: PathBuf::from("classifier.ckpt"),
            wanted_classifier: None,
            embedder: None,
            baseline: None,
            udit: None,
            identity: false,
            directions: vec![Direction::AToB, Direction::BToA],
            filter: None,
            filter_a: None,
            filter_b: None,
            samples_per_input: 10,
            pair_count: 19,
            max_inputs: None,
            diversity_seed: 0,
            seed: 0,
        }
    }
}

pub fn parse_filter(s: &str) -> Result<AttributeFilter> {
    match s.split_once('=') {
        Some((a, v)) if !a.is_empty() && !v.is_empty() => {
            Ok(AttributeFilter { attribute: a.trim().into(), value: v.trim().into() })
        }
        _ => Err(Error::Config(format!("filter '{s}' is not of the form attr=value"))),
    }
}

impl EvalConfig {
    pub fn filter_for(&self, d: Direction) -> Result<Option<AttributeFilter>> {
        let specific = match d {
            Direction::AToB => &self.filter_a,
            Direction::BToA => &self.filter_b,
        };
        specific.as_ref().or(self.filter.as_ref()).map(|s| parse_filter(s)).transpose()
    }

    pub fn methods(&self) -> Result<Vec<(String, Option<PathBuf>)>> {
        let mut out = Vec::new();
        if self.identity {
            out.push(("identity".to_string(), None));
        }
        if let Some(p) = &self.baseline {
            out.push(("baseline".to_string(), Some(p.clone())));
        }
        if let Some(p) = &self.udit {
            out.push(("udit".to_string(), Some(p.clone())));
        }
        if out.is_empty() {
            return Err(Error::Config("nothing to evaluate: pass --baseline, --udit or --identity".into()));
        }
        if self.directions.is_empty() {
            return Err(Error::Config("no evaluation directions".into()));
        }
        Ok(out)
    }
}

/// Test samples of one domain with decoded images.
pub fn load_eval_samples(root: &Path, d: Domain) -> Result<Vec<EvalSample>> {
    let data = load_domain_data(root, d)?;
    Ok(data.records.into_iter().zip(data.images).map(|(r, image)| EvalSample { image, labels: r.labels }).collect())
}

/// Most frequent value of `attr` among `samples`.
pub fn majority_value(samples: &[EvalSample], attr: &AttributeSpec) -> Option<usize> {
    let mut counts = vec![0usize; attr.values.len()];
    for s in samples {
        if let Some(i) = s.labels.get(&attr.name).and_then(|v| attr.index_of(v)) {
            counts[i] += 1;
        }
    }
    let best = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))?;
    (counts[best] > 0).then_some(best)
}

/// Everything that stays fixed across the methods being compared.
pub struct EvalContext<'a> {
    pub classifier: &'a AttributeClassifier<f32>,
    pub wanted_classifier: Option<&'a AttributeClassifier<f32>>,
    pub embedder: &'a dyn Embedder,
    pub diversity: &'a RandomConvFeatures,
    pub test: [&'a [EvalSample]; 2],
}

struct DynEmbedder<'a>(&'a dyn Embedder);

impl Embedder for DynEmbedder<'_> {
    fn embed(&self, image: &udit_core::Tensor<f32>) -> udit_core::Result<Vec<f64>> {
        self.0.embed(image)
    }
}

pub fn evaluate_direction<T: Translator>(
    method: &str,
    translator: &T,
    ctx: &EvalContext<'_>,
    settings: &EvalSettings,
    max_inputs: Option<usize>,
) -> Result<BiasReport> {
    let src = settings.direction.source();
    let target = src.other();
    let mut inputs: Vec<EvalSample> = ctx.test[src.index()]
        .iter()
        .filter(|s| settings.filter.as_ref().is_none_or(|f| f.matches(&s.labels)))
        .cloned()
        .collect();
    if let Some(m) = max_inputs {
        inputs.truncate(m);
    }
    if inputs.is_empty() {
        let what = settings.filter.as_ref().map_or("<none>".to_string(), |f| format!("{}={}", f.attribute, f.value));
        return Err(Error::Data(format!("no {src} test samples match filter {what}")));
    }
    let wanted = match ctx.wanted_classifier {
        Some(f) => {
            let t = majority_value(ctx.test[target.index()], &f.attribute).ok_or_else(|| {
                Error::Data(format!("domain {target} test set carries no '{}' labels", f.attribute.name))
            })?;
            Some((f as &dyn Classifier, t))
        }
        None => None,
    };
    let embedder = DynEmbedder(ctx.embedder);
    let unwanted = &ctx.classifier.attribute;
    let mut report =
        evaluate(translator, ctx.classifier, unwanted, &embedder, ctx.diversity, &inputs, settings, wanted)?;
    report.method = method.to_string();
    Ok(report)
}

/// Evaluate every configured method in every configured direction.
pub fn run_evaluation(cfg: &EvalConfig) -> Result<Vec<BiasReport>> {
    let methods = cfg.methods()?;
    let classifier = load_classifier(&cfg.classifier)?;
    if classifier.attribute.kind != AttrKind::Unwanted {
        return Err(Error::Config(format!("classifier attribute '{}' is not unwanted", classifier.attribute.name)));
    }
    let schema = read_schema(&cfg.test_dataset)?;
    if !schema.iter().any(|a| a.name == classifier.attribute.name && a.values == classifier.attribute.values) {
        return Err(Error::Data(format!(
            "test set does not label '{}' with the classifier's values",
            classifier.attribute.name
        )));
    }
    let wanted = cfg.wanted_classifier.as_deref().map(load_classifier).transpose()?;
    let ext: Option<SemanticExtractor<f32>> = cfg.embedder.as_deref().map(load_extractor).transpose()?;
    let embedder: &dyn Embedder = match &ext {
        Some(e) => e,
        None => &PixelEmbedder,
    };
    let diversity = RandomConvFeatures::new(cfg.diversity_seed);
    let test_a = load_eval_samples(&cfg.test_dataset, Domain::A)?;
    let test_b = load_eval_samples(&cfg.test_dataset, Domain::B)?;
    let ctx = EvalContext {
        classifier: &classifier,
        wanted_classifier: wanted.as_ref(),
        embedder,
        diversity: &diversity,
        test: [&test_a, &test_b],
    };
    let mut reports = Vec::new();
    for (name, path) in methods {
        let model = path.as_deref().map(load_train_state).transpose()?.map(|(s, _)| s.model);
        for &direction in &cfg.directions {
            let settings = EvalSettings {
                direction,
                filter: cfg.filter_for(direction)?,
                samples_per_input: cfg.samples_per_input,
                pair_count: cfg.pair_count,
                seed: cfg.seed,
            };
            let mut report = match &model {
                Some(m) => {
                    let mut r = evaluate_direction(&name, m, &ctx, &settings, cfg.max_inputs)?;
                    r.model_checksum = model_checksum(m);
                    r
                }
                None => evaluate_direction(&name, &IdentityTranslator, &ctx, &settings, cfg.max_inputs)?,
            };
            report.method = name.clone();
            reports.push(report);
        }
    }
    Ok(reports)
}
