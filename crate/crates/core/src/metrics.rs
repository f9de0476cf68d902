//! Bias and diversity measures for translations: misclassification rate,
//! drop in confidence, feature distance, and the pairwise diversity protocol.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{AttributeSpec, Labels};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nets::{Bind, Conv, Domain};
use crate::params::{ParamBuilder, ParamStore};
use crate::rng::{keyed, stream};
use crate::tensor::Tensor;

/// Class-probability model over single images `[1, 3, H, W]`.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, image: &Tensor<f32>) -> Result<Vec<f64>>;

    fn predict(&self, image: &Tensor<f32>) -> Result<usize> {
        let p = self.predict_proba(image)?;
        Ok(argmax(&p))
    }
}

/// Fixed-length feature of a single image.
pub trait Embedder {
    fn embed(&self, image: &Tensor<f32>) -> Result<Vec<f64>>;
}

/// Produces `k` translations of one image out of domain `from`.
pub trait Translator {
    fn translate(&self, from: Domain, image: &Tensor<f32>, k: usize, seed: u64) -> Result<Vec<Tensor<f32>>>;
}

/// Returns its input `k` times.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, _from: Domain, image: &Tensor<f32>, k: usize, _seed: u64) -> Result<Vec<Tensor<f32>>> {
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        Ok(alloc::vec![image.clone(); k])
    }
}

/// Raw pixels as the feature vector.
pub struct PixelEmbedder;

impl Embedder for PixelEmbedder {
    fn embed(&self, image: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(image.data().iter().map(|&v| v as f64).collect())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A source image, one translation of it, and the source's true class.
#[derive(Clone, Debug)]
pub struct TranslationPair {
    pub source: Tensor<f32>,
    pub translated: Tensor<f32>,
    pub label: usize,
}

fn check_pairs(pairs: &[TranslationPair], classes: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Argument("no translation pairs".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.label >= classes) {
        return Err(Error::Argument(alloc::format!("label {} outside {classes} classes", p.label)));
    }
    Ok(())
}

/// Fraction of pairs whose translation is not classified as the source label.
pub fn misclassification_rate<C: Classifier>(f: &C, pairs: &[TranslationPair]) -> Result<f64> {
    check_pairs(pairs, f.num_classes())?;
    let mut wrong = 0usize;
    for p in pairs {
        if f.predict(&p.translated)? != p.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Mean of `p_true(source) − p_true(translated)`.
pub fn drop_in_confidence<C: Classifier>(f: &C, pairs: &[TranslationPair]) -> Result<f64> {
    check_pairs(pairs, f.num_classes())?;
    let mut sum = 0.0;
    for p in pairs {
        let before = f.predict_proba(&p.source)?[p.label];
        let after = f.predict_proba(&p.translated)?[p.label];
        sum += before - after;
    }
    Ok(sum / pairs.len() as f64)
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(alloc::format!("feature lengths {} vs {}", a.len(), b.len())));
    }
    Ok(libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()))
}

/// Euclidean distance between L2-normalized features.
pub fn normalized_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    euclidean(&l2_normalized(a), &l2_normalized(b))
}

pub fn feature_distance<E: Embedder>(embedder: &E, x: &Tensor<f32>, x_trans: &Tensor<f32>) -> Result<f64> {
    normalized_distance(&embedder.embed(x)?, &embedder.embed(x_trans)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub mean: f64,
    pub pairs: usize,
}

/// Up to `pair_count` distinct unordered pairs out of `k`, drawn without replacement.
pub fn sample_pairs(k: usize, pair_count: usize, seed: u64, input_index: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    if all.len() > pair_count {
        all.shuffle(&mut keyed(seed, stream::PAIRS + input_index as u64));
        all.truncate(pair_count);
    }
    all
}

/// Mean feature-space distance over random output pairs: for every input,
/// draw `k` translations and average the distance of `pair_count` pairs.
pub fn diversity_protocol<T: Translator, E: Embedder>(
    translator: &T,
    features: &E,
    from: Domain,
    inputs: &[Tensor<f32>],
    k: usize,
    pair_count: usize,
    seed: u64,
) -> Result<DiversityResult> {
    if k < 2 {
        return Err(Error::Argument("diversity needs at least 2 samples per input".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Argument("diversity needs at least one input".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, x) in inputs.iter().enumerate() {
        let outs = translator.translate(from, x, k, input_seed(seed, i))?;
        let feats: Vec<Vec<f64>> = outs.iter().map(|o| features.embed(o)).collect::<Result<_>>()?;
        for (a, b) in sample_pairs(k, pair_count, seed, i) {
            total += euclidean(&feats[a], &feats[b])?;
            count += 1;
        }
    }
    Ok(DiversityResult { mean: total / count as f64, pairs: count })
}

/// Seed for translating input `i` of an evaluation run.
pub fn input_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Fraction of translations the wanted-attribute classifier assigns to `target`.
pub fn target_success_rate<C: Classifier>(f: &C, translations: &[Tensor<f32>], target: usize) -> Result<f64> {
    if translations.is_empty() {
        return Err(Error::Argument("no translations".into()));
    }
    let mut hit = 0usize;
    for t in translations {
        if f.predict(t)? == target {
            hit += 1;
        }
    }
    Ok(hit as f64 / translations.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeFilter {
    pub attribute: String,
    pub value: String,
}

impl AttributeFilter {
    pub fn matches(&self, labels: &Labels) -> bool {
        labels.get(&self.attribute) == Some(&self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "A->B")]
    AToB,
    #[serde(rename = "B->A")]
    BToA,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::AToB => Domain::A,
            Direction::BToA => Domain::B,
        }
    }

    pub fn from_source(d: Domain) -> Self {
        match d {
            Domain::A => Direction::AToB,
            Domain::B => Direction::BToA,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::AToB => "A->B",
            Direction::BToA => "B->A",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    #[serde(default)]
    pub method: String,
    pub direction: Direction,
    pub filter: Option<AttributeFilter>,
    pub misclassification_rate: f64,
    #[serde(rename = "drop_in_confidence")]
    pub mean_drop_in_confidence: f64,
    #[serde(rename = "feature_distance")]
    pub mean_feature_distance: f64,
    pub diversity: f64,
    #[serde(default)]
    pub diversity_pairs: usize,
    pub n_inputs: usize,
    pub n_samples_per_input: usize,
    pub seed: u64,
    #[serde(default)]
    pub model_checksum: String,
    /// Share of translations the wanted-attribute classifier assigns to the
    /// target domain's wanted value.
    #[serde(default)]
    pub wanted_success_rate: Option<f64>,
}

/// One labelled test image.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub image: Tensor<f32>,
    pub labels: Labels,
}

#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub direction: Direction,
    pub filter: Option<AttributeFilter>,
    pub samples_per_input: usize,
    pub pair_count: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { direction: Direction::AToB, filter: None, samples_per_input: 10, pair_count: 19, seed: 0 }
    }
}

/// Wanted-attribute classifier and the class index of the target value.
pub type WantedCheck<'a> = (&'a dyn Classifier, usize);

/// Aggregate all four measures for one translation direction.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T, C, E, P>(
    translator: &T,
    classifier: &C,
    unwanted: &AttributeSpec,
    embedder: &E,
    diversity_features: &P,
    samples: &[EvalSample],
    settings: &EvalSettings,
    wanted: Option<WantedCheck<'_>>,
) -> Result<BiasReport>
where
    T: Translator,
    C: Classifier,
    E: Embedder,
    P: Embedder,
{
    let k = settings.samples_per_input;
    if k == 0 {
        return Err(Error::Argument("samples_per_input must be >= 1".into()));
    }
    if classifier.num_classes() != unwanted.values.len() {
        return Err(Error::Argument("classifier does not match the unwanted attribute".into()));
    }
    let selected: Vec<&EvalSample> =
        samples.iter().filter(|s| settings.filter.as_ref().is_none_or(|f| f.matches(&s.labels))).collect();
    if selected.is_empty() {
        return Err(Error::Data(match &settings.filter {
            Some(f) => alloc::format!("no test samples with {}={}", f.attribute, f.value),
            None => "empty test set".into(),
        }));
    }
    let from = settings.direction.source();
    let mut pairs = Vec::with_capacity(selected.len() * k);
    let mut dist_sum = 0.0;
    let mut div_sum = 0.0;
    let mut div_pairs = 0usize;
    let mut wanted_hits = 0usize;
    for (i, s) in selected.iter().enumerate() {
        let value = s
            .labels
            .get(&unwanted.name)
            .ok_or_else(|| Error::Data(alloc::format!("test sample lacks '{}'", unwanted.name)))?;
        let label = unwanted
            .index_of(value)
            .ok_or_else(|| Error::Data(alloc::format!("'{value}' is not a value of '{}'", unwanted.name)))?;
        let outs = translator.translate(from, &s.image, k, input_seed(settings.seed, i))?;
        let src_embed = embedder.embed(&s.image)?;
        for o in &outs {
            dist_sum += normalized_distance(&src_embed, &embedder.embed(o)?)?;
        }
        if k >= 2 {
            let feats: Vec<Vec<f64>> = outs.iter().map(|o| diversity_features.embed(o)).collect::<Result<_>>()?;
            for (a, b) in sample_pairs(k, settings.pair_count, settings.seed, i) {
                div_sum += euclidean(&feats[a], &feats[b])?;
                div_pairs += 1;
            }
        }
        if let Some((f, target)) = wanted {
            for o in &outs {
                if f.predict(o)? == target {
                    wanted_hits += 1;
                }
            }
        }
        for o in outs {
            pairs.push(TranslationPair { source: s.image.clone(), translated: o, label });
        }
    }
    Ok(BiasReport {
        method: String::new(),
        direction: settings.direction,
        filter: settings.filter.clone(),
        misclassification_rate: misclassification_rate(classifier, &pairs)?,
        mean_drop_in_confidence: drop_in_confidence(classifier, &pairs)?,
        mean_feature_distance: dist_sum / pairs.len() as f64,
        diversity: if div_pairs > 0 { div_sum / div_pairs as f64 } else { 0.0 },
        diversity_pairs: div_pairs,
        n_inputs: selected.len(),
        n_samples_per_input: k,
        seed: settings.seed,
        model_checksum: String::new(),
        wanted_success_rate: wanted.map(|_| wanted_hits as f64 / pairs.len() as f64),
    })
}

/// Fixed random-weight conv trunk; the feature is the concatenation of each
/// stage's globally pooled, L2-normalized activations.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures {
    store: ParamStore<f32>,
    convs: Vec<Conv>,
}

pub const RANDOM_TRUNK_CHANNELS: [usize; 3] = [16, 32, 64];

impl RandomConvFeatures {
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::new(0);
        let mut rng = keyed(seed, stream::PROBE);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let mut c_in = 3;
        let convs = RANDOM_TRUNK_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::he(&mut pb, &alloc::format!("probe{}", i + 1), c_in, c, 3, 2, 1);
                c_in = c;
                conv
            })
            .collect();
        Self { store, convs }
    }
}

impl Embedder for RandomConvFeatures {
    fn embed(&self, image: &Tensor<f32>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut h = g.constant(image.clone());
        let mut out = Vec::new();
        for conv in &self.convs {
            h = conv.forward(&mut g, Bind::frozen(&self.store), h)?;
            h = g.relu(h);
            let pooled = g.global_avg_pool(h)?;
            let v: Vec<f64> = g.value(pooled).data().iter().map(|&x| x as f64).collect();
            out.extend(l2_normalized(&v));
        }
        Ok(out)
    }
}
