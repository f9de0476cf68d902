//! Semantic extractor: an attribute classifier whose intermediate features,
//! squeezed through a 1×1×D convolution, serve as the frozen feature `u = h(x)`
//! matched by the semantic constraint.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::AttributeSpec;
use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, NodeId};
use crate::metrics::{Classifier, Embedder};
use crate::nets::{Bind, Conv, Linear};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamBuilder, ParamStore};
use crate::rng::{keyed, stream};
use crate::tensor::{Float, Tensor};

pub const BACKBONE_TAG: u32 = 3;
pub const HEAD_TAG: u32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierArch {
    /// Output channels of each conv3×3 → relu → maxpool stage.
    pub channels: Vec<usize>,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self { channels: alloc::vec![16, 32, 64, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub arch: ClassifierArch,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 16, lr: 1e-3, seed: 0, arch: ClassifierArch::default() }
    }
}

/// Images (`[1, 3, H, W]` each) with class indices.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet<F> {
    pub images: Vec<Tensor<F>>,
    pub labels: Vec<usize>,
}

impl<F: Float> LabeledSet<F> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        let imgs: Vec<Tensor<F>> = idx.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack_batch(&imgs)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }

    fn distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<Conv>,
}

impl Backbone {
    fn new<F: Float, R: rand::Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ClassifierArch) -> Self {
        let mut c_in = 3;
        let stages = arch
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::he(pb, &alloc::format!("stage{}", i + 1), c_in, c, 3, 1, 1);
                c_in = c;
                conv
            })
            .collect();
        Self { stages }
    }

    /// Run the first `upto` stages.
    fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId, upto: usize) -> Result<NodeId> {
        let mut h = x;
        for conv in &self.stages[..upto] {
            h = conv.forward(g, p, h)?;
            h = g.relu(h);
            h = g.max_pool2(h)?.0;
        }
        Ok(h)
    }

    fn depth(&self) -> usize {
        self.stages.len()
    }
}

/// Conv trunk + global average pooling + linear head.
#[derive(Clone, Debug)]
pub struct AttributeClassifier<F> {
    pub attribute: AttributeSpec,
    pub arch: ClassifierArch,
    pub seed: u64,
    pub backbone_params: ParamStore<F>,
    pub head_params: ParamStore<F>,
    backbone: Backbone,
    head: Linear,
    /// Validation accuracy in percent.
    pub accuracy: f64,
}

impl<F: Float> AttributeClassifier<F> {
    pub fn new(attribute: AttributeSpec, arch: ClassifierArch, seed: u64) -> Result<Self> {
        if arch.channels.is_empty() {
            return Err(Error::Config("classifier needs at least one stage".into()));
        }
        let k = attribute.values.len();
        let mut rng = keyed(seed, stream::INIT);
        let mut backbone_params = ParamStore::new(BACKBONE_TAG);
        let backbone = Backbone::new(&mut ParamBuilder::new(&mut backbone_params, &mut rng), &arch);
        let mut head_params = ParamStore::new(HEAD_TAG);
        let last = *arch.channels.last().unwrap();
        let head = Linear::new(&mut ParamBuilder::new(&mut head_params, &mut rng), "head", last, k);
        Ok(Self { attribute, arch, seed, backbone_params, head_params, backbone, head, accuracy: 0.0 })
    }

    pub fn num_classes(&self) -> usize {
        self.attribute.values.len()
    }

    fn logits(&self, g: &mut Graph<F>, x: NodeId, trainable: bool) -> Result<NodeId> {
        let feat = self.backbone.forward(g, p(&self.backbone_params, trainable), x, self.backbone.depth())?;
        let pooled = g.global_avg_pool(feat)?;
        self.head.forward(g, p(&self.head_params, trainable), pooled)
    }

    /// Class probabilities, one row per image of the batch.
    pub fn predict_batch(&self, images: &Tensor<F>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let logits = self.logits(&mut g, x, false)?;
        Ok(probability_rows(g.value(logits), self.num_classes()))
    }

    /// Number of backbone stages.
    pub fn depth(&self) -> usize {
        self.backbone.depth()
    }
}

fn p<F: Float>(store: &ParamStore<F>, trainable: bool) -> Bind<'_, F> {
    Bind { store, trainable }
}

fn probability_rows<F: Float>(logits: &Tensor<F>, k: usize) -> Vec<Vec<f64>> {
    softmax_rows(logits.data(), k).chunks(k).map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
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

fn accuracy_percent(
    set: &LabeledSet<impl Float>,
    mut predict: impl FnMut(&[usize]) -> Result<Vec<Vec<f64>>>,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(32) {
        let probs = predict(chunk)?;
        correct += chunk.iter().zip(&probs).filter(|(&i, row)| argmax(row) == set.labels[i]).count();
    }
    Ok(100.0 * correct as f64 / set.len() as f64)
}

fn check_labels<F: Float>(set: &LabeledSet<F>, k: usize) -> Result<()> {
    if set.images.len() != set.labels.len() {
        return Err(Error::Data("image/label count mismatch".into()));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(alloc::format!("label {bad} outside {k} classes")));
    }
    Ok(())
}

/// Shuffled mini-batch loop shared by classifier training and adapter fine-tuning.
fn fit<F: Float>(
    train: &LabeledSet<F>,
    epochs: usize,
    batch: usize,
    seed: u64,
    stream_base: u64,
    mut step: impl FnMut(&Tensor<F>, &[usize]) -> Result<()>,
) -> Result<()> {
    let batch = batch.max(1);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut keyed(seed, stream_base + epoch as u64));
        for chunk in order.chunks(batch) {
            let (x, y) = train.batch(chunk)?;
            step(&x, &y)?;
        }
    }
    Ok(())
}

/// Train a classifier for `attribute` and report accuracy on `val`.
pub fn train_attribute_classifier<F: Float>(
    train: &LabeledSet<F>,
    val: &LabeledSet<F>,
    attribute: &AttributeSpec,
    cfg: &ClassifierTrainConfig,
) -> Result<AttributeClassifier<F>> {
    let k = attribute.values.len();
    check_labels(train, k)?;
    check_labels(val, k)?;
    if train.distinct_labels() < 2 {
        return Err(Error::Data(alloc::format!("training data for '{}' contains a single class", attribute.name)));
    }
    let mut clf = AttributeClassifier::new(attribute.clone(), cfg.arch.clone(), cfg.seed)?;
    let adam = AdamConfig { lr: cfg.lr, beta1: 0.9, ..AdamConfig::default() };
    let mut opt_b = Adam::new(adam, &clf.backbone_params);
    let mut opt_h = Adam::new(adam, &clf.head_params);
    fit(train, cfg.epochs, cfg.batch_size, cfg.seed, stream::CLASSIFIER, |x, y| {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let logits = clf.logits(&mut g, xn, true)?;
        let loss = g.cross_entropy(logits, y)?;
        let grads = g.backward(loss)?;
        let gb = grads.for_store(&g, &clf.backbone_params);
        let gh = grads.for_store(&g, &clf.head_params);
        opt_b.update(&mut clf.backbone_params, &gb)?;
        opt_h.update(&mut clf.head_params, &gh)
    })?;
    clf.accuracy = accuracy_percent(val, |idx| {
        let (x, _) = val.batch(idx)?;
        clf.predict_batch(&x)
    })?;
    Ok(clf)
}

/// Frozen feature network: classifier trunk up to `tap`, then a 1×1×D conv.
#[derive(Clone, Debug)]
pub struct SemanticExtractor<F> {
    pub attribute: AttributeSpec,
    pub arch: ClassifierArch,
    /// Number of backbone stages feeding the reduction layer.
    pub tap: usize,
    pub d: usize,
    pub backbone_params: ParamStore<F>,
    /// Reduction layer and the linear head used for fine-tuning and accuracy.
    pub adapter_params: ParamStore<F>,
    backbone: Backbone,
    reduction: Conv,
    head: Linear,
    /// Validation accuracy in percent of the reduced classifier.
    pub accuracy: f64,
}

pub fn tap_point_name(tap: usize) -> String {
    alloc::format!("stage{tap}")
}

pub fn parse_tap_point(name: &str, depth: usize) -> Result<usize> {
    name.strip_prefix("stage")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| (1..=depth).contains(&t))
        .ok_or_else(|| Error::Config(alloc::format!("tap point '{name}' is not one of stage1..stage{depth}")))
}

impl<F: Float> SemanticExtractor<F> {
    /// Fresh reduction layer and head on top of `classifier`'s trunk.
    pub fn attach(classifier: &AttributeClassifier<F>, tap: usize, d: usize, seed: u64) -> Result<Self> {
        let depth = classifier.depth();
        if tap == 0 || tap > depth {
            return Err(Error::Config(alloc::format!("tap stage {tap} outside 1..={depth}")));
        }
        if d == 0 {
            return Err(Error::Config("reduction width D must be positive".into()));
        }
        let c_tap = classifier.arch.channels[tap - 1];
        let mut rng = keyed(seed, stream::SWEEP + d as u64);
        let mut adapter_params = ParamStore::new(HEAD_TAG);
        let (reduction, head) = {
            let mut pb = ParamBuilder::new(&mut adapter_params, &mut rng);
            (
                Conv::he(&mut pb, "reduction", c_tap, d, 1, 1, 0),
                Linear::new(&mut pb, "head", d, classifier.num_classes()),
            )
        };
        Ok(Self {
            attribute: classifier.attribute.clone(),
            arch: classifier.arch.clone(),
            tap,
            d,
            backbone_params: classifier.backbone_params.clone(),
            adapter_params,
            backbone: classifier.backbone.clone(),
            reduction,
            head,
            accuracy: 0.0,
        })
    }

    pub fn tap_point(&self) -> String {
        tap_point_name(self.tap)
    }

    /// Semantic feature node `[N, D, H/2^tap, W/2^tap]`. Both stores are bound
    /// frozen so no gradient ever reaches the extractor's weights.
    pub fn features_node(&self, g: &mut Graph<F>, x: NodeId) -> Result<NodeId> {
        self.features_node_with(g, x, false)
    }

    fn features_node_with(&self, g: &mut Graph<F>, x: NodeId, adapter_trainable: bool) -> Result<NodeId> {
        let h = self.backbone.forward(g, Bind::frozen(&self.backbone_params), x, self.tap)?;
        self.reduction.forward(g, p(&self.adapter_params, adapter_trainable), h)
    }

    fn logits(&self, g: &mut Graph<F>, x: NodeId, adapter_trainable: bool) -> Result<NodeId> {
        let u = self.features_node_with(g, x, adapter_trainable)?;
        let pooled = g.global_avg_pool(u)?;
        self.head.forward(g, p(&self.adapter_params, adapter_trainable), pooled)
    }

    pub fn extract(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let u = self.features_node(&mut g, x)?;
        Ok(g.value(u).clone())
    }

    pub fn predict_batch(&self, images: &Tensor<F>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let logits = self.logits(&mut g, x, false)?;
        Ok(probability_rows(g.value(logits), self.attribute.values.len()))
    }

    /// Fine-tune only the reduction layer and head, then record accuracy on `val`.
    pub fn fine_tune(&mut self, train: &LabeledSet<F>, val: &LabeledSet<F>, cfg: &ClassifierTrainConfig) -> Result<()> {
        let k = self.attribute.values.len();
        check_labels(train, k)?;
        check_labels(val, k)?;
        let adam = AdamConfig { lr: cfg.lr, beta1: 0.9, ..AdamConfig::default() };
        let mut opt = Adam::new(adam, &self.adapter_params);
        let seed = cfg.seed ^ (self.d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        fit(train, cfg.epochs, cfg.batch_size, seed, stream::SWEEP, |x, y| {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let logits = self.logits(&mut g, xn, true)?;
            let loss = g.cross_entropy(logits, y)?;
            let grads = g.backward(loss)?;
            let ga = grads.for_store(&g, &self.adapter_params);
            opt.update(&mut self.adapter_params, &ga)
        })?;
        self.accuracy = accuracy_percent(val, |idx| {
            let (x, _) = val.batch(idx)?;
            self.predict_batch(&x)
        })?;
        Ok(())
    }
}

/// Validation accuracy (percent) per reduction width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<usize>,
    pub accuracy: Vec<f64>,
}

impl SweepResult {
    pub fn new(grid: Vec<usize>, accuracy: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != accuracy.len() {
            return Err(Error::Argument("sweep needs one accuracy per non-empty grid point".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("sweep grid must be strictly increasing".into()));
        }
        if accuracy.iter().any(|a| !(0.0..=100.0).contains(a)) {
            return Err(Error::Argument("accuracies must lie in [0, 100]".into()));
        }
        Ok(Self { grid, accuracy })
    }

    pub fn accuracy_of(&self, d: usize) -> Option<f64> {
        self.grid.iter().position(|&g| g == d).map(|i| self.accuracy[i])
    }
}

/// Smallest grid width whose accuracy is within `tau` points of the best.
pub fn select_reduction_dim(sweep: &SweepResult, tau: f64) -> usize {
    let best = sweep.accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sweep.grid.iter().zip(&sweep.accuracy).find(|(_, &a)| a >= best - tau).map(|(&d, _)| d).unwrap_or(sweep.grid[0])
}

pub struct Sweep<F> {
    pub result: SweepResult,
    pub extractors: Vec<SemanticExtractor<F>>,
}

impl<F: Float> Sweep<F> {
    pub fn take(self, d: usize) -> Option<SemanticExtractor<F>> {
        self.extractors.into_iter().find(|e| e.d == d)
    }
}

/// For each width in `grid`: attach a fresh 1×1×D layer at `tap`, fine-tune
/// the layer and a new head with the trunk frozen, and record accuracy.
pub fn sweep_reduction_dim<F: Float>(
    classifier: &AttributeClassifier<F>,
    train: &LabeledSet<F>,
    val: &LabeledSet<F>,
    grid: &[usize],
    tap: usize,
    cfg: &ClassifierTrainConfig,
) -> Result<Sweep<F>> {
    if grid.is_empty() {
        return Err(Error::Argument("empty reduction-dimension grid".into()));
    }
    let mut extractors = Vec::with_capacity(grid.len());
    for &d in grid {
        let mut ext = SemanticExtractor::attach(classifier, tap, d, cfg.seed)?;
        ext.fine_tune(train, val, cfg)?;
        extractors.push(ext);
    }
    let result = SweepResult::new(grid.to_vec(), extractors.iter().map(|e| e.accuracy).collect())?;
    Ok(Sweep { result, extractors })
}

impl Classifier for AttributeClassifier<f32> {
    fn num_classes(&self) -> usize {
        self.attribute.values.len()
    }

    fn predict_proba(&self, image: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict_batch(image)?.swap_remove(0))
    }
}

impl Classifier for SemanticExtractor<f32> {
    fn num_classes(&self) -> usize {
        self.attribute.values.len()
    }

    fn predict_proba(&self, image: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict_batch(image)?.swap_remove(0))
    }
}

/// Globally pooled semantic features.
impl Embedder for SemanticExtractor<f32> {
    fn embed(&self, image: &Tensor<f32>) -> Result<Vec<f64>> {
        let u = self.extract(image)?;
        let (_, c, h, w) = u.dims4()?;
        let len = (h * w) as f64;
        Ok((0..c)
            .map(|ch| u.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).sum::<f64>() / len)
            .collect())
    }
}
