//! Alternating adversarial training of both translation directions.

use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::losses::{gan_d_node, gan_g_node, total_loss, LossBreakdown, LossTerms, LossWeights};
use crate::metrics::Translator;
use crate::nets::{sample_style, ArchConfig, Bind, ContentNodes, Domain, TranslationModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{keyed, stream};
use crate::semext::SemanticExtractor;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            arch: ArchConfig::default(),
            weights: LossWeights::default(),
            lr_gen: adam.lr,
            lr_disc: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            batch_size: 4,
            iterations: 5000,
            seed: 0,
            log_every: 100,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if !lr_ok(self.lr_gen) || !lr_ok(self.lr_disc) {
            return Err(Error::Config("learning rates must be finite and > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam_gen(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_gen, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn adam_disc(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_disc, ..self.adam_gen() }
    }

    /// Fresh model and optimizers.
    pub fn init_state<F: Float>(&self) -> Result<TrainState<F>> {
        self.validate()?;
        let model = TranslationModel::new(self.arch.clone(), self.seed)?;
        Ok(TrainState::new(model, self.adam_gen(), self.adam_disc()))
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub model: TranslationModel<F>,
    pub adam_gen: Adam<F>,
    pub adam_disc: Adam<F>,
    /// Completed steps.
    pub iteration: u64,
}

impl<F: Float> TrainState<F> {
    pub fn new(model: TranslationModel<F>, gen: AdamConfig, disc: AdamConfig) -> Self {
        let adam_gen = Adam::new(gen, &model.gen);
        let adam_disc = Adam::new(disc, &model.disc);
        Self { model, adam_gen, adam_disc, iteration: 0 }
    }
}

/// Mini-batch indices for step `iteration`, drawn without replacement.
pub fn batch_indices(seed: u64, iteration: u64, domain: Domain, len: usize, batch: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Data(alloc::format!("domain {domain} has no training images")));
    }
    let key = stream::BATCH + 2 * iteration + domain.index() as u64;
    let mut rng = keyed(seed, key);
    if batch <= len {
        Ok(sample(&mut rng, len, batch).into_vec())
    } else {
        use rand::Rng;
        Ok((0..batch).map(|_| rng.gen_range(0..len)).collect())
    }
}

struct DomainNodes {
    x: NodeId,
    content: ContentNodes,
    style: NodeId,
}

fn encode<F: Float>(g: &mut Graph<F>, model: &TranslationModel<F>, d: Domain, x: NodeId) -> Result<DomainNodes> {
    let gen = model.generator(d);
    let content = gen.content.forward(g, Bind::trainable(&model.gen), x)?;
    let style = gen.style.forward(g, Bind::trainable(&model.gen), x)?;
    Ok(DomainNodes { x, content, style })
}

fn scalar<F: Float>(g: &Graph<F>, n: NodeId) -> f64 {
    g.scalar(n).to_f64_lossy()
}

/// One discriminator update followed by one generator update.
///
/// The discriminators see the current generator's translations with gradient
/// flow cut; the generators are then scored by the freshly updated
/// discriminators. The extractor, when given, is bound frozen.
pub fn train_step<F: Float>(
    state: &mut TrainState<F>,
    batch_a: &Tensor<F>,
    batch_b: &Tensor<F>,
    extractor: Option<&SemanticExtractor<F>>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let model = &state.model;
    let n = model.arch.check_image(batch_a.shape())?;
    if model.arch.check_image(batch_b.shape())? != n {
        return Err(Error::Shape("domain batches differ in size".into()));
    }
    if weights.lambda_u > 0.0 && extractor.is_none() {
        return Err(Error::Config("lambda_u > 0 needs a semantic extractor".into()));
    }

    let mut rng = keyed(model.seed, stream::STYLE + state.iteration);
    let style_for_a: Tensor<F> = sample_style(n, &mut rng)?;
    let style_for_b: Tensor<F> = sample_style(n, &mut rng)?;

    let mut g = Graph::new();
    let xa = g.constant(batch_a.clone());
    let xb = g.constant(batch_b.clone());
    let ea = encode(&mut g, model, Domain::A, xa)?;
    let eb = encode(&mut g, model, Domain::B, xb)?;
    let s_a = g.constant(style_for_a);
    let s_b = g.constant(style_for_b);
    let bind = Bind::trainable(&model.gen);
    let dec_a = &model.generator(Domain::A).decoder;
    let dec_b = &model.generator(Domain::B).decoder;

    let x_aa = dec_a.forward(&mut g, bind, &ea.content, ea.style)?;
    let x_bb = dec_b.forward(&mut g, bind, &eb.content, eb.style)?;
    let x_ab = dec_b.forward(&mut g, bind, &ea.content, s_b)?;
    let x_ba = dec_a.forward(&mut g, bind, &eb.content, s_a)?;

    let back_ab = encode(&mut g, model, Domain::B, x_ab)?;
    let back_ba = encode(&mut g, model, Domain::A, x_ba)?;

    // Discriminator update on the current translations.
    let fake_ab = g.value(x_ab).clone();
    let fake_ba = g.value(x_ba).clone();
    let (disc_a, disc_b) = {
        let mut gd = Graph::new();
        let bind_d = Bind::trainable(&model.disc);
        let d_of = |gd: &mut Graph<F>, d: Domain, t: &Tensor<F>| {
            let x = gd.constant(t.clone());
            model.discriminator(d).forward(gd, bind_d, x)
        };
        let real_a = d_of(&mut gd, Domain::A, batch_a)?;
        let fake_a = d_of(&mut gd, Domain::A, &fake_ba)?;
        let real_b = d_of(&mut gd, Domain::B, batch_b)?;
        let fake_b = d_of(&mut gd, Domain::B, &fake_ab)?;
        let la = gan_d_node(&mut gd, &fake_a, &real_a)?;
        let lb = gan_d_node(&mut gd, &fake_b, &real_b)?;
        let loss = gd.weighted_sum(&[(la, F::one()), (lb, F::one())])?;
        let (da, db) = (scalar(&gd, la), scalar(&gd, lb));
        if !(da.is_finite() && db.is_finite()) {
            return Err(Error::NonFinite(alloc::format!(
                "discriminator loss at step {}: A {da}, B {db}",
                state.iteration
            )));
        }
        let grads = gd.backward(loss)?;
        let gdisc = grads.for_store(&gd, &model.disc);
        state.adam_disc.update(&mut state.model.disc, &gdisc)?;
        (da, db)
    };
    let model = &state.model;

    // Generator objective, scored by the updated discriminators.
    let frozen_d = Bind::frozen(&model.disc);
    let maps_a = model.discriminator(Domain::A).forward(&mut g, frozen_d, x_ba)?;
    let maps_b = model.discriminator(Domain::B).forward(&mut g, frozen_d, x_ab)?;
    let gan_a = gan_g_node(&mut g, &maps_a)?;
    let gan_b = gan_g_node(&mut g, &maps_b)?;
    let recon_x_a = g.mean_abs_diff(x_aa, ea.x)?;
    let recon_x_b = g.mean_abs_diff(x_bb, eb.x)?;
    let recon_c_a = g.mean_abs_diff(back_ab.content.features, ea.content.features)?;
    let recon_c_b = g.mean_abs_diff(back_ba.content.features, eb.content.features)?;
    let recon_s_a = g.mean_abs_diff(back_ab.style, s_b)?;
    let recon_s_b = g.mean_abs_diff(back_ba.style, s_a)?;

    let w = |v: f64| F::from_f64_lossy(v);
    let mut terms = alloc::vec![
        (gan_a, F::one()),
        (gan_b, F::one()),
        (recon_x_a, w(weights.lambda_x)),
        (recon_x_b, w(weights.lambda_x)),
        (recon_c_a, w(weights.lambda_c)),
        (recon_c_b, w(weights.lambda_c)),
        (recon_s_a, w(weights.lambda_s)),
        (recon_s_b, w(weights.lambda_s)),
    ];
    let mut sem = (0.0, 0.0);
    if let (Some(h), true) = (extractor, weights.lambda_u > 0.0) {
        let u_a = h.features_node(&mut g, xa)?;
        let u_ab = h.features_node(&mut g, x_ab)?;
        let u_b = h.features_node(&mut g, xb)?;
        let u_ba = h.features_node(&mut g, x_ba)?;
        let sem_a = g.mean_abs_diff(u_ab, u_a)?;
        let sem_b = g.mean_abs_diff(u_ba, u_b)?;
        sem = (scalar(&g, sem_a), scalar(&g, sem_b));
        terms.push((sem_a, w(weights.lambda_u)));
        terms.push((sem_b, w(weights.lambda_u)));
    }
    let total = g.weighted_sum(&terms)?;

    let lt = LossTerms {
        gan_a: scalar(&g, gan_a),
        gan_b: scalar(&g, gan_b),
        recon_x_a: scalar(&g, recon_x_a),
        recon_x_b: scalar(&g, recon_x_b),
        recon_c_a: scalar(&g, recon_c_a),
        recon_c_b: scalar(&g, recon_c_b),
        recon_s_a: scalar(&g, recon_s_a),
        recon_s_b: scalar(&g, recon_s_b),
        sem_a: sem.0,
        sem_b: sem.1,
    };
    let mut breakdown = total_loss(&lt, weights)?;
    breakdown.disc_a = disc_a;
    breakdown.disc_b = disc_b;
    if !breakdown.all_finite() || !g.scalar(total).is_finite() {
        return Err(Error::NonFinite(alloc::format!("step {}: {breakdown:?}", state.iteration)));
    }
    let grads = g.backward(total)?;
    let ggen = grads.for_store(&g, &model.gen);
    state.adam_gen.update(&mut state.model.gen, &ggen)?;
    state.iteration += 1;
    Ok(breakdown)
}

impl<F: Float> TranslationModel<F> {
    /// `k` translations of one image with styles keyed on `seed`.
    pub fn translate(&self, from: Domain, image: &Tensor<F>, k: usize, seed: u64) -> Result<Vec<Tensor<F>>> {
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        let styles: Tensor<F> = sample_style(k, &mut keyed(seed, stream::TRANSLATE))?;
        let out = self.translate_with_styles(from, image, &styles)?;
        (0..k).map(|i| out.narrow_batch(i, 1)).collect()
    }
}

impl Translator for TranslationModel<f32> {
    fn translate(&self, from: Domain, image: &Tensor<f32>, k: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
        TranslationModel::translate(self, from, image, k, seed)
    }
}
