//! Translator networks: content encoder with pooling indices, style encoder,
//! AdaIN affine MLP, decoder with unpooling, and multi-scale discriminator.
//!
//! Channel widths scale with `ArchConfig::base_channels`; the default of 64
//! gives the 64/128/256 content path, 256-wide AdaIN parameters and the
//! 64..512 discriminator.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, PoolIndices};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

/// Denominator stabilizer for every normalization layer.
pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const STYLE_DIM: usize = 8;

pub const GEN_STORE_TAG: u32 = 1;
pub const DISC_STORE_TAG: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Self {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }
}

impl core::fmt::Display for Domain {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub res_blocks: usize,
    pub stem_kernel: usize,
    pub res_kernel: usize,
    pub mlp_dim: usize,
    pub disc_scales: usize,
    pub use_pooling_indices: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            base_channels: 64,
            res_blocks: 6,
            stem_kernel: 7,
            res_kernel: 3,
            mlp_dim: 256,
            disc_scales: 3,
            use_pooling_indices: true,
        }
    }
}

impl ArchConfig {
    pub fn content_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_size, 64 | 128) {
            return Err(Error::Config(alloc::format!("image_size must be 64 or 128, got {}", self.image_size)));
        }
        if self.base_channels == 0 || self.mlp_dim == 0 || self.disc_scales == 0 {
            return Err(Error::Config("channel counts and scales must be positive".into()));
        }
        if self.stem_kernel.is_multiple_of(2) || self.res_kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        Ok(())
    }

    pub fn check_image(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [n, 3, h, w] if h == self.image_size && w == self.image_size && n > 0 => Ok(n),
            _ => Err(Error::Shape(alloc::format!(
                "expected images [N, 3, {s}, {s}], got {shape:?}",
                s = self.image_size
            ))),
        }
    }
}

/// Parameter binding for one forward pass.
#[derive(Clone, Copy)]
pub struct Bind<'a, F> {
    pub store: &'a ParamStore<F>,
    pub trainable: bool,
}

impl<'a, F: Float> Bind<'a, F> {
    pub fn trainable(store: &'a ParamStore<F>) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore<F>) -> Self {
        Self { store, trainable: false }
    }

    pub fn node(&self, g: &mut Graph<F>, id: ParamId) -> NodeId {
        g.param(self.store, id, self.trainable)
    }
}

fn eps<F: Float>() -> F {
    F::from_f64_lossy(NORM_EPS)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<F: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, F, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        pb.scoped(name, |pb| Conv {
            weight: pb.normal("weight", &[c_out, c_in, kernel, kernel]),
            bias: pb.zeros("bias", &[c_out]),
            stride,
            pad,
        })
    }

    /// He-scaled init (std `sqrt(2 / fan_in)`), for unnormalized relu stacks.
    pub fn he<F: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, F, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let std = libm::sqrt(2.0 / (c_in * kernel * kernel) as f64);
        pb.scoped(name, |pb| Conv {
            weight: pb.normal_std("weight", &[c_out, c_in, kernel, kernel], std),
            bias: pb.zeros("bias", &[c_out]),
            stride,
            pad,
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<NodeId> {
        let w = p.node(g, self.weight);
        let b = p.node(g, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, name: &str, fin: usize, fout: usize) -> Self {
        pb.scoped(name, |pb| Linear { weight: pb.normal("weight", &[fout, fin]), bias: pb.zeros("bias", &[fout]) })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<NodeId> {
        let w = p.node(g, self.weight);
        let b = p.node(g, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// conv → IN → relu → conv → IN, plus identity skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResBlock {
    fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, name: &str, ch: usize, k: usize) -> Self {
        pb.scoped(name, |pb| ResBlock {
            conv1: Conv::new(pb, "conv1", ch, ch, k, 1, k / 2),
            conv2: Conv::new(pb, "conv2", ch, ch, k, 1, k / 2),
        })
    }

    fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<NodeId> {
        let h = self.conv1.forward(g, p, x)?;
        let h = g.instance_norm(h, eps())?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h)?;
        let h = g.instance_norm(h, eps())?;
        g.add(x, h)
    }

    /// Same block with AdaIN in place of both instance norms.
    fn forward_adain<F: Float>(
        &self,
        g: &mut Graph<F>,
        p: Bind<'_, F>,
        x: NodeId,
        mu: NodeId,
        sigma: NodeId,
    ) -> Result<NodeId> {
        let h = self.conv1.forward(g, p, x)?;
        let h = g.adain(h, mu, sigma, eps())?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h)?;
        let h = g.adain(h, mu, sigma, eps())?;
        g.add(x, h)
    }
}

/// Graph-level content code.
#[derive(Clone, Debug)]
pub struct ContentNodes {
    pub features: NodeId,
    /// Pooling indices of stages 1..3, outermost first.
    pub indices: Option<[PoolIndices; 3]>,
}

#[derive(Clone, Debug)]
pub struct ContentEncoder {
    stages: Vec<Conv>,
    blocks: Vec<ResBlock>,
    record_indices: bool,
}

impl ContentEncoder {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ArchConfig) -> Self {
        let b = arch.base_channels;
        let k = arch.stem_kernel;
        pb.scoped("content", |pb| {
            let stages = [(3, b), (b, 2 * b), (2 * b, 4 * b)]
                .iter()
                .enumerate()
                .map(|(i, &(ci, co))| Conv::new(pb, &alloc::format!("conv{}", i + 1), ci, co, k, 1, k / 2))
                .collect();
            let blocks = (0..arch.res_blocks)
                .map(|i| ResBlock::new(pb, &alloc::format!("res{}", i + 1), 4 * b, arch.res_kernel))
                .collect();
            ContentEncoder { stages, blocks, record_indices: arch.use_pooling_indices }
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<ContentNodes> {
        let mut h = x;
        let mut indices = Vec::with_capacity(3);
        for conv in &self.stages {
            h = conv.forward(g, p, h)?;
            h = g.instance_norm(h, eps())?;
            h = g.relu(h);
            let (pooled, idx) = g.max_pool2(h)?;
            indices.push(idx);
            h = pooled;
        }
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        let indices = if self.record_indices {
            let mut it = indices.into_iter();
            Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
        } else {
            None
        };
        Ok(ContentNodes { features: h, indices })
    }
}

/// conv7 → relu → conv4/2 → relu → conv4/2 → relu → GAP → 1×1 → 8.
#[derive(Clone, Debug)]
pub struct StyleEncoder {
    convs: Vec<Conv>,
    head: Linear,
}

impl StyleEncoder {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ArchConfig) -> Self {
        let b = arch.base_channels;
        let k = arch.stem_kernel;
        pb.scoped("style", |pb| StyleEncoder {
            convs: alloc::vec![
                Conv::new(pb, "conv1", 3, b, k, 1, k / 2),
                Conv::new(pb, "conv2", b, 2 * b, 4, 2, 1),
                Conv::new(pb, "conv3", 2 * b, 4 * b, 4, 2, 1),
            ],
            head: Linear::new(pb, "conv4", 4 * b, STYLE_DIM),
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h)?;
        self.head.forward(g, p, pooled)
    }
}

/// Style → (mu, sigma). The first two layers are shared by both heads.
#[derive(Clone, Debug)]
pub struct AffineNet {
    shared1: Linear,
    shared2: Linear,
    mu_head: Linear,
    sigma_head: Linear,
}

impl AffineNet {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ArchConfig) -> Self {
        let hidden = arch.mlp_dim;
        let out = arch.content_channels();
        pb.scoped("affine", |pb| AffineNet {
            shared1: Linear::new(pb, "linear1", STYLE_DIM, hidden),
            shared2: Linear::new(pb, "linear2", hidden, hidden),
            mu_head: Linear::new(pb, "mu", hidden, out),
            sigma_head: Linear::new(pb, "sigma", hidden, out),
        })
    }

    /// Returns `(mu, sigma)` nodes, each `[N, content_channels]`.
    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, style: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.shared1.forward(g, p, style)?;
        let h = g.relu(h);
        let h = self.shared2.forward(g, p, h)?;
        let h = g.relu(h);
        Ok((self.mu_head.forward(g, p, h)?, self.sigma_head.forward(g, p, h)?))
    }

    pub fn heads(&self) -> (&Linear, &Linear) {
        (&self.mu_head, &self.sigma_head)
    }

    pub fn shared(&self) -> (&Linear, &Linear) {
        (&self.shared1, &self.shared2)
    }
}

/// AdaIN residual blocks, then three upsampling stages back to image space.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub affine: AffineNet,
    blocks: Vec<ResBlock>,
    ups: Vec<Conv>,
    use_indices: bool,
}

impl Decoder {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ArchConfig) -> Self {
        let b = arch.base_channels;
        let k = arch.stem_kernel;
        pb.scoped("decoder", |pb| {
            let affine = AffineNet::new(pb, arch);
            let blocks = (0..arch.res_blocks)
                .map(|i| ResBlock::new(pb, &alloc::format!("res{}", i + 1), 4 * b, arch.res_kernel))
                .collect();
            let ups = [(4 * b, 2 * b), (2 * b, b), (b, 3)]
                .iter()
                .enumerate()
                .map(|(i, &(ci, co))| Conv::new(pb, &alloc::format!("conv{}", i + 1), ci, co, k, 1, k / 2))
                .collect();
            Decoder { affine, blocks, ups, use_indices: arch.use_pooling_indices }
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        p: Bind<'_, F>,
        content: &ContentNodes,
        style: NodeId,
    ) -> Result<NodeId> {
        let indices = match (&content.indices, self.use_indices) {
            (Some(idx), true) => Some(idx),
            (None, true) => {
                return Err(Error::State(
                    "decoder runs in pooling-index mode but the content code has no indices".into(),
                ))
            }
            (_, false) => None,
        };
        let (mu, sigma) = self.affine.forward(g, p, style)?;
        let mut h = content.features;
        for block in &self.blocks {
            h = block.forward_adain(g, p, h, mu, sigma)?;
        }
        let last = self.ups.len() - 1;
        for (i, conv) in self.ups.iter().enumerate() {
            h = match indices {
                Some(idx) => g.unpool2(h, &idx[2 - i])?,
                None => g.upsample2(h)?,
            };
            h = conv.forward(g, p, h)?;
            if i < last {
                h = g.instance_norm(h, eps())?;
                h = g.relu(h);
            }
        }
        Ok(g.tanh(h))
    }
}

/// Four stride-2 convs with leaky relu and a 1×1 score layer, one copy per scale.
#[derive(Clone, Debug)]
pub struct MultiScaleDiscriminator {
    scales: Vec<(Vec<Conv>, Conv)>,
}

impl MultiScaleDiscriminator {
    pub fn new<F: Float, R: Rng>(pb: &mut ParamBuilder<'_, F, R>, arch: &ArchConfig) -> Self {
        let b = arch.base_channels;
        pb.scoped("disc", |pb| {
            let scales = (0..arch.disc_scales)
                .map(|s| {
                    pb.scoped(&alloc::format!("scale{s}"), |pb| {
                        let chans = [(3, b), (b, 2 * b), (2 * b, 4 * b), (4 * b, 8 * b)];
                        let convs = chans
                            .iter()
                            .enumerate()
                            .map(|(i, &(ci, co))| Conv::new(pb, &alloc::format!("conv{}", i + 1), ci, co, 4, 2, 1))
                            .collect();
                        (convs, Conv::new(pb, "conv5", 8 * b, 1, 1, 1, 0))
                    })
                })
                .collect();
            MultiScaleDiscriminator { scales }
        })
    }

    /// One score map per scale, full resolution first; each further scale
    /// sees the input average-pooled by another factor of 2.
    pub fn forward<F: Float>(&self, g: &mut Graph<F>, p: Bind<'_, F>, x: NodeId) -> Result<Vec<NodeId>> {
        let mut input = x;
        let mut maps = Vec::with_capacity(self.scales.len());
        for (i, (convs, score)) in self.scales.iter().enumerate() {
            if i > 0 {
                input = g.avg_pool2(input)?;
            }
            let mut h = input;
            for conv in convs {
                h = conv.forward(g, p, h)?;
                h = g.leaky_relu(h, F::from_f64_lossy(LEAKY_SLOPE));
            }
            maps.push(score.forward(g, p, h)?);
        }
        Ok(maps)
    }
}

/// All generator-side networks for one domain.
#[derive(Clone, Debug)]
pub struct DomainGenerator {
    pub content: ContentEncoder,
    pub style: StyleEncoder,
    pub decoder: Decoder,
}

/// Content code as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode<F> {
    /// `[N, 4·base, H/8, W/8]`.
    pub features: Tensor<F>,
    pub indices: Option<[PoolIndices; 3]>,
}

/// Style vector batch `[N, 8]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode<F> {
    pub vector: Tensor<F>,
}

/// AdaIN scale/shift batch, each `[N, content_channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaInParams<F> {
    pub mu: Tensor<F>,
    pub sigma: Tensor<F>,
}

/// Encoders, decoders and discriminators for both domains.
#[derive(Clone, Debug)]
pub struct TranslationModel<F> {
    pub arch: ArchConfig,
    pub seed: u64,
    pub gen: ParamStore<F>,
    pub disc: ParamStore<F>,
    generators: [DomainGenerator; 2],
    discriminators: [MultiScaleDiscriminator; 2],
}

impl<F: Float> TranslationModel<F> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self::new_unchecked(arch, seed))
    }

    /// Build without the image-size check (used for small test models).
    pub fn new_unchecked(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = crate::rng::keyed(seed, crate::rng::stream::INIT);
        let mut gen = ParamStore::new(GEN_STORE_TAG);
        let mut disc = ParamStore::new(DISC_STORE_TAG);
        let generators = {
            let mut pb = ParamBuilder::new(&mut gen, &mut rng);
            [Domain::A, Domain::B].map(|d| {
                pb.scoped(&alloc::format!("gen_{}", d.name().to_ascii_lowercase()), |pb| DomainGenerator {
                    content: ContentEncoder::new(pb, &arch),
                    style: StyleEncoder::new(pb, &arch),
                    decoder: Decoder::new(pb, &arch),
                })
            })
        };
        let discriminators = {
            let mut pb = ParamBuilder::new(&mut disc, &mut rng);
            [Domain::A, Domain::B].map(|d| {
                pb.scoped(&alloc::format!("dis_{}", d.name().to_ascii_lowercase()), |pb| {
                    MultiScaleDiscriminator::new(pb, &arch)
                })
            })
        };
        Self { arch, seed, gen, disc, generators, discriminators }
    }

    pub fn generator(&self, d: Domain) -> &DomainGenerator {
        &self.generators[d.index()]
    }

    pub fn discriminator(&self, d: Domain) -> &MultiScaleDiscriminator {
        &self.discriminators[d.index()]
    }

    pub fn content_encode(&self, d: Domain, images: &Tensor<F>) -> Result<ContentCode<F>> {
        self.arch.check_image(images.shape())?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let c = self.generator(d).content.forward(&mut g, Bind::frozen(&self.gen), x)?;
        Ok(ContentCode { features: g.value(c.features).clone(), indices: c.indices })
    }

    pub fn style_encode(&self, d: Domain, images: &Tensor<F>) -> Result<StyleCode<F>> {
        self.arch.check_image(images.shape())?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let s = self.generator(d).style.forward(&mut g, Bind::frozen(&self.gen), x)?;
        Ok(StyleCode { vector: g.value(s).clone() })
    }

    pub fn adain_affine(&self, d: Domain, style: &StyleCode<F>) -> Result<AdaInParams<F>> {
        check_style(&style.vector)?;
        let mut g = Graph::new();
        let s = g.constant(style.vector.clone());
        let (mu, sigma) = self.generator(d).decoder.affine.forward(&mut g, Bind::frozen(&self.gen), s)?;
        Ok(AdaInParams { mu: g.value(mu).clone(), sigma: g.value(sigma).clone() })
    }

    /// Decode with domain `d`'s generator.
    pub fn decode(&self, d: Domain, content: &ContentCode<F>, style: &StyleCode<F>) -> Result<Tensor<F>> {
        let (n, c, h, w) = content.features.dims4()?;
        let expect = self.arch.content_channels();
        if c != expect || style.vector.shape() != [n, STYLE_DIM] {
            return Err(Error::Shape(alloc::format!(
                "content {:?} / style {:?} do not match a {expect}-channel content code",
                content.features.shape(),
                style.vector.shape()
            )));
        }
        if h != w {
            return Err(Error::Shape("content code must be square".into()));
        }
        let mut g = Graph::new();
        let cf = g.constant(content.features.clone());
        let nodes = ContentNodes { features: cf, indices: content.indices.clone() };
        let s = g.constant(style.vector.clone());
        let out = self.generator(d).decoder.forward(&mut g, Bind::frozen(&self.gen), &nodes, s)?;
        Ok(g.value(out).clone())
    }

    pub fn discriminate(&self, d: Domain, images: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        self.arch.check_image(images.shape())?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let maps = self.discriminator(d).forward(&mut g, Bind::frozen(&self.disc), x)?;
        Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
    }

    /// `G_to(E_from^c(x), s)` for every style row of `styles`, one input image.
    pub fn translate_with_styles(&self, from: Domain, image: &Tensor<F>, styles: &Tensor<F>) -> Result<Tensor<F>> {
        let n = self.arch.check_image(image.shape())?;
        if n != 1 {
            return Err(Error::Shape("translate takes a single image".into()));
        }
        check_style(styles)?;
        let k = styles.shape()[0];
        let c = self.content_encode(from, image)?;
        let features = Tensor::stack_batch(&alloc::vec![c.features; k])?;
        let indices = c.indices.map(|idx| idx.map(|i| repeat_indices(&i, k)));
        let content = ContentCode { features, indices };
        self.decode(from.other(), &content, &StyleCode { vector: styles.clone() })
    }
}

fn repeat_indices(idx: &PoolIndices, k: usize) -> PoolIndices {
    let mut v = Vec::with_capacity(idx.len() * k);
    for _ in 0..k {
        v.extend_from_slice(idx);
    }
    v.into()
}

fn check_style<F: Float>(style: &Tensor<F>) -> Result<()> {
    match *style.shape() {
        [n, STYLE_DIM] if n > 0 => Ok(()),
        _ => Err(Error::Shape(alloc::format!("style codes must be [N, 8], got {:?}", style.shape()))),
    }
}

/// Draw `n` style codes from the standard normal.
pub fn sample_style<F: Float, R: Rng>(n: usize, rng: &mut R) -> Result<Tensor<F>> {
    if n == 0 {
        return Err(Error::Argument("sample_style needs n >= 1".into()));
    }
    let data = (0..n * STYLE_DIM).map(|_| F::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(&[n, STYLE_DIM], data)
}

/// 2×2 max pooling on a plain tensor, returning window offsets.
pub fn pool_with_indices<F: Float>(x: &Tensor<F>) -> Result<(Tensor<F>, PoolIndices)> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let (y, idx) = g.max_pool2(xn)?;
    Ok((g.value(y).clone(), idx))
}

pub fn unpool_with_indices<F: Float>(y: &Tensor<F>, indices: &PoolIndices) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let yn = g.constant(y.clone());
    let out = g.unpool2(yn, indices)?;
    Ok(g.value(out).clone())
}

/// AdaIN on plain tensors: standardize each channel of `features`
/// (`[N, C, H, W]`), then scale by `sigma` and shift by `mu` (`[N, C]`).
pub fn adain_apply<F: Float>(features: &Tensor<F>, p: &AdaInParams<F>) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let mu = g.constant(p.mu.clone());
    let sigma = g.constant(p.sigma.clone());
    let out = g.adain(x, mu, sigma, eps())?;
    Ok(g.value(out).clone())
}
