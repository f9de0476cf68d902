//! Biased two-domain dataset descriptions and the synthetic shape renderer.
//!
//! The unwanted attribute is a shape class and the wanted attribute is the
//! fill appearance (`<texture>-<color>`, e.g. `flat-blue`, `striped-red`).
//! Every sample is rendered from a random stream keyed on
//! `(seed, domain, index)`, so rendering order does not affect pixels.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Domain;
use crate::rng::{keyed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Wanted,
    Unwanted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttrKind,
    pub values: Vec<String>,
}

impl AttributeSpec {
    pub fn new(name: &str, kind: AttrKind, values: &[&str]) -> Self {
        Self { name: name.into(), kind, values: values.iter().map(|v| v.to_string()).collect() }
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("attribute with empty name".into()));
        }
        if self.values.len() < 2 {
            return Err(Error::Config(alloc::format!("attribute '{}' needs at least two values", self.name)));
        }
        let mut sorted = self.values.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.values.len() {
            return Err(Error::Config(alloc::format!("attribute '{}' has duplicate values", self.name)));
        }
        Ok(())
    }
}

/// Attribute-name → value assignment of one dataset cell or sample.
pub type Labels = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub labels: Labels,
    pub count: usize,
}

/// Per-domain sample counts; written as `<root>/<domain>/manifest.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub domain: Domain,
    pub counts: Vec<CellCount>,
    pub seed: u64,
    pub image_size: usize,
}

impl DomainManifest {
    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.count).sum()
    }

    /// Count of samples carrying `value` for `attribute`.
    pub fn marginal(&self, attribute: &str, value: &str) -> usize {
        self.counts.iter().filter(|c| c.labels.get(attribute).map(String::as_str) == Some(value)).map(|c| c.count).sum()
    }

    /// Cell labels of every sample, in generation order.
    pub fn expand(&self) -> Vec<&Labels> {
        self.counts.iter().flat_map(|c| core::iter::repeat_n(&c.labels, c.count)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub shape_attribute: String,
    pub fill_attribute: String,
    /// Centre offset as a fraction of the image side.
    pub position_jitter: f32,
    /// Shape radius range as fractions of the image side.
    pub size_range: (f32, f32),
    pub rotation_jitter_deg: f32,
    /// Per-channel color noise amplitude (0..255 scale).
    pub color_jitter: f32,
    /// Stripe period range as fractions of the image side.
    pub stripe_period: (f32, f32),
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            shape_attribute: "shape".into(),
            fill_attribute: "fill".into(),
            position_jitter: 0.12,
            size_range: (0.2, 0.3),
            rotation_jitter_deg: 20.0,
            color_jitter: 20.0,
            stripe_period: (0.12, 0.18),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasedDatasetConfig {
    pub attributes: Vec<AttributeSpec>,
    pub domain_a: Vec<CellCount>,
    pub domain_b: Vec<CellCount>,
    pub seed: u64,
    pub image_size: usize,
    /// When set, unwanted-attribute marginals must differ between domains.
    pub biased: bool,
    #[serde(default)]
    pub render: RenderStyle,
}

fn cell(shape: &str, fill: &str, count: usize) -> CellCount {
    let mut labels = Labels::new();
    labels.insert("shape".into(), shape.into());
    labels.insert("fill".into(), fill.into());
    CellCount { labels, count }
}

pub fn shape_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::new("fill", AttrKind::Wanted, &["flat-blue", "striped-red"]),
        AttributeSpec::new("shape", AttrKind::Unwanted, &["circle", "square"]),
    ]
}

impl BiasedDatasetConfig {
    /// A: flat-blue, mostly circles. B: striped-red, mostly squares.
    pub fn biased_shapes(major: usize, minor: usize, image_size: usize, seed: u64) -> Self {
        Self {
            attributes: shape_attributes(),
            domain_a: vec![cell("circle", "flat-blue", major), cell("square", "flat-blue", minor)],
            domain_b: vec![cell("square", "striped-red", major), cell("circle", "striped-red", minor)],
            seed,
            image_size,
            biased: true,
            render: RenderStyle::default(),
        }
    }

    /// Same fills per domain with both shapes equally represented.
    pub fn balanced_shapes(per_cell: usize, image_size: usize, seed: u64) -> Self {
        Self {
            attributes: shape_attributes(),
            domain_a: vec![cell("circle", "flat-blue", per_cell), cell("square", "flat-blue", per_cell)],
            domain_b: vec![cell("square", "striped-red", per_cell), cell("circle", "striped-red", per_cell)],
            seed,
            image_size,
            biased: false,
            render: RenderStyle::default(),
        }
    }

    pub fn cells(&self, d: Domain) -> &[CellCount] {
        match d {
            Domain::A => &self.domain_a,
            Domain::B => &self.domain_b,
        }
    }

    pub fn manifest(&self, d: Domain) -> DomainManifest {
        DomainManifest { domain: d, counts: self.cells(d).to_vec(), seed: self.seed, image_size: self.image_size }
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn wanted(&self) -> Result<&AttributeSpec> {
        self.attributes
            .iter()
            .find(|a| a.kind == AttrKind::Wanted)
            .ok_or_else(|| Error::Config("no wanted attribute".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_size, 64 | 128) {
            return Err(Error::Config(alloc::format!("image_size must be 64 or 128, got {}", self.image_size)));
        }
        for a in &self.attributes {
            a.validate()?;
        }
        let wanted: Vec<_> = self.attributes.iter().filter(|a| a.kind == AttrKind::Wanted).collect();
        if wanted.len() != 1 {
            return Err(Error::Config(alloc::format!("expected exactly one wanted attribute, found {}", wanted.len())));
        }
        let unwanted: Vec<_> = self.attributes.iter().filter(|a| a.kind == AttrKind::Unwanted).collect();
        if unwanted.is_empty() {
            return Err(Error::Config("at least one unwanted attribute is required".into()));
        }
        let names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(alloc::format!("attribute '{n}' declared twice")));
            }
        }
        for d in [Domain::A, Domain::B] {
            let cells = self.cells(d);
            let total: usize = cells.iter().map(|c| c.count).sum();
            if total == 0 {
                return Err(Error::Config(alloc::format!("domain {d} has no samples")));
            }
            if total < 2 {
                return Err(Error::Config(alloc::format!("domain {d} needs at least two samples")));
            }
            for c in cells {
                if c.labels.len() != self.attributes.len() {
                    return Err(Error::Config(alloc::format!(
                        "domain {d}: cell {:?} does not label every attribute",
                        c.labels
                    )));
                }
                for a in &self.attributes {
                    let v = c.labels.get(&a.name).ok_or_else(|| {
                        Error::Config(alloc::format!("domain {d}: cell lacks attribute '{}'", a.name))
                    })?;
                    if a.index_of(v).is_none() {
                        return Err(Error::Config(alloc::format!("domain {d}: '{v}' is not a value of '{}'", a.name)));
                    }
                }
            }
        }
        let (ma, mb) = (self.manifest(Domain::A), self.manifest(Domain::B));
        let marginals = |a: &AttributeSpec, m: &DomainManifest| -> Vec<f64> {
            let t = m.total() as f64;
            a.values.iter().map(|v| m.marginal(&a.name, v) as f64 / t).collect()
        };
        if marginals(wanted[0], &ma) == marginals(wanted[0], &mb) {
            return Err(Error::Config("wanted-attribute marginals must differ across domains".into()));
        }
        if self.biased && unwanted.iter().all(|u| marginals(u, &ma) == marginals(u, &mb)) {
            return Err(Error::Config("biased dataset requires misaligned unwanted-attribute marginals".into()));
        }
        let shape_attr = self.attribute(&self.render.shape_attribute).ok_or_else(|| {
            Error::Config(alloc::format!("render shape attribute '{}' missing", self.render.shape_attribute))
        })?;
        for v in &shape_attr.values {
            ShapeKind::parse(v)?;
        }
        let fill_attr = self.attribute(&self.render.fill_attribute).ok_or_else(|| {
            Error::Config(alloc::format!("render fill attribute '{}' missing", self.render.fill_attribute))
        })?;
        for v in &fill_attr.values {
            Fill::parse(v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Self::Circle),
            "square" => Ok(Self::Square),
            "triangle" => Ok(Self::Triangle),
            _ => Err(Error::Config(alloc::format!("unknown shape '{s}' (circle, square, triangle)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Flat,
    Striped,
    Checkered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fill {
    pub texture: Texture,
    pub rgb: [f32; 3],
}

impl Fill {
    pub fn parse(s: &str) -> Result<Self> {
        let (tex, color) =
            s.split_once('-').ok_or_else(|| Error::Config(alloc::format!("fill '{s}' is not <texture>-<color>")))?;
        let texture = match tex {
            "flat" => Texture::Flat,
            "striped" => Texture::Striped,
            "checkered" => Texture::Checkered,
            _ => return Err(Error::Config(alloc::format!("unknown texture '{tex}' (flat, striped, checkered)"))),
        };
        let rgb = match color {
            "red" => [205.0, 40.0, 40.0],
            "blue" => [40.0, 70.0, 205.0],
            "green" => [40.0, 160.0, 60.0],
            "black" => [30.0, 30.0, 30.0],
            _ => return Err(Error::Config(alloc::format!("unknown color '{color}' (red, blue, green, black)"))),
        };
        Ok(Self { texture, rgb })
    }
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub size: usize,
    pub pixels: Vec<u8>,
}

const BACKGROUND: [f32; 3] = [215.0, 215.0, 210.0];

fn render_stream(d: Domain, index: usize) -> u64 {
    let base = match d {
        Domain::A => stream::RENDER_A,
        Domain::B => stream::RENDER_B,
    };
    base + index as u64
}

fn uniform<R: Rng>(rng: &mut R, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Render sample `index` of domain `d`. Pure in `(style, labels, size, seed, d, index)`.
pub fn render_sample(
    style: &RenderStyle,
    labels: &Labels,
    size: usize,
    seed: u64,
    d: Domain,
    index: usize,
) -> Result<RgbImage> {
    let shape_v = labels
        .get(&style.shape_attribute)
        .ok_or_else(|| Error::Data(alloc::format!("sample lacks '{}'", style.shape_attribute)))?;
    let fill_v = labels
        .get(&style.fill_attribute)
        .ok_or_else(|| Error::Data(alloc::format!("sample lacks '{}'", style.fill_attribute)))?;
    let shape = ShapeKind::parse(shape_v)?;
    let fill = Fill::parse(fill_v)?;
    let mut rng = keyed(seed, render_stream(d, index));
    let s = size as f32;
    let pj = style.position_jitter;
    let cx = s * (0.5 + uniform(&mut rng, -pj, pj));
    let cy = s * (0.5 + uniform(&mut rng, -pj, pj));
    let radius = s * uniform(&mut rng, style.size_range.0, style.size_range.1);
    let rj = style.rotation_jitter_deg.to_radians();
    let angle = uniform(&mut rng, -rj, rj);
    let cj = style.color_jitter;
    let mut color = fill.rgb;
    for c in &mut color {
        *c = (*c + uniform(&mut rng, -cj, cj)).clamp(0.0, 255.0);
    }
    let mut bg = BACKGROUND;
    for c in &mut bg {
        *c = (*c + uniform(&mut rng, -cj, cj) * 0.5).clamp(0.0, 255.0);
    }
    let period = s * uniform(&mut rng, style.stripe_period.0, style.stripe_period.1);
    let stripe_angle = core::f32::consts::FRAC_PI_4 + uniform(&mut rng, -0.3, 0.3);
    let light: [f32; 3] = [color[0] * 0.3 + 255.0 * 0.7, color[1] * 0.3 + 255.0 * 0.7, color[2] * 0.3 + 255.0 * 0.7];
    let (sin_a, cos_a) = (libm::sinf(angle), libm::cosf(angle));
    let (sin_s, cos_s) = (libm::sinf(stripe_angle), libm::cosf(stripe_angle));
    let mut pixels = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            // rotate into the shape frame
            let (u, v) = (px * cos_a + py * sin_a, -px * sin_a + py * cos_a);
            let inside = match shape {
                ShapeKind::Circle => u * u + v * v <= radius * radius,
                ShapeKind::Square => {
                    let half = radius * 0.886;
                    u.abs() <= half && v.abs() <= half
                }
                ShapeKind::Triangle => {
                    let h = radius * 1.2;
                    v <= h * 0.5 && v >= -h * 0.5 && u.abs() <= (v + h * 0.5) * 0.577
                }
            };
            let rgb = if inside {
                let stripe = match fill.texture {
                    Texture::Flat => false,
                    Texture::Striped => {
                        let t = (px + cx) * cos_s + (py + cy) * sin_s;
                        libm::floorf(t / (period * 0.5)) as i64 % 2 == 0
                    }
                    Texture::Checkered => {
                        let a = libm::floorf((px + cx) / (period * 0.5)) as i64;
                        let b = libm::floorf((py + cy) / (period * 0.5)) as i64;
                        (a + b) % 2 == 0
                    }
                };
                if stripe {
                    light
                } else {
                    color
                }
            } else {
                bg
            };
            let o = (y * size + x) * 3;
            for c in 0..3 {
                pixels[o + c] = libm::roundf(rgb[c]).clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RgbImage { size, pixels })
}

/// Map 8-bit RGB to a `[1, 3, S, S]` tensor in `[-1, 1]`.
pub fn to_tensor(img: &RgbImage) -> crate::tensor::Tensor<f32> {
    let s = img.size;
    let mut data = vec![0f32; 3 * s * s];
    for i in 0..s * s {
        for c in 0..3 {
            data[c * s * s + i] = img.pixels[i * 3 + c] as f32 / 127.5 - 1.0;
        }
    }
    crate::tensor::Tensor::new(&[1, 3, s, s], data).expect("square rgb image")
}

/// Inverse of [`to_tensor`] for one image of a batch.
pub fn from_tensor(t: &crate::tensor::Tensor<f32>, item: usize) -> Result<RgbImage> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 || h != w || item >= n {
        return Err(Error::Shape(alloc::format!("cannot view {:?}[{item}] as an RGB image", t.shape())));
    }
    let plane = h * w;
    let base = &t.data()[item * 3 * plane..(item + 1) * 3 * plane];
    let mut pixels = vec![0u8; plane * 3];
    for i in 0..plane {
        for ch in 0..3 {
            let v = (base[ch * plane + i] + 1.0) * 127.5;
            pixels[i * 3 + ch] = libm::roundf(v).clamp(0.0, 255.0) as u8;
        }
    }
    Ok(RgbImage { size: h, pixels })
}
