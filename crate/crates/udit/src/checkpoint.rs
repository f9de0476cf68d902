//! Single-file tensor bundles: `b"UDITCKPT"`, a little-endian u64 header
//! length, a JSON header (metadata plus a tensor index), then raw
//! little-endian f32 data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use udit_core::datasets::AttributeSpec;
use udit_core::losses::LossWeights;
use udit_core::optim::{Adam, AdamConfig};
use udit_core::params::ParamStore;
use udit_core::semext::{AttributeClassifier, ClassifierArch, SemanticExtractor};
use udit_core::trainer::TrainState;
use udit_core::{ArchConfig, Tensor, TranslationModel};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UDITCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save_bundle(path: &Path, kind: &str, meta: serde_json::Value, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.numel();
    }
    let header = Header { format_version: FORMAT_VERSION, kind: kind.into(), meta, tensors: entries };
    let json = serde_json::to_vec(&header).map_err(|e| ck(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct Bundle {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ck(format!("{} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    let bad = |m: &str| ck(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(&e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("format version {} is not supported", header.format_version)));
    }
    let data = &bytes[body..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let (start, end) = (e.offset * 4, (e.offset + n) * 4);
        if end > data.len() {
            return Err(bad(&format!("tensor '{}' runs past the end of the file", e.name)));
        }
        let vals = data[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((e.name, Tensor::new(&e.shape, vals)?));
    }
    Ok(Bundle { kind: header.kind, meta: header.meta, tensors })
}

impl Bundle {
    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(ck(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    fn meta<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| ck(format!("bad {} metadata: {e}", self.kind)))
    }

    /// Tensors whose names start with `prefix/`, prefix stripped.
    fn group(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let p = format!("{prefix}/");
        self.tensors.iter().filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone()))).collect()
    }

    fn load_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        store.load_from(&self.group(prefix)).map_err(|e| ck(format!("{prefix}: {e}")))
    }
}

fn named<'a>(prefix: &str, store: &'a ParamStore<f32>) -> impl Iterator<Item = (String, &'a Tensor<f32>)> + 'a {
    let prefix = prefix.to_string();
    store.iter().map(move |(_, n, t)| (format!("{prefix}/{n}"), t))
}

fn moments<'a>(prefix: &str, store: &'a ParamStore<f32>, adam: &'a Adam<f32>) -> Vec<(String, &'a Tensor<f32>)> {
    let mut out = Vec::new();
    for (i, (_, n, _)) in store.iter().enumerate() {
        out.push((format!("{prefix}.m/{n}"), &adam.m[i]));
        out.push((format!("{prefix}.v/{n}"), &adam.v[i]));
    }
    out
}

fn load_moments(b: &Bundle, prefix: &str, store: &ParamStore<f32>, adam: &mut Adam<f32>) -> Result<()> {
    let m = b.group(&format!("{prefix}.m"));
    let v = b.group(&format!("{prefix}.v"));
    let mut ms = store.clone();
    let mut vs = store.clone();
    ms.load_from(&m).map_err(|e| ck(format!("{prefix} moments: {e}")))?;
    vs.load_from(&v).map_err(|e| ck(format!("{prefix} moments: {e}")))?;
    adam.m = ms.iter().map(|(_, _, t)| t.clone()).collect();
    adam.v = vs.iter().map(|(_, _, t)| t.clone()).collect();
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub iteration: u64,
    pub adam_gen: AdamConfig,
    pub adam_disc: AdamConfig,
    pub adam_steps: (u64, u64),
    pub format_version: u32,
}

pub fn save_train_state(path: &Path, state: &TrainState<f32>, weights: &LossWeights) -> Result<()> {
    let m = &state.model;
    let manifest = ModelManifest {
        arch: m.arch.clone(),
        weights: *weights,
        seed: m.seed,
        iteration: state.iteration,
        adam_gen: state.adam_gen.config,
        adam_disc: state.adam_disc.config,
        adam_steps: (state.adam_gen.step, state.adam_disc.step),
        format_version: FORMAT_VERSION,
    };
    let mut tensors: Vec<(String, &Tensor<f32>)> = named("gen", &m.gen).chain(named("disc", &m.disc)).collect();
    tensors.extend(moments("adam_gen", &m.gen, &state.adam_gen));
    tensors.extend(moments("adam_disc", &m.disc, &state.adam_disc));
    let meta = serde_json::to_value(&manifest).map_err(|e| ck(e.to_string()))?;
    save_bundle(path, "train_state", meta, &tensors)
}

pub fn load_train_state(path: &Path) -> Result<(TrainState<f32>, ModelManifest)> {
    let b = load_bundle(path)?;
    b.expect_kind("train_state")?;
    let manifest: ModelManifest = b.meta()?;
    let mut model = TranslationModel::<f32>::new(manifest.arch.clone(), manifest.seed)
        .map_err(|e| ck(format!("checkpoint architecture: {e}")))?;
    b.load_store("gen", &mut model.gen)?;
    b.load_store("disc", &mut model.disc)?;
    let mut state = TrainState::new(model, manifest.adam_gen, manifest.adam_disc);
    load_moments(&b, "adam_gen", &state.model.gen, &mut state.adam_gen)?;
    load_moments(&b, "adam_disc", &state.model.disc, &mut state.adam_disc)?;
    state.adam_gen.step = manifest.adam_steps.0;
    state.adam_disc.step = manifest.adam_steps.1;
    state.iteration = manifest.iteration;
    Ok((state, manifest))
}

/// Hex SHA-256 over every parameter name, shape and value of the model.
pub fn model_checksum(model: &TranslationModel<f32>) -> String {
    let mut h = Sha256::new();
    for store in [&model.gen, &model.disc] {
        for (_, name, t) in store.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ExtractorMeta {
    attribute: AttributeSpec,
    arch: ClassifierArch,
    tap: usize,
    d: usize,
    accuracy: f64,
}

pub fn save_extractor(path: &Path, ext: &SemanticExtractor<f32>) -> Result<()> {
    let meta = ExtractorMeta {
        attribute: ext.attribute.clone(),
        arch: ext.arch.clone(),
        tap: ext.tap,
        d: ext.d,
        accuracy: ext.accuracy,
    };
    let tensors: Vec<_> =
        named("backbone", &ext.backbone_params).chain(named("adapter", &ext.adapter_params)).collect();
    save_bundle(path, "extractor", serde_json::to_value(&meta).map_err(|e| ck(e.to_string()))?, &tensors)
}

pub fn load_extractor(path: &Path) -> Result<SemanticExtractor<f32>> {
    let b = load_bundle(path)?;
    b.expect_kind("extractor")?;
    let meta: ExtractorMeta = b.meta()?;
    let base = AttributeClassifier::<f32>::new(meta.attribute, meta.arch, 0).map_err(|e| ck(e.to_string()))?;
    let mut ext = SemanticExtractor::attach(&base, meta.tap, meta.d, 0).map_err(|e| ck(e.to_string()))?;
    b.load_store("backbone", &mut ext.backbone_params)?;
    b.load_store("adapter", &mut ext.adapter_params)?;
    ext.accuracy = meta.accuracy;
    Ok(ext)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    attribute: AttributeSpec,
    arch: ClassifierArch,
    seed: u64,
    accuracy: f64,
}

pub fn save_classifier(path: &Path, clf: &AttributeClassifier<f32>) -> Result<()> {
    let meta = ClassifierMeta {
        attribute: clf.attribute.clone(),
        arch: clf.arch.clone(),
        seed: clf.seed,
        accuracy: clf.accuracy,
    };
    let tensors: Vec<_> = named("backbone", &clf.backbone_params).chain(named("head", &clf.head_params)).collect();
    save_bundle(path, "classifier", serde_json::to_value(&meta).map_err(|e| ck(e.to_string()))?, &tensors)
}

pub fn load_classifier(path: &Path) -> Result<AttributeClassifier<f32>> {
    let b = load_bundle(path)?;
    b.expect_kind("classifier")?;
    let meta: ClassifierMeta = b.meta()?;
    let mut clf =
        AttributeClassifier::<f32>::new(meta.attribute, meta.arch, meta.seed).map_err(|e| ck(e.to_string()))?;
    b.load_store("backbone", &mut clf.backbone_params)?;
    b.load_store("head", &mut clf.head_params)?;
    clf.accuracy = meta.accuracy;
    Ok(clf)
}
