//! On-disk datasets: `<root>/{A,B}/images/*.png`, `<root>/{A,B}/manifest.json`,
//! `<root>/labels.csv` and the attribute schema in `<root>/dataset.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use udit_core::datasets::{
    render_sample, to_tensor, AttributeSpec, BiasedDatasetConfig, DomainManifest, Labels, RgbImage,
};
use udit_core::{Domain, Tensor};

use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.csv";
pub const SCHEMA_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// The part of `dataset.json` needed to read a dataset. Generated datasets
/// store their full generator config there; hand-made ones only need this.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub attributes: Vec<AttributeSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRecord {
    /// Relative to the dataset root, `/`-separated.
    pub image_path: String,
    pub domain: Domain,
    pub labels: Labels,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.size as u32, img.size as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let io_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(io_err)?;
    w.write_image_data(&img.pixels).map_err(io_err)?;
    w.finish().map_err(io_err)
}

/// Decode an 8-bit RGB (or RGBA, alpha dropped) square PNG of side 64 or 128.
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let file = fs::File::open(path).map_err(|_| bad("image file missing".into()))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| bad(format!("undecodable image ({e})")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(format!("undecodable image ({e})")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad("expected 8-bit channels".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    if w != h || !matches!(w, 64 | 128) {
        return Err(bad(format!("image is {w}x{h}, expected 64x64 or 128x128")));
    }
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
        png::ColorType::Rgba => buf[..w * h * 4].chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    Ok(RgbImage { size: w, pixels })
}

fn image_rel_path(d: Domain, index: usize) -> String {
    format!("{}/images/{index:05}.png", d.name())
}

fn label_rows(schema: &[AttributeSpec], records: &[SampleRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    let mut header = vec!["path".to_string(), "domain".to_string()];
    header.extend(schema.iter().map(|a| a.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.image_path.clone(), r.domain.name().to_string()];
        row.extend(schema.iter().map(|a| r.labels[&a.name].clone()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

/// Render the dataset described by `cfg` into `out`. Output bytes depend only
/// on `cfg`.
pub fn generate_biased_shapes(cfg: &BiasedDatasetConfig, out: &Path) -> Result<[DomainManifest; 2]> {
    cfg.validate()?;
    create_dir(out)?;
    let mut records = Vec::new();
    let manifests = [Domain::A, Domain::B].map(|d| cfg.manifest(d));
    for m in &manifests {
        let dir = out.join(m.domain.name());
        create_dir(&dir.join("images"))?;
        for (i, labels) in m.expand().into_iter().enumerate() {
            let img = render_sample(&cfg.render, labels, cfg.image_size, cfg.seed, m.domain, i)?;
            let rel = image_rel_path(m.domain, i);
            write_png(&out.join(&rel), &img)?;
            records.push(SampleRecord { image_path: rel, domain: m.domain, labels: labels.clone() });
        }
        write_json(&dir.join(MANIFEST_FILE), m)?;
    }
    write_json(&out.join(SCHEMA_FILE), cfg)?;
    let csv = label_rows(&cfg.attributes, &records)?;
    let path = out.join(LABELS_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(manifests)
}

pub fn read_schema(root: &Path) -> Result<Vec<AttributeSpec>> {
    let schema: DatasetSchema = read_json(&root.join(SCHEMA_FILE))?;
    for a in &schema.attributes {
        a.validate().map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(schema.attributes)
}

pub fn read_manifest(root: &Path, d: Domain) -> Result<DomainManifest> {
    let path = root.join(d.name()).join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("{}: manifest missing", path.display())));
    }
    let m: DomainManifest = read_json(&path)?;
    if m.domain != d {
        return Err(Error::Data(format!("{}: manifest is for domain {}", path.display(), m.domain)));
    }
    Ok(m)
}

/// Every row of `labels.csv`, checked against the schema.
pub fn read_labels(root: &Path, schema: &[AttributeSpec]) -> Result<Vec<SampleRecord>> {
    let path = root.join(LABELS_FILE);
    let ctx = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut rd = csv::Reader::from_path(&path).map_err(|e| ctx(e.to_string()))?;
    let header: Vec<String> = rd.headers().map_err(|e| ctx(e.to_string()))?.iter().map(String::from).collect();
    if header.len() < 2 || header[0] != "path" || header[1] != "domain" {
        return Err(ctx("header must start with path,domain".into()));
    }
    let attrs = &header[2..];
    let mut expected: Vec<&str> = schema.iter().map(|a| a.name.as_str()).collect();
    let mut found: Vec<&str> = attrs.iter().map(String::as_str).collect();
    expected.sort_unstable();
    found.sort_unstable();
    if expected != found {
        return Err(ctx(format!("label columns {found:?} do not match the attribute schema {expected:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| ctx(e.to_string()))?;
        if row.len() != header.len() {
            return Err(ctx(format!("row {} has {} fields", line + 2, row.len())));
        }
        let domain = match &row[1] {
            "A" => Domain::A,
            "B" => Domain::B,
            other => return Err(ctx(format!("row {}: unknown domain '{other}'", line + 2))),
        };
        let mut labels = Labels::new();
        for (name, value) in attrs.iter().zip(row.iter().skip(2)) {
            let spec = schema.iter().find(|a| &a.name == name).expect("checked above");
            if spec.index_of(value).is_none() {
                return Err(ctx(format!("row {}: '{value}' is not a value of '{name}'", line + 2)));
            }
            labels.insert(name.clone(), value.to_string());
        }
        out.push(SampleRecord { image_path: row[0].to_string(), domain, labels });
    }
    Ok(out)
}

/// Records of one domain in labels-file order.
pub fn load_domain(root: &Path, d: Domain) -> Result<Vec<SampleRecord>> {
    let schema = read_schema(root)?;
    let manifest = read_manifest(root, d)?;
    let records: Vec<SampleRecord> = read_labels(root, &schema)?.into_iter().filter(|r| r.domain == d).collect();
    for r in &records {
        let p = root.join(&r.image_path);
        if !p.is_file() {
            return Err(Error::Data(format!("missing image {}", p.display())));
        }
    }
    if records.len() != manifest.total() {
        return Err(Error::Data(format!(
            "domain {d}: labels file lists {} images, manifest says {}",
            records.len(),
            manifest.total()
        )));
    }
    Ok(records)
}

pub fn load_images(root: &Path, records: &[SampleRecord]) -> Result<Vec<Tensor<f32>>> {
    records.iter().map(|r| Ok(to_tensor(&read_png(&root.join(&r.image_path))?))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    MissingFile,
    Schema,
    CountMismatch,
    TooFewSamples,
    MissingImage,
    UndecodableImage,
    SizeMismatch,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::MissingFile => "missing file",
            ViolationKind::Schema => "schema mismatch",
            ViolationKind::CountMismatch => "count mismatch",
            ViolationKind::TooFewSamples => "too few samples",
            ViolationKind::MissingImage => "missing image",
            ViolationKind::UndecodableImage => "undecodable image",
            ViolationKind::SizeMismatch => "size mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.detail)
    }
}

fn violation(kind: ViolationKind, detail: impl Into<String>) -> Violation {
    Violation { kind, detail: detail.into() }
}

/// Check every manifest, label and image invariant; an empty list means the
/// dataset is usable.
pub fn validate_manifest(root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    let schema = match read_schema(root) {
        Ok(s) => s,
        Err(e) => return vec![violation(ViolationKind::MissingFile, e.to_string())],
    };
    let records = match read_labels(root, &schema) {
        Ok(r) => r,
        Err(e) => return vec![violation(ViolationKind::Schema, e.to_string())],
    };
    for d in [Domain::A, Domain::B] {
        let manifest = match read_manifest(root, d) {
            Ok(m) => m,
            Err(e) => {
                out.push(violation(ViolationKind::MissingFile, e.to_string()));
                continue;
            }
        };
        if manifest.total() < 2 {
            out.push(violation(ViolationKind::TooFewSamples, format!("domain {d} lists {} samples", manifest.total())));
        }
        let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.domain == d).collect();
        let mut tally: BTreeMap<&Labels, usize> = BTreeMap::new();
        for r in &mine {
            *tally.entry(&r.labels).or_default() += 1;
        }
        let mut declared: BTreeMap<&Labels, usize> = BTreeMap::new();
        for c in &manifest.counts {
            *declared.entry(&c.labels).or_default() += c.count;
        }
        declared.retain(|_, n| *n > 0);
        if tally != declared {
            out.push(violation(
                ViolationKind::CountMismatch,
                format!("domain {d}: manifest lists {} samples, labels file has {}", manifest.total(), mine.len()),
            ));
        }
        for r in &mine {
            let p = root.join(&r.image_path);
            if !p.is_file() {
                out.push(violation(ViolationKind::MissingImage, p.display().to_string()));
                continue;
            }
            match read_png(&p) {
                Ok(img) if img.size != manifest.image_size => out.push(violation(
                    ViolationKind::SizeMismatch,
                    format!("{} is {}px, manifest says {}px", p.display(), img.size, manifest.image_size),
                )),
                Ok(_) => {}
                Err(e) => out.push(violation(ViolationKind::UndecodableImage, e.to_string())),
            }
        }
    }
    out
}

/// A fully loaded domain: records plus decoded images.
pub struct DomainData {
    pub records: Vec<SampleRecord>,
    pub images: Vec<Tensor<f32>>,
}

pub fn load_domain_data(root: &Path, d: Domain) -> Result<DomainData> {
    let records = load_domain(root, d)?;
    let images = load_images(root, &records)?;
    Ok(DomainData { records, images })
}
