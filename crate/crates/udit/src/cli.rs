//! `udit <subcommand> [--config file.json] [--set key=value]... [flags]`.
//!
//! Values are layered: subcommand defaults, then the config file, then
//! `--set` overrides, then dedicated flags. The resulting configuration is
//! written to `<out>/effective_config.json` before any work starts.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use udit_core::datasets::{from_tensor, to_tensor, BiasedDatasetConfig};
use udit_core::metrics::BiasReport;
use udit_core::Domain;

use crate::checkpoint::{load_train_state, save_classifier, save_extractor};
use crate::data::{generate_biased_shapes, read_json, read_png, validate_manifest, write_json, write_png};
use crate::error::{Error, Result};
use crate::eval::{run_evaluation, EvalConfig};
use crate::experiment::{run_bias_experiment, BiasExperimentConfig};
use crate::extractor::{train_classifier, train_extractor, ClassifierRunConfig, ExtractorRunConfig};
use crate::report::render_report;
use crate::train::{train, TrainRunConfig};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const SEED_ENV: &str = "UDIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "udit", version, about = "Bias-controlled diverse image-to-image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON file with configuration values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set arch.base_channels=16`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed; falls back to the UDIT_SEED environment variable.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic biased two-domain shapes dataset into --out.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// `biased` (major/minor cells) or `balanced` (per-cell).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        major: Option<usize>,
        #[arg(long)]
        minor: Option<usize>,
        #[arg(long)]
        per_cell: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train an attribute classifier, sweep the reduction width and keep the selected extractor.
    TrainExtractor {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: ClassifierFlags,
        #[arg(long)]
        tap: Option<String>,
        /// Comma-separated reduction widths.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Train a held-out attribute classifier used for evaluation.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: ClassifierFlags,
    },
    /// Train a translation model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lambda_u: Option<f64>,
        /// true: unpool with encoder indices; false: nearest upsampling.
        #[arg(long)]
        pooling_indices: Option<bool>,
        #[arg(long)]
        base_channels: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate one PNG into k outputs.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Source domain of the input (A or B).
        #[arg(long)]
        from: Option<String>,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Compute bias and diversity measures.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        test_dataset: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        wanted_classifier: Option<PathBuf>,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        udit: Option<PathBuf>,
        /// Evaluate the copy-the-input translator.
        #[arg(long)]
        identity: bool,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        filter_a: Option<String>,
        #[arg(long)]
        filter_b: Option<String>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        max_inputs: Option<usize>,
    },
    /// Run the whole baseline-versus-constrained bias experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        base_channels: Option<usize>,
    },
    /// Render bar charts and the diversity table from report JSON files.
    Report {
        #[command(flatten)]
        common: Common,
        /// Files holding one report or a list of reports.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ClassifierFlags {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub val_dataset: Option<PathBuf>,
    #[arg(long)]
    pub attribute: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Insert `value` at a dotted path, creating objects as needed.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad configuration key '{key}'")));
    }
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(Error::Config(format!("'{key}' descends into a non-object")));
        }
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("'{key}' descends into a non-object"))),
    }
}

fn get_path<'a>(root: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(root, |v, p| v.get(p))
}

/// Parse `key=value`; the value is read as JSON, or as a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Layer defaults, file, `--set` overrides and flag values into `T`.
pub fn layered_config<T: Serialize + for<'de> Deserialize<'de> + Default>(
    common: &Common,
    seed_key: &str,
    flags: &[(&str, Option<Value>)],
) -> Result<T> {
    let mut v = serde_json::to_value(T::default()).map_err(|e| Error::Config(e.to_string()))?;
    let mut file_has_seed = false;
    if let Some(path) = &common.config {
        let file: Value = match read_json(path) {
            Ok(f) => f,
            Err(Error::Io { path, source }) => return Err(Error::Config(format!("{}: {source}", path.display()))),
            Err(e) => return Err(Error::Config(e.to_string())),
        };
        file_has_seed = get_path(&file, seed_key).is_some();
        merge(&mut v, file);
    }
    for o in &common.overrides {
        let (k, val) = parse_override(o)?;
        set_path(&mut v, &k, val)?;
    }
    for (k, val) in flags {
        if let Some(val) = val {
            set_path(&mut v, k, val.clone())?;
        }
    }
    let seed = match (common.seed, std::env::var(SEED_ENV).ok()) {
        (Some(s), _) => Some(s),
        (None, Some(env)) if !file_has_seed => {
            Some(env.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}='{env}' is not an integer")))?)
        }
        _ => None,
    };
    if let Some(s) = seed {
        set_path(&mut v, seed_key, json!(s))?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn echo<T: Serialize>(out: &Path, subcommand: &str, cfg: &T) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let value = json!({ "subcommand": subcommand, "config": cfg });
    write_json(&out.join(EFFECTIVE_CONFIG), &value)
}

fn opt<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| serde_json::to_value(x).expect("plain values serialize"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub preset: String,
    pub major: usize,
    pub minor: usize,
    pub per_cell: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Full dataset description; replaces the preset when given.
    pub custom: Option<BiasedDatasetConfig>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self { preset: "biased".into(), major: 1330, minor: 70, per_cell: 100, image_size: 64, seed: 0, custom: None }
    }
}

impl DatagenConfig {
    pub fn dataset(&self) -> Result<BiasedDatasetConfig> {
        if let Some(c) = &self.custom {
            return Ok(c.clone());
        }
        match self.preset.as_str() {
            "biased" => Ok(BiasedDatasetConfig::biased_shapes(self.major, self.minor, self.image_size, self.seed)),
            "balanced" => Ok(BiasedDatasetConfig::balanced_shapes(self.per_cell, self.image_size, self.seed)),
            other => Err(Error::Config(format!("unknown preset '{other}' (biased or balanced)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateConfig {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub from: Domain,
    pub k: usize,
    pub seed: u64,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        Self { checkpoint: "final.ckpt".into(), input: "input.png".into(), from: Domain::A, k: 5, seed: 0 }
    }
}

fn classifier_flags(d: &ClassifierFlags, prefix: &str) -> Vec<(String, Option<Value>)> {
    vec![
        (format!("{prefix}dataset"), opt(&d.dataset)),
        (format!("{prefix}val_dataset"), opt(&d.val_dataset)),
        (format!("{prefix}attribute"), opt(&d.attribute)),
        (format!("{prefix}training.epochs"), opt(&d.epochs)),
    ]
}

fn as_refs(v: &[(String, Option<Value>)]) -> Vec<(&str, Option<Value>)> {
    v.iter().map(|(k, x)| (k.as_str(), x.clone())).collect()
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<BiasReport>> {
    let mut out = Vec::new();
    for p in paths {
        let v: Value = read_json(p)?;
        let parsed = if v.is_array() {
            serde_json::from_value::<Vec<BiasReport>>(v)
        } else {
            serde_json::from_value::<BiasReport>(v).map(|r| vec![r])
        };
        out.extend(parsed.map_err(|e| Error::Data(format!("{}: {e}", p.display())))?);
    }
    Ok(out)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Datagen { common, preset, major, minor, per_cell, image_size } => {
            let cfg: DatagenConfig = layered_config(
                &common,
                "seed",
                &[
                    ("preset", opt(&preset)),
                    ("major", opt(&major)),
                    ("minor", opt(&minor)),
                    ("per_cell", opt(&per_cell)),
                    ("image_size", opt(&image_size)),
                ],
            )?;
            echo(&common.out, "datagen", &cfg)?;
            let ds = cfg.dataset()?;
            let manifests = generate_biased_shapes(&ds, &common.out)?;
            let report = validate_manifest(&common.out);
            if !report.is_empty() {
                return Err(Error::Data(format!("generated dataset failed validation: {}", report[0])));
            }
            for m in manifests {
                println!("domain {}: {} images", m.domain, m.total());
            }
        }
        Command::TrainExtractor { common, data, tap, grid, tau } => {
            let mut flags = classifier_flags(&data, "");
            flags.push(("tap".into(), opt(&tap)));
            flags.push(("grid".into(), opt(&grid)));
            flags.push(("tau".into(), opt(&tau)));
            let cfg: ExtractorRunConfig = layered_config(&common, "training.seed", &as_refs(&flags))?;
            echo(&common.out, "train-extractor", &cfg)?;
            let outcome = train_extractor(&cfg)?;
            save_extractor(&common.out.join("extractor.ckpt"), &outcome.extractor)?;
            save_classifier(&common.out.join("extractor_classifier.ckpt"), &outcome.classifier)?;
            write_json(&common.out.join("sweep.json"), &outcome.report)?;
            println!("selected D = {}", outcome.report.selected_d);
        }
        Command::TrainClassifier { common, data } => {
            let flags = classifier_flags(&data, "");
            let cfg: ClassifierRunConfig = layered_config(&common, "training.seed", &as_refs(&flags))?;
            echo(&common.out, "train-classifier", &cfg)?;
            let clf = train_classifier(&cfg)?;
            save_classifier(&common.out.join("classifier.ckpt"), &clf)?;
            write_json(
                &common.out.join("classifier.json"),
                &json!({ "attribute": clf.attribute, "validation_accuracy": clf.accuracy }),
            )?;
            println!("validation accuracy {:.2}%", clf.accuracy);
        }
        Command::Train {
            common,
            dataset,
            extractor,
            iterations,
            batch_size,
            lambda_u,
            pooling_indices,
            base_channels,
            image_size,
            checkpoint_every,
            resume,
        } => {
            let cfg: TrainRunConfig = layered_config(
                &common,
                "seed",
                &[
                    ("dataset", opt(&dataset)),
                    ("extractor", opt(&extractor)),
                    ("iterations", opt(&iterations)),
                    ("batch_size", opt(&batch_size)),
                    ("weights.lambda_u", opt(&lambda_u)),
                    ("arch.use_pooling_indices", opt(&pooling_indices)),
                    ("arch.base_channels", opt(&base_channels)),
                    ("arch.image_size", opt(&image_size)),
                    ("checkpoint_every", opt(&checkpoint_every)),
                ],
            )?;
            cfg.validate()?;
            echo(&common.out, "train", &cfg)?;
            let path = train(&cfg, &common.out, resume.as_deref(), common.verbose)?;
            println!("{}", path.display());
        }
        Command::Translate { common, checkpoint, input, from, k } => {
            let from = from
                .map(|f| match f.as_str() {
                    "A" | "a" => Ok(json!("A")),
                    "B" | "b" => Ok(json!("B")),
                    _ => Err(Error::Config(format!("--from must be A or B, got '{f}'"))),
                })
                .transpose()?;
            let cfg: TranslateConfig = layered_config(
                &common,
                "seed",
                &[("checkpoint", opt(&checkpoint)), ("input", opt(&input)), ("from", from), ("k", opt(&k))],
            )?;
            echo(&common.out, "translate", &cfg)?;
            let (state, _) = load_train_state(&cfg.checkpoint)?;
            let image = to_tensor(&read_png(&cfg.input)?);
            let outs = state.model.translate(cfg.from, &image, cfg.k, cfg.seed)?;
            for (i, t) in outs.iter().enumerate() {
                let p = common.out.join(format!("translation_{i:03}.png"));
                write_png(&p, &from_tensor(t, 0)?)?;
            }
            println!("wrote {} translations", outs.len());
        }
        Command::Evaluate {
            common,
            test_dataset,
            classifier,
            wanted_classifier,
            embedder,
            baseline,
            udit,
            identity,
            filter,
            filter_a,
            filter_b,
            k,
            max_inputs,
        } => {
            let cfg: EvalConfig = layered_config(
                &common,
                "seed",
                &[
                    ("test_dataset", opt(&test_dataset)),
                    ("classifier", opt(&classifier)),
                    ("wanted_classifier", opt(&wanted_classifier)),
                    ("embedder", opt(&embedder)),
                    ("baseline", opt(&baseline)),
                    ("udit", opt(&udit)),
                    ("identity", identity.then_some(json!(true))),
                    ("filter", opt(&filter)),
                    ("filter_a", opt(&filter_a)),
                    ("filter_b", opt(&filter_b)),
                    ("samples_per_input", opt(&k)),
                    ("max_inputs", opt(&max_inputs)),
                ],
            )?;
            cfg.methods()?;
            echo(&common.out, "evaluate", &cfg)?;
            let reports = run_evaluation(&cfg)?;
            for r in &reports {
                let name = format!("report_{}_{}.json", r.method, r.direction.label().replace("->", "to"));
                write_json(&common.out.join(name), r)?;
                println!(
                    "{:<9} {}  misclassification {:.4}  drop {:.4}  distance {:.4}  diversity {:.4}",
                    r.method,
                    r.direction.label(),
                    r.misclassification_rate,
                    r.mean_drop_in_confidence,
                    r.mean_feature_distance,
                    r.diversity
                );
            }
            write_json(&common.out.join("reports.json"), &reports)?;
        }
        Command::Experiment { common, iterations, base_channels } => {
            let mut cfg: BiasExperimentConfig = layered_config(
                &common,
                "seed",
                &[("iterations", opt(&iterations)), ("base_channels", opt(&base_channels))],
            )?;
            cfg.work_dir = common.out.clone();
            cfg.verbose |= common.verbose;
            echo(&common.out, "experiment", &cfg)?;
            let result = run_bias_experiment(&cfg)?;
            let all: Vec<BiasReport> = result.baseline.iter().chain(&result.udit).cloned().collect();
            render_report(&all, &common.out.join("charts"))?;
            println!("{}", serde_json::to_string_pretty(&result).map_err(|e| Error::Data(e.to_string()))?);
        }
        Command::Report { common, reports } => {
            echo(&common.out, "report", &json!({ "reports": reports }))?;
            let all = read_reports(&reports)?;
            for p in render_report(&all, &common.out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
