//! Manifest-driven experiments: one JSON file fully determines data, model,
//! masks, methods, and evaluation, so a report can be reproduced
//! byte-identically from the manifest alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fastprio_core::baselines::{McDropoutConfig, NnsConfig};
use fastprio_core::data::{
    corrupt, load_dataset, make_synthetic, save_dataset, split_train_test, CorruptionSpec,
};
use fastprio_core::evaluate::{compare, EvalReport, FaultVector, ReportMetadata};
use fastprio_core::model::{load_model, save_model};
use fastprio_core::prioritize::RankedSuite;
use fastprio_core::selection::{
    assess_all, build_masks, build_reference_sets, strategy_scores, ReferenceSetConfig,
    SelectionStrategy,
};
use fastprio_core::train::{train_dense_with_validation, TrainConfig};
use fastprio_core::{Error, Result};

use crate::methods::{run_method, Method, MethodContext};
use crate::record::{hash_path, RunRecord};

/// Where the experiment's data comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    /// A stored dataset header.
    Stored { dataset: String },
    /// Seeded Gaussian clusters with label noise.
    Synthetic {
        classes: usize,
        per_class: usize,
        dims: usize,
        spread: f32,
        label_noise: f32,
    },
}

/// Where the model comes from: an existing manifest or a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Stored {
        model: String,
    },
    Train {
        arch: Vec<usize>,
        epochs: usize,
        learning_rate: f32,
        batch_size: usize,
        #[serde(default)]
        l2_decay: f32,
    },
}

/// Mask-construction settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub rate: f32,
    #[serde(default = "default_tau")]
    pub tau: f32,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub strategy: Option<SelectionStrategy>,
}

fn default_tau() -> f32 {
    0.9
}

fn default_cap() -> usize {
    200
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            rate: 0.05,
            tau: 0.9,
            cap: 200,
            strategy: None,
        }
    }
}

fn default_budgets() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0]
}

fn default_methods() -> Vec<String> {
    vec!["fast-gini".into(), "gini".into(), "random".into()]
}

fn default_test_fraction() -> f32 {
    0.3333
}

/// The full experiment description consumed by `fastprio report --manifest`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub data: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f32,
    /// Applied to the test suite only.
    #[serde(default)]
    pub corruption: Option<CorruptionSpecNoSeed>,
    pub model: ModelSource,
    #[serde(default)]
    pub selection: SelectionSettings,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub nns: Option<NnsConfig>,
    #[serde(default)]
    pub mc_dropout: Option<McDropoutConfig>,
    #[serde(default)]
    pub nac_threshold: f32,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
}

/// Corruption settings in a manifest derive their seed from the experiment
/// seed, keeping one seed authoritative.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorruptionSpecNoSeed {
    pub kind: fastprio_core::data::CorruptionKind,
    pub severity: f32,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e.to_string()))
    }
}

/// Runs the whole pipeline into `out_dir` and returns the report path.
/// Artifacts: datasets, model, contribution matrix, masks, one ranking CSV
/// per method, and `report.{json,csv,tsv}` with run records.
pub fn run_manifest(
    manifest_path: &Path,
    out_dir: &Path,
    jobs: usize,
    quiet: bool,
) -> Result<PathBuf> {
    let manifest = ExperimentManifest::load(manifest_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let seed = manifest.seed;
    let say = |msg: &str| {
        if !quiet {
            eprintln!("fastprio: {msg}");
        }
    };

    // data
    let full = match &manifest.data {
        DataSource::Stored { dataset } => load_dataset(resolve(manifest_path, dataset))?,
        DataSource::Synthetic {
            classes,
            per_class,
            dims,
            spread,
            label_noise,
        } => make_synthetic(*classes, *per_class, *dims, *spread, *label_noise, seed)?,
    };
    let (train, mut suite) = split_train_test(&full, manifest.test_fraction, seed)?;
    if let Some(c) = &manifest.corruption {
        suite = corrupt(
            &suite,
            &CorruptionSpec {
                kind: c.kind,
                severity: c.severity,
                seed: seed ^ 0xC0_22,
            },
        )?;
        say(&format!(
            "corrupted suite with {:?} severity {}",
            c.kind, c.severity
        ));
    }
    let train_path = out_dir.join("train.json");
    let suite_path = out_dir.join("suite.json");
    save_dataset(&train, &train_path)?;
    save_dataset(&suite, &suite_path)?;
    say(&format!(
        "data: {} train / {} suite",
        train.len(),
        suite.len()
    ));

    // model
    let model_dir = out_dir.join("model");
    let model = match &manifest.model {
        ModelSource::Stored { model } => {
            let loaded = load_model(resolve(manifest_path, model))?;
            save_model(&loaded, &model_dir)?;
            loaded
        }
        ModelSource::Train {
            arch,
            epochs,
            learning_rate,
            batch_size,
            l2_decay,
        } => {
            let cfg = TrainConfig {
                epochs: *epochs,
                learning_rate: *learning_rate,
                batch_size: *batch_size,
                seed,
                l2_decay: *l2_decay,
            };
            let (model, log) = train_dense_with_validation(arch, &train, Some(&suite), &cfg)?;
            save_model(&model, &model_dir)?;
            log.write_csv(out_dir.join("training.csv"))?;
            say(&format!(
                "trained {:?}: final train acc {:.4}",
                arch,
                log.epochs.last().map(|e| e.train_accuracy).unwrap_or(0.0)
            ));
            model
        }
    };

    // masks
    let methods: Vec<Method> = manifest
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<_>>>()?;
    let needs_mask = methods.iter().any(|m| m.needs_mask());
    let masks = if needs_mask {
        let ref_cfg = ReferenceSetConfig {
            confidence_threshold: manifest.selection.tau,
            max_per_class: manifest.selection.cap,
        };
        let refs = build_reference_sets(&model, &train, &ref_cfg, seed)?;
        let matrix = match manifest.selection.strategy {
            None => assess_all(&model, &refs, jobs)?.0,
            Some(strategy) => strategy_scores(&model, &refs, strategy, seed)?,
        };
        matrix.save(out_dir.join("contribution"))?;
        let masks = build_masks(&matrix, manifest.selection.rate)?;
        masks.save(out_dir.join("mask"))?;
        say(&format!(
            "masks: {} features, {} pruned per class",
            masks.features(),
            masks.pruned_per_class()
        ));
        Some(masks)
    } else {
        None
    };

    // rankings
    let ctx = MethodContext {
        masks: masks.as_ref(),
        train: Some(&train),
        nns: manifest.nns.unwrap_or_default(),
        mc_dropout: manifest.mc_dropout.unwrap_or_default(),
        nac_threshold: manifest.nac_threshold,
        seed,
        jobs,
    };
    let rankings_dir = out_dir.join("rankings");
    std::fs::create_dir_all(&rankings_dir).map_err(|e| Error::io(&rankings_dir, e))?;
    let mut rankings: Vec<RankedSuite> = Vec::with_capacity(methods.len());
    for (method, name) in methods.iter().zip(&manifest.methods) {
        let ranking = run_method(*method, &model, &suite, &ctx)?;
        ranking.write_csv(rankings_dir.join(format!("{name}.csv")))?;
        say(&format!(
            "ranked suite with {name} (tag {})",
            ranking.method_tag
        ));
        rankings.push(ranking);
    }

    // evaluation
    let faults = FaultVector::from_labels(&rankings[0].predictions, suite.labels())?;
    let metadata = ReportMetadata {
        seed,
        model_hash: hash_path(&model_dir)?,
        mask_rate: masks.as_ref().map(|m| m.rate()),
        feature_layer: masks.as_ref().map(|m| m.layer()),
        suite_size: 0,
        fault_count: 0,
    };
    let report = compare(&rankings, &faults, &manifest.budgets, metadata)?;
    let report_path = out_dir.join("report.json");
    report.write_json(&report_path)?;
    report.write_csv(out_dir.join("report.csv"))?;
    report.write_trc_tsv(out_dir.join("trc.tsv"))?;
    say(&format!(
        "report: {} methods, {} faults in {} inputs",
        report.methods.len(),
        report.metadata.fault_count,
        report.metadata.suite_size
    ));

    let mut record = RunRecord::new("report", seed, jobs);
    record.arg("manifest", manifest_path.display());
    record.input(manifest_path)?;
    record
        .output(&train_path)
        .output(&suite_path)
        .output(&model_dir)
        .output(&report_path);
    record.write(&report_path)?;
    Ok(report_path)
}

/// Aggregates stored eval reports into one comparison table (CSV + JSON).
pub fn aggregate_reports(eval_paths: &[PathBuf], out_path: &Path) -> Result<()> {
    if eval_paths.is_empty() {
        return Err(Error::EmptyInput("eval report list"));
    }
    let mut reports = Vec::new();
    for path in eval_paths {
        reports.push((path.display().to_string(), EvalReport::load_json(path)?));
    }

    #[derive(Serialize)]
    struct Aggregate<'a> {
        reports: Vec<AggregateRow<'a>>,
    }
    #[derive(Serialize)]
    struct AggregateRow<'a> {
        source: String,
        report: &'a EvalReport,
    }
    let aggregate = Aggregate {
        reports: reports
            .iter()
            .map(|(source, report)| AggregateRow {
                source: source.clone(),
                report,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&aggregate)
        .map_err(|e| Error::json(out_path, e.to_string()))?;
    std::fs::write(out_path, json).map_err(|e| Error::io(out_path, e))?;

    let csv_path = out_path.with_extension("csv");
    let mut csv = String::from("source,method,apfd");
    let max_grid = reports.iter().map(|(_, r)| r.grid.len()).max().unwrap_or(0);
    let grid = reports
        .iter()
        .map(|(_, r)| r.grid.clone())
        .max_by_key(|g| g.len())
        .unwrap_or_default();
    for f in grid.iter().take(max_grid) {
        csv.push_str(&format!(",trc@{f}"));
    }
    csv.push('\n');
    for (source, report) in &reports {
        for method in &report.methods {
            csv.push_str(&format!("{source},{},", method.method));
            if let Some(a) = method.apfd {
                csv.push_str(&a.to_string());
            }
            for &(_, v) in &method.trc {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))
}

/// Resolves a manifest-relative path.
fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
    let candidate = PathBuf::from(relative);
    if candidate.is_absolute() {
        candidate
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(candidate)
    }
}
