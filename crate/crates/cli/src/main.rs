//! `fastprio`: test-input prioritization pipelines for neural-network
//! classifiers: train desk-scale models, corrupt suites, measure per-class
//! feature contributions, build masks, rank suites under a dozen methods,
//! and compare them by APFD/TRC.
//!
//! Every command takes `--seed`, `--jobs`, and `--manifest`. A manifest
//! supplies defaults for any flag left unset, so a single JSON file can
//! drive each stage individually or (via `report --manifest`) the whole
//! pipeline at once.

mod methods;
mod pipeline;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fastprio_core::baselines::{McDropoutConfig, NnsConfig};
use fastprio_core::data::{
    corrupt, load_dataset, load_idx, make_synthetic, save_dataset, split_train_test,
    CorruptionKind, CorruptionSpec, Dataset,
};
use fastprio_core::evaluate::{compare, FaultVector, ReportMetadata};
use fastprio_core::model::load_model;
use fastprio_core::prioritize::RankedSuite;
use fastprio_core::selection::{
    assess_all, build_masks, build_reference_sets, strategy_scores, ContributionMatrix,
    FeatureMask, ReferenceSetConfig, SelectionStrategy,
};
use fastprio_core::train::{train_dense_with_validation, TrainConfig};
use fastprio_core::{Error, Result};

use methods::{run_method, Method, MethodContext};
use pipeline::{DataSource, ExperimentManifest, ModelSource};
use record::RunRecord;

#[derive(Parser)]
#[command(
    name = "fastprio",
    version,
    about = "Test-input prioritization for neural-network classifiers"
)]
struct Cli {
    /// Global seed for every random stream. Falls back to the manifest's
    /// seed when --manifest is given, else 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for assessment and scoring (0 = all cores). Outputs
    /// are identical for every setting.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Experiment manifest (JSON). Supplies defaults for unset flags on any
    /// command; `report --manifest` runs the whole pipeline.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Suppress progress messages.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a dense ReLU classifier (optionally generating synthetic data).
    Train(TrainArgs),
    /// Apply a corruption operator to a dataset.
    Corrupt(CorruptArgs),
    /// Measure per-class feature contributions over a training set.
    Assess(AssessArgs),
    /// Build per-class binary masks from a contribution matrix.
    Mask(MaskArgs),
    /// Rank a test suite with one prioritization method.
    Prioritize(PrioritizeArgs),
    /// Score rankings against ground-truth labels (APFD + TRC).
    Evaluate(EvaluateArgs),
    /// Run a manifest end to end, or aggregate stored eval reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset header (JSON) or IDX pair `images.idx:labels.idx`; mutually
    /// exclusive with --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,

    /// Synthetic spec `classes=3,per_class=500,dims=2,spread=0.8,label_noise=0.08`.
    #[arg(long)]
    synthetic: Option<String>,

    /// Hold out this fraction as a test suite before training.
    #[arg(long)]
    test_fraction: Option<f32>,

    /// Where to save the training split.
    #[arg(long)]
    save_train: Option<PathBuf>,

    /// Where to save the held-out suite (requires a test fraction).
    #[arg(long)]
    save_test: Option<PathBuf>,

    /// Layer widths, e.g. 2,32,32,3 (input, hidden..., classes).
    #[arg(long, value_delimiter = ',')]
    arch: Option<Vec<usize>>,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    lr: Option<f32>,

    #[arg(long)]
    batch: Option<usize>,

    #[arg(long)]
    l2: Option<f32>,

    /// Training-log CSV path.
    #[arg(long)]
    log: Option<PathBuf>,

    /// Output model directory.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct CorruptArgs {
    /// Dataset header (JSON).
    #[arg(long, required = true)]
    data: PathBuf,

    /// gaussian-noise | shot-noise | box-blur | brightness | contrast.
    #[arg(long)]
    kind: Option<String>,

    /// Severity in [0, 1]; 0 is the identity.
    #[arg(long)]
    severity: Option<f32>,

    /// Output dataset header (JSON).
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct AssessArgs {
    /// Model directory or manifest path.
    #[arg(long, required = true)]
    model: PathBuf,

    /// Training dataset header (JSON).
    #[arg(long, required = true)]
    train: PathBuf,

    /// contribution (ablation) | output | frequency | variance | gradient | random.
    #[arg(long)]
    strategy: Option<String>,

    /// Reference-set confidence threshold.
    #[arg(long)]
    tau: Option<f32>,

    /// Reference-set size cap per class.
    #[arg(long)]
    cap: Option<usize>,

    /// Output prefix; writes <prefix>.tns and <prefix>.json.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Contribution-matrix prefix (from `assess`).
    #[arg(long, required = true)]
    contribution: PathBuf,

    /// Fraction of features to prune per class, in [0, 1). Defaults to the
    /// manifest's rate, else 0.05.
    #[arg(long)]
    rate: Option<f32>,

    /// Output prefix; writes <prefix>.tns and <prefix>.json.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct PrioritizeArgs {
    /// Model directory or manifest path.
    #[arg(long, required = true)]
    model: PathBuf,

    /// Suite dataset header (JSON); labels are ignored for ranking.
    #[arg(long, required = true)]
    suite: PathBuf,

    /// gini | maxp | margin | fast[-metric] | nns[-metric] |
    /// mcdropout[-metric] | nac | nbc | lsa | dsa | random.
    #[arg(long, default_value = "gini")]
    method: String,

    /// Mask prefix (required by fast-*).
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Profiling dataset header (required by nbc/lsa/dsa).
    #[arg(long)]
    train: Option<PathBuf>,

    /// Smoothing weight of the input's own probabilities.
    #[arg(long)]
    alpha: Option<f32>,

    /// Neighbor count for smoothing.
    #[arg(long)]
    neighbors: Option<usize>,

    /// Stochastic forward passes per input.
    #[arg(long)]
    runs: Option<usize>,

    /// Dropout rate when the model has no dropout layers.
    #[arg(long)]
    dropout_rate: Option<f32>,

    /// Activation threshold for coverage scoring.
    #[arg(long)]
    threshold: Option<f32>,

    /// Output ranking CSV; a JSON twin is written next to it.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ranking CSVs (comma separated), all over the same suite.
    #[arg(long, value_delimiter = ',', required = true)]
    rankings: Vec<PathBuf>,

    /// Labeled suite header (JSON) supplying ground truth.
    #[arg(long, required = true)]
    suite: PathBuf,

    /// Budget fractions for the TRC curve.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,

    /// Model directory (recorded as provenance in the report).
    #[arg(long)]
    model: Option<PathBuf>,

    /// Mask prefix (recorded as provenance in the report).
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Output report JSON; CSV and TSV twins are written next to it.
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory for the manifest pipeline.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Stored eval reports (comma separated) to aggregate.
    #[arg(long, value_delimiter = ',')]
    evals: Vec<PathBuf>,

    /// Aggregate output JSON (CSV twin next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Globals after manifest resolution.
struct Ctx {
    seed: u64,
    jobs: usize,
    quiet: bool,
    manifest: Option<ExperimentManifest>,
    manifest_path: Option<PathBuf>,
}

impl Ctx {
    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("fastprio: {msg}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fastprio: error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let manifest = match &cli.manifest {
        Some(path) => Some(ExperimentManifest::load(path)?),
        None => None,
    };
    let ctx = Ctx {
        seed: cli.seed.or(manifest.as_ref().map(|m| m.seed)).unwrap_or(0),
        jobs: cli.jobs,
        quiet: cli.quiet,
        manifest,
        manifest_path: cli.manifest.clone(),
    };
    match &cli.command {
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Corrupt(args) => cmd_corrupt(&ctx, args),
        Command::Assess(args) => cmd_assess(&ctx, args),
        Command::Mask(args) => cmd_mask(&ctx, args),
        Command::Prioritize(args) => cmd_prioritize(&ctx, args),
        Command::Evaluate(args) => cmd_evaluate(&ctx, args),
        Command::Report(args) => cmd_report(&ctx, args),
    }
}

/// Parses `key=value,key=value` synthetic specs.
fn parse_synthetic(spec: &str) -> Result<(usize, usize, usize, f32, f32)> {
    let (mut classes, mut per_class, mut dims) = (3usize, 100usize, 2usize);
    let (mut spread, mut label_noise) = (0.5f32, 0.0f32);
    for part in spec.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Error::Parameter(format!("--synthetic entry '{part}' is not key=value"))
        })?;
        let bad = |e: String| Error::Parameter(format!("--synthetic {key}: {e}"));
        match key.trim() {
            "classes" => {
                classes = value
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            }
            "per_class" => {
                per_class = value
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            }
            "dims" => {
                dims = value
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            }
            "spread" => {
                spread = value
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
            }
            "label_noise" => {
                label_noise = value
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
            }
            other => {
                return Err(Error::Parameter(format!(
                    "--synthetic has unknown key '{other}'"
                )))
            }
        }
    }
    Ok((classes, per_class, dims, spread, label_noise))
}

/// Loads a dataset header, or an IDX pair given as `images.idx:labels.idx`.
fn load_any_dataset(path: &PathBuf) -> Result<Dataset> {
    if let Some(text) = path.to_str() {
        if let Some((images, labels)) = text.split_once(':') {
            return load_idx(images, labels);
        }
    }
    load_dataset(path)
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let mut record = RunRecord::new("train", ctx.seed, ctx.jobs);
    let manifest_train = ctx.manifest.as_ref().and_then(|m| match &m.model {
        ModelSource::Train {
            arch,
            epochs,
            learning_rate,
            batch_size,
            l2_decay,
        } => Some((
            arch.clone(),
            *epochs,
            *learning_rate,
            *batch_size,
            *l2_decay,
        )),
        ModelSource::Stored { .. } => None,
    });

    let data = if let Some(path) = &args.data {
        record.input(path)?;
        load_any_dataset(path)?
    } else if let Some(spec) = &args.synthetic {
        let (classes, per_class, dims, spread, label_noise) = parse_synthetic(spec)?;
        record.arg("synthetic", spec);
        make_synthetic(classes, per_class, dims, spread, label_noise, ctx.seed)?
    } else if let Some(DataSource::Synthetic {
        classes,
        per_class,
        dims,
        spread,
        label_noise,
    }) = ctx.manifest.as_ref().map(|m| &m.data)
    {
        record.arg("synthetic", "from manifest");
        make_synthetic(*classes, *per_class, *dims, *spread, *label_noise, ctx.seed)?
    } else {
        return Err(Error::Parameter(
            "train needs --data, --synthetic, or a manifest with synthetic data".into(),
        ));
    };

    let test_fraction = args
        .test_fraction
        .or(ctx.manifest.as_ref().map(|m| m.test_fraction));
    let (train, test) = match test_fraction {
        Some(fraction) => {
            let (train, test) = split_train_test(&data, fraction, ctx.seed)?;
            (train, Some(test))
        }
        None => (data, None),
    };
    if let Some(path) = &args.save_train {
        save_dataset(&train, path)?;
        record.output(path);
    }
    if let Some(path) = &args.save_test {
        let test = test
            .as_ref()
            .ok_or_else(|| Error::Parameter("--save-test needs a test fraction".into()))?;
        save_dataset(test, path)?;
        record.output(path);
    }

    let arch = args
        .arch
        .clone()
        .or_else(|| manifest_train.as_ref().map(|(arch, ..)| arch.clone()))
        .ok_or_else(|| Error::Parameter("train needs --arch (or a manifest that trains)".into()))?;
    let cfg = TrainConfig {
        epochs: args
            .epochs
            .or(manifest_train.as_ref().map(|t| t.1))
            .unwrap_or(50),
        learning_rate: args
            .lr
            .or(manifest_train.as_ref().map(|t| t.2))
            .unwrap_or(0.05),
        batch_size: args
            .batch
            .or(manifest_train.as_ref().map(|t| t.3))
            .unwrap_or(32),
        seed: ctx.seed,
        l2_decay: args
            .l2
            .or(manifest_train.as_ref().map(|t| t.4))
            .unwrap_or(0.0),
    };
    let (model, log) = train_dense_with_validation(&arch, &train, test.as_ref(), &cfg)?;
    fastprio_core::model::save_model(&model, &args.out)?;
    if let Some(path) = &args.log {
        log.write_csv(path)?;
        record.output(path);
    }
    let last = log.epochs.last().expect("at least one epoch");
    ctx.say(&format!(
        "trained {:?}: loss {:.4}, train acc {:.4}{}",
        arch,
        last.loss,
        last.train_accuracy,
        last.val_accuracy
            .map(|v| format!(", val acc {v:.4}"))
            .unwrap_or_default()
    ));
    record
        .arg("arch", format!("{arch:?}"))
        .arg("epochs", cfg.epochs)
        .arg("lr", cfg.learning_rate)
        .arg("batch", cfg.batch_size)
        .arg("l2", cfg.l2_decay)
        .output(&args.out);
    record.write(args.out.join("model.json"))
}

fn cmd_corrupt(ctx: &Ctx, args: &CorruptArgs) -> Result<()> {
    let manifest_corruption = ctx.manifest.as_ref().and_then(|m| m.corruption);
    let kind: CorruptionKind = match (&args.kind, manifest_corruption) {
        (Some(kind), _) => kind.parse()?,
        (None, Some(c)) => c.kind,
        (None, None) => {
            return Err(Error::Parameter(
                "corrupt needs --kind (or a manifest with a corruption block)".into(),
            ))
        }
    };
    let severity = args
        .severity
        .or(manifest_corruption.map(|c| c.severity))
        .ok_or_else(|| Error::Parameter("corrupt needs --severity".into()))?;
    let data = load_dataset(&args.data)?;
    let spec = CorruptionSpec {
        kind,
        severity,
        seed: ctx.seed,
    };
    let corrupted = corrupt(&data, &spec)?;
    save_dataset(&corrupted, &args.out)?;
    ctx.say(&format!(
        "corrupted {} inputs with {kind:?} severity {severity}",
        corrupted.len()
    ));
    let mut record = RunRecord::new("corrupt", ctx.seed, ctx.jobs);
    record
        .arg("kind", format!("{kind:?}"))
        .arg("severity", severity)
        .input(&args.data)?
        .output(&args.out);
    record.write(&args.out)
}

fn cmd_assess(ctx: &Ctx, args: &AssessArgs) -> Result<()> {
    let selection = ctx
        .manifest
        .as_ref()
        .map(|m| m.selection.clone())
        .unwrap_or_default();
    let tau = args.tau.unwrap_or(selection.tau);
    let cap = args.cap.unwrap_or(selection.cap);
    let strategy_name = args.strategy.clone().unwrap_or_else(|| {
        selection
            .strategy
            .map(|s| format!("{s:?}").to_lowercase())
            .unwrap_or_else(|| "contribution".to_string())
    });

    let model = load_model(&args.model)?;
    let train = load_dataset(&args.train)?;
    let ref_cfg = ReferenceSetConfig {
        confidence_threshold: tau,
        max_per_class: cap,
    };
    let refs = build_reference_sets(&model, &train, &ref_cfg, ctx.seed)?;
    let matrix = if strategy_name == "contribution" {
        let (matrix, stats) = assess_all(&model, &refs, ctx.jobs)?;
        ctx.say(&format!(
            "assessed {} features x {} classes over {:?} references ({} partial forwards)",
            matrix.features(),
            matrix.classes(),
            refs.sizes(),
            stats.partial_forwards
        ));
        matrix
    } else {
        let strategy: SelectionStrategy = strategy_name.parse()?;
        let matrix = strategy_scores(&model, &refs, strategy, ctx.seed)?;
        ctx.say(&format!("scored features with the {strategy:?} strategy"));
        matrix
    };
    matrix.save(&args.out)?;
    let mut record = RunRecord::new("assess", ctx.seed, ctx.jobs);
    record
        .arg("strategy", &strategy_name)
        .arg("tau", tau)
        .arg("cap", cap)
        .input(&args.model)?
        .input(&args.train)?
        .output(args.out.with_extension("tns"));
    record.write(args.out.with_extension("tns"))
}

fn cmd_mask(ctx: &Ctx, args: &MaskArgs) -> Result<()> {
    let rate = args
        .rate
        .or(ctx.manifest.as_ref().map(|m| m.selection.rate))
        .unwrap_or(0.05);
    let matrix = ContributionMatrix::load(&args.contribution)?;
    let masks = build_masks(&matrix, rate)?;
    masks.save(&args.out)?;
    ctx.say(&format!(
        "built masks: {} classes x {} features, {} pruned per class",
        masks.classes(),
        masks.features(),
        masks.pruned_per_class()
    ));
    let mut record = RunRecord::new("mask", ctx.seed, ctx.jobs);
    record
        .arg("rate", rate)
        .input(args.contribution.with_extension("tns"))?
        .input(args.contribution.with_extension("json"))?
        .output(args.out.with_extension("tns"));
    record.write(args.out.with_extension("tns"))
}

fn cmd_prioritize(ctx: &Ctx, args: &PrioritizeArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let model = load_model(&args.model)?;
    let suite = load_dataset(&args.suite)?;
    let masks = match &args.mask {
        Some(prefix) => Some(FeatureMask::load(prefix)?),
        None if method.needs_mask() => {
            return Err(Error::Config(format!(
                "method '{}' needs --mask",
                args.method
            )))
        }
        None => None,
    };
    let train = match &args.train {
        Some(path) => Some(load_dataset(path)?),
        None if method.needs_train() => {
            return Err(Error::Config(format!(
                "method '{}' needs --train",
                args.method
            )))
        }
        None => None,
    };
    let manifest_nns = ctx
        .manifest
        .as_ref()
        .and_then(|m| m.nns)
        .unwrap_or_default();
    let manifest_mc = ctx
        .manifest
        .as_ref()
        .and_then(|m| m.mc_dropout)
        .unwrap_or_default();
    let ctx_methods = MethodContext {
        masks: masks.as_ref(),
        train: train.as_ref(),
        nns: NnsConfig {
            alpha: args.alpha.unwrap_or(manifest_nns.alpha),
            neighbor_count: args.neighbors.unwrap_or(manifest_nns.neighbor_count),
            embedding_layer: manifest_nns.embedding_layer,
        },
        mc_dropout: McDropoutConfig {
            runs: args.runs.unwrap_or(manifest_mc.runs),
            rate: args.dropout_rate.unwrap_or(manifest_mc.rate),
        },
        nac_threshold: args
            .threshold
            .or(ctx.manifest.as_ref().map(|m| m.nac_threshold))
            .unwrap_or(0.0),
        seed: ctx.seed,
        jobs: ctx.jobs,
    };
    let ranking = run_method(method, &model, &suite, &ctx_methods)?;
    ranking.write_csv(&args.out)?;
    ranking.write_json(args.out.with_extension("json"))?;
    ctx.say(&format!(
        "ranked {} inputs with {}",
        ranking.len(),
        ranking.method_tag
    ));
    let mut record = RunRecord::new("prioritize", ctx.seed, ctx.jobs);
    record
        .arg("method", &args.method)
        .input(&args.model)?
        .input(&args.suite)?
        .output(&args.out);
    if let Some(prefix) = &args.mask {
        record.input(prefix.with_extension("tns"))?;
    }
    if let Some(path) = &args.train {
        record.input(path)?;
    }
    record.write(&args.out)
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let suite = load_dataset(&args.suite)?;
    let mut rankings = Vec::with_capacity(args.rankings.len());
    for path in &args.rankings {
        rankings.push(RankedSuite::read_csv(path)?);
    }
    for ranking in &rankings {
        if ranking.len() != suite.len() {
            return Err(Error::Consistency(format!(
                "ranking '{}' covers {} inputs, suite has {}",
                ranking.method_tag,
                ranking.len(),
                suite.len()
            )));
        }
    }
    let faults = FaultVector::from_labels(&rankings[0].predictions, suite.labels())?;
    let (mask_rate, feature_layer) = match &args.mask {
        Some(prefix) => {
            let mask = FeatureMask::load(prefix)?;
            (Some(mask.rate()), Some(mask.layer()))
        }
        None => (None, None),
    };
    let budgets = args
        .budgets
        .clone()
        .or_else(|| ctx.manifest.as_ref().map(|m| m.budgets.clone()))
        .unwrap_or_else(|| vec![0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0]);
    let metadata = ReportMetadata {
        seed: ctx.seed,
        model_hash: match &args.model {
            Some(path) => record::hash_path(path)?,
            None => String::new(),
        },
        mask_rate,
        feature_layer,
        suite_size: 0,
        fault_count: 0,
    };
    let report = compare(&rankings, &faults, &budgets, metadata)?;
    report.write_json(&args.out)?;
    report.write_csv(args.out.with_extension("csv"))?;
    report.write_trc_tsv(args.out.with_extension("tsv"))?;
    ctx.say(&format!(
        "evaluated {} methods over {} inputs ({} faults)",
        report.methods.len(),
        report.metadata.suite_size,
        report.metadata.fault_count
    ));
    let mut record = RunRecord::new("evaluate", ctx.seed, ctx.jobs);
    for path in &args.rankings {
        record.input(path)?;
    }
    record.input(&args.suite)?.output(&args.out);
    record.write(&args.out)
}

fn cmd_report(ctx: &Ctx, args: &ReportArgs) -> Result<()> {
    match (&ctx.manifest_path, args.evals.is_empty()) {
        (Some(manifest), _) => {
            let out_dir = args
                .out_dir
                .clone()
                .ok_or_else(|| Error::Parameter("report --manifest needs --out-dir".into()))?;
            let report = pipeline::run_manifest(manifest, &out_dir, ctx.jobs, ctx.quiet)?;
            ctx.say(&format!("report written to {}", report.display()));
            Ok(())
        }
        (None, false) => {
            let out = args
                .out
                .clone()
                .ok_or_else(|| Error::Parameter("--evals needs --out".into()))?;
            pipeline::aggregate_reports(&args.evals, &out)?;
            ctx.say(&format!(
                "aggregated {} reports into {}",
                args.evals.len(),
                out.display()
            ));
            let mut record = RunRecord::new("report", ctx.seed, ctx.jobs);
            for path in &args.evals {
                record.input(path)?;
            }
            record.output(&out);
            record.write(&out)
        }
        (None, true) => Err(Error::Parameter(
            "report needs --manifest <file> or --evals <files>".into(),
        )),
    }
}
