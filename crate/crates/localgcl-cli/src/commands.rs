//! The four subcommands. Argument structs live here too so `main.rs` stays a
//! thin dispatcher.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use localgcl::data::{parse_tudataset, synthesize_degree_features, DataError, GraphDataset};
use localgcl::eval::{
    embed_dataset, linear_probe, mean_std, probe_embedding_shift, EvalReport, ProbeReport,
};
use localgcl::objective::LambdaSchedule;
use localgcl::trainer::{self, load_checkpoint, train_on, TrainConfig};

use crate::config::{self, load_settings, Settings};
use crate::CliError;

/// Written to `manifest.json` before training starts: the resolved value of
/// every config key, the seed, where the artifacts will land, and when and
/// with which tool version the run began.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub started_unix_ms: u64,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

pub const MANIFEST_FILENAME: &str = "manifest.json";

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Flat-text config file (`key = value`, `#` comments)
    #[arg(long)]
    pub config: PathBuf,
    /// Override one config key, e.g. `--set train.epochs=50` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override the run seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the dataset root directory
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset name under the data root
    #[arg(long)]
    pub dataset: String,
    /// Dataset root (default: $LOCALGCL_DATA_DIR, then `data`)
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Cross-validation fold count (must be at least 2)
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// How many probe repetitions to run, at seeds seed..seed+seeds
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Base seed for the fold splits
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the JSON report (default: next to the checkpoint)
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AblateMode {
    /// Train one model per static λ in {0.0, 0.1, …, 1.0}
    StaticSweep,
    /// Compare incremental and decremental schedules against the best static λ
    DynamicCompare,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    /// Flat-text config file shared by every trained variant
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AblateMode,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Parallel training slots
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Seeds per variant (default: the config's eval.seeds)
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Override the output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the dataset root directory
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Override the base seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ProbeArgs {
    /// Checkpoint of the contrastive-leaning model
    #[arg(long)]
    pub checkpoint_cl: PathBuf,
    /// Checkpoint of the reconstruction-leaning model
    #[arg(long)]
    pub checkpoint_mm: PathBuf,
    /// Dataset name under the data root
    #[arg(long)]
    pub dataset: String,
    /// Dataset root (default: $LOCALGCL_DATA_DIR, then `data`)
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Fraction of nodes whose features are zeroed per graph
    #[arg(long, default_value_t = 0.05)]
    pub local_ratio: f64,
    /// Fraction of edges rewired (degree-preserving) per graph
    #[arg(long, default_value_t = 0.3)]
    pub global_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the JSON report (default: next to the first checkpoint)
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn resolve_data_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(config::DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn load_dataset(data_dir: &Path, name: &str) -> Result<GraphDataset, CliError> {
    Ok(parse_tudataset(&data_dir.join(name), name)?)
}

/// Give a parsed dataset the feature space a trained model expects: datasets
/// without node attributes get one-hot degree features of the model's width.
fn dataset_for_model(ds: &GraphDataset, feature_dim: usize) -> GraphDataset {
    if ds.has_node_attributes {
        ds.clone()
    } else {
        synthesize_degree_features(ds, feature_dim.saturating_sub(1))
    }
}

fn labeled(ds: &GraphDataset) -> Result<Vec<usize>, CliError> {
    if ds.graphs.iter().any(|g| g.label.is_none()) {
        return Err(CliError::Data(DataError::InvalidGraph(format!(
            "dataset {} has unlabeled graphs; evaluation needs graph labels",
            ds.name
        ))));
    }
    Ok(ds.labels())
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    Ok(fs::write(path, text)?)
}

/// Settings for commands that take a config file plus shared override flags.
fn settings_with_overrides(
    config_path: &Path,
    set: &[String],
    data_dir: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Result<Settings, CliError> {
    let mut settings = load_settings(config_path, set)?;
    if let Some(dir) = data_dir {
        settings.dataset_dir = dir.clone();
    }
    if let Some(seed) = seed {
        settings.seed = seed;
    }
    if let Some(out) = out {
        settings.out_dir = Some(out.clone());
    }
    Ok(settings)
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let settings =
        settings_with_overrides(&args.config, &args.set, &args.data_dir, args.seed, &args.out)?;
    let cfg = settings.to_train_config()?;
    let out_dir = cfg.out_dir.clone().expect("to_train_config always sets out_dir");
    fs::create_dir_all(&out_dir)?;

    let manifest_path = out_dir.join(MANIFEST_FILENAME);
    let mut artifacts = BTreeMap::new();
    artifacts.insert("manifest".to_owned(), manifest_path.display().to_string());
    artifacts.insert(
        "metrics".to_owned(),
        out_dir.join(trainer::METRICS_FILENAME).display().to_string(),
    );
    artifacts.insert(
        "checkpoint".to_owned(),
        out_dir.join(trainer::CHECKPOINT_FILENAME).display().to_string(),
    );
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        started_unix_ms: unix_ms(),
        seed: settings.seed,
        config: settings.resolved_map(),
        artifacts,
    };
    write_json(&manifest, &manifest_path)?;

    let out = trainer::train(&cfg)?;
    let last = out.metrics.last().expect("at least one epoch");
    println!(
        "trained {} for {} epochs (backbone {}, schedule {})",
        cfg.dataset,
        cfg.epochs,
        cfg.backbone,
        cfg.schedule.kind_name()
    );
    println!(
        "final epoch {}: lambda={:.4} l_cl={:.6} l_mm={:.6} l_total={:.6}",
        last.epoch, last.lambda, last.l_cl, last.l_mm, last.l_total
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

/// JSON body written by `eval`: every per-seed probe plus the aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub k: usize,
    pub base_seed: u64,
    pub runs: Vec<EvalReport>,
    /// Mean of the per-seed mean accuracies, as a fraction.
    pub mean: f64,
    /// Population standard deviation of the per-seed means.
    pub std: f64,
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.k < 2 {
        return Err(CliError::Config(format!(
            "eval needs at least 2 folds to hold data out, got k={}",
            args.k
        )));
    }
    if args.seeds == 0 {
        return Err(CliError::Config("eval needs at least 1 seed".into()));
    }
    let params = load_checkpoint(&args.checkpoint)?;
    let data_dir = resolve_data_dir(&args.data_dir);
    let raw = load_dataset(&data_dir, &args.dataset)?;
    let ds = dataset_for_model(&raw, params.dims.feature_dim);
    let labels = labeled(&ds)?;
    let embeddings = embed_dataset(&params, &ds)?;

    let mut runs = Vec::new();
    for offset in 0..args.seeds {
        let seed = args.seed + offset;
        let mut report = linear_probe(&embeddings, &labels, args.k, seed)?;
        report.dataset = args.dataset.clone();
        println!(
            "{} seed={} {:.2}±{:.2}",
            args.dataset,
            seed,
            report.mean * 100.0,
            report.std * 100.0
        );
        runs.push(report);
    }
    let seed_means: Vec<f64> = runs.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&seed_means);
    println!("{} {:.2}±{:.2}", args.dataset, mean * 100.0, std * 100.0);

    let summary = EvalSummary {
        dataset: args.dataset.clone(),
        k: args.k,
        base_seed: args.seed,
        runs,
        mean,
        std,
    };
    let json_path = args.json.clone().unwrap_or_else(|| {
        args.checkpoint.parent().unwrap_or(Path::new(".")).join("eval_report.json")
    });
    write_json(&summary, &json_path)?;
    println!("wrote {}", json_path.display());
    Ok(())
}

/// Train one variant and score it with the shared linear probe.
fn accuracy_for(
    settings: &Settings,
    ds: &GraphDataset,
    labels: &[usize],
    schedule: LambdaSchedule,
    seed: u64,
) -> Result<f64, CliError> {
    let mut cfg: TrainConfig = settings.to_train_config()?;
    cfg.schedule = schedule;
    cfg.seed = seed;
    cfg.out_dir = None;
    let out = train_on(&cfg, ds)?;
    let embeddings = embed_dataset(&out.params, ds)?;
    let report = linear_probe(&embeddings, labels, settings.eval_k, seed)?;
    Ok(report.mean)
}

/// Run `variants × seeds` trainings, optionally in parallel, and reduce each
/// variant's accuracies to (mean, std).
fn score_variants(
    settings: &Settings,
    ds: &GraphDataset,
    labels: &[usize],
    variants: &[LambdaSchedule],
    seeds: usize,
    jobs: usize,
) -> Result<Vec<(f64, f64)>, CliError> {
    let tasks: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| (0..seeds as u64).map(move |s| (v, settings.seed + s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    let accs: Vec<f64> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(v, seed)| accuracy_for(settings, ds, labels, variants[v], seed))
            .collect::<Result<_, _>>()
    })?;
    Ok(accs.chunks(seeds).map(mean_std).collect())
}

const SWEEP_CSV: &str = "static_sweep.csv";
const COMPARE_CSV: &str = "dynamic_compare.csv";

fn sweep_lambdas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn render_sweep_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut text = String::from("lambda,mean_acc,std\n");
    for &(lambda, mean, std) in rows {
        text.push_str(&format!("{lambda:.1},{mean:.4},{std:.4}\n"));
    }
    text
}

fn parse_sweep_csv(text: &str) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let bad =
        |line: usize, what: &str| CliError::Config(format!("{SWEEP_CSV} line {line}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "lambda,mean_acc,std")) => {}
        _ => return Err(bad(1, "expected header lambda,mean_acc,std")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(idx + 1, "expected 3 comma-separated fields"));
        }
        let mut nums = [0.0f64; 3];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field.trim().parse::<f64>().map_err(|_| bad(idx + 1, "expected a number"))?;
        }
        rows.push((nums[0], nums[1], nums[2]));
    }
    if rows.is_empty() {
        return Err(bad(1, "no data rows"));
    }
    Ok(rows)
}

fn best_static_lambda(rows: &[(f64, f64, f64)]) -> f64 {
    rows.iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite accuracies"))
        .map(|r| r.0)
        .unwrap_or(0.5)
}

fn run_static_sweep(
    settings: &Settings,
    ds: &GraphDataset,
    labels: &[usize],
    seeds: usize,
    jobs: usize,
) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let lambdas = sweep_lambdas();
    let variants: Vec<LambdaSchedule> =
        lambdas.iter().map(|&l| LambdaSchedule::Static(l)).collect();
    let scored = score_variants(settings, ds, labels, &variants, seeds, jobs)?;
    Ok(lambdas.into_iter().zip(scored).map(|(lambda, (mean, std))| (lambda, mean, std)).collect())
}

pub fn run_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let settings =
        settings_with_overrides(&args.config, &args.set, &args.data_dir, args.seed, &args.out)?;
    let seeds = args.seeds.unwrap_or(settings.eval_seeds);
    if seeds == 0 {
        return Err(CliError::Config("ablation needs at least 1 seed".into()));
    }
    let raw = load_dataset(&settings.dataset_dir, &settings.dataset_name)?;
    let ds = if raw.has_node_attributes {
        raw
    } else {
        synthesize_degree_features(&raw, settings.max_degree)
    };
    let labels = labeled(&ds)?;
    let out_dir = settings.resolved_out_dir();
    fs::create_dir_all(&out_dir)?;

    match args.mode {
        AblateMode::StaticSweep => {
            let rows = run_static_sweep(&settings, &ds, &labels, seeds, args.jobs)?;
            let path = out_dir.join(SWEEP_CSV);
            fs::write(&path, render_sweep_csv(&rows))?;
            println!("{:>6}  {:>8}  {:>8}", "lambda", "mean_acc", "std");
            for (lambda, mean, std) in &rows {
                println!("{lambda:>6.1}  {mean:>8.4}  {std:>8.4}");
            }
            println!("wrote {}", path.display());
        }
        AblateMode::DynamicCompare => {
            let sweep_path = out_dir.join(SWEEP_CSV);
            let sweep_rows = if sweep_path.exists() {
                println!("reusing {}", sweep_path.display());
                parse_sweep_csv(&fs::read_to_string(&sweep_path)?)?
            } else {
                let rows = run_static_sweep(&settings, &ds, &labels, seeds, args.jobs)?;
                fs::write(&sweep_path, render_sweep_csv(&rows))?;
                println!("wrote {}", sweep_path.display());
                rows
            };
            let best = best_static_lambda(&sweep_rows);
            let variants = [
                LambdaSchedule::Incremental {
                    start: settings.lambda_start,
                    end: settings.lambda_end,
                },
                LambdaSchedule::Decremental {
                    start: settings.lambda_end,
                    end: settings.lambda_start,
                },
                LambdaSchedule::Static(best),
            ];
            for v in &variants {
                v.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            let scored = score_variants(&settings, &ds, &labels, &variants, seeds, args.jobs)?;
            let names =
                ["incremental".to_owned(), "decremental".to_owned(), format!("static({best:.1})")];
            let mut text = String::from("schedule,mean_acc,std\n");
            println!("{:<14}  {:>8}  {:>8}", "schedule", "mean_acc", "std");
            for (name, (mean, std)) in names.iter().zip(&scored) {
                text.push_str(&format!("{name},{mean:.4},{std:.4}\n"));
                println!("{name:<14}  {mean:>8.4}  {std:>8.4}");
            }
            let path = out_dir.join(COMPARE_CSV);
            fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// JSON body written by `probe`: one displacement report per model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub dataset: String,
    pub local_ratio: f64,
    pub global_ratio: f64,
    pub seed: u64,
    pub contrastive: ProbeReport,
    pub masked: ProbeReport,
}

pub fn run_probe(args: &ProbeArgs) -> Result<(), CliError> {
    for (name, ratio) in [("local", args.local_ratio), ("global", args.global_ratio)] {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(CliError::Config(format!(
                "--{name}-ratio must lie in [0, 1], got {ratio}"
            )));
        }
    }
    let params_cl = load_checkpoint(&args.checkpoint_cl)?;
    let params_mm = load_checkpoint(&args.checkpoint_mm)?;
    let data_dir = resolve_data_dir(&args.data_dir);
    let raw = load_dataset(&data_dir, &args.dataset)?;

    let mut reports = Vec::with_capacity(2);
    for params in [&params_cl, &params_mm] {
        let ds = dataset_for_model(&raw, params.dims.feature_dim);
        let mut report =
            probe_embedding_shift(params, &ds, args.local_ratio, args.global_ratio, args.seed)?;
        report.dataset = args.dataset.clone();
        reports.push(report);
    }
    let masked = reports.pop().expect("two reports");
    let contrastive = reports.pop().expect("two reports");

    println!("{:<14}  {:>10}  {:>10}", "model", "local", "global");
    println!(
        "{:<14}  {:>10.4}  {:>10.4}",
        "contrastive", contrastive.local_mean, contrastive.global_mean
    );
    println!("{:<14}  {:>10.4}  {:>10.4}", "masked", masked.local_mean, masked.global_mean);
    if masked.skipped_too_small > 0 {
        println!("({} graphs too small to rewire)", masked.skipped_too_small);
    }

    let summary = ProbeSummary {
        dataset: args.dataset.clone(),
        local_ratio: args.local_ratio,
        global_ratio: args.global_ratio,
        seed: args.seed,
        contrastive,
        masked,
    };
    let json_path = args.json.clone().unwrap_or_else(|| {
        args.checkpoint_cl.parent().unwrap_or(Path::new(".")).join("probe_report.json")
    });
    write_json(&summary, &json_path)?;
    println!("wrote {}", json_path.display());
    Ok(())
}
