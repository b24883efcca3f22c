//! Flat-text run configuration: `section.key = value` lines, `#` comments,
//! unknown keys and duplicates rejected. Every key has a default; the fully
//! resolved set is what lands in the run manifest, so a manifest always shows
//! the effective value of every knob.

use std::collections::BTreeMap;
use std::path::PathBuf;

use localgcl::augment::AugmentationKind;
use localgcl::model::Backbone;
use localgcl::objective::{ContrastiveConfig, LambdaSchedule};
use localgcl::trainer::TrainConfig;

use crate::CliError;

/// Dataset-root fallback consulted when neither the config file nor a CLI
/// flag names a data directory.
pub const DATA_DIR_ENV: &str = "LOCALGCL_DATA_DIR";

/// Every accepted config key, in manifest order.
pub const KNOWN_KEYS: &[&str] = &[
    "aug.attribute_masking",
    "aug.edge_perturbation",
    "aug.kinds",
    "aug.node_dropout",
    "aug.subgraph",
    "backbone",
    "dataset.dir",
    "dataset.max_degree",
    "dataset.name",
    "dims.hidden",
    "dims.layers",
    "dims.proj",
    "eval.k",
    "eval.seeds",
    "lambda.end",
    "lambda.kind",
    "lambda.start",
    "lambda.static",
    "log.wall_ms",
    "mask.rate",
    "ntxent.literal_denominator",
    "out.dir",
    "probe.global_ratio",
    "probe.local_ratio",
    "recon.masked_only",
    "seed",
    "tau",
    "train.batch_size",
    "train.epochs",
    "train.lr",
];

const AUG_NAMES: [&str; 4] = ["node_dropout", "edge_perturbation", "attribute_masking", "subgraph"];

/// Typed view of a full configuration, defaults filled in.
#[derive(Clone, Debug)]
pub struct Settings {
    pub dataset_dir: PathBuf,
    pub dataset_name: String,
    pub max_degree: usize,
    pub backbone: Backbone,
    pub hidden: usize,
    pub proj: usize,
    pub layers: usize,
    /// Enabled augmentation kinds, kept in canonical order.
    pub aug_kinds: Vec<String>,
    pub aug_node_dropout: f64,
    pub aug_edge_perturbation: f64,
    pub aug_attribute_masking: f64,
    pub aug_subgraph: f64,
    pub mask_rate: f64,
    pub tau: f64,
    /// Use Eq.-style "negatives only" denominator instead of standard NT-Xent.
    pub literal_denominator: bool,
    pub masked_only: bool,
    pub lambda_kind: String,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub lambda_static: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// `None` falls back to `runs/<dataset.name>`.
    pub out_dir: Option<PathBuf>,
    pub log_wall_ms: bool,
    pub eval_k: usize,
    pub eval_seeds: usize,
    pub probe_local_ratio: f64,
    pub probe_global_ratio: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        let data_dir = std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| train.data_dir.clone());
        Settings {
            dataset_dir: data_dir,
            dataset_name: String::new(),
            max_degree: train.max_degree,
            backbone: train.backbone,
            hidden: train.hidden_dim,
            proj: train.proj_dim,
            layers: train.layers,
            aug_kinds: AUG_NAMES.iter().map(|s| s.to_string()).collect(),
            aug_node_dropout: 0.2,
            aug_edge_perturbation: 0.2,
            aug_attribute_masking: 0.2,
            aug_subgraph: 0.2,
            mask_rate: train.mask_rate,
            tau: train.contrastive.tau,
            literal_denominator: !train.contrastive.include_positive_in_denominator,
            masked_only: train.masked_only_recon,
            lambda_kind: "incremental".into(),
            lambda_start: 0.1,
            lambda_end: 0.9,
            lambda_static: 0.5,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            seed: train.seed,
            out_dir: None,
            log_wall_ms: train.log_wall_ms,
            eval_k: 10,
            eval_seeds: 5,
            probe_local_ratio: 0.05,
            probe_global_ratio: 0.3,
        }
    }
}

fn bad_value<T>(key: &str, value: &str, wanted: &str) -> Result<T, CliError> {
    Err(CliError::Config(format!("key {key}: cannot parse {value:?} as {wanted}")))
}

impl Settings {
    /// Apply one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let usize_of = |v: &str| v.parse::<usize>();
        let f64_of = |v: &str| v.parse::<f64>();
        let bool_of = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(()),
        };
        match key {
            "dataset.dir" => self.dataset_dir = PathBuf::from(value),
            "dataset.name" => self.dataset_name = value.to_owned(),
            "dataset.max_degree" => match usize_of(value) {
                Ok(v) => self.max_degree = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "backbone" => match value.parse::<Backbone>() {
                Ok(b) => self.backbone = b,
                Err(e) => return Err(CliError::Config(format!("key {key}: {e}"))),
            },
            "dims.hidden" => match usize_of(value) {
                Ok(v) => self.hidden = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "dims.proj" => match usize_of(value) {
                Ok(v) => self.proj = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "dims.layers" => match usize_of(value) {
                Ok(v) => self.layers = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "aug.kinds" => {
                let asked: Vec<&str> =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                for name in &asked {
                    if !AUG_NAMES.contains(name) {
                        return Err(CliError::Config(format!(
                            "key {key}: unknown augmentation {name:?} (expected any of {})",
                            AUG_NAMES.join(", ")
                        )));
                    }
                }
                if asked.is_empty() {
                    return Err(CliError::Config(format!(
                        "key {key}: at least one augmentation kind is required"
                    )));
                }
                // Canonical order regardless of how the list was written, so
                // the uniform draw over the palette stays stable.
                self.aug_kinds =
                    AUG_NAMES.iter().filter(|n| asked.contains(n)).map(|s| s.to_string()).collect();
            }
            "aug.node_dropout" => match f64_of(value) {
                Ok(v) => self.aug_node_dropout = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "aug.edge_perturbation" => match f64_of(value) {
                Ok(v) => self.aug_edge_perturbation = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "aug.attribute_masking" => match f64_of(value) {
                Ok(v) => self.aug_attribute_masking = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "aug.subgraph" => match f64_of(value) {
                Ok(v) => self.aug_subgraph = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "mask.rate" => match f64_of(value) {
                Ok(v) => self.mask_rate = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "tau" => match f64_of(value) {
                Ok(v) => self.tau = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "ntxent.literal_denominator" => match bool_of(value) {
                Ok(v) => self.literal_denominator = v,
                Err(()) => return bad_value(key, value, "true or false"),
            },
            "recon.masked_only" => match bool_of(value) {
                Ok(v) => self.masked_only = v,
                Err(()) => return bad_value(key, value, "true or false"),
            },
            "lambda.kind" => match value {
                "static" | "incremental" | "decremental" => self.lambda_kind = value.to_owned(),
                _ => return bad_value(key, value, "static, incremental or decremental"),
            },
            "lambda.start" => match f64_of(value) {
                Ok(v) => self.lambda_start = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "lambda.end" => match f64_of(value) {
                Ok(v) => self.lambda_end = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "lambda.static" => match f64_of(value) {
                Ok(v) => self.lambda_static = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "train.epochs" => match usize_of(value) {
                Ok(v) => self.epochs = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "train.batch_size" => match usize_of(value) {
                Ok(v) => self.batch_size = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "train.lr" => match f64_of(value) {
                Ok(v) => self.lr = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "seed" => match value.parse::<u64>() {
                Ok(v) => self.seed = v,
                Err(_) => return bad_value(key, value, "an unsigned integer"),
            },
            "out.dir" => self.out_dir = Some(PathBuf::from(value)),
            "log.wall_ms" => match bool_of(value) {
                Ok(v) => self.log_wall_ms = v,
                Err(()) => return bad_value(key, value, "true or false"),
            },
            "eval.k" => match usize_of(value) {
                Ok(v) => self.eval_k = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "eval.seeds" => match usize_of(value) {
                Ok(v) => self.eval_seeds = v,
                Err(_) => return bad_value(key, value, "an integer"),
            },
            "probe.local_ratio" => match f64_of(value) {
                Ok(v) => self.probe_local_ratio = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            "probe.global_ratio" => match f64_of(value) {
                Ok(v) => self.probe_global_ratio = v,
                Err(_) => return bad_value(key, value, "a number"),
            },
            _ => {
                return Err(CliError::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Effective output directory.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.dataset_name))
    }

    pub fn schedule(&self) -> Result<LambdaSchedule, CliError> {
        let schedule = match self.lambda_kind.as_str() {
            "static" => LambdaSchedule::Static(self.lambda_static),
            "incremental" => {
                LambdaSchedule::Incremental { start: self.lambda_start, end: self.lambda_end }
            }
            "decremental" => {
                LambdaSchedule::Decremental { start: self.lambda_start, end: self.lambda_end }
            }
            other => return Err(CliError::Config(format!("unknown lambda.kind {other:?}"))),
        };
        schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(schedule)
    }

    pub fn augmentations(&self) -> Vec<AugmentationKind> {
        self.aug_kinds
            .iter()
            .map(|name| match name.as_str() {
                "node_dropout" => AugmentationKind::NodeDropout(self.aug_node_dropout),
                "edge_perturbation" => {
                    AugmentationKind::EdgePerturbation(self.aug_edge_perturbation)
                }
                "attribute_masking" => {
                    AugmentationKind::AttributeMasking(self.aug_attribute_masking)
                }
                "subgraph" => AugmentationKind::Subgraph(self.aug_subgraph),
                other => unreachable!("validated augmentation kind {other}"),
            })
            .collect()
    }

    /// Assemble the training configuration (deep validation happens in the
    /// trainer, which reports violations as config errors).
    pub fn to_train_config(&self) -> Result<TrainConfig, CliError> {
        if self.dataset_name.is_empty() {
            return Err(CliError::Config("dataset.name is required".into()));
        }
        Ok(TrainConfig {
            data_dir: self.dataset_dir.clone(),
            dataset: self.dataset_name.clone(),
            backbone: self.backbone,
            hidden_dim: self.hidden,
            proj_dim: self.proj,
            layers: self.layers,
            max_degree: self.max_degree,
            augmentations: self.augmentations(),
            mask_rate: self.mask_rate,
            contrastive: ContrastiveConfig {
                tau: self.tau,
                include_positive_in_denominator: !self.literal_denominator,
            },
            masked_only_recon: self.masked_only,
            schedule: self.schedule()?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            out_dir: Some(self.resolved_out_dir()),
            log_wall_ms: self.log_wall_ms,
        })
    }

    /// The full key set with effective values — the manifest's config block.
    pub fn resolved_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_owned(), v);
        };
        put("dataset.dir", self.dataset_dir.display().to_string());
        put("dataset.name", self.dataset_name.clone());
        put("dataset.max_degree", self.max_degree.to_string());
        put("backbone", self.backbone.to_string());
        put("dims.hidden", self.hidden.to_string());
        put("dims.proj", self.proj.to_string());
        put("dims.layers", self.layers.to_string());
        put("aug.kinds", self.aug_kinds.join(","));
        put("aug.node_dropout", self.aug_node_dropout.to_string());
        put("aug.edge_perturbation", self.aug_edge_perturbation.to_string());
        put("aug.attribute_masking", self.aug_attribute_masking.to_string());
        put("aug.subgraph", self.aug_subgraph.to_string());
        put("mask.rate", self.mask_rate.to_string());
        put("tau", self.tau.to_string());
        put("ntxent.literal_denominator", self.literal_denominator.to_string());
        put("recon.masked_only", self.masked_only.to_string());
        put("lambda.kind", self.lambda_kind.clone());
        put("lambda.start", self.lambda_start.to_string());
        put("lambda.end", self.lambda_end.to_string());
        put("lambda.static", self.lambda_static.to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.lr.to_string());
        put("seed", self.seed.to_string());
        put("out.dir", self.resolved_out_dir().display().to_string());
        put("log.wall_ms", self.log_wall_ms.to_string());
        put("eval.k", self.eval_k.to_string());
        put("eval.seeds", self.eval_seeds.to_string());
        put("probe.local_ratio", self.probe_local_ratio.to_string());
        put("probe.global_ratio", self.probe_global_ratio.to_string());
        map
    }
}

/// Parse config text into key/value pairs; duplicate and unknown keys error
/// with their line number.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {line_no}: expected `key = value`, got {raw:?}"
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Config(format!("line {line_no}: unknown config key {key:?}")));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(CliError::Config(format!("line {line_no}: duplicate config key {key:?}")));
        }
        pairs.push((key.to_owned(), value.to_owned()));
    }
    Ok(pairs)
}

/// Split one `--set key=value` argument.
pub fn parse_set_arg(arg: &str) -> Result<(String, String), CliError> {
    let Some((key, value)) = arg.split_once('=') else {
        return Err(CliError::Config(format!("--set expects key=value, got {arg:?}")));
    };
    let key = key.trim();
    if !KNOWN_KEYS.contains(&key) {
        return Err(CliError::Config(format!("--set: unknown config key {key:?}")));
    }
    Ok((key.to_owned(), value.trim().to_owned()))
}

/// Read a config file and apply `--set` overrides on top of defaults.
pub fn load_settings(path: &std::path::Path, overrides: &[String]) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut settings = Settings::default();
    for (key, value) in parse_config_text(&text)? {
        settings.apply(&key, &value)?;
    }
    for arg in overrides {
        let (key, value) = parse_set_arg(arg)?;
        settings.apply(&key, &value)?;
    }
    Ok(settings)
}
