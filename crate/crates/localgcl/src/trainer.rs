//! The joint training loop: per batch, embed a clean and an augmented view of
//! every graph for the contrastive loss, re-encode a feature-masked copy of
//! the clean view for the reconstruction loss, mix the two with the scheduled
//! λ, and take one Adam step on the shared parameters. Also home to the
//! text checkpoint format and the NDJSON metrics log.
//!
//! Everything random — initialization, epoch shuffles, per-graph augmentation
//! and masking — is derived from `(config seed, stream, indices)` so a run is
//! reproducible bit-for-bit. Augmentation and mask draws are keyed by the
//! graph's *original dataset index*, not its position in the batch, so the
//! same graph sees the same view in a given epoch no matter how the shuffle
//! grouped it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{
    apply, default_palette, sample_augmentation, sample_mask_indices, AugmentationKind,
};
use crate::data::{batch, parse_tudataset, synthesize_degree_features, DataError, GraphDataset};
use crate::diff::{AdamState, DiffError, GradContext};
use crate::matrix::Matrix;
use crate::model::{
    decode, encode, init_params, project, Backbone, BatchTopology, ModelDims, ModelParams,
};
use crate::objective::{
    combined_loss, combined_value, lambda_at, nt_xent, recon_mse, ContrastiveConfig,
    LambdaSchedule, ObjectiveError,
};
use crate::seeding::{derive_rng, Stream};

/// Name of the per-epoch metrics log written into the output directory.
pub const METRICS_FILENAME: &str = "metrics.ndjson";
/// Name of the final checkpoint written into the output directory.
pub const CHECKPOINT_FILENAME: &str = "model.ckpt";

const CHECKPOINT_HEADER: &str = "localgcl-checkpoint v1";

/// Errors surfaced by training.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {msg}")]
    Config { msg: String },
    /// A batch produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Errors from reading or writing checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version: {0:?}")]
    UnsupportedVersion(String),
    #[error("corrupt checkpoint at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a training run needs. `..Default::default()` gives the standard
/// recipe; set `data_dir`/`dataset` (for [`train`]) or hand a dataset straight
/// to [`train_on`].
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Directory containing one subdirectory per dataset.
    pub data_dir: PathBuf,
    /// Dataset name, e.g. `MUTAG`; files live at `data_dir/<name>/<name>_*.txt`.
    pub dataset: String,
    pub backbone: Backbone,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    /// Encoder depth (number of message-passing layers).
    pub layers: usize,
    /// Degree cap when synthesizing one-hot degree features for datasets
    /// without node labels.
    pub max_degree: usize,
    /// Candidate augmentations; each graph draws one uniformly per epoch.
    pub augmentations: Vec<AugmentationKind>,
    /// Fraction of nodes whose features are replaced by the mask token.
    pub mask_rate: f64,
    pub contrastive: ContrastiveConfig,
    /// Restrict the reconstruction error to masked rows only.
    pub masked_only_recon: bool,
    pub schedule: LambdaSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Where to stream `metrics.ndjson` and write `model.ckpt`; `None` keeps
    /// everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Record real epoch wall times. Disable to make the metrics log
    /// byte-for-byte reproducible across runs.
    pub log_wall_ms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: PathBuf::from("data"),
            dataset: String::new(),
            backbone: Backbone::Gin,
            hidden_dim: 32,
            proj_dim: 32,
            layers: 3,
            max_degree: 10,
            augmentations: default_palette(),
            mask_rate: 0.5,
            contrastive: ContrastiveConfig::default(),
            masked_only_recon: false,
            schedule: LambdaSchedule::default(),
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            out_dir: None,
            log_wall_ms: true,
        }
    }
}

/// One line of the metrics log. Loss fields are means over the epoch's
/// batches; `l_total` always equals `(1−λ)·l_cl + λ·l_mm` of the logged means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub l_cl: f64,
    pub l_mm: f64,
    pub l_total: f64,
    pub wall_ms: u64,
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRecord>,
}

fn config_error<T>(msg: impl Into<String>) -> Result<T, TrainError> {
    Err(TrainError::Config { msg: msg.into() })
}

fn validate_config(cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.epochs == 0 {
        return config_error("epochs must be ≥ 1");
    }
    if cfg.batch_size < 2 {
        return config_error("batch_size must be ≥ 2 (the contrastive loss needs negatives)");
    }
    if !cfg.lr.is_finite() || cfg.lr <= 0.0 {
        return config_error(format!("learning rate must be positive and finite, got {}", cfg.lr));
    }
    if !cfg.contrastive.tau.is_finite() || cfg.contrastive.tau <= 0.0 {
        return config_error(format!("temperature must be positive, got {}", cfg.contrastive.tau));
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return config_error(format!("mask_rate must lie in (0, 1], got {}", cfg.mask_rate));
    }
    if cfg.hidden_dim == 0 || cfg.proj_dim == 0 || cfg.layers == 0 {
        return config_error("hidden_dim, proj_dim and layers must all be ≥ 1");
    }
    if cfg.augmentations.is_empty() {
        return config_error("at least one augmentation kind is required");
    }
    for kind in &cfg.augmentations {
        if !(0.0..1.0).contains(&kind.ratio()) {
            return config_error(format!(
                "augmentation {} ratio {} outside [0, 1)",
                kind.name(),
                kind.ratio()
            ));
        }
    }
    cfg.schedule.validate().map_err(|e| TrainError::Config { msg: e.to_string() })
}

/// Load `cfg.dataset` from disk and train on it. Datasets without node labels
/// get one-hot degree features (capped at `cfg.max_degree`).
pub fn train(cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    validate_config(cfg)?;
    let dir = cfg.data_dir.join(&cfg.dataset);
    let mut ds = parse_tudataset(&dir, &cfg.dataset)?;
    if !ds.has_node_attributes {
        ds = synthesize_degree_features(&ds, cfg.max_degree);
    }
    train_on(cfg, &ds)
}

/// Train on an already-loaded dataset (`cfg.data_dir`/`cfg.dataset` are
/// ignored). The dataset needs at least 2 graphs and a nonzero feature width.
pub fn train_on(cfg: &TrainConfig, ds: &GraphDataset) -> Result<TrainOutput, TrainError> {
    validate_config(cfg)?;
    if ds.len() < 2 {
        return config_error(format!(
            "dataset {:?} has {} graph(s); contrastive training needs at least 2",
            ds.name,
            ds.len()
        ));
    }
    if ds.feature_dim == 0 {
        return config_error(
            "dataset has zero-width node features; synthesize degree features first",
        );
    }

    let dims = ModelDims {
        feature_dim: ds.feature_dim,
        hidden_dim: cfg.hidden_dim,
        proj_dim: cfg.proj_dim,
        layers: cfg.layers,
    };
    let mut params = init_params(cfg.backbone, dims, cfg.seed);
    let mut adam = AdamState::new(cfg.lr, &params.shapes());
    let mut metrics = Vec::with_capacity(cfg.epochs);

    let mut log: Option<BufWriter<File>> = match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(METRICS_FILENAME))?))
        }
        None => None,
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lambda = lambda_at(&cfg.schedule, epoch, cfg.epochs);

        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, Stream::Shuffle, &[epoch as u64]));
        let batches = partition(&order, cfg.batch_size);

        let (mut sum_cl, mut sum_mm) = (0.0, 0.0);
        for indices in &batches {
            let (cl, mm) = train_batch(cfg, ds, &mut params, &mut adam, indices, epoch, lambda)?;
            if !cl.is_finite() || !mm.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            sum_cl += cl;
            sum_mm += mm;
        }

        let n_batches = batches.len() as f64;
        let (l_cl, l_mm) = (sum_cl / n_batches, sum_mm / n_batches);
        let l_total = combined_value(l_cl, l_mm, lambda);
        let wall_ms = if cfg.log_wall_ms { started.elapsed().as_millis() as u64 } else { 0 };
        let record = MetricsRecord { epoch, lambda, l_cl, l_mm, l_total, wall_ms };
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&record)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        metrics.push(record);
    }

    if let Some(dir) = &cfg.out_dir {
        save_checkpoint(&params, &dir.join(CHECKPOINT_FILENAME))?;
    }
    Ok(TrainOutput { params, metrics })
}

/// Chunk a shuffled index order into batches. A lone trailing graph cannot
/// form a contrastive pair, so it joins the previous batch instead.
fn partition(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

/// Build both loss branches for one batch on a fresh tape, backpropagate, and
/// apply one Adam step. Returns the batch's `(l_cl, l_mm)` scalars.
fn train_batch(
    cfg: &TrainConfig,
    ds: &GraphDataset,
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch_indices: &[usize],
    epoch: usize,
    lambda: f64,
) -> Result<(f64, f64), TrainError> {
    let mut originals = Vec::with_capacity(batch_indices.len());
    let mut augmented = Vec::with_capacity(batch_indices.len());
    let mut masks = Vec::with_capacity(batch_indices.len());
    for &idx in batch_indices {
        let g = &ds.graphs[idx];
        let mut aug_rng = derive_rng(cfg.seed, Stream::Augment, &[epoch as u64, idx as u64]);
        let kind = sample_augmentation(&cfg.augmentations, &mut aug_rng);
        augmented.push(apply(kind, g, &mut aug_rng));
        let mut mask_rng = derive_rng(cfg.seed, Stream::Mask, &[epoch as u64, idx as u64]);
        masks.push(sample_mask_indices(g.num_nodes, cfg.mask_rate, &mut mask_rng));
        originals.push(g.clone());
    }
    let batch_orig = batch(&originals)?;
    let batch_aug = batch(&augmented)?;
    let topo_orig = BatchTopology::from_batch(&batch_orig);
    let topo_aug = BatchTopology::from_batch(&batch_aug);

    let ctx = GradContext::new();
    let leaves = params.leaves(&ctx);

    // Global branch: pooled embeddings of the clean and augmented views.
    let x_orig = ctx.constant(batch_orig.features.clone());
    let h_clean = encode(&ctx, &leaves.encoder, x_orig, &topo_orig)?;
    let z = project(&ctx, &leaves.projection, h_clean, &topo_orig)?.graph_z;
    let x_aug = ctx.constant(batch_aug.features.clone());
    let h_aug = encode(&ctx, &leaves.encoder, x_aug, &topo_aug)?;
    let z_hat = project(&ctx, &leaves.projection, h_aug, &topo_aug)?.graph_z;
    let l_cl = nt_xent(&ctx, z, z_hat, &cfg.contrastive)?;

    // Local branch: splice the mask token into the selected rows on the tape
    // (X̃ = X∘keep + (1·token)∘sel), so the token itself receives gradient;
    // then re-encode the masked view and reconstruct the clean features.
    let total = batch_orig.total_nodes();
    let width = batch_orig.features.cols();
    let mut keep = Matrix::filled(total, width, 1.0);
    let mut sel = Matrix::zeros(total, width);
    let mut masked_rows = vec![false; total];
    for (slot, mask) in masks.iter().enumerate() {
        let offset = batch_orig.node_offsets[slot];
        for &local in mask {
            keep.row_mut(offset + local).fill(0.0);
            sel.row_mut(offset + local).fill(1.0);
            masked_rows[offset + local] = true;
        }
    }
    let kept = ctx.mul(x_orig, ctx.constant(keep))?;
    let ones_col = ctx.constant(Matrix::filled(total, 1, 1.0));
    let token_rows = ctx.matmul(ones_col, leaves.mask_token)?;
    let x_tilde = ctx.add(kept, ctx.mul(token_rows, ctx.constant(sel))?)?;
    let h_masked = encode(&ctx, &leaves.encoder, x_tilde, &topo_orig)?;
    let node_z = project(&ctx, &leaves.projection, h_masked, &topo_orig)?.node_z;
    let x_recon = decode(&ctx, &leaves.decoder, node_z)?;
    let row_mask = cfg.masked_only_recon.then_some(masked_rows.as_slice());
    let l_mm = recon_mse(&ctx, x_orig, x_recon, batch_orig.graph_count, row_mask)?;

    let loss = combined_loss(&ctx, l_cl, l_mm, lambda)?;
    let cl_value = ctx.scalar(l_cl);
    let mm_value = ctx.scalar(l_mm);

    let grads = ctx.backward(loss)?;
    let grad_mats: Vec<Matrix> = leaves.ordered().iter().map(|&a| grads.get(a)).collect();
    let mut named = params.named_mut();
    let mut refs: Vec<&mut Matrix> = named.iter_mut().map(|(_, m)| &mut **m).collect();
    adam.step(&mut refs, &grad_mats)?;
    Ok((cl_value, mm_value))
}

/// Write `params` as a versioned text checkpoint: a header, the backbone and
/// dimensions, then every parameter in canonical order with one value per
/// line as raw f64 bits plus a human-readable decimal. The bits are what
/// [`load_checkpoint`] reads back, so save → load → save is byte-identical.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    use std::fmt::Write as _;
    let d = params.dims;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_HEADER}");
    let _ = writeln!(out, "backbone {}", params.backbone().as_str());
    let _ = writeln!(
        out,
        "dims feature={} hidden={} proj={} layers={}",
        d.feature_dim, d.hidden_dim, d.proj_dim, d.layers
    );
    for (name, m) in params.named() {
        let _ = writeln!(out, "param {name} rows={} cols={}", m.rows(), m.cols());
        for &v in m.data() {
            let _ = writeln!(out, "0x{:016x} {}", v.to_bits(), v);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { lines: text.lines().collect(), pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.lines.get(self.pos).map(|&l| (self.pos + 1, l));
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn require(&mut self, what: &str) -> Result<(usize, &'a str), CheckpointError> {
        let eof = self.lines.len() + 1;
        self.next().ok_or_else(|| CheckpointError::Corrupt {
            line: eof,
            msg: format!("unexpected end of file; expected {what}"),
        })
    }
}

fn corrupt(line: usize, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt { line, msg: msg.into() }
}

/// Read a checkpoint written by [`save_checkpoint`]. Parameter values are
/// recovered from their bit patterns, so the round trip is exact.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let mut cur = Cursor::new(&text);

    let (line_no, header) = cur.require("checkpoint header")?;
    if header != CHECKPOINT_HEADER {
        return Err(if header.starts_with("localgcl-checkpoint") {
            CheckpointError::UnsupportedVersion(header.to_owned())
        } else {
            corrupt(line_no, "missing checkpoint header")
        });
    }

    let (line_no, line) = cur.require("backbone line")?;
    let backbone: Backbone = line
        .strip_prefix("backbone ")
        .ok_or_else(|| corrupt(line_no, format!("expected `backbone <gin|gcn>`, got {line:?}")))?
        .trim()
        .parse()
        .map_err(|e: String| corrupt(line_no, e))?;

    let (line_no, line) = cur.require("dims line")?;
    let rest = line
        .strip_prefix("dims ")
        .ok_or_else(|| corrupt(line_no, format!("expected a `dims …` line, got {line:?}")))?;
    let mut fields = std::collections::BTreeMap::new();
    for part in rest.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| corrupt(line_no, format!("malformed dims field {part:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| corrupt(line_no, format!("dims field {part:?} is not an integer")))?;
        fields.insert(k, v);
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| corrupt(line_no, format!("dims line is missing `{k}=`")))
    };
    let dims = ModelDims {
        feature_dim: field("feature")?,
        hidden_dim: field("hidden")?,
        proj_dim: field("proj")?,
        layers: field("layers")?,
    };
    if dims.feature_dim == 0 || dims.hidden_dim == 0 || dims.proj_dim == 0 || dims.layers == 0 {
        return Err(corrupt(line_no, "all dims must be ≥ 1"));
    }

    // Build a correctly-shaped parameter set, then overwrite every value from
    // the file, insisting on canonical section order and matching shapes.
    let mut params = init_params(backbone, dims, 0);
    for (name, m) in params.named_mut() {
        let (line_no, line) = cur.require(&format!("section for parameter {name}"))?;
        let expected = format!("param {name} rows={} cols={}", m.rows(), m.cols());
        if line != expected {
            return Err(corrupt(line_no, format!("expected {expected:?}, got {line:?}")));
        }
        for slot in m.data_mut() {
            let (line_no, line) = cur.require(&format!("value for parameter {name}"))?;
            let token = line
                .split_whitespace()
                .next()
                .ok_or_else(|| corrupt(line_no, "blank line inside a parameter section"))?;
            let hex = token.strip_prefix("0x").filter(|h| h.len() == 16).ok_or_else(|| {
                corrupt(line_no, format!("expected 0x<16 hex digits>, got {token:?}"))
            })?;
            let bits = u64::from_str_radix(hex, 16)
                .map_err(|_| corrupt(line_no, format!("invalid hex value {token:?}")))?;
            *slot = f64::from_bits(bits);
        }
    }
    while let Some((line_no, line)) = cur.next() {
        if !line.trim().is_empty() {
            return Err(corrupt(line_no, format!("unexpected trailing content: {line:?}")));
        }
    }
    Ok(params)
}
