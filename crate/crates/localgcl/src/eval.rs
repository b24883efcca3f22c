//! Downstream evaluation of a trained encoder: frozen-embedding extraction, a
//! k-fold linear probe (multinomial logistic regression on standardized
//! embeddings), and an embedding-shift probe that measures how far graph
//! embeddings move under small local edits versus degree-preserving global
//! rewiring.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch, kfold_split, DataError, Graph, GraphDataset};
use crate::diff::DiffError;
use crate::matrix::Matrix;
use crate::model::{embed_batch, ModelParams};
use crate::objective::cosine_distance;
use crate::seeding::{derive_rng, Stream};

/// Gradient-descent settings for the probe's logistic-regression head.
const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.1;
const PROBE_L2: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs at least 2 classes, found {found}")]
    NotEnoughClasses { found: usize },
    #[error("embedding row count {rows} != label count {labels}")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("dataset feature width {found} != model input width {expected}")]
    FeatureWidth { expected: usize, found: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Linear-probe result over one k-fold split. `mean`/`std` are the population
/// statistics of `fold_accuracies`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Dataset name; [`linear_probe`] leaves it empty for the caller to fill.
    pub dataset: String,
    pub k: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
    /// Folds whose training split held a single class and were not scored.
    pub skipped_folds: usize,
}

/// Embedding-shift probe result: per-graph cosine displacements under a local
/// feature edit and under global degree-preserving rewiring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub dataset: String,
    pub local_displacements: Vec<f64>,
    pub global_displacements: Vec<f64>,
    pub local_mean: f64,
    pub global_mean: f64,
    /// Graphs without two vertex-disjoint edges, which the rewiring pass skips.
    pub skipped_too_small: usize,
    pub seed: u64,
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pooled embeddings for every graph, one row per graph in dataset order. No
/// augmentation is applied; the whole dataset goes through as a single batch.
pub fn embed_dataset(params: &ModelParams, ds: &GraphDataset) -> Result<Matrix, EvalError> {
    if ds.feature_dim != params.dims.feature_dim {
        return Err(EvalError::FeatureWidth {
            expected: params.dims.feature_dim,
            found: ds.feature_dim,
        });
    }
    let b = batch(&ds.graphs)?;
    Ok(embed_batch(params, &b)?)
}

/// k-fold linear probe: per fold, standardize the embeddings on the training
/// split (per-dimension, std floored at 1e-8), fit an L2-regularized
/// multinomial logistic regression by full-batch gradient descent, and score
/// accuracy on the held-out fold. Folds whose training split has one class are
/// skipped and counted.
pub fn linear_probe(
    embeddings: &Matrix,
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(EvalError::LabelMismatch { rows: n, labels: labels.len() });
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(EvalError::NotEnoughClasses { found: distinct.len() });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let split = kfold_split(n, k, seed)?;

    let mut fold_accuracies = Vec::with_capacity(k);
    let mut skipped_folds = 0;
    for fold in 0..k {
        let train = split.train_indices(fold);
        let test = split.test_indices(fold);
        let train_classes: BTreeSet<usize> = train.iter().map(|&i| labels[i]).collect();
        if train_classes.len() < 2 {
            skipped_folds += 1;
            continue;
        }
        let (mu, sigma) = feature_stats(embeddings, &train);
        let x_train = standardized(embeddings, &train, &mu, &sigma);
        let x_test = standardized(embeddings, &test, &mu, &sigma);
        let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let (w, b) = fit_logistic(&x_train, &y_train, num_classes);
        let correct = test
            .iter()
            .enumerate()
            .filter(|&(row, &i)| predict(&x_test, row, &w, &b) == labels[i])
            .count();
        fold_accuracies.push(correct as f64 / test.len() as f64);
    }

    let (mean, std) = mean_std(&fold_accuracies);
    Ok(EvalReport { dataset: String::new(), k, fold_accuracies, mean, std, seed, skipped_folds })
}

/// Per-dimension mean and std (floored at 1e-8) over the selected rows.
fn feature_stats(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let inv = 1.0 / rows.len() as f64;
    let mut mu = vec![0.0; d];
    for &r in rows {
        for (m, v) in mu.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m *= inv;
    }
    let mut var = vec![0.0; d];
    for &r in rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mu) {
            let delta = v - m;
            *s += delta * delta;
        }
    }
    let sigma = var.iter().map(|&s| (s * inv).sqrt().max(1e-8)).collect();
    (mu, sigma)
}

/// Extract and standardize the selected rows.
fn standardized(x: &Matrix, rows: &[usize], mu: &[f64], sigma: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), x.cols());
    for (out_row, &r) in rows.iter().enumerate() {
        for (c, v) in x.row(r).iter().enumerate() {
            out.set(out_row, c, (v - mu[c]) / sigma[c]);
        }
    }
    out
}

/// Multinomial logistic regression by full-batch gradient descent with an L2
/// penalty on the weights (not the bias). Returns `(W, b)`.
fn fit_logistic(x: &Matrix, y: &[usize], num_classes: usize) -> (Matrix, Matrix) {
    let (n, d) = x.shape();
    let mut w = Matrix::zeros(d, num_classes);
    let mut b = Matrix::zeros(1, num_classes);
    let mut y_onehot = Matrix::zeros(n, num_classes);
    for (i, &c) in y.iter().enumerate() {
        y_onehot.set(i, c, 1.0);
    }
    let xt = x.transpose();
    for _ in 0..PROBE_STEPS {
        let p = softmax_rows(&affine(x, &w, &b));
        let g = p.sub(&y_onehot).scale(1.0 / n as f64);
        let gw = xt.matmul(&g).add(&w.scale(2.0 * PROBE_L2));
        let gb = g.column_sums();
        w.add_assign_scaled(&gw, -PROBE_LR);
        b.add_assign_scaled(&gb, -PROBE_LR);
    }
    (w, b)
}

/// `x·W` with the bias row added to every output row.
fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut l = x.matmul(w);
    for r in 0..l.rows() {
        for (c, v) in l.row_mut(r).iter_mut().enumerate() {
            *v += b.get(0, c);
        }
    }
    l
}

/// Row-wise stable softmax.
fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Predicted class of one standardized row: argmax of its affine score.
fn predict(x: &Matrix, row: usize, w: &Matrix, b: &Matrix) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..w.cols() {
        let score: f64 =
            x.row(row).iter().enumerate().map(|(j, &v)| v * w.get(j, c)).sum::<f64>() + b.get(0, c);
        if score > best.1 {
            best = (c, score);
        }
    }
    best.0
}

/// Zero the feature rows of ⌈ratio·n⌉ randomly chosen nodes.
fn zero_node_features(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    let count = ((ratio * g.num_nodes as f64).ceil() as usize).min(g.num_nodes);
    let mut out = g.clone();
    for i in index::sample(rng, g.num_nodes, count) {
        out.features.row_mut(i).fill(0.0);
    }
    out
}

/// Any two edges with four distinct endpoints?
fn has_disjoint_edge_pair(edges: &[(usize, usize)]) -> bool {
    edges.iter().enumerate().any(|(i, &(a, b))| {
        edges[i + 1..].iter().any(|&(c, d)| a != c && a != d && b != c && b != d)
    })
}

/// Rewire ⌈ratio·|E|⌉ edges by random double-edge swaps, which preserve every
/// node's degree: two vertex-disjoint edges (a,b) and (c,d) become (a,c),(b,d)
/// or (a,d),(b,c). Swaps that would duplicate an existing edge are rejected
/// and retried within a fixed attempt budget. Returns `None` for graphs with
/// no vertex-disjoint edge pair (unless the target is zero edges, which needs
/// no swap at all).
pub fn degree_preserving_rewire(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Option<Graph> {
    assert!((0.0..=1.0).contains(&ratio), "rewire ratio {ratio} outside [0, 1]");
    let target = (ratio * g.edges.len() as f64).ceil() as usize;
    if target == 0 {
        return Some(g.clone());
    }
    if !has_disjoint_edge_pair(&g.edges) {
        return None;
    }
    let mut edges: BTreeSet<(usize, usize)> = g.edges.iter().copied().collect();
    let swaps_needed = target.div_ceil(2);
    let budget = 200 * swaps_needed;
    let (mut done, mut attempts) = (0, 0);
    while done < swaps_needed && attempts < budget {
        attempts += 1;
        let list: Vec<(usize, usize)> = edges.iter().copied().collect();
        let pick = index::sample(rng, list.len(), 2);
        let (a, b) = list[pick.index(0)];
        let (c, d) = list[pick.index(1)];
        if a == c || a == d || b == c || b == d {
            continue;
        }
        let (p, q) = if rng.random::<bool>() { ((a, c), (b, d)) } else { ((a, d), (b, c)) };
        let p = (p.0.min(p.1), p.0.max(p.1));
        let q = (q.0.min(q.1), q.0.max(q.1));
        if edges.contains(&p) || edges.contains(&q) {
            continue;
        }
        edges.remove(&(a, b));
        edges.remove(&(c, d));
        edges.insert(p);
        edges.insert(q);
        done += 1;
    }
    let out = Graph::new(g.num_nodes, edges, g.features.clone(), g.label)
        .expect("double-edge swaps keep the graph valid");
    Some(out)
}

/// Measure how far each graph's embedding moves (cosine distance, in [0, 2])
/// under a local perturbation — zeroing the features of ⌈local_ratio·n⌉ nodes
/// — and under a global one — degree-preserving rewiring of
/// ⌈global_ratio·|E|⌉ edges. Graphs that cannot be rewired are skipped in the
/// global pass and counted in `skipped_too_small`.
pub fn probe_embedding_shift(
    params: &ModelParams,
    ds: &GraphDataset,
    local_ratio: f64,
    global_ratio: f64,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    assert!(
        (0.0..=1.0).contains(&local_ratio) && (0.0..=1.0).contains(&global_ratio),
        "probe ratios must lie in [0, 1]"
    );
    let base = embed_dataset(params, ds)?;

    // A zero-strength perturbation leaves every graph untouched, so its
    // displacement is zero by definition; short-circuiting keeps the report
    // exact instead of accumulating ~1e-16 of cosine round-off.
    let local_displacements: Vec<f64> = if local_ratio == 0.0 {
        vec![0.0; ds.len()]
    } else {
        let locally_perturbed: Vec<Graph> = ds
            .graphs
            .iter()
            .enumerate()
            .map(|(idx, g)| {
                let mut rng = derive_rng(seed, Stream::Probe, &[0, idx as u64]);
                zero_node_features(g, local_ratio, &mut rng)
            })
            .collect();
        let mut local_ds = ds.clone();
        local_ds.graphs = locally_perturbed;
        let local_emb = embed_dataset(params, &local_ds)?;
        (0..ds.len()).map(|i| cosine_distance(base.row(i), local_emb.row(i))).collect()
    };

    let mut skipped_too_small = 0;
    let global_displacements: Vec<f64> = if global_ratio == 0.0 {
        vec![0.0; ds.len()]
    } else {
        let mut kept = Vec::new();
        let mut rewired = Vec::new();
        for (idx, g) in ds.graphs.iter().enumerate() {
            let mut rng = derive_rng(seed, Stream::Probe, &[1, idx as u64]);
            match degree_preserving_rewire(g, global_ratio, &mut rng) {
                Some(r) => {
                    kept.push(idx);
                    rewired.push(r);
                }
                None => skipped_too_small += 1,
            }
        }
        let mut displacements = Vec::with_capacity(kept.len());
        if !rewired.is_empty() {
            let mut global_ds = ds.clone();
            global_ds.graphs = rewired;
            let global_emb = embed_dataset(params, &global_ds)?;
            for (row, &idx) in kept.iter().enumerate() {
                displacements.push(cosine_distance(base.row(idx), global_emb.row(row)));
            }
        }
        displacements
    };

    let local_mean = mean_std(&local_displacements).0;
    let global_mean = mean_std(&global_displacements).0;
    Ok(ProbeReport {
        dataset: ds.name.clone(),
        local_displacements,
        global_displacements,
        local_mean,
        global_mean,
        skipped_too_small,
        seed,
    })
}
