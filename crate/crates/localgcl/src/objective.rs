//! The training objectives: the contrastive NT-Xent loss over two batches of
//! graph embeddings, the masked-reconstruction mean squared error, their
//! λ-weighted combination, and the λ schedules.
//!
//! NT-Xent here is one-directional: rows of `Z` are the anchors, rows of `Ẑ`
//! the candidates, and row `i` of each is a positive pair. Negatives come from
//! the rest of the batch only. With the standard formulation the denominator
//! includes the positive term; [`ContrastiveConfig::include_positive_in_denominator`]
//! can switch to the variant that excludes it (which is unbounded below — the
//! loss can go negative — and is provided for completeness, not as a default).

use thiserror::Error;

use crate::diff::{DiffArray, DiffError, GradContext};
use crate::matrix::{dot, l2_norm, Matrix};

/// Errors from loss construction.
#[derive(Debug, Error)]
pub enum ObjectiveError {
    /// The contrastive loss needs at least two graphs in the batch.
    #[error("contrastive loss needs at least 2 graphs per batch, got {got}")]
    NeedsNegatives { got: usize },
    /// λ must lie in [0, 1].
    #[error("lambda {lambda} outside [0, 1]")]
    InvalidLambda { lambda: f64 },
    /// An invalid schedule (range or ordering violation).
    #[error("invalid lambda schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// NT-Xent hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    /// Softmax temperature τ > 0.
    pub tau: f64,
    /// Standard NT-Xent keeps the positive pair in the denominator sum (true).
    /// False gives the literal "negatives only" denominator.
    pub include_positive_in_denominator: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { tau: 0.5, include_positive_in_denominator: true }
    }
}

/// Rule mapping training progress to the loss-mixing weight λ ∈ [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    /// Constant λ.
    Static(f64),
    /// Linear ramp from `start` up to `end` (requires start ≤ end).
    Incremental { start: f64, end: f64 },
    /// Linear ramp from `start` down to `end` (requires start ≥ end).
    Decremental { start: f64, end: f64 },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Incremental { start: 0.1, end: 0.9 }
    }
}

impl LambdaSchedule {
    /// Check range and ordering invariants.
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            LambdaSchedule::Static(v) if !in_range(v) => {
                Err(ObjectiveError::InvalidSchedule(format!("static value {v} outside [0,1]")))
            }
            LambdaSchedule::Incremental { start, end } if !in_range(start) || !in_range(end) => {
                Err(ObjectiveError::InvalidSchedule(format!(
                    "endpoints {start}..{end} outside [0,1]"
                )))
            }
            LambdaSchedule::Decremental { start, end } if !in_range(start) || !in_range(end) => {
                Err(ObjectiveError::InvalidSchedule(format!(
                    "endpoints {start}..{end} outside [0,1]"
                )))
            }
            LambdaSchedule::Incremental { start, end } if start > end => {
                Err(ObjectiveError::InvalidSchedule(format!(
                    "incremental needs start ≤ end, got {start} > {end}"
                )))
            }
            LambdaSchedule::Decremental { start, end } if start < end => {
                Err(ObjectiveError::InvalidSchedule(format!(
                    "decremental needs start ≥ end, got {start} < {end}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LambdaSchedule::Static(_) => "static",
            LambdaSchedule::Incremental { .. } => "incremental",
            LambdaSchedule::Decremental { .. } => "decremental",
        }
    }
}

/// λ for the given epoch. Linear interpolation across `total_epochs`; a single
/// epoch pins the schedule at its start value.
pub fn lambda_at(schedule: &LambdaSchedule, epoch: usize, total_epochs: usize) -> f64 {
    debug_assert!(epoch < total_epochs, "epoch {epoch} out of range 0..{total_epochs}");
    match *schedule {
        LambdaSchedule::Static(v) => v,
        LambdaSchedule::Incremental { start, end } | LambdaSchedule::Decremental { start, end } => {
            if total_epochs <= 1 {
                start
            } else {
                start + (end - start) * epoch as f64 / (total_epochs - 1) as f64
            }
        }
    }
}

/// Cosine similarity `a·b/(‖a‖‖b‖)`; 0 when either norm is below 1e-12.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_sim dims {} vs {}", a.len(), b.len());
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Cosine distance `1 − cosine_sim`, in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine_sim(a, b)
}

/// The contrastive loss on the tape:
///
///   L = −Σᵢ log [ exp(SIM(zᵢ, ẑᵢ)/τ) / Σⱼ exp(SIM(zᵢ, ẑⱼ)/τ) ]
///
/// Rows are L2-normalized on the tape (so gradients flow through the
/// normalization), pairwise similarities come from one matmul, and each row's
/// log-sum-exp subtracts its detached row maximum for numerical stability.
pub fn nt_xent(
    ctx: &GradContext,
    z: DiffArray,
    z_hat: DiffArray,
    cfg: &ContrastiveConfig,
) -> Result<DiffArray, ObjectiveError> {
    let n = z.rows();
    if n < 2 {
        return Err(ObjectiveError::NeedsNegatives { got: n });
    }
    if z.shape() != z_hat.shape() {
        return Err(DiffError::Shape {
            op: "nt_xent",
            detail: format!("{:?} vs {:?}", z.shape(), z_hat.shape()),
        }
        .into());
    }
    assert!(cfg.tau > 0.0, "temperature must be positive");

    let zn = ctx.row_l2_normalize(z);
    let hn = ctx.row_l2_normalize(z_hat);
    // S[i][j] = SIM(z_i, ẑ_j)/τ.
    let sim = ctx.matmul(zn, ctx.transpose(hn))?;
    let s = ctx.scale(sim, 1.0 / cfg.tau);

    // Positive logits: the diagonal, extracted as (S ∘ I)·1.
    let eye = ctx.constant(Matrix::identity(n));
    let ones_col = ctx.constant(Matrix::filled(n, 1, 1.0));
    let pos = ctx.matmul(ctx.mul(s, eye)?, ones_col)?;

    // Row-stabilized log-sum-exp. The row maxima are read off the forward
    // values and subtracted as constants, which leaves gradients untouched.
    let row_max: Vec<f64> = {
        let sv = ctx.value(s);
        (0..n)
            .map(|i| {
                let row = sv.row(i);
                let iter = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| cfg.include_positive_in_denominator || j != i);
                iter.map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    };
    let mut max_mat = Matrix::zeros(n, n);
    let mut max_col = Matrix::zeros(n, 1);
    for i in 0..n {
        max_mat.row_mut(i).fill(-row_max[i]);
        max_col.set(i, 0, row_max[i]);
    }
    let shifted = ctx.add(s, ctx.constant(max_mat))?;
    let mut exp = ctx.exp(shifted);
    if !cfg.include_positive_in_denominator {
        // Zero the diagonal so the positive term leaves the denominator.
        let mut hole = Matrix::filled(n, n, 1.0);
        for i in 0..n {
            hole.set(i, i, 0.0);
        }
        exp = ctx.mul(exp, ctx.constant(hole))?;
    }
    let row_sum = ctx.matmul(exp, ones_col)?;
    let lse = ctx.add(ctx.log(row_sum), ctx.constant(max_col))?;

    // Σᵢ (lseᵢ − posᵢ).
    let neg_pos = ctx.scale(pos, -1.0);
    let per_row = ctx.add(lse, neg_pos)?;
    Ok(ctx.sum_all(per_row))
}

/// The reconstruction loss on the tape:
///
///   L = (1/N) Σᵢ ‖Xᵢ − X̂ᵢ‖²_F
///
/// i.e. the squared Frobenius norm of the difference, summed over the batch's
/// graphs and divided by the graph count. `row_mask`, when given, restricts
/// the error to the marked rows (the masked-nodes-only variant).
pub fn recon_mse(
    ctx: &GradContext,
    x: DiffArray,
    x_recon: DiffArray,
    graph_count: usize,
    row_mask: Option<&[bool]>,
) -> Result<DiffArray, ObjectiveError> {
    if x.shape() != x_recon.shape() {
        return Err(DiffError::Shape {
            op: "recon_mse",
            detail: format!("{:?} vs {:?}", x.shape(), x_recon.shape()),
        }
        .into());
    }
    assert!(graph_count > 0, "graph_count must be positive");
    let neg_x = ctx.scale(x, -1.0);
    let diff = ctx.add(x_recon, neg_x)?;
    let mut sq = ctx.mul(diff, diff)?;
    if let Some(mask) = row_mask {
        assert_eq!(mask.len(), x.rows(), "row mask length != row count");
        let mut keep = Matrix::zeros(x.rows(), x.cols());
        for (r, &m) in mask.iter().enumerate() {
            if m {
                keep.row_mut(r).fill(1.0);
            }
        }
        sq = ctx.mul(sq, ctx.constant(keep))?;
    }
    let total = ctx.sum_all(sq);
    Ok(ctx.scale(total, 1.0 / graph_count as f64))
}

/// The combined training loss on the tape: `(1−λ)·L_CL + λ·L_MM`.
pub fn combined_loss(
    ctx: &GradContext,
    l_cl: DiffArray,
    l_mm: DiffArray,
    lambda: f64,
) -> Result<DiffArray, ObjectiveError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ObjectiveError::InvalidLambda { lambda });
    }
    let a = ctx.scale(l_cl, 1.0 - lambda);
    let b = ctx.scale(l_mm, lambda);
    Ok(ctx.add(a, b)?)
}

/// Plain-scalar form of [`combined_loss`] (for logging and reporting).
pub fn combined_value(l_cl: f64, l_mm: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * l_cl + lambda * l_mm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::GradContext;

    fn nt_xent_value(z: Matrix, z_hat: Matrix, cfg: &ContrastiveConfig) -> f64 {
        let ctx = GradContext::new();
        let a = ctx.leaf(z);
        let b = ctx.leaf(z_hat);
        let loss = nt_xent(&ctx, a, b, cfg).unwrap();
        ctx.scalar(loss)
    }

    fn cfg_tau1() -> ContrastiveConfig {
        ContrastiveConfig { tau: 1.0, include_positive_in_denominator: true }
    }

    #[test]
    fn cosine_sim_cases() {
        assert!((cosine_sim(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn nt_xent_identical_embeddings_is_2log2() {
        // Both rows the same unit vector: every similarity is 1, each term
        // is −log(e/(2e)) = log 2.
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let v = nt_xent_value(z.clone(), z, &cfg_tau1());
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn nt_xent_orthogonal_pairs() {
        // z₁=ẑ₁=(1,0), z₂=ẑ₂=(0,1): each term −log(e/(e+1)) = log(1+e⁻¹).
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = nt_xent_value(z.clone(), z, &cfg_tau1());
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-6, "got {v}, want {expected}");
    }

    #[test]
    fn nt_xent_literal_denominator_variants() {
        let mut cfg = cfg_tau1();
        cfg.include_positive_in_denominator = false;
        // Identical embeddings: denominator = the other exp(1), ratio = 1 → 0.
        let same = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let v = nt_xent_value(same.clone(), same, &cfg);
        assert!(v.abs() < 1e-9, "got {v}");
        // Orthogonal: each term −log(e¹/e⁰) = −1 → total −2 (negative: the
        // literal form is unbounded below).
        let orth = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = nt_xent_value(orth.clone(), orth, &cfg);
        assert!((v + 2.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn nt_xent_scale_invariance() {
        let z = Matrix::from_rows(&[vec![0.3, -0.7, 0.1], vec![0.9, 0.2, -0.4]]);
        let zh = Matrix::from_rows(&[vec![-0.2, 0.5, 0.8], vec![0.1, 0.1, 0.6]]);
        let cfg = ContrastiveConfig::default();
        let base = nt_xent_value(z.clone(), zh.clone(), &cfg);
        let mut scaled = z.clone();
        for v in scaled.row_mut(0) {
            *v *= 37.5;
        }
        let mut zh_scaled = zh.clone();
        for v in zh_scaled.row_mut(1) {
            *v *= 0.004;
        }
        let v = nt_xent_value(scaled, zh_scaled, &cfg);
        assert!((v - base).abs() < 1e-9, "cosine scale invariance violated: {v} vs {base}");
    }

    #[test]
    fn nt_xent_uniform_case_is_n_log_n() {
        let n = 5;
        let z = Matrix::filled(n, 3, 0.6);
        let v = nt_xent_value(z.clone(), z, &cfg_tau1());
        let expected = n as f64 * (n as f64).ln();
        assert!((v - expected).abs() < 1e-6, "got {v}, want {expected}");
    }

    #[test]
    fn nt_xent_joint_permutation_invariance() {
        let z = Matrix::from_rows(&[vec![0.3, -0.7], vec![0.9, 0.2], vec![-0.5, 0.5]]);
        let zh = Matrix::from_rows(&[vec![-0.2, 0.5], vec![0.1, 0.1], vec![0.7, -0.3]]);
        let cfg = ContrastiveConfig::default();
        let base = nt_xent_value(z.clone(), zh.clone(), &cfg);
        let perm = [2usize, 0, 1];
        let zp = Matrix::from_rows(&perm.map(|i| z.row(i).to_vec()));
        let zhp = Matrix::from_rows(&perm.map(|i| zh.row(i).to_vec()));
        let v = nt_xent_value(zp, zhp, &cfg);
        assert!((v - base).abs() < 1e-9);
    }

    #[test]
    fn nt_xent_needs_two_graphs() {
        let ctx = GradContext::new();
        let z = ctx.leaf(Matrix::filled(1, 4, 1.0));
        let err = nt_xent(&ctx, z, z, &ContrastiveConfig::default()).unwrap_err();
        assert!(matches!(err, ObjectiveError::NeedsNegatives { got: 1 }));
    }

    #[test]
    fn nt_xent_stable_under_large_logits() {
        // τ small enough that naive exp would overflow is still finite.
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let cfg = ContrastiveConfig { tau: 1e-3, include_positive_in_denominator: true };
        let v = nt_xent_value(z.clone(), z, &cfg);
        assert!(v.is_finite(), "got {v}");
    }

    fn recon_value(x: Matrix, xr: Matrix, graph_count: usize, row_mask: Option<&[bool]>) -> f64 {
        let ctx = GradContext::new();
        let a = ctx.constant(x);
        let b = ctx.leaf(xr);
        let loss = recon_mse(&ctx, a, b, graph_count, row_mask).unwrap();
        ctx.scalar(loss)
    }

    #[test]
    fn recon_mse_hand_cases() {
        let x = Matrix::filled(2, 2, 1.0);
        assert_eq!(recon_value(x.clone(), x.clone(), 1, None), 0.0);
        // Difference all-ones on a 2×2 graph: ‖·‖²_F = 4.
        assert_eq!(recon_value(x.clone(), Matrix::filled(2, 2, 2.0), 1, None), 4.0);
        // Two such graphs stacked, N = 2 → (4+4)/2 = 4.
        let x2 = Matrix::filled(4, 2, 1.0);
        assert_eq!(recon_value(x2, Matrix::filled(4, 2, 2.0), 2, None), 4.0);
    }

    #[test]
    fn recon_mse_masked_rows_only() {
        let x = Matrix::zeros(3, 2);
        let mut xr = Matrix::zeros(3, 2);
        xr.row_mut(0).fill(1.0); // error 2 on an unmasked row
        xr.row_mut(2).fill(3.0); // error 18 on a masked row
        let mask = [false, false, true];
        assert_eq!(recon_value(x.clone(), xr.clone(), 1, Some(&mask)), 18.0);
        assert_eq!(recon_value(x, xr, 1, None), 20.0);
    }

    #[test]
    fn combined_loss_edges_and_midpoint() {
        let ctx = GradContext::new();
        let cl = ctx.leaf(Matrix::from_vec(1, 1, vec![2.0]));
        let mm = ctx.leaf(Matrix::from_vec(1, 1, vec![4.0]));
        assert_eq!(ctx.scalar(combined_loss(&ctx, cl, mm, 0.0).unwrap()), 2.0);
        assert_eq!(ctx.scalar(combined_loss(&ctx, cl, mm, 1.0).unwrap()), 4.0);
        assert_eq!(ctx.scalar(combined_loss(&ctx, cl, mm, 0.5).unwrap()), 3.0);
        assert!(matches!(
            combined_loss(&ctx, cl, mm, 1.5),
            Err(ObjectiveError::InvalidLambda { .. })
        ));
        assert_eq!(combined_value(2.0, 4.0, 0.25), 2.5);
    }

    #[test]
    fn lambda_schedule_values() {
        let inc = LambdaSchedule::Incremental { start: 0.1, end: 0.9 };
        assert_eq!(lambda_at(&inc, 0, 100), 0.1);
        assert!((lambda_at(&inc, 99, 100) - 0.9).abs() < 1e-12);
        assert!((lambda_at(&inc, 50, 101) - 0.5).abs() < 1e-12);
        let dec = LambdaSchedule::Decremental { start: 0.9, end: 0.1 };
        assert_eq!(lambda_at(&dec, 0, 100), 0.9);
        assert!((lambda_at(&dec, 99, 100) - 0.1).abs() < 1e-12);
        assert_eq!(lambda_at(&LambdaSchedule::Static(0.3), 7, 10), 0.3);
        // One-epoch runs sit at the start value.
        assert_eq!(lambda_at(&inc, 0, 1), 0.1);
    }

    #[test]
    fn schedule_validation() {
        assert!(LambdaSchedule::Incremental { start: 0.9, end: 0.1 }.validate().is_err());
        assert!(LambdaSchedule::Decremental { start: 0.1, end: 0.9 }.validate().is_err());
        assert!(LambdaSchedule::Static(1.5).validate().is_err());
        assert!(LambdaSchedule::Static(0.5).validate().is_ok());
        assert!(LambdaSchedule::Incremental { start: 0.1, end: 0.9 }.validate().is_ok());
    }

    #[test]
    fn monotonicity_in_lambda() {
        // l_mm > l_cl: combined value grows with λ; flipped otherwise.
        assert!(combined_value(1.0, 3.0, 0.8) > combined_value(1.0, 3.0, 0.2));
        assert!(combined_value(3.0, 1.0, 0.8) < combined_value(3.0, 1.0, 0.2));
    }
}
