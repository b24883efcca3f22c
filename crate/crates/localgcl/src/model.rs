//! The shared GNN encoder (GIN or GCN stack), projection head, decoder head,
//! mask token, and parameter initialization.
//!
//! All forward math runs on a [`GradContext`] tape; [`ModelParams`] holds the
//! plain parameter matrices between steps and [`ModelParams::leaves`] mounts
//! them onto a fresh tape for each forward pass. The parameter enumeration
//! order of [`ModelParams::named`], [`ModelParams::named_mut`], and
//! [`ParamLeaves::ordered`] is identical and fixed — optimizer state and
//! checkpoints rely on it.
//!
//! Message passing is edge-list based: neighbor features are gathered per
//! directed arc and segment-summed by destination, so no dense adjacency
//! matrix is ever materialized.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::GraphBatch;
use crate::diff::{DiffArray, DiffError, GradContext};
use crate::matrix::Matrix;
use crate::seeding::{derive_rng, Stream};

/// Encoder architecture choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Gin,
    Gcn,
}

impl Backbone {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backbone::Gin => "gin",
            Backbone::Gcn => "gcn",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gin" => Ok(Backbone::Gin),
            "gcn" => Ok(Backbone::Gcn),
            other => Err(format!("unknown backbone {other:?} (expected gin or gcn)")),
        }
    }
}

/// Model dimensions: input feature width `d`, hidden width, projection width,
/// and encoder depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub layers: usize,
}

/// One GIN layer: `h' = MLP((1+ε)·h_v + Σ_{u∈N(v)} h_u)` with a 2-layer MLP
/// (ReLU between the two linear maps) and a learnable ε.
#[derive(Clone, Debug, PartialEq)]
pub struct GinLayerParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    /// Stored 1×1 so it is a parameter like any other.
    pub eps: Matrix,
}

/// One GCN layer: `h' = relu(W · Σ_{u∈N(v)∪{v}} h_u/√(deg̃_u·deg̃_v) + b)`
/// with `deg̃ = degree + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    pub w: Matrix,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderParams {
    Gin(Vec<GinLayerParams>),
    Gcn(Vec<GcnLayerParams>),
}

/// A 2-layer MLP head (ReLU between the layers, linear output).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Every learnable array of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    /// d_h → d_h → d_p head feeding the contrastive loss.
    pub projection: MlpParams,
    /// d_p → d_h → d head reconstructing node features.
    pub decoder: MlpParams,
    /// 1×d learnable replacement row for masked nodes.
    pub mask_token: Matrix,
}

impl ModelParams {
    pub fn backbone(&self) -> Backbone {
        match self.encoder {
            EncoderParams::Gin(_) => Backbone::Gin,
            EncoderParams::Gcn(_) => Backbone::Gcn,
        }
    }

    /// Parameters with their canonical names, in canonical order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        match &self.encoder {
            EncoderParams::Gin(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push((format!("encoder.{i}.w1"), &l.w1));
                    out.push((format!("encoder.{i}.b1"), &l.b1));
                    out.push((format!("encoder.{i}.w2"), &l.w2));
                    out.push((format!("encoder.{i}.b2"), &l.b2));
                    out.push((format!("encoder.{i}.eps"), &l.eps));
                }
            }
            EncoderParams::Gcn(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push((format!("encoder.{i}.w"), &l.w));
                    out.push((format!("encoder.{i}.b"), &l.b));
                }
            }
        }
        for (prefix, mlp) in [("projection", &self.projection), ("decoder", &self.decoder)] {
            out.push((format!("{prefix}.w1"), &mlp.w1));
            out.push((format!("{prefix}.b1"), &mlp.b1));
            out.push((format!("{prefix}.w2"), &mlp.w2));
            out.push((format!("{prefix}.b2"), &mlp.b2));
        }
        out.push(("mask_token".to_owned(), &self.mask_token));
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        match &mut self.encoder {
            EncoderParams::Gin(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    out.push((format!("encoder.{i}.w1"), &mut l.w1));
                    out.push((format!("encoder.{i}.b1"), &mut l.b1));
                    out.push((format!("encoder.{i}.w2"), &mut l.w2));
                    out.push((format!("encoder.{i}.b2"), &mut l.b2));
                    out.push((format!("encoder.{i}.eps"), &mut l.eps));
                }
            }
            EncoderParams::Gcn(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    out.push((format!("encoder.{i}.w"), &mut l.w));
                    out.push((format!("encoder.{i}.b"), &mut l.b));
                }
            }
        }
        out.push(("projection.w1".to_owned(), &mut self.projection.w1));
        out.push(("projection.b1".to_owned(), &mut self.projection.b1));
        out.push(("projection.w2".to_owned(), &mut self.projection.w2));
        out.push(("projection.b2".to_owned(), &mut self.projection.b2));
        out.push(("decoder.w1".to_owned(), &mut self.decoder.w1));
        out.push(("decoder.b1".to_owned(), &mut self.decoder.b1));
        out.push(("decoder.w2".to_owned(), &mut self.decoder.w2));
        out.push(("decoder.b2".to_owned(), &mut self.decoder.b2));
        out.push(("mask_token".to_owned(), &mut self.mask_token));
        out
    }

    /// Shapes in canonical order (for optimizer-state construction).
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.named().iter().map(|(_, m)| m.shape()).collect()
    }

    /// Mount every parameter onto `ctx` as a leaf, in canonical order.
    pub fn leaves(&self, ctx: &GradContext) -> ParamLeaves {
        let encoder = match &self.encoder {
            EncoderParams::Gin(layers) => EncoderLeaves::Gin(
                layers
                    .iter()
                    .map(|l| GinLayerLeaves {
                        w1: ctx.leaf(l.w1.clone()),
                        b1: ctx.leaf(l.b1.clone()),
                        w2: ctx.leaf(l.w2.clone()),
                        b2: ctx.leaf(l.b2.clone()),
                        eps: ctx.leaf(l.eps.clone()),
                    })
                    .collect(),
            ),
            EncoderParams::Gcn(layers) => EncoderLeaves::Gcn(
                layers
                    .iter()
                    .map(|l| GcnLayerLeaves { w: ctx.leaf(l.w.clone()), b: ctx.leaf(l.b.clone()) })
                    .collect(),
            ),
        };
        let mount_mlp = |m: &MlpParams| MlpLeaves {
            w1: ctx.leaf(m.w1.clone()),
            b1: ctx.leaf(m.b1.clone()),
            w2: ctx.leaf(m.w2.clone()),
            b2: ctx.leaf(m.b2.clone()),
        };
        ParamLeaves {
            encoder,
            projection: mount_mlp(&self.projection),
            decoder: mount_mlp(&self.decoder),
            mask_token: ctx.leaf(self.mask_token.clone()),
        }
    }
}

/// Tape handles for one GIN layer.
#[derive(Clone, Copy, Debug)]
pub struct GinLayerLeaves {
    pub w1: DiffArray,
    pub b1: DiffArray,
    pub w2: DiffArray,
    pub b2: DiffArray,
    pub eps: DiffArray,
}

/// Tape handles for one GCN layer.
#[derive(Clone, Copy, Debug)]
pub struct GcnLayerLeaves {
    pub w: DiffArray,
    pub b: DiffArray,
}

#[derive(Clone, Debug)]
pub enum EncoderLeaves {
    Gin(Vec<GinLayerLeaves>),
    Gcn(Vec<GcnLayerLeaves>),
}

/// Tape handles for a 2-layer MLP head.
#[derive(Clone, Copy, Debug)]
pub struct MlpLeaves {
    pub w1: DiffArray,
    pub b1: DiffArray,
    pub w2: DiffArray,
    pub b2: DiffArray,
}

/// All parameter leaves of one forward pass, in canonical order.
#[derive(Clone, Debug)]
pub struct ParamLeaves {
    pub encoder: EncoderLeaves,
    pub projection: MlpLeaves,
    pub decoder: MlpLeaves,
    pub mask_token: DiffArray,
}

impl ParamLeaves {
    /// Handles in the same order as [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<DiffArray> {
        let mut out = Vec::new();
        match &self.encoder {
            EncoderLeaves::Gin(layers) => {
                for l in layers {
                    out.extend([l.w1, l.b1, l.w2, l.b2, l.eps]);
                }
            }
            EncoderLeaves::Gcn(layers) => {
                for l in layers {
                    out.extend([l.w, l.b]);
                }
            }
        }
        for mlp in [&self.projection, &self.decoder] {
            out.extend([mlp.w1, mlp.b1, mlp.w2, mlp.b2]);
        }
        out.push(self.mask_token);
        out
    }
}

/// Per-node embeddings and their pooled graph-level counterparts, both on tape.
#[derive(Clone, Copy, Debug)]
pub struct Embeddings {
    /// (total_nodes × d_p) projected node embeddings.
    pub node_z: DiffArray,
    /// (graph_count × d_p) sum-pooled graph embeddings.
    pub graph_z: DiffArray,
}

/// Glorot-uniform initialized `rows × cols` weight matrix.
fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    m
}

/// Fresh parameters: Glorot-uniform weights, zero biases, ε = 0, zero mask
/// token. Deterministic per `(backbone, dims, seed)`.
pub fn init_params(backbone: Backbone, dims: ModelDims, seed: u64) -> ModelParams {
    assert!(
        dims.feature_dim >= 1 && dims.hidden_dim >= 1 && dims.proj_dim >= 1 && dims.layers >= 1,
        "all dims must be ≥ 1"
    );
    let mut rng = derive_rng(seed, Stream::Init, &[]);
    let (d, dh, dp) = (dims.feature_dim, dims.hidden_dim, dims.proj_dim);
    let encoder = match backbone {
        Backbone::Gin => EncoderParams::Gin(
            (0..dims.layers)
                .map(|i| {
                    let d_in = if i == 0 { d } else { dh };
                    let dm = dh;
                    GinLayerParams {
                        w1: glorot(d_in, dm, &mut rng),
                        b1: Matrix::zeros(1, dm),
                        w2: glorot(dm, dh, &mut rng),
                        b2: Matrix::zeros(1, dh),
                        eps: Matrix::zeros(1, 1),
                    }
                })
                .collect(),
        ),
        Backbone::Gcn => EncoderParams::Gcn(
            (0..dims.layers)
                .map(|i| {
                    let d_in = if i == 0 { d } else { dh };
                    GcnLayerParams { w: glorot(d_in, dh, &mut rng), b: Matrix::zeros(1, dh) }
                })
                .collect(),
        ),
    };
    ModelParams {
        dims,
        encoder,
        projection: MlpParams {
            w1: glorot(dh, dh, &mut rng),
            b1: Matrix::zeros(1, dh),
            w2: glorot(dh, dp, &mut rng),
            b2: Matrix::zeros(1, dp),
        },
        decoder: MlpParams {
            w1: glorot(dp, dh, &mut rng),
            b1: Matrix::zeros(1, dh),
            w2: glorot(dh, d, &mut rng),
            b2: Matrix::zeros(1, d),
        },
        mask_token: Matrix::zeros(1, d),
    }
}

/// Message-passing layout of one batch: directed arcs sorted by destination
/// plus the degree-derived GCN normalization coefficients.
#[derive(Clone, Debug)]
pub struct BatchTopology {
    pub total_nodes: usize,
    pub graph_count: usize,
    pub segments: Vec<usize>,
    /// Source node of each directed arc.
    pub arc_src: Vec<usize>,
    /// Destination of each directed arc; sorted non-decreasing.
    pub arc_dst: Vec<usize>,
    /// Per-arc `1/√(deg̃_src · deg̃_dst)` with `deg̃ = degree + 1`.
    pub gcn_arc_coeff: Vec<f64>,
    /// Per-node self-term coefficient `1/deg̃`.
    pub gcn_self_coeff: Vec<f64>,
}

impl BatchTopology {
    pub fn from_batch(batch: &GraphBatch) -> Self {
        let n = batch.total_nodes();
        let (arc_src, arc_dst) = batch.arcs_by_dst();
        let mut degree = vec![0usize; n];
        for &(u, v) in &batch.edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let deg_tilde: Vec<f64> = degree.iter().map(|&d| (d + 1) as f64).collect();
        let gcn_arc_coeff = arc_src
            .iter()
            .zip(&arc_dst)
            .map(|(&s, &d)| 1.0 / (deg_tilde[s] * deg_tilde[d]).sqrt())
            .collect();
        let gcn_self_coeff = deg_tilde.iter().map(|&d| 1.0 / d).collect();
        BatchTopology {
            total_nodes: n,
            graph_count: batch.graph_count,
            segments: batch.segments.clone(),
            arc_src,
            arc_dst,
            gcn_arc_coeff,
            gcn_self_coeff,
        }
    }
}

/// Column-broadcast a per-row coefficient vector into an `n × cols` constant.
fn broadcast_coeff(ctx: &GradContext, coeff: &[f64], cols: usize) -> DiffArray {
    let mut m = Matrix::zeros(coeff.len(), cols);
    for (r, &c) in coeff.iter().enumerate() {
        m.row_mut(r).fill(c);
    }
    ctx.constant(m)
}

/// Two-layer MLP: `relu(x·W1 + b1)·W2 + b2` (linear output).
fn mlp2(ctx: &GradContext, l: &MlpLeaves, x: DiffArray) -> Result<DiffArray, DiffError> {
    let h = ctx.relu(ctx.add(ctx.matmul(x, l.w1)?, l.b1)?);
    ctx.add(ctx.matmul(h, l.w2)?, l.b2)
}

/// One GIN layer on the tape.
pub fn gin_layer(
    ctx: &GradContext,
    l: &GinLayerLeaves,
    h: DiffArray,
    topo: &BatchTopology,
) -> Result<DiffArray, DiffError> {
    let gathered = ctx.gather_rows(h, &topo.arc_src)?;
    let neighbor_sum = ctx.segment_sum(gathered, &topo.arc_dst, topo.total_nodes)?;
    let one = ctx.constant(Matrix::from_vec(1, 1, vec![1.0]));
    let one_plus_eps = ctx.add(one, l.eps)?;
    let self_term = ctx.scale_dyn(h, one_plus_eps)?;
    let pre = ctx.add(self_term, neighbor_sum)?;
    let hidden = ctx.relu(ctx.add(ctx.matmul(pre, l.w1)?, l.b1)?);
    ctx.add(ctx.matmul(hidden, l.w2)?, l.b2)
}

/// One GCN layer on the tape (symmetric-normalized aggregation with implicit
/// self-loop, then a single linear map and ReLU).
pub fn gcn_layer(
    ctx: &GradContext,
    l: &GcnLayerLeaves,
    h: DiffArray,
    topo: &BatchTopology,
) -> Result<DiffArray, DiffError> {
    let gathered = ctx.gather_rows(h, &topo.arc_src)?;
    let weighted = ctx.mul(gathered, broadcast_coeff(ctx, &topo.gcn_arc_coeff, h.cols()))?;
    let neighbor_sum = ctx.segment_sum(weighted, &topo.arc_dst, topo.total_nodes)?;
    let self_term = ctx.mul(h, broadcast_coeff(ctx, &topo.gcn_self_coeff, h.cols()))?;
    let agg = ctx.add(neighbor_sum, self_term)?;
    Ok(ctx.relu(ctx.add(ctx.matmul(agg, l.w)?, l.b)?))
}

/// Run the full encoder stack, returning the final per-node hidden matrix
/// (total_nodes × d_h).
pub fn encode(
    ctx: &GradContext,
    encoder: &EncoderLeaves,
    x: DiffArray,
    topo: &BatchTopology,
) -> Result<DiffArray, DiffError> {
    let mut h = x;
    match encoder {
        EncoderLeaves::Gin(layers) => {
            for l in layers {
                h = gin_layer(ctx, l, h, topo)?;
            }
        }
        EncoderLeaves::Gcn(layers) => {
            for l in layers {
                h = gcn_layer(ctx, l, h, topo)?;
            }
        }
    }
    Ok(h)
}

/// Apply the projection head per node, then sum-pool per graph.
pub fn project(
    ctx: &GradContext,
    projection: &MlpLeaves,
    h: DiffArray,
    topo: &BatchTopology,
) -> Result<Embeddings, DiffError> {
    let node_z = mlp2(ctx, projection, h)?;
    let graph_z = ctx.segment_sum(node_z, &topo.segments, topo.graph_count)?;
    Ok(Embeddings { node_z, graph_z })
}

/// Reconstruct node features from projected node embeddings (linear output —
/// targets may be one-hot rows).
pub fn decode(
    ctx: &GradContext,
    decoder: &MlpLeaves,
    node_z: DiffArray,
) -> Result<DiffArray, DiffError> {
    mlp2(ctx, decoder, node_z)
}

/// Forward a batch through encoder + projection and return the pooled graph
/// embeddings as a plain matrix (forward only, no backward pass).
pub fn embed_batch(params: &ModelParams, batch: &GraphBatch) -> Result<Matrix, DiffError> {
    let ctx = GradContext::new();
    let leaves = params.leaves(&ctx);
    let topo = BatchTopology::from_batch(batch);
    let x = ctx.constant(batch.features.clone());
    let h = encode(&ctx, &leaves.encoder, x, &topo)?;
    let emb = project(&ctx, &leaves.projection, h, &topo)?;
    let graph_z = ctx.value(emb.graph_z).clone();
    Ok(graph_z)
}
