//! Graph-classification datasets in the TUDataset text format: loading,
//! validation, degree-feature synthesis, block-diagonal batching, and k-fold
//! splitting.
//!
//! A dataset directory `<dir>` holds, for dataset `<name>`:
//!
//! * `<name>_A.txt` — one directed arc per line, `u, v`, 1-based global node ids;
//! * `<name>_graph_indicator.txt` — line `i` gives the 1-based graph id of node `i`;
//! * `<name>_graph_labels.txt` — one integer label per graph;
//! * `<name>_node_labels.txt` — optional, one integer label per node.
//!
//! Arc pairs `(u,v)`/`(v,u)` merge into a single undirected edge; asymmetric
//! arc lists are tolerated (each arc inserts its canonical edge into a set).
//! Self-loops are dropped and counted. Node labels one-hot encode into the
//! feature matrix; when the file is absent, features have width 0 and
//! [`GraphDataset::has_node_attributes`] is false — callers must synthesize
//! features (see [`synthesize_degree_features`]) before training.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::seeding::{derive_rng, Stream};

/// Errors from dataset loading, batching, and splitting.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {path}")]
    MissingFile { path: PathBuf },
    #[error("malformed dataset file {path} line {line}: {msg}")]
    MalformedDataset { path: PathBuf, line: usize, msg: String },
    #[error("cannot batch an empty graph list")]
    EmptyBatch,
    #[error("feature dimension mismatch in batch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid fold count k={k} for {n} items (need 2 ≤ k ≤ n)")]
    InvalidFoldCount { k: usize, n: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One undirected attributed graph.
///
/// Invariants (enforced by [`Graph::new`]): every edge endpoint is below
/// `num_nodes`; each undirected edge is stored exactly once as `(min, max)`;
/// `features` has one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub label: Option<usize>,
}

impl Graph {
    /// Validating constructor: canonicalizes edges to `(min, max)`, sorts and
    /// deduplicates them, rejects self-loops and out-of-range endpoints.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        label: Option<usize>,
    ) -> Result<Graph, DataError> {
        if num_nodes == 0 {
            return Err(DataError::InvalidGraph("graph must have at least one node".into()));
        }
        if features.rows() != num_nodes {
            return Err(DataError::InvalidGraph(format!(
                "feature rows {} != num_nodes {num_nodes}",
                features.rows()
            )));
        }
        let mut canon = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(DataError::InvalidGraph(format!("self-loop at node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(DataError::InvalidGraph(format!(
                    "edge ({u},{v}) exceeds num_nodes {num_nodes}"
                )));
            }
            canon.insert((u.min(v), u.max(v)));
        }
        Ok(Graph { num_nodes, edges: canon.into_iter().collect(), features, label })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Node degrees (each undirected edge contributes to both endpoints).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Adjacency lists, derived on demand.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }
}

/// An ordered collection of graphs sharing one feature space and label set.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// True when the source files carried node labels; false means features
    /// are empty (width 0) or synthesized.
    pub has_node_attributes: bool,
    /// Count of self-loop arcs dropped during parsing.
    pub self_loops_dropped: usize,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Labels of all graphs; panics if any graph is unlabeled.
    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label.expect("unlabeled graph")).collect()
    }
}

/// Block-diagonal packing of several graphs into one node/edge space.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    /// (Σ nodes) × d feature matrix, rows concatenated in graph order.
    pub features: Matrix,
    /// Edges with global (offset) node indices.
    pub edges: Vec<(usize, usize)>,
    /// Per-node graph id in `[0, graph_count)`; non-decreasing.
    pub segments: Vec<usize>,
    pub graph_count: usize,
    /// Prefix sums: node_offsets[i] is the first global node of graph i;
    /// node_offsets[graph_count] is the total node count.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn total_nodes(&self) -> usize {
        *self.node_offsets.last().unwrap_or(&0)
    }

    /// Directed arcs (both directions of every undirected edge), sorted by
    /// destination then source — the layout message passing consumes
    /// (gather by src, segment-sum by dst).
    pub fn arcs_by_dst(&self) -> (Vec<usize>, Vec<usize>) {
        let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v) in &self.edges {
            arcs.push((v, u)); // (dst, src)
            arcs.push((u, v));
        }
        arcs.sort_unstable();
        let dst = arcs.iter().map(|&(d, _)| d).collect();
        let src = arcs.iter().map(|&(_, s)| s).collect();
        (src, dst)
    }

    /// Reverse of [`batch`]: split back into per-graph `Graph`s (labels lost).
    pub fn unbatch(&self) -> Vec<Graph> {
        let mut graphs = Vec::with_capacity(self.graph_count);
        for g in 0..self.graph_count {
            let (start, end) = (self.node_offsets[g], self.node_offsets[g + 1]);
            let n = end - start;
            let mut features = Matrix::zeros(n, self.features.cols());
            for r in 0..n {
                features.row_mut(r).copy_from_slice(self.features.row(start + r));
            }
            let edges: Vec<(usize, usize)> = self
                .edges
                .iter()
                .filter(|&&(u, _)| u >= start && u < end)
                .map(|&(u, v)| (u - start, v - start))
                .collect();
            graphs.push(Graph::new(n, edges, features, None).expect("batch held a valid graph"));
        }
        graphs
    }
}

/// Deterministic k-fold assignment of `n` items.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub k: usize,
    /// Fold id in `[0, k)` per item.
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    /// Item indices held out by fold `fold`.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// Item indices used for training when `fold` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile { path: path.to_path_buf() }
        } else {
            DataError::Io(e)
        }
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn parse_int(path: &Path, line_no: usize, token: &str) -> Result<i64, DataError> {
    token.trim().parse().map_err(|_| DataError::MalformedDataset {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("expected an integer, found {token:?}"),
    })
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::MalformedDataset { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Load a dataset from TUDataset text files.
///
/// Indices in the returned dataset are 0-based; graph labels are remapped to
/// contiguous `0..num_classes` by sorted original value; node labels, when the
/// file exists, one-hot encode by rank among the sorted distinct values.
pub fn parse_tudataset(dir: &Path, name: &str) -> Result<GraphDataset, DataError> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    // Graph membership of every node.
    let ind_path = file("graph_indicator");
    let ind_lines = read_lines(&ind_path)?;
    if ind_lines.is_empty() {
        return Err(malformed(&ind_path, 1, "empty graph indicator"));
    }
    let mut graph_of_node = Vec::with_capacity(ind_lines.len());
    let mut num_graphs = 0usize;
    for (i, line) in ind_lines.iter().enumerate() {
        let gid = parse_int(&ind_path, i + 1, line)?;
        if gid < 1 {
            return Err(malformed(&ind_path, i + 1, format!("graph id {gid} < 1")));
        }
        let gid = gid as usize;
        num_graphs = num_graphs.max(gid);
        graph_of_node.push(gid - 1);
    }
    let mut nodes_per_graph = vec![0usize; num_graphs];
    let mut local_index = Vec::with_capacity(graph_of_node.len());
    for &g in &graph_of_node {
        local_index.push(nodes_per_graph[g]);
        nodes_per_graph[g] += 1;
    }
    if let Some(empty) = nodes_per_graph.iter().position(|&n| n == 0) {
        return Err(malformed(
            &ind_path,
            ind_lines.len(),
            format!("graph id {} never appears (ids must be contiguous)", empty + 1),
        ));
    }

    // Graph labels, remapped to 0-based contiguous classes.
    let lab_path = file("graph_labels");
    let lab_lines = read_lines(&lab_path)?;
    if lab_lines.len() != num_graphs {
        return Err(malformed(
            &lab_path,
            lab_lines.len(),
            format!("{} labels for {num_graphs} graphs", lab_lines.len()),
        ));
    }
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (i, line) in lab_lines.iter().enumerate() {
        raw_labels.push(parse_int(&lab_path, i + 1, line)?);
    }
    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_of = |raw: i64| distinct.iter().position(|&v| v == raw).unwrap();
    let labels: Vec<usize> = raw_labels.iter().map(|&r| class_of(r)).collect();

    // Node labels → one-hot features (optional file).
    let node_lab_path = file("node_labels");
    let (features_of_node, feature_dim, has_node_attributes) = match read_lines(&node_lab_path) {
        Ok(lines) => {
            if lines.len() != graph_of_node.len() {
                return Err(malformed(
                    &node_lab_path,
                    lines.len(),
                    format!("{} node labels for {} nodes", lines.len(), graph_of_node.len()),
                ));
            }
            let mut raw = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                raw.push(parse_int(&node_lab_path, i + 1, line)?);
            }
            let values: BTreeSet<i64> = raw.iter().copied().collect();
            let d = values.len();
            let rank_of = |v: i64| values.iter().position(|&x| x == v).unwrap();
            let ranks: Vec<usize> = raw.iter().map(|&v| rank_of(v)).collect();
            (Some(ranks), d, true)
        }
        Err(DataError::MissingFile { .. }) => (None, 0, false),
        Err(e) => return Err(e),
    };

    // Arcs: merge to undirected edges per graph, drop self-loops.
    let a_path = file("A");
    let a_lines = read_lines(&a_path)?;
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    let mut self_loops_dropped = 0usize;
    for (i, line) in a_lines.iter().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (u_tok, v_tok) = line.split_once(',').ok_or_else(|| {
            malformed(&a_path, line_no, format!("expected 'u, v', found {line:?}"))
        })?;
        let u = parse_int(&a_path, line_no, u_tok)?;
        let v = parse_int(&a_path, line_no, v_tok)?;
        if u < 1 || v < 1 {
            return Err(malformed(
                &a_path,
                line_no,
                format!("node ids must be ≥ 1, found {u}, {v}"),
            ));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if u >= graph_of_node.len() || v >= graph_of_node.len() {
            return Err(malformed(
                &a_path,
                line_no,
                format!(
                    "node id {} exceeds the {} indicator lines",
                    u.max(v) + 1,
                    graph_of_node.len()
                ),
            ));
        }
        if graph_of_node[u] != graph_of_node[v] {
            return Err(malformed(
                &a_path,
                line_no,
                format!(
                    "edge joins graph {} and graph {}",
                    graph_of_node[u] + 1,
                    graph_of_node[v] + 1
                ),
            ));
        }
        if u == v {
            self_loops_dropped += 1;
            continue;
        }
        let (lu, lv) = (local_index[u], local_index[v]);
        edge_sets[graph_of_node[u]].insert((lu.min(lv), lu.max(lv)));
    }

    // Assemble graphs in original id order.
    let mut node_ranks_per_graph: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    if let Some(ranks) = &features_of_node {
        for (node, &g) in graph_of_node.iter().enumerate() {
            node_ranks_per_graph[g].push(ranks[node]);
        }
    }
    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let n = nodes_per_graph[g];
        let features = if has_node_attributes {
            let mut x = Matrix::zeros(n, feature_dim);
            for (row, &rank) in node_ranks_per_graph[g].iter().enumerate() {
                x.set(row, rank, 1.0);
            }
            x
        } else {
            Matrix::zeros(n, 0)
        };
        graphs.push(
            Graph::new(n, edge_sets[g].iter().copied(), features, Some(labels[g]))
                .map_err(|e| malformed(&a_path, 0, e.to_string()))?,
        );
    }

    Ok(GraphDataset {
        name: name.to_owned(),
        graphs,
        num_classes: distinct.len(),
        feature_dim,
        has_node_attributes,
        self_loops_dropped,
    })
}

/// Write a dataset back out in TUDataset text form (the parser's inverse).
///
/// Node labels are emitted as the argmax of each one-hot feature row, so this
/// is lossless exactly for parser-produced or otherwise one-hot features; when
/// `has_node_attributes` is false no node-label file is written.
pub fn write_tudataset(ds: &GraphDataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let file = |suffix: &str| dir.join(format!("{}_{suffix}.txt", ds.name));
    let mut a = fs::File::create(file("A"))?;
    let mut ind = fs::File::create(file("graph_indicator"))?;
    let mut lab = fs::File::create(file("graph_labels"))?;
    let mut node_lab =
        if ds.has_node_attributes { Some(fs::File::create(file("node_labels"))?) } else { None };

    let mut base = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for &(u, v) in &g.edges {
            writeln!(a, "{}, {}", base + u + 1, base + v + 1)?;
            writeln!(a, "{}, {}", base + v + 1, base + u + 1)?;
        }
        for node in 0..g.num_nodes {
            writeln!(ind, "{}", gi + 1)?;
            if let Some(f) = node_lab.as_mut() {
                let row = g.features.row(node);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .map_or(0, |(i, _)| i);
                writeln!(f, "{argmax}")?;
            }
        }
        writeln!(lab, "{}", g.label.unwrap_or(0))?;
        base += g.num_nodes;
    }
    Ok(())
}

/// Replace all features with one-hot encodings of `min(degree, max_degree)`,
/// giving width `max_degree + 1`. The standard surrogate for datasets that
/// ship no node attributes.
pub fn synthesize_degree_features(ds: &GraphDataset, max_degree: usize) -> GraphDataset {
    assert!(max_degree >= 1, "max_degree must be ≥ 1");
    let d = max_degree + 1;
    let graphs = ds
        .graphs
        .iter()
        .map(|g| {
            let mut x = Matrix::zeros(g.num_nodes, d);
            for (node, deg) in g.degrees().into_iter().enumerate() {
                x.set(node, deg.min(max_degree), 1.0);
            }
            Graph { num_nodes: g.num_nodes, edges: g.edges.clone(), features: x, label: g.label }
        })
        .collect();
    GraphDataset { feature_dim: d, graphs, ..ds.clone() }
}

/// Pack graphs into one block-diagonal batch.
pub fn batch(graphs: &[Graph]) -> Result<GraphBatch, DataError> {
    let first = graphs.first().ok_or(DataError::EmptyBatch)?;
    let d = first.feature_dim();
    let total: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let mut features = Matrix::zeros(total, d);
    let mut edges = Vec::new();
    let mut segments = Vec::with_capacity(total);
    let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
    node_offsets.push(0);
    let mut base = 0usize;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(DataError::DimensionMismatch { expected: d, found: g.feature_dim() });
        }
        for r in 0..g.num_nodes {
            features.row_mut(base + r).copy_from_slice(g.features.row(r));
            segments.push(gi);
        }
        for &(u, v) in &g.edges {
            edges.push((base + u, base + v));
        }
        base += g.num_nodes;
        node_offsets.push(base);
    }
    Ok(GraphBatch { features, edges, segments, graph_count: graphs.len(), node_offsets })
}

/// Deterministic shuffled round-robin k-fold assignment.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit, DataError> {
    if k < 2 || k > n {
        return Err(DataError::InvalidFoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, Stream::Fold, &[n as u64, k as u64]));
    let mut assignments = vec![0usize; n];
    for (pos, &item) in order.iter().enumerate() {
        assignments[item] = pos % k;
    }
    Ok(FoldSplit { k, assignments })
}
