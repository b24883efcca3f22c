//! Stochastic graph augmentations (the view family for contrastive training)
//! and node-feature masking (the corruption for reconstruction training).
//!
//! All operations are pure functions of `(input, parameters, rng state)`:
//! feeding the same seeded RNG reproduces the output exactly. Callers that
//! parallelize across graphs must hand each graph its own derived stream (see
//! [`crate::seeding`]).

use std::collections::BTreeSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng;

use crate::data::Graph;
use crate::matrix::Matrix;

/// One augmentation family member with its strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentationKind {
    /// Remove ⌊ratio·n⌋ uniformly chosen nodes (always keeping at least one).
    NodeDropout(f64),
    /// Replace ⌊ratio·|E|⌋ uniformly chosen edges with fresh random edges.
    EdgePerturbation(f64),
    /// Zero the feature rows of ⌊ratio·n⌋ uniformly chosen nodes.
    AttributeMasking(f64),
    /// Keep a random-walk-grown subgraph of ⌈ratio·n⌉ nodes.
    Subgraph(f64),
}

impl AugmentationKind {
    pub fn ratio(&self) -> f64 {
        match *self {
            AugmentationKind::NodeDropout(r)
            | AugmentationKind::EdgePerturbation(r)
            | AugmentationKind::AttributeMasking(r)
            | AugmentationKind::Subgraph(r) => r,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AugmentationKind::NodeDropout(_) => "node_dropout",
            AugmentationKind::EdgePerturbation(_) => "edge_perturbation",
            AugmentationKind::AttributeMasking(_) => "attribute_masking",
            AugmentationKind::Subgraph(_) => "subgraph",
        }
    }
}

/// The default palette: all four augmentations at ratio 0.2.
pub fn default_palette() -> Vec<AugmentationKind> {
    vec![
        AugmentationKind::NodeDropout(0.2),
        AugmentationKind::EdgePerturbation(0.2),
        AugmentationKind::AttributeMasking(0.2),
        AugmentationKind::Subgraph(0.2),
    ]
}

/// Node-feature masking parameters. The token is a learnable row owned by the
/// model; this spec only borrows its current values.
#[derive(Clone, Copy, Debug)]
pub struct MaskSpec<'a> {
    /// Fraction of nodes to mask, in (0, 1]; the count rounds up, so at least
    /// one node is masked whenever the graph is non-empty.
    pub mask_rate: f64,
    /// Current mask-token values, length = feature dim.
    pub mask_token: &'a [f64],
}

/// Draw one augmentation uniformly from the configured palette.
///
/// Panics on an empty palette (config validation rejects that earlier).
pub fn sample_augmentation(palette: &[AugmentationKind], rng: &mut impl Rng) -> AugmentationKind {
    *palette.choose(rng).expect("augmentation palette must not be empty")
}

/// Apply `kind` to `g`.
pub fn apply(kind: AugmentationKind, g: &Graph, rng: &mut impl Rng) -> Graph {
    match kind {
        AugmentationKind::NodeDropout(r) => node_dropout(g, r, rng),
        AugmentationKind::EdgePerturbation(r) => edge_perturbation(g, r, rng),
        AugmentationKind::AttributeMasking(r) => attribute_masking(g, r, rng),
        AugmentationKind::Subgraph(r) => subgraph(g, r, rng),
    }
}

/// Keep a graph on the surviving (sorted) node subset: compact indices, keep
/// induced edges, slice feature rows.
fn induced(g: &Graph, keep_sorted: &[usize]) -> Graph {
    let mut new_index = vec![usize::MAX; g.num_nodes];
    for (new, &old) in keep_sorted.iter().enumerate() {
        new_index[old] = new;
    }
    let mut features = Matrix::zeros(keep_sorted.len(), g.feature_dim());
    for (new, &old) in keep_sorted.iter().enumerate() {
        features.row_mut(new).copy_from_slice(g.features.row(old));
    }
    let edges = g
        .edges
        .iter()
        .filter(|&&(u, v)| new_index[u] != usize::MAX && new_index[v] != usize::MAX)
        .map(|&(u, v)| (new_index[u], new_index[v]));
    Graph::new(keep_sorted.len(), edges, features, g.label).expect("induced subgraph is valid")
}

/// Remove ⌊ratio·num_nodes⌋ uniformly chosen nodes (never all), delete their
/// incident edges, and compact the remaining indices.
pub fn node_dropout(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    assert!((0.0..1.0).contains(&ratio), "ratio must be in [0,1)");
    let drop = ((ratio * g.num_nodes as f64).floor() as usize).min(g.num_nodes - 1);
    if drop == 0 {
        return g.clone();
    }
    let dropped: BTreeSet<usize> = index::sample(rng, g.num_nodes, drop).into_iter().collect();
    let keep: Vec<usize> = (0..g.num_nodes).filter(|n| !dropped.contains(n)).collect();
    induced(g, &keep)
}

/// Remove ⌊ratio·|E|⌋ uniformly chosen edges and add the same number of fresh
/// uniform edges (no duplicates, no self-loops, never re-adding a removed
/// edge). On graphs too dense to accept new edges the addition loop gives up
/// after 10·|E| rejected samples and the result keeps fewer edges.
pub fn edge_perturbation(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    assert!((0.0..1.0).contains(&ratio), "ratio must be in [0,1)");
    let remove = (ratio * g.edges.len() as f64).floor() as usize;
    if remove == 0 {
        return g.clone();
    }
    let removed_pos: BTreeSet<usize> =
        index::sample(rng, g.edges.len(), remove).into_iter().collect();
    let removed: BTreeSet<(usize, usize)> = removed_pos.iter().map(|&p| g.edges[p]).collect();
    let mut kept: BTreeSet<(usize, usize)> = g
        .edges
        .iter()
        .enumerate()
        .filter(|(p, _)| !removed_pos.contains(p))
        .map(|(_, &e)| e)
        .collect();

    let mut added = 0usize;
    let mut rejections = 0usize;
    let budget = 10 * g.edges.len();
    while added < remove && rejections < budget {
        let u = rng.random_range(0..g.num_nodes);
        let v = rng.random_range(0..g.num_nodes);
        if u == v {
            rejections += 1;
            continue;
        }
        let e = (u.min(v), u.max(v));
        if removed.contains(&e) || !kept.insert(e) {
            rejections += 1;
            continue;
        }
        added += 1;
    }

    Graph::new(g.num_nodes, kept, g.features.clone(), g.label).expect("perturbed graph is valid")
}

/// Zero the feature rows of ⌊ratio·num_nodes⌋ uniformly chosen nodes; topology
/// unchanged.
pub fn attribute_masking(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    assert!((0.0..1.0).contains(&ratio), "ratio must be in [0,1)");
    let count = (ratio * g.num_nodes as f64).floor() as usize;
    let mut out = g.clone();
    for node in index::sample(rng, g.num_nodes, count) {
        out.features.row_mut(node).fill(0.0);
    }
    out
}

/// Random-walk-induced subgraph: start at a uniform node and walk uniformly
/// over neighbors, collecting visited nodes, restarting at a uniform already-
/// visited node when the walk reaches a neighborless node, until ⌈ratio·n⌉
/// nodes are collected (exact on connected graphs) or the reachable component
/// is exhausted. Keeps induced edges and compacts indices.
pub fn subgraph(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Graph {
    assert!((0.0..1.0).contains(&ratio), "ratio must be in [0,1)");
    let target = ((ratio * g.num_nodes as f64).ceil() as usize).clamp(1, g.num_nodes);
    let adj = g.adjacency();
    let start = rng.random_range(0..g.num_nodes);
    let mut visited = BTreeSet::from([start]);
    let mut current = start;
    // The walk terminates with probability 1; the cap only guards pathological
    // topologies, in which case fewer nodes are returned.
    let mut steps_left = 10_000usize.saturating_mul(g.num_nodes);
    while visited.len() < target && steps_left > 0 {
        steps_left -= 1;
        if adj[current].is_empty() {
            // Stuck: restart somewhere we have already been — unless the whole
            // reachable region is consumed.
            let frontier_exists =
                visited.iter().any(|&v| adj[v].iter().any(|n| !visited.contains(n)));
            if !frontier_exists {
                break;
            }
            let all: Vec<usize> = visited.iter().copied().collect();
            current = *all.choose(rng).expect("visited set is non-empty");
            continue;
        }
        let next = *adj[current].choose(rng).expect("checked non-empty");
        visited.insert(next);
        current = next;
        if visited.len() >= target {
            break;
        }
        // If everything reachable from the visited set is already collected,
        // no further node can ever join: stop early (disconnected graphs).
        if adj[current].iter().all(|n| visited.contains(n))
            && !visited.iter().any(|&v| adj[v].iter().any(|n| !visited.contains(n)))
        {
            break;
        }
    }
    let keep: Vec<usize> = visited.into_iter().collect();
    induced(g, &keep)
}

/// Uniformly select ⌈mask_rate·num_nodes⌉ node indices (sorted ascending).
pub fn sample_mask_indices(num_nodes: usize, mask_rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    assert!(mask_rate > 0.0 && mask_rate <= 1.0, "mask_rate must be in (0,1]");
    let count = ((mask_rate * num_nodes as f64).ceil() as usize).clamp(1, num_nodes);
    let mut picked: Vec<usize> = index::sample(rng, num_nodes, count).into_iter().collect();
    picked.sort_unstable();
    picked
}

/// Produce the masked view: the feature rows of ⌈mask_rate·n⌉ uniform nodes are
/// replaced by the mask token; topology is untouched. Returns the masked node
/// indices (sorted) alongside the view.
pub fn feature_mask(g: &Graph, spec: MaskSpec<'_>, rng: &mut impl Rng) -> (Graph, Vec<usize>) {
    assert_eq!(spec.mask_token.len(), g.feature_dim(), "mask token width != feature dim");
    let picked = sample_mask_indices(g.num_nodes, spec.mask_rate, rng);
    let mut out = g.clone();
    for &node in &picked {
        out.features.row_mut(node).copy_from_slice(spec.mask_token);
    }
    (out, picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{derive_rng, Stream};
    use rand_chacha::ChaCha8Rng;

    fn rng(i: u64) -> ChaCha8Rng {
        derive_rng(1234, Stream::Augment, &[i])
    }

    fn ten_node_graph() -> Graph {
        // A cycle of 10 nodes plus a chord.
        let mut edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        edges.push((0, 5));
        let mut features = Matrix::zeros(10, 3);
        for n in 0..10 {
            features.set(n, n % 3, (n + 1) as f64);
        }
        Graph::new(10, edges, features, Some(0)).unwrap()
    }

    #[test]
    fn sampling_is_reproducible_and_roughly_uniform() {
        let palette = default_palette();
        let seq1: Vec<&str> =
            (0..20).map(|i| sample_augmentation(&palette, &mut rng(i)).name()).collect();
        let seq2: Vec<&str> =
            (0..20).map(|i| sample_augmentation(&palette, &mut rng(i)).name()).collect();
        assert_eq!(seq1, seq2);

        let mut counts = [0usize; 4];
        let mut r = rng(999);
        for _ in 0..10_000 {
            match sample_augmentation(&palette, &mut r) {
                AugmentationKind::NodeDropout(_) => counts[0] += 1,
                AugmentationKind::EdgePerturbation(_) => counts[1] += 1,
                AugmentationKind::AttributeMasking(_) => counts[2] += 1,
                AugmentationKind::Subgraph(_) => counts[3] += 1,
            }
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq} off uniform");
        }
    }

    #[test]
    fn singleton_palette_always_sampled() {
        let palette = [AugmentationKind::NodeDropout(0.2)];
        for i in 0..10 {
            assert_eq!(sample_augmentation(&palette, &mut rng(i)).name(), "node_dropout");
        }
    }

    #[test]
    fn node_dropout_counts() {
        let g = ten_node_graph();
        let out = node_dropout(&g, 0.2, &mut rng(0));
        assert_eq!(out.num_nodes, 8);
        assert_eq!(node_dropout(&g, 0.0, &mut rng(1)), g);
        let single = Graph::new(1, [], Matrix::zeros(1, 3), None).unwrap();
        assert_eq!(node_dropout(&single, 0.9, &mut rng(2)).num_nodes, 1);
    }

    #[test]
    fn node_dropout_slices_features() {
        let g = ten_node_graph();
        let out = node_dropout(&g, 0.3, &mut rng(3));
        assert_eq!(out.num_nodes, 7);
        // Every surviving row must exist verbatim in the original.
        for r in 0..out.num_nodes {
            let row = out.features.row(r);
            assert!((0..10).any(|orig| g.features.row(orig) == row));
        }
    }

    #[test]
    fn edge_perturbation_conserves_count_and_avoids_removed() {
        let g = ten_node_graph(); // 11 edges on 10 nodes: plenty of free pairs
        for i in 0..20 {
            let out = edge_perturbation(&g, 0.3, &mut rng(i));
            assert_eq!(out.num_nodes, g.num_nodes);
            assert_eq!(out.features, g.features);
            assert_eq!(out.edges.len(), g.edges.len());
            let before: BTreeSet<_> = g.edges.iter().collect();
            let after: BTreeSet<_> = out.edges.iter().collect();
            let differing = after.difference(&before).count();
            assert!(differing >= 1, "perturbation changed nothing");
        }
        assert_eq!(edge_perturbation(&g, 0.0, &mut rng(0)), g);
    }

    #[test]
    fn edge_perturbation_complete_graph_falls_back_to_removal() {
        let n = 5;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                edges.push((u, v));
            }
        }
        let g = Graph::new(n, edges, Matrix::zeros(n, 1), None).unwrap();
        let out = edge_perturbation(&g, 0.5, &mut rng(7));
        // 10 edges, 5 removed; nothing can be added on a complete graph.
        assert_eq!(out.edges.len(), 5);
    }

    #[test]
    fn attribute_masking_zeroes_exactly() {
        let g = ten_node_graph();
        let out = attribute_masking(&g, 0.5, &mut rng(4));
        assert_eq!(out.num_nodes, g.num_nodes);
        assert_eq!(out.edges, g.edges);
        let zero_rows = (0..10).filter(|&r| out.features.row(r).iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero_rows, 5);
        // Unmasked rows are bit-identical.
        for r in 0..10 {
            let row = out.features.row(r);
            if row.iter().any(|&v| v != 0.0) {
                assert_eq!(row, g.features.row(r));
            }
        }
        assert_eq!(attribute_masking(&g, 0.0, &mut rng(5)), g);
    }

    #[test]
    fn subgraph_exact_count_on_connected() {
        let g = ten_node_graph();
        for i in 0..20 {
            let out = subgraph(&g, 0.5, &mut rng(i));
            assert_eq!(out.num_nodes, 5);
        }
    }

    #[test]
    fn subgraph_on_path_keeps_an_adjacent_pair() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)], Matrix::zeros(4, 1), None).unwrap();
        let out = subgraph(&g, 0.5, &mut rng(11));
        assert_eq!(out.num_nodes, 2);
        assert_eq!(out.edges.len(), 1, "walked nodes must be adjacent in a path");
    }

    #[test]
    fn subgraph_confined_to_component() {
        // Two disconnected triangles; target of 5 can never leave one side.
        let g = Graph::new(
            6,
            [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)],
            Matrix::zeros(6, 1),
            None,
        )
        .unwrap();
        let out = subgraph(&g, 0.8, &mut rng(12));
        assert_eq!(out.num_nodes, 3, "walk cannot cross components");
    }

    #[test]
    fn feature_mask_counts_and_token() {
        let g = ten_node_graph();
        let token = vec![7.0, 8.0, 9.0];
        let spec = MaskSpec { mask_rate: 0.5, mask_token: &token };
        let (out, picked) = feature_mask(&g, spec, &mut rng(6));
        assert_eq!(picked.len(), 5);
        for &node in &picked {
            assert_eq!(out.features.row(node), token.as_slice());
        }
        for node in 0..10 {
            if !picked.contains(&node) {
                assert_eq!(out.features.row(node), g.features.row(node));
            }
        }

        // Rate 1.0 masks everything; ceil on 3 nodes at 0.5 masks 2.
        let (all, picked_all) =
            feature_mask(&g, MaskSpec { mask_rate: 1.0, mask_token: &token }, &mut rng(7));
        assert_eq!(picked_all.len(), 10);
        for node in 0..10 {
            assert_eq!(all.features.row(node), token.as_slice());
        }
        let tri = Graph::new(3, [(0, 1)], Matrix::zeros(3, 3), None).unwrap();
        let (_, picked3) =
            feature_mask(&tri, MaskSpec { mask_rate: 0.5, mask_token: &token }, &mut rng(8));
        assert_eq!(picked3.len(), 2);
    }

    #[test]
    fn determinism_same_stream_same_output() {
        let g = ten_node_graph();
        for kind in default_palette() {
            let a = apply(kind, &g, &mut rng(42));
            let b = apply(kind, &g, &mut rng(42));
            assert_eq!(a, b, "{} not deterministic", kind.name());
        }
    }
}
