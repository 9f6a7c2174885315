//! Random graphs and a brute-force separation oracle shared by the
//! integration suites.
#![allow(dead_code)]

use markovprune::{CausalGraph, GraphSpec, NodeIdx, NodeSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_NODES: usize = 8;
pub const EDGE_PROB: f64 = 0.3;
pub const MAX_LATENT: usize = 2;

/// Random ADMG: 2..=8 nodes in a shuffled causal order, each pair joined
/// with probability 0.3 (bidirected one time in five, otherwise directed
/// along the order), and up to two nodes marked latent.
pub fn random_admg(seed: u64) -> CausalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=MAX_NODES);
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut spec = GraphSpec::new();
    for name in &names {
        spec = spec.node(name);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(EDGE_PROB) {
                let (a, b) = (&names[order[i]], &names[order[j]]);
                spec = if rng.random_bool(0.2) { spec.bidirected(a, b) } else { spec.edge(a, b) };
            }
        }
    }
    let latent = rng.random_range(0..=MAX_LATENT.min(n - 2));
    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(&mut rng);
    for &v in &pool[..latent] {
        spec = spec.latent(&names[v]);
    }
    spec.build().expect("random graph is valid")
}

/// Random DAG without latents or bidirected edges.
pub fn random_dag(seed: u64, max_nodes: usize, edge_prob: f64) -> CausalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut spec = GraphSpec::new();
    for name in &names {
        spec = spec.node(name);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(edge_prob) {
                spec = spec.edge(&names[order[i]], &names[order[j]]);
            }
        }
    }
    spec.build().expect("random DAG is valid")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    Tail,
    Arrow,
}

/// Edge list with endpoint marks: (u, v, mark at u, mark at v).
fn marked_edges(g: &CausalGraph) -> Vec<(NodeIdx, NodeIdx, Mark, Mark)> {
    let mut out = Vec::new();
    for (a, b) in g.directed_edges() {
        out.push((a, b, Mark::Tail, Mark::Arrow));
    }
    for (a, b) in g.bidirected_edges() {
        out.push((a, b, Mark::Arrow, Mark::Arrow));
    }
    out
}

/// Reflexive ancestors by plain search over the edge list.
pub fn brute_ancestors(g: &CausalGraph, z: &[NodeIdx]) -> Vec<bool> {
    let edges: Vec<(NodeIdx, NodeIdx)> = g.directed_edges().collect();
    let mut anc = vec![false; g.node_count()];
    let mut stack: Vec<NodeIdx> = z.to_vec();
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut anc[v], true) {
            continue;
        }
        stack.extend(edges.iter().filter(|e| e.1 == v).map(|e| e.0));
    }
    anc
}

/// Interior nodes of one simple path, each with whether it is a collider.
pub type PathShape = Vec<(NodeIdx, bool)>;

/// Every simple path between `x` and `y`, one entry per choice of edges.
pub fn all_paths(g: &CausalGraph, x: NodeIdx, y: NodeIdx) -> Vec<PathShape> {
    let edges = marked_edges(g);
    let mut adj: Vec<Vec<(NodeIdx, Mark, Mark)>> = vec![Vec::new(); g.node_count()];
    for &(u, v, mu, mv) in &edges {
        adj[u].push((v, mu, mv));
        adj[v].push((u, mv, mu));
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; g.node_count()];
    on_path[x] = true;
    // Stack of (node, mark at node of the edge we arrived by).
    fn walk(
        v: NodeIdx,
        arrived: Option<Mark>,
        y: NodeIdx,
        adj: &[Vec<(NodeIdx, Mark, Mark)>],
        on_path: &mut Vec<bool>,
        interior: &mut PathShape,
        out: &mut Vec<PathShape>,
    ) {
        for &(w, mark_here, mark_there) in &adj[v] {
            if on_path[w] {
                continue;
            }
            if let Some(a) = arrived {
                interior.push((v, a == Mark::Arrow && mark_here == Mark::Arrow));
            }
            if w == y {
                out.push(interior.clone());
            } else {
                on_path[w] = true;
                walk(w, Some(mark_there), y, adj, on_path, interior, out);
                on_path[w] = false;
            }
            if arrived.is_some() {
                interior.pop();
            }
        }
    }
    let mut interior = Vec::new();
    walk(x, None, y, &adj, &mut on_path, &mut interior, &mut out);
    out
}

/// Whether every path in `paths` is blocked by `z`.
pub fn brute_separated(g: &CausalGraph, paths: &[PathShape], z: &[NodeIdx]) -> bool {
    let anc = brute_ancestors(g, z);
    let in_z = |v: NodeIdx| z.contains(&v);
    paths.iter().all(|path| {
        path.iter()
            .any(|&(v, collider)| if collider { !anc[v] } else { in_z(v) })
    })
}

/// All subsets of `pool` with at most `k` members, smallest first.
pub fn subsets_up_to(pool: &[NodeIdx], k: usize) -> Vec<Vec<NodeIdx>> {
    let mut out = vec![Vec::new()];
    for size in 1..=k.min(pool.len()) {
        out.extend(itertools::Itertools::combinations(pool.iter().copied(), size));
    }
    out
}

pub fn set(nodes: &[NodeIdx]) -> NodeSet {
    nodes.iter().copied().collect()
}
