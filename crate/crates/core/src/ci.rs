//! Separation queries: d-separation (m-separation when bidirected edges are
//! present), implied conditional independencies and Markov blankets.

use std::fmt;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, NodeIdx, NodeSet};

/// `left ⫫ right | given`, or its negation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CiStatement {
    pub left: NodeSet,
    pub right: NodeSet,
    pub given: NodeSet,
    pub independent: bool,
}

impl CiStatement {
    /// `X _||_ Y | Z1,Z2` (or `_|/|_` for a dependence).
    pub fn display<'a>(&'a self, graph: &'a CausalGraph) -> impl fmt::Display + 'a {
        StatementDisplay { stmt: self, graph }
    }
}

struct StatementDisplay<'a> {
    stmt: &'a CiStatement,
    graph: &'a CausalGraph,
}

impl fmt::Display for StatementDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.graph;
        let rel = if self.stmt.independent { "_||_" } else { "_|/|_" };
        write!(
            f,
            "{} {rel} {}",
            g.set_names(&self.stmt.left).join(","),
            g.set_names(&self.stmt.right).join(",")
        )?;
        if !self.stmt.given.is_empty() {
            write!(f, " | {}", g.set_names(&self.stmt.given).join(","))?;
        }
        Ok(())
    }
}

/// Whether every path between `a` and `b` is blocked by `z`.
///
/// Paths are walked in the mixed graph directly; a bidirected edge behaves
/// like `x <- u -> y` with an unobserved `u`, i.e. it carries arrowheads at
/// both ends. A collider is open iff it is an ancestor of (or in) `z`.
pub fn d_separated(graph: &CausalGraph, a: &NodeSet, b: &NodeSet, z: &NodeSet) -> Result<bool> {
    for s in [a, b, z] {
        graph.check_set(s)?;
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidQuery("separation needs non-empty node sets".into()));
    }
    if !a.is_disjoint(b) || !a.is_disjoint(z) || !b.is_disjoint(z) {
        return Err(Error::InvalidQuery("node sets must be pairwise disjoint".into()));
    }
    if let Some(v) = z.iter().find(|&v| graph.is_latent(v)) {
        return Err(Error::LatentConditioning(graph.name(v).to_string()));
    }
    Ok(separated(graph, a, b, z))
}

/// Unchecked core of [`d_separated`]; sets must be disjoint and valid.
pub(crate) fn separated(graph: &CausalGraph, a: &NodeSet, b: &NodeSet, z: &NodeSet) -> bool {
    !reachable(graph, a, z).iter().any(|v| b.contains(v))
}

/// Nodes connected to `a` by a path that is active given `z`.
fn reachable(graph: &CausalGraph, a: &NodeSet, z: &NodeSet) -> NodeSet {
    let n = graph.node_count();
    let mut in_z = vec![false; n];
    for v in z {
        in_z[v] = true;
    }
    // Colliders are open when they have a descendant in z.
    let mut opens_collider = vec![false; n];
    for v in graph.ancestors(z).expect("checked set") {
        opens_collider[v] = true;
    }

    // Visit state: arrived with an arrowhead into the node, or with a tail.
    let mut seen_head = vec![false; n];
    let mut seen_tail = vec![false; n];
    let mut reached = vec![false; n];
    #[derive(Clone, Copy)]
    enum Arrival {
        Start,
        Head,
        Tail,
    }
    let mut stack: Vec<(NodeIdx, Arrival)> = a.iter().map(|v| (v, Arrival::Start)).collect();
    while let Some((v, how)) = stack.pop() {
        reached[v] = true;
        // Leaving through a tail at v makes v a non-collider. Leaving through
        // an arrowhead makes it a collider iff we also arrived by one.
        let (via_tail, via_head) = match how {
            Arrival::Start => (true, true),
            Arrival::Tail => (!in_z[v], !in_z[v]),
            Arrival::Head => (!in_z[v], opens_collider[v]),
        };
        if via_tail {
            for &w in graph.children(v) {
                if !std::mem::replace(&mut seen_head[w], true) {
                    stack.push((w, Arrival::Head));
                }
            }
        }
        if via_head {
            for &w in graph.parents(v) {
                if !std::mem::replace(&mut seen_tail[w], true) {
                    stack.push((w, Arrival::Tail));
                }
            }
            for &w in graph.siblings(v) {
                if !std::mem::replace(&mut seen_head[w], true) {
                    stack.push((w, Arrival::Head));
                }
            }
        }
    }
    (0..n).filter(|&v| reached[v] && !a.contains(v)).collect()
}

/// Every pairwise independence `X ⫫ Y | Z` over observed nodes with
/// `|Z| <= max_conditioning` that the graph implies.
///
/// Ordered by the declaration index of `X`, then `Y`, then by size and
/// lexicographic index order of `Z`.
pub fn implied_independencies(graph: &CausalGraph, max_conditioning: usize) -> Vec<CiStatement> {
    let observed: Vec<NodeIdx> = graph.observed_nodes().iter().collect();
    let mut out = Vec::new();
    for (i, &x) in observed.iter().enumerate() {
        for &y in &observed[i + 1..] {
            let rest: Vec<NodeIdx> = observed.iter().copied().filter(|&v| v != x && v != y).collect();
            let (xs, ys) = (NodeSet::singleton(x), NodeSet::singleton(y));
            for k in 0..=max_conditioning.min(rest.len()) {
                for given in rest.iter().copied().combinations(k) {
                    let given: NodeSet = given.into_iter().collect();
                    if separated(graph, &xs, &ys, &given) {
                        out.push(CiStatement {
                            left: xs.clone(),
                            right: ys.clone(),
                            given,
                            independent: true,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Parents, children and co-parents of `s`, minus `s`.
///
/// Defined only for fully observed DAGs; project latent nodes out first.
pub fn markov_blanket(graph: &CausalGraph, s: &NodeSet) -> Result<NodeSet> {
    graph.check_set(s)?;
    if !graph.latent_nodes().is_empty() {
        return Err(Error::NotFullyObserved("graph has latent nodes".into()));
    }
    if graph.has_bidirected_edges() {
        return Err(Error::NotFullyObserved("graph has bidirected edges".into()));
    }
    let mut blanket = NodeSet::new();
    for v in s {
        blanket.extend(graph.parents(v).iter().copied());
        for &c in graph.children(v) {
            blanket.insert(c);
            blanket.extend(graph.parents(c).iter().copied());
        }
    }
    Ok(blanket.difference(s))
}
