//! Acyclic directed mixed graphs over named nodes.
//!
//! A [`CausalGraph`] always satisfies its invariants: it is only obtainable
//! by building a [`GraphSpec`], which is checked by [`validate`] first.
//! Bidirected edges `a <-> b` are stored as-is; separation queries treat each
//! one as `a <- u -> b` with a fresh unobserved `u`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node inside a [`CausalGraph`], in declaration order.
pub type NodeIdx = usize;

/// Default cap on graph size for operations that enumerate node subsets.
pub const DEFAULT_MAX_NODES: usize = 64;

/// A node name: non-empty, ASCII letters, digits and underscores.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if is_identifier(&name) {
            Ok(NodeId(name))
        } else {
            Err(Error::InvalidQuery(format!("`{name}` is not a valid node name")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        NodeId::new(s)
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// A set of nodes of one graph. Iteration follows declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(BTreeSet<NodeIdx>);

impl NodeSet {
    pub fn new() -> Self {
        NodeSet(BTreeSet::new())
    }

    pub fn singleton(v: NodeIdx) -> Self {
        NodeSet(BTreeSet::from([v]))
    }

    pub fn insert(&mut self, v: NodeIdx) -> bool {
        self.0.insert(v)
    }

    pub fn remove(&mut self, v: NodeIdx) -> bool {
        self.0.remove(&v)
    }

    pub fn contains(&self, v: NodeIdx) -> bool {
        self.0.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = NodeIdx> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        NodeSet(self.0.union(&other.0).copied().collect())
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        NodeSet(self.0.intersection(&other.0).copied().collect())
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        NodeSet(self.0.difference(&other.0).copied().collect())
    }

    pub fn is_disjoint(&self, other: &NodeSet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<NodeIdx> for NodeSet {
    fn from_iter<I: IntoIterator<Item = NodeIdx>>(iter: I) -> Self {
        NodeSet(iter.into_iter().collect())
    }
}

impl Extend<NodeIdx> for NodeSet {
    fn extend<I: IntoIterator<Item = NodeIdx>>(&mut self, iter: I) {
        self.0.extend(iter)
    }
}

impl IntoIterator for NodeSet {
    type Item = NodeIdx;
    type IntoIter = std::collections::btree_set::IntoIter<NodeIdx>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a NodeSet {
    type Item = NodeIdx;
    type IntoIter = std::iter::Copied<std::collections::btree_set::Iter<'a, NodeIdx>>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}

/// Machine-readable kind of a graph invariant violation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    CycleDetected,
    UnknownNode,
    DuplicateEdge,
    SelfLoop,
    InvalidName,
    DuplicateNode,
}

impl ViolationCode {
    pub fn code(self) -> &'static str {
        match self {
            ViolationCode::CycleDetected => "E001",
            ViolationCode::UnknownNode => "E002",
            ViolationCode::DuplicateEdge => "E003",
            ViolationCode::SelfLoop => "E004",
            ViolationCode::InvalidName => "E006",
            ViolationCode::DuplicateNode => "E007",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Unchecked graph description, by node name. Build it up, then call
/// [`validate`] or [`GraphSpec::build`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphSpec {
    pub nodes: Vec<String>,
    pub latent: Vec<String>,
    pub directed: Vec<(String, String)>,
    pub bidirected: Vec<(String, String)>,
}

impl GraphSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(mut self, name: &str) -> Self {
        self.nodes.push(name.to_string());
        self
    }

    pub fn nodes(mut self, names: &[&str]) -> Self {
        self.nodes.extend(names.iter().map(|s| s.to_string()));
        self
    }

    /// Flags an already declared node as unobserved.
    pub fn latent(mut self, name: &str) -> Self {
        self.latent.push(name.to_string());
        self
    }

    pub fn edge(mut self, tail: &str, head: &str) -> Self {
        self.directed.push((tail.to_string(), head.to_string()));
        self
    }

    pub fn bidirected(mut self, a: &str, b: &str) -> Self {
        self.bidirected.push((a.to_string(), b.to_string()));
        self
    }

    /// Declares every node mentioned by an edge, in order of first mention.
    pub fn chain_edges(mut self, edges: &[(&str, &str)]) -> Self {
        for &(a, b) in edges {
            for n in [a, b] {
                if !self.nodes.iter().any(|m| m == n) {
                    self.nodes.push(n.to_string());
                }
            }
            self.directed.push((a.to_string(), b.to_string()));
        }
        self
    }

    pub fn build(&self) -> Result<CausalGraph> {
        let violations = validate(self);
        if !violations.is_empty() {
            return Err(Error::InvalidGraph(violations));
        }
        let index: HashMap<String, NodeIdx> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let names = self.nodes.iter().map(|n| NodeId(n.clone())).collect();
        let mut latent = vec![false; self.nodes.len()];
        for l in &self.latent {
            latent[index[l]] = true;
        }
        let directed = self.directed.iter().map(|(a, b)| (index[a], index[b]));
        let bidirected = self.bidirected.iter().map(|(a, b)| (index[a], index[b]));
        Ok(CausalGraph::from_indexed(names, latent, directed, bidirected))
    }
}

/// Every invariant violation of `spec`. Empty means the spec builds.
pub fn validate(spec: &GraphSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut index: HashMap<&str, NodeIdx> = HashMap::new();
    for name in &spec.nodes {
        if !is_identifier(name) {
            out.push(Violation {
                code: ViolationCode::InvalidName,
                message: format!("`{name}` is not a valid node name"),
            });
        }
        if index.insert(name, index.len()).is_some() {
            out.push(Violation {
                code: ViolationCode::DuplicateNode,
                message: format!("node `{name}` declared twice"),
            });
        }
    }
    // Re-number after duplicates so indices stay dense.
    let index: HashMap<&str, NodeIdx> = {
        let mut seen = HashMap::new();
        for name in &spec.nodes {
            let next = seen.len();
            seen.entry(name.as_str()).or_insert(next);
        }
        seen
    };
    let unknown = |name: &str, out: &mut Vec<Violation>| {
        out.push(Violation {
            code: ViolationCode::UnknownNode,
            message: format!("unknown node `{name}`"),
        })
    };
    for l in &spec.latent {
        if !index.contains_key(l.as_str()) {
            unknown(l, &mut out);
        }
    }

    let mut directed = BTreeSet::new();
    for (a, b) in &spec.directed {
        let (ia, ib) = match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&ia), Some(&ib)) => (ia, ib),
            (ia, ib) => {
                if ia.is_none() {
                    unknown(a, &mut out);
                }
                if ib.is_none() {
                    unknown(b, &mut out);
                }
                continue;
            }
        };
        if ia == ib {
            out.push(Violation {
                code: ViolationCode::SelfLoop,
                message: format!("self-loop on `{a}`"),
            });
        } else if !directed.insert((ia, ib)) {
            out.push(Violation {
                code: ViolationCode::DuplicateEdge,
                message: format!("duplicate edge {a} -> {b}"),
            });
        }
    }
    let mut bidirected = BTreeSet::new();
    for (a, b) in &spec.bidirected {
        let (ia, ib) = match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&ia), Some(&ib)) => (ia, ib),
            (ia, ib) => {
                if ia.is_none() {
                    unknown(a, &mut out);
                }
                if ib.is_none() {
                    unknown(b, &mut out);
                }
                continue;
            }
        };
        if ia == ib {
            out.push(Violation {
                code: ViolationCode::SelfLoop,
                message: format!("self-loop on `{a}`"),
            });
        } else if !bidirected.insert((ia.min(ib), ia.max(ib))) {
            out.push(Violation {
                code: ViolationCode::DuplicateEdge,
                message: format!("duplicate edge {a} <-> {b}"),
            });
        }
    }

    let n = index.len();
    let mut children = vec![Vec::new(); n];
    for &(a, b) in &directed {
        children[a].push(b);
    }
    if let Some(cycle) = find_cycle(&children) {
        let mut names = vec![""; n];
        for (name, &i) in &index {
            names[i] = name;
        }
        let path: Vec<&str> = cycle.iter().map(|&i| names[i]).collect();
        out.push(Violation {
            code: ViolationCode::CycleDetected,
            message: format!("cycle: {}", path.join(" -> ")),
        });
    }
    out
}

/// Returns one directed cycle (first node repeated at the end), if any.
fn find_cycle(children: &[Vec<NodeIdx>]) -> Option<Vec<NodeIdx>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = children.len();
    let mut mark = vec![Mark::New; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = children[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Open;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    Mark::Open => {
                        let mut cycle = vec![v];
                        let mut u = v;
                        while u != w {
                            u = parent[u];
                            cycle.push(u);
                        }
                        cycle.reverse();
                        cycle.push(w);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// A validated acyclic directed mixed graph. Immutable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalGraph {
    names: Vec<NodeId>,
    index: HashMap<NodeId, NodeIdx>,
    latent: Vec<bool>,
    parents: Vec<Vec<NodeIdx>>,
    children: Vec<Vec<NodeIdx>>,
    siblings: Vec<Vec<NodeIdx>>,
    topo: Vec<NodeIdx>,
}

impl CausalGraph {
    /// Callers guarantee validity (acyclic, no duplicates, indices in range).
    pub(crate) fn from_indexed(
        names: Vec<NodeId>,
        latent: Vec<bool>,
        directed: impl IntoIterator<Item = (NodeIdx, NodeIdx)>,
        bidirected: impl IntoIterator<Item = (NodeIdx, NodeIdx)>,
    ) -> CausalGraph {
        let n = names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut siblings = vec![Vec::new(); n];
        for (a, b) in directed {
            children[a].push(b);
            parents[b].push(a);
        }
        for (a, b) in bidirected {
            siblings[a].push(b);
            siblings[b].push(a);
        }
        for list in parents
            .iter_mut()
            .chain(children.iter_mut())
            .chain(siblings.iter_mut())
        {
            list.sort_unstable();
            list.dedup();
        }
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let topo = kahn(&parents, &children).expect("validated graph is acyclic");
        CausalGraph {
            names,
            index,
            latent,
            parents,
            children,
            siblings,
            topo,
        }
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[NodeId] {
        &self.names
    }

    pub fn name(&self, v: NodeIdx) -> &str {
        self.names[v].as_str()
    }

    pub fn id(&self, v: NodeIdx) -> &NodeId {
        &self.names[v]
    }

    pub fn index(&self, name: &str) -> Result<NodeIdx> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    /// Resolves a list of names to a set.
    pub fn set<S: AsRef<str>>(&self, names: &[S]) -> Result<NodeSet> {
        names.iter().map(|n| self.index(n.as_ref())).collect()
    }

    pub fn set_names(&self, set: &NodeSet) -> Vec<&str> {
        set.iter().map(|v| self.name(v)).collect()
    }

    pub(crate) fn check_set(&self, set: &NodeSet) -> Result<()> {
        match set.iter().find(|&v| v >= self.node_count()) {
            Some(v) => Err(Error::UnknownNode(format!("#{v}"))),
            None => Ok(()),
        }
    }

    pub fn is_latent(&self, v: NodeIdx) -> bool {
        self.latent[v]
    }

    pub fn latent_nodes(&self) -> NodeSet {
        (0..self.node_count()).filter(|&v| self.latent[v]).collect()
    }

    pub fn observed_nodes(&self) -> NodeSet {
        (0..self.node_count()).filter(|&v| !self.latent[v]).collect()
    }

    pub fn all_nodes(&self) -> NodeSet {
        (0..self.node_count()).collect()
    }

    pub fn parents(&self, v: NodeIdx) -> &[NodeIdx] {
        &self.parents[v]
    }

    pub fn children(&self, v: NodeIdx) -> &[NodeIdx] {
        &self.children[v]
    }

    /// Nodes joined to `v` by a bidirected edge.
    pub fn siblings(&self, v: NodeIdx) -> &[NodeIdx] {
        &self.siblings[v]
    }

    pub fn has_edge(&self, tail: NodeIdx, head: NodeIdx) -> bool {
        self.children[tail].binary_search(&head).is_ok()
    }

    pub fn has_bidirected(&self, a: NodeIdx, b: NodeIdx) -> bool {
        self.siblings[a].binary_search(&b).is_ok()
    }

    /// Directed edges sorted by (tail, head) index.
    pub fn directed_edges(&self) -> impl Iterator<Item = (NodeIdx, NodeIdx)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(a, cs)| cs.iter().map(move |&b| (a, b)))
    }

    /// Bidirected edges as (smaller, larger) index pairs, sorted.
    pub fn bidirected_edges(&self) -> impl Iterator<Item = (NodeIdx, NodeIdx)> + '_ {
        self.siblings
            .iter()
            .enumerate()
            .flat_map(|(a, ss)| ss.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.directed_edges().count()
    }

    pub fn has_bidirected_edges(&self) -> bool {
        self.siblings.iter().any(|s| !s.is_empty())
    }

    /// Reflexive-transitive closure along parent links.
    pub fn ancestors(&self, s: &NodeSet) -> Result<NodeSet> {
        self.check_set(s)?;
        Ok(self.closure(s, |v| self.parents(v)))
    }

    /// Reflexive-transitive closure along child links.
    pub fn descendants(&self, s: &NodeSet) -> Result<NodeSet> {
        self.check_set(s)?;
        Ok(self.closure(s, |v| self.children(v)))
    }

    fn closure<'a>(&'a self, s: &NodeSet, next: impl Fn(NodeIdx) -> &'a [NodeIdx]) -> NodeSet {
        let mut seen = vec![false; self.node_count()];
        let mut stack: Vec<NodeIdx> = s.iter().collect();
        for &v in &stack {
            seen[v] = true;
        }
        while let Some(v) = stack.pop() {
            for &w in next(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..seen.len()).filter(|&v| seen[v]).collect()
    }

    /// Topological order with ties broken by declaration order.
    pub fn topological_order(&self) -> &[NodeIdx] {
        &self.topo
    }

    /// Position of each node in [`Self::topological_order`].
    pub fn topological_rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.node_count()];
        for (i, &v) in self.topo.iter().enumerate() {
            rank[v] = i;
        }
        rank
    }

    /// All simple directed paths from `x` to `y`, sorted lexicographically by
    /// node names.
    pub fn directed_paths(&self, x: NodeIdx, y: NodeIdx) -> Result<Vec<Vec<NodeIdx>>> {
        self.check_set(&NodeSet::from_iter([x, y]))?;
        let reach_y = self.ancestors(&NodeSet::singleton(y))?;
        let mut out = Vec::new();
        if !reach_y.contains(x) {
            return Ok(out);
        }
        let mut path = vec![x];
        self.extend_paths(&mut path, y, &reach_y, &mut out);
        out.sort_by(|p, q| {
            p.iter()
                .map(|&v| self.name(v))
                .cmp(q.iter().map(|&v| self.name(v)))
        });
        Ok(out)
    }

    fn extend_paths(
        &self,
        path: &mut Vec<NodeIdx>,
        y: NodeIdx,
        reach_y: &NodeSet,
        out: &mut Vec<Vec<NodeIdx>>,
    ) {
        let v = *path.last().unwrap();
        if v == y {
            out.push(path.clone());
            return;
        }
        // Acyclic, so a directed walk never revisits a node.
        for &w in self.children(v) {
            if reach_y.contains(w) {
                path.push(w);
                self.extend_paths(path, y, reach_y, out);
                path.pop();
            }
        }
    }

    /// Copy of the graph without the directed edges rejected by `keep`.
    pub fn filter_edges(&self, keep: impl Fn(NodeIdx, NodeIdx) -> bool) -> CausalGraph {
        let directed: Vec<_> = self.directed_edges().filter(|&(a, b)| keep(a, b)).collect();
        let bidirected: Vec<_> = self.bidirected_edges().collect();
        CausalGraph::from_indexed(self.names.clone(), self.latent.clone(), directed, bidirected)
    }

    /// Copy of the graph without any bidirected edges.
    pub fn without_bidirected(&self) -> CausalGraph {
        let directed: Vec<_> = self.directed_edges().collect();
        CausalGraph::from_indexed(self.names.clone(), self.latent.clone(), directed, [])
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            nodes: self.names.iter().map(|n| n.to_string()).collect(),
            latent: self
                .latent_nodes()
                .iter()
                .map(|v| self.name(v).to_string())
                .collect(),
            directed: self
                .directed_edges()
                .map(|(a, b)| (self.name(a).to_string(), self.name(b).to_string()))
                .collect(),
            bidirected: self
                .bidirected_edges()
                .map(|(a, b)| (self.name(a).to_string(), self.name(b).to_string()))
                .collect(),
        }
    }

    /// Fails when the graph exceeds `max_nodes`.
    pub(crate) fn check_size(&self, max_nodes: usize) -> Result<()> {
        if self.node_count() > max_nodes {
            Err(Error::SearchTooLarge(format!(
                "graph has {} nodes, limit is {max_nodes}",
                self.node_count()
            )))
        } else {
            Ok(())
        }
    }
}

fn kahn(parents: &[Vec<NodeIdx>], children: &[Vec<NodeIdx>]) -> Option<Vec<NodeIdx>> {
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<NodeIdx>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(v, _)| Reverse(v))
        .collect();
    let mut order = Vec::with_capacity(parents.len());
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &w in &children[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.push(Reverse(w));
            }
        }
    }
    (order.len() == parents.len()).then_some(order)
}

/// Topological order of an unchecked spec, or `None` if it cannot be built or
/// has a cycle.
pub fn topological_order(spec: &GraphSpec) -> Option<Vec<String>> {
    let g = spec.build().ok()?;
    Some(g.topo.iter().map(|&v| g.name(v).to_string()).collect())
}
