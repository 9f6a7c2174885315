//! Latent projection, adjustment-set search and model reduction.
//!
//! [`reduce`] turns a full model plus its declared targets into the smallest
//! recursive model (and matching regression plan) whose coefficients still
//! identify every target, together with the list of observed variables that
//! no longer need to be measured.

use std::fmt::{self, Write as _};

use itertools::Itertools;
use serde::Serialize;

use crate::ci::separated;
use crate::dsl::{self, EffectKind, ModelFile, TargetEffect};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, NodeId, NodeIdx, NodeSet, DEFAULT_MAX_NODES};

/// Bounds on the exhaustive subset search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchLimits {
    /// Largest graph accepted by subset-enumerating operations.
    pub max_nodes: usize,
    /// Largest candidate pool enumerated (2^n subsets).
    pub max_candidates: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_nodes: DEFAULT_MAX_NODES,
            max_candidates: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AdjustmentSet {
    pub members: NodeSet,
    pub minimal: bool,
}

/// Latent projection of `graph` onto `keep`.
///
/// `a -> b` survives iff some directed path from `a` to `b` has only removed
/// interior nodes. `a <-> b` appears iff some collider-free path between them
/// has arrowheads at both ends and only removed interior nodes.
pub fn project(graph: &CausalGraph, keep: &NodeSet) -> Result<CausalGraph> {
    graph.check_set(keep)?;
    if keep.is_empty() {
        return Err(Error::InvalidQuery("projection needs at least one node to keep".into()));
    }
    if let Some(v) = keep.iter().find(|&v| graph.is_latent(v)) {
        return Err(Error::InvalidQuery(format!(
            "cannot keep latent node `{}`",
            graph.name(v)
        )));
    }
    let n = graph.node_count();
    let kept: Vec<NodeIdx> = keep.iter().collect();
    let mut new_index = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = i;
    }
    let removed = |v: NodeIdx| !keep.contains(v);

    // Removed nodes with a directed path into `a` through removed nodes only.
    let hidden_sources = |a: NodeIdx| -> NodeSet {
        let mut out = NodeSet::new();
        let mut stack: Vec<NodeIdx> = graph.parents(a).iter().copied().filter(|&w| removed(w)).collect();
        while let Some(w) = stack.pop() {
            if out.insert(w) {
                stack.extend(graph.parents(w).iter().copied().filter(|&u| removed(u)));
            }
        }
        out
    };
    let sources: Vec<NodeSet> = kept.iter().map(|&a| hidden_sources(a)).collect();

    let mut directed = Vec::new();
    for &a in &kept {
        let mut seen = vec![false; n];
        let mut stack = vec![a];
        while let Some(v) = stack.pop() {
            for &w in graph.children(v) {
                if std::mem::replace(&mut seen[w], true) {
                    continue;
                }
                if removed(w) {
                    stack.push(w);
                } else {
                    directed.push((new_index[a], new_index[w]));
                }
            }
        }
    }

    let mut bidirected = Vec::new();
    for (i, &a) in kept.iter().enumerate() {
        let ends_a = sources[i].union(&NodeSet::singleton(a));
        for (j, &b) in kept.iter().enumerate().skip(i + 1) {
            let ends_b = sources[j].union(&NodeSet::singleton(b));
            let common_source = !sources[i].is_disjoint(&sources[j]);
            let joined = common_source
                || ends_a
                    .iter()
                    .any(|s| graph.siblings(s).iter().any(|&t| ends_b.contains(t)));
            if joined {
                bidirected.push((i, j));
            }
        }
    }

    let names = kept.iter().map(|&v| graph.id(v).clone()).collect();
    Ok(CausalGraph::from_indexed(names, vec![false; kept.len()], directed, bidirected))
}

/// The graph with every edge out of `cause` removed.
pub fn backdoor_graph(graph: &CausalGraph, cause: NodeIdx) -> CausalGraph {
    graph.filter_edges(|a, _| a != cause)
}

/// Backdoor criterion: `z` holds no descendant of `cause` and blocks every
/// path between `cause` and `outcome` that starts with an edge into `cause`.
pub fn is_backdoor_set(graph: &CausalGraph, cause: NodeIdx, outcome: NodeIdx, z: &NodeSet) -> bool {
    let desc = graph.descendants(&NodeSet::singleton(cause)).expect("valid node");
    if !z.is_disjoint(&desc) || z.contains(outcome) || z.iter().any(|v| graph.is_latent(v)) {
        return false;
    }
    separated(
        &backdoor_graph(graph, cause),
        &NodeSet::singleton(cause),
        &NodeSet::singleton(outcome),
        z,
    )
}

/// All minimal backdoor adjustment sets for the effect of `cause` on
/// `outcome`, ordered by size and then by sorted member names.
pub fn adjustment_sets(graph: &CausalGraph, cause: NodeIdx, outcome: NodeIdx) -> Result<Vec<AdjustmentSet>> {
    adjustment_sets_with(graph, cause, outcome, &SearchLimits::default())
}

pub fn adjustment_sets_with(
    graph: &CausalGraph,
    cause: NodeIdx,
    outcome: NodeIdx,
    limits: &SearchLimits,
) -> Result<Vec<AdjustmentSet>> {
    graph.check_set(&NodeSet::from_iter([cause, outcome]))?;
    check_pair(graph, cause, outcome)?;
    graph.check_size(limits.max_nodes)?;
    let desc = graph.descendants(&NodeSet::singleton(cause))?;
    // Minimal separators lie inside the ancestral set of the endpoints.
    let relevant = backdoor_graph(graph, cause).ancestors(&NodeSet::from_iter([cause, outcome]))?;
    let candidates: Vec<NodeIdx> = relevant
        .iter()
        .filter(|&v| v != cause && v != outcome && !graph.is_latent(v) && !desc.contains(v))
        .collect();
    let sets = minimal_sets(graph, &candidates, limits, |z| {
        is_backdoor_set(graph, cause, outcome, z)
    })?;
    Ok(sets
        .into_iter()
        .map(|members| AdjustmentSet { members, minimal: true })
        .collect())
}

/// Criterion for estimating the coefficients of the edges `p -> outcome`
/// (`p` in `predictors`) by regressing `outcome` on `predictors ∪ z`: for
/// each `p`, the remaining predictors plus `z` separate `p` from `outcome`
/// once the edge `p -> outcome` is removed. Members of `z` must be observed
/// non-descendants of every predictor.
pub fn is_equation_set(graph: &CausalGraph, predictors: &NodeSet, outcome: NodeIdx, z: &NodeSet) -> bool {
    if z.contains(outcome) || !z.is_disjoint(predictors) || z.iter().any(|v| graph.is_latent(v)) {
        return false;
    }
    let desc = graph.descendants(predictors).expect("valid nodes");
    if !z.is_disjoint(&desc) {
        return false;
    }
    predictors.iter().all(|p| {
        if !graph.has_edge(p, outcome) {
            return false;
        }
        let cut = graph.filter_edges(|a, b| !(a == p && b == outcome));
        let mut given = predictors.union(z);
        given.remove(p);
        separated(&cut, &NodeSet::singleton(p), &NodeSet::singleton(outcome), &given)
    })
}

/// All minimal sets satisfying [`is_equation_set`], in canonical order.
pub fn equation_sets(
    graph: &CausalGraph,
    predictors: &NodeSet,
    outcome: NodeIdx,
    limits: &SearchLimits,
) -> Result<Vec<NodeSet>> {
    graph.check_set(predictors)?;
    graph.check_set(&NodeSet::singleton(outcome))?;
    graph.check_size(limits.max_nodes)?;
    let desc = graph.descendants(predictors)?;
    let relevant = graph.ancestors(&predictors.union(&NodeSet::singleton(outcome)))?;
    let candidates: Vec<NodeIdx> = relevant
        .iter()
        .filter(|&v| v != outcome && !graph.is_latent(v) && !desc.contains(v))
        .collect();
    minimal_sets(graph, &candidates, limits, |z| is_equation_set(graph, predictors, outcome, z))
}

fn check_pair(graph: &CausalGraph, cause: NodeIdx, outcome: NodeIdx) -> Result<()> {
    if cause == outcome {
        return Err(Error::InvalidQuery("cause and outcome must differ".into()));
    }
    for v in [cause, outcome] {
        if graph.is_latent(v) {
            return Err(Error::InvalidQuery(format!("`{}` is latent", graph.name(v))));
        }
    }
    Ok(())
}

/// Exhaustive search for inclusion-minimal subsets of `candidates` accepted
/// by `valid`, sorted by size then by sorted member names.
fn minimal_sets(
    graph: &CausalGraph,
    candidates: &[NodeIdx],
    limits: &SearchLimits,
    valid: impl Fn(&NodeSet) -> bool,
) -> Result<Vec<NodeSet>> {
    if candidates.len() > limits.max_candidates {
        return Err(Error::SearchTooLarge(format!(
            "{} candidate adjustment variables, limit is {}",
            candidates.len(),
            limits.max_candidates
        )));
    }
    let mut found: Vec<NodeSet> = Vec::new();
    for k in 0..=candidates.len() {
        let mut this_size = Vec::new();
        for combo in candidates.iter().copied().combinations(k) {
            let z: NodeSet = combo.into_iter().collect();
            if found.iter().any(|f| f.is_subset(&z)) {
                continue;
            }
            if valid(&z) {
                this_size.push(z);
            }
        }
        this_size.sort_by_cached_key(|z| sorted_names(graph, z));
        found.extend(this_size);
    }
    Ok(found)
}

fn sorted_names(graph: &CausalGraph, z: &NodeSet) -> Vec<String> {
    let mut names: Vec<String> = z.iter().map(|v| graph.name(v).to_string()).collect();
    names.sort();
    names
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReduceOptions {
    /// Also keep observed parents of each equation's outcome that are not
    /// descendants of any target cause, when doing so stays valid.
    pub keep_precision: bool,
    pub limits: SearchLimits,
}

/// One regression: `outcome ~ p1 + p2 + ...`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Regression {
    pub outcome: NodeId,
    pub predictors: Vec<NodeId>,
}

impl fmt::Display for Regression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preds: Vec<&str> = self.predictors.iter().map(NodeId::as_str).collect();
        write!(f, "{} ~ {}", self.outcome, preds.join(" + "))
    }
}

/// Adjustment chosen for one structural equation of a target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageAdjustment {
    pub outcome: NodeId,
    /// The target's own edges into `outcome`.
    pub predictors: Vec<NodeId>,
    pub adjustment: Vec<NodeId>,
    /// Extra precision variables (only with `keep_precision`).
    pub precision: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChosenAdjustment {
    pub target: TargetEffect,
    pub stages: Vec<StageAdjustment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedModel {
    /// Observed-only reduced graph.
    pub graph: CausalGraph,
    /// One regression per endogenous node, in topological order.
    pub regressions: Vec<Regression>,
    /// Observed variables of the original model that need not be collected.
    pub dropped: Vec<NodeId>,
    pub chosen_sets: Vec<ChosenAdjustment>,
    pub targets: Vec<TargetEffect>,
}

impl ReducedModel {
    /// The reduced model as a model file (graph and targets only).
    pub fn to_model_file(&self) -> ModelFile {
        let mut m = ModelFile::from_graph(self.graph.clone());
        m.targets = self.targets.clone();
        m
    }

    /// `outcome ~ predictors` lines.
    pub fn plan(&self) -> String {
        self.regressions.iter().map(|r| format!("{r}\n")).collect()
    }

    /// Model text followed by the regression plan and the dropped variables,
    /// both as comment blocks so the output still parses as a model.
    pub fn to_dgp(&self) -> String {
        let mut out = dsl::serialize(&self.to_model_file());
        out.push_str("\n# regression plan\n");
        for r in &self.regressions {
            writeln!(out, "#   {r}").unwrap();
        }
        writeln!(out, "# dropped: {}", self.dropped_list()).unwrap();
        out
    }

    /// Human-readable report: model, plan and dropped variables.
    pub fn report(&self) -> String {
        let mut out = dsl::serialize(&self.to_model_file());
        out.push_str("\n# regression plan\n");
        out.push_str(&self.plan());
        writeln!(out, "\n# dropped\n{}", self.dropped_list()).unwrap();
        out
    }

    fn dropped_list(&self) -> String {
        if self.dropped.is_empty() {
            "(none)".into()
        } else {
            self.dropped.iter().map(NodeId::as_str).join(", ")
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let g = &self.graph;
        serde_json::json!({
            "nodes": g.names(),
            "edges": g.directed_edges()
                .map(|(a, b)| [g.name(a), g.name(b)])
                .collect::<Vec<_>>(),
            "regressions": self.regressions.iter().map(|r| serde_json::json!({
                "outcome": r.outcome,
                "predictors": r.predictors,
                "formula": r.to_string(),
            })).collect::<Vec<_>>(),
            "dropped": self.dropped,
            "targets": self.chosen_sets,
        })
    }
}

/// One estimating equation of a target before adjustment is chosen.
struct Equation {
    outcome: NodeIdx,
    predictors: Vec<NodeIdx>,
    total: bool,
}

fn target_equations(graph: &CausalGraph, target: &TargetEffect) -> Result<Vec<Equation>> {
    let cause = graph.index(target.cause.as_str())?;
    let outcome = graph.index(target.outcome.as_str())?;
    if target.kind == EffectKind::Total {
        return Ok(vec![Equation { outcome, predictors: vec![cause], total: true }]);
    }
    let chain: Vec<NodeIdx> = target
        .chain()
        .into_iter()
        .map(|id| graph.index(id.as_str()))
        .collect::<Result<_>>()?;
    let mut edges: Vec<(NodeIdx, NodeIdx)> = chain.iter().copied().tuple_windows().collect();
    if target.partial {
        edges.push((cause, outcome));
    }
    for &(a, b) in &edges {
        if !graph.has_edge(a, b) {
            return Err(Error::MissingEdge(graph.name(a).into(), graph.name(b).into()));
        }
    }
    let mut eqs: Vec<Equation> = chain
        .iter()
        .copied()
        .tuple_windows()
        .map(|(a, b)| Equation { outcome: b, predictors: vec![a], total: false })
        .collect();
    if target.partial {
        eqs.last_mut().unwrap().predictors.insert(0, cause);
    }
    Ok(eqs)
}

/// Reduces `model` to the minimal structural model for its targets.
pub fn reduce(model: &ModelFile, options: &ReduceOptions) -> Result<ReducedModel> {
    let graph = &model.graph;
    if model.targets.is_empty() {
        return Err(Error::NoTargets);
    }
    let mut causes = NodeSet::new();
    for t in &model.targets {
        t.check(graph)?;
        causes.insert(graph.index(t.cause.as_str())?);
    }
    let cause_desc = graph.descendants(&causes)?;

    let mut order: Vec<NodeIdx> = Vec::new();
    let push = |v: NodeIdx, order: &mut Vec<NodeIdx>| {
        if !order.contains(&v) {
            order.push(v);
        }
    };
    let mut edges: Vec<(NodeIdx, NodeIdx)> = Vec::new();
    let mut chosen_sets = Vec::new();

    for target in &model.targets {
        for id in target.chain() {
            push(graph.index(id.as_str())?, &mut order);
        }
        let mut stages = Vec::new();
        for eq in target_equations(graph, target)? {
            let preds: NodeSet = eq.predictors.iter().copied().collect();
            let sets = if eq.total {
                adjustment_sets_with(graph, eq.predictors[0], eq.outcome, &options.limits)?
                    .into_iter()
                    .map(|s| s.members)
                    .collect()
            } else {
                equation_sets(graph, &preds, eq.outcome, &options.limits)?
            };
            let Some(mut z) = sets.into_iter().next() else {
                return Err(not_identifiable(graph, target, &eq));
            };
            let valid = |z: &NodeSet| {
                if eq.total {
                    is_backdoor_set(graph, eq.predictors[0], eq.outcome, z)
                } else {
                    is_equation_set(graph, &preds, eq.outcome, z)
                }
            };
            let adjustment = sorted_names(graph, &z);
            let mut precision = Vec::new();
            if options.keep_precision {
                for &p in graph.parents(eq.outcome) {
                    if graph.is_latent(p) || preds.contains(p) || z.contains(p) || cause_desc.contains(p) {
                        continue;
                    }
                    let mut grown = z.clone();
                    grown.insert(p);
                    if valid(&grown) {
                        z = grown;
                        precision.push(graph.name(p).to_string());
                    }
                }
            }
            for name in adjustment.iter().chain(&precision) {
                let v = graph.index(name)?;
                push(v, &mut order);
                edges.push((v, eq.outcome));
            }
            for &p in &eq.predictors {
                edges.push((p, eq.outcome));
            }
            stages.push(StageAdjustment {
                outcome: graph.id(eq.outcome).clone(),
                predictors: eq.predictors.iter().map(|&p| graph.id(p).clone()).collect(),
                adjustment: adjustment.iter().map(|n| NodeId::new(n.as_str())).collect::<Result<_>>()?,
                precision: precision.iter().map(|n| NodeId::new(n.as_str())).collect::<Result<_>>()?,
            });
        }
        chosen_sets.push(ChosenAdjustment { target: target.clone(), stages });
    }

    let mut spec = crate::graph::GraphSpec::new();
    for &v in &order {
        spec = spec.node(graph.name(v));
    }
    for (a, b) in edges.into_iter().unique() {
        spec = spec.edge(graph.name(a), graph.name(b));
    }
    let reduced = spec.build().map_err(|e| match e {
        Error::InvalidGraph(v) => Error::ConflictingTargets(
            v.iter().map(|v| v.message.clone()).join("; "),
        ),
        other => other,
    })?;

    let regressions = reduced
        .topological_order()
        .iter()
        .filter(|&&v| !reduced.parents(v).is_empty())
        .map(|&v| Regression {
            outcome: reduced.id(v).clone(),
            predictors: reduced.parents(v).iter().map(|&p| reduced.id(p).clone()).collect(),
        })
        .collect();
    let dropped = graph
        .observed_nodes()
        .iter()
        .filter(|&v| !order.contains(&v))
        .map(|v| graph.id(v).clone())
        .collect();

    Ok(ReducedModel {
        graph: reduced,
        regressions,
        dropped,
        chosen_sets,
        targets: model.targets.clone(),
    })
}

fn not_identifiable(graph: &CausalGraph, target: &TargetEffect, eq: &Equation) -> Error {
    let preds = eq.predictors.iter().map(|&p| graph.name(p)).join(", ");
    let reason = if eq.total {
        format!(
            "no set of observed variables satisfies the backdoor criterion for {preds} -> {}; \
             front-door and other identification strategies are not supported",
            graph.name(eq.outcome)
        )
    } else {
        format!(
            "no set of observed variables isolates the edges {preds} -> {} in its equation",
            graph.name(eq.outcome)
        )
    };
    Error::NotIdentifiable {
        cause: target.cause.to_string(),
        outcome: target.outcome.to_string(),
        reason,
    }
}
