//! Linear-Gaussian simulation and analytic ground truth.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsl::{EffectKind, ModelFile, TargetEffect};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, NodeId, NodeIdx};

/// Range of |coefficient| for unset edges.
pub const COEF_RANGE: (f64, f64) = (0.3, 0.8);

/// Complete simulation parameters for one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientAssignment {
    pub coef: BTreeMap<(NodeId, NodeId), f64>,
    pub noise_sd: BTreeMap<NodeId, f64>,
    /// Loading of the shared standard-normal source behind each bidirected
    /// edge, applied to both endpoints. Keys are (earlier, later) in
    /// declaration order.
    pub shared: BTreeMap<(NodeId, NodeId), f64>,
}

impl CoefficientAssignment {
    pub fn edge(&self, graph: &CausalGraph, tail: NodeIdx, head: NodeIdx) -> f64 {
        self.coef
            .get(&(graph.id(tail).clone(), graph.id(head).clone()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn sd(&self, graph: &CausalGraph, v: NodeIdx) -> f64 {
        self.noise_sd.get(graph.id(v)).copied().unwrap_or(1.0)
    }

    fn shared_weight(&self, graph: &CausalGraph, a: NodeIdx, b: NodeIdx) -> f64 {
        self.shared
            .get(&(graph.id(a).clone(), graph.id(b).clone()))
            .copied()
            .unwrap_or(0.0)
    }
}

fn draw_coefficient(rng: &mut impl Rng) -> f64 {
    let magnitude = rng.random_range(COEF_RANGE.0..=COEF_RANGE.1);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Completes the model's parameters. Every directed edge (in (tail, head)
/// index order) and then every bidirected edge gets a draw from the seeded
/// generator, so fixing one coefficient in the model does not move the
/// others; values given in the model override the draws. Unset noise is 1.
pub fn fill_coefficients(model: &ModelFile, seed: u64) -> CoefficientAssignment {
    let g = &model.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = BTreeMap::new();
    for (a, b) in g.directed_edges() {
        let key = (g.id(a).clone(), g.id(b).clone());
        let drawn = draw_coefficient(&mut rng);
        let value = model.coefficients.get(&key).copied().unwrap_or(drawn);
        coef.insert(key, value);
    }
    let mut shared = BTreeMap::new();
    for (a, b) in g.bidirected_edges() {
        shared.insert((g.id(a).clone(), g.id(b).clone()), draw_coefficient(&mut rng));
    }
    let noise_sd = g
        .names()
        .iter()
        .map(|id| (id.clone(), model.noise_sd.get(id).copied().unwrap_or(1.0)))
        .collect();
    CoefficientAssignment { coef, noise_sd, shared }
}

/// Observed samples: one column per observed node, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<NodeId>,
    data: DMatrix<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<NodeId>, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != columns.len() {
            return Err(Error::Data(format!(
                "{} columns named, {} in data",
                columns.len(),
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset { columns, data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn columns(&self) -> &[NodeId] {
        &self.columns
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.as_str() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>> {
        Ok(self.data.column(self.column_index(name)?).into_owned())
    }

    /// Sample covariance (denominator n) of the named columns, in order.
    pub fn covariance<S: AsRef<str>>(&self, names: &[S]) -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n.as_ref()))
            .collect::<Result<_>>()?;
        let n = self.n() as f64;
        let means: Vec<f64> = idx.iter().map(|&j| self.data.column(j).sum() / n).collect();
        let k = idx.len();
        let mut cov = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let (ca, cb) = (self.data.column(idx[a]), self.data.column(idx[b]));
                let s: f64 = ca
                    .iter()
                    .zip(cb.iter())
                    .map(|(x, y)| (x - means[a]) * (y - means[b]))
                    .sum();
                cov[(a, b)] = s / n;
                cov[(b, a)] = s / n;
            }
        }
        Ok(cov)
    }

    /// Sample partial correlation of `x` and `y` given `given`.
    pub fn partial_correlation<S: AsRef<str>>(&self, x: &str, y: &str, given: &[S]) -> Result<f64> {
        let mut names: Vec<&str> = vec![x, y];
        names.extend(given.iter().map(|s| s.as_ref()));
        let cov = self.covariance(&names)?;
        let precision = cov.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        Ok(-precision[(0, 1)] / (precision[(0, 0)] * precision[(1, 1)]).sqrt())
    }

    /// CSV with a header row of node names and LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(self.columns.iter().map(NodeId::as_str))?;
        let mut row = Vec::with_capacity(self.columns.len());
        for i in 0..self.n() {
            row.clear();
            row.extend(self.data.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns = r
            .headers()?
            .iter()
            .map(|h| NodeId::new(h).map_err(|_| Error::Data(format!("bad column name `{h}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != columns.len() {
                return Err(Error::Data(format!("row {} has {} fields", i + 1, record.len())));
            }
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("row {}: `{field}` is not a number", i + 1)))?;
                values.push(v);
            }
            rows += 1;
        }
        let data = DMatrix::from_row_slice(rows, columns.len(), &values);
        Dataset::new(columns, data)
    }
}

/// Draws `n` samples. Shared sources of bidirected edges are drawn first (in
/// edge order), then each node's noise column in topological order; latent
/// columns are dropped from the output.
pub fn simulate(graph: &CausalGraph, assignment: &CoefficientAssignment, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidQuery("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal_column = |n: usize| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
    };

    let shared_sources: Vec<(NodeIdx, NodeIdx, f64, DVector<f64>)> = graph
        .bidirected_edges()
        .map(|(a, b)| (a, b, assignment.shared_weight(graph, a, b), normal_column(n)))
        .collect();

    let mut all = DMatrix::zeros(n, graph.node_count());
    for &v in graph.topological_order() {
        let mut col = normal_column(n) * assignment.sd(graph, v);
        for &p in graph.parents(v) {
            let beta = assignment.edge(graph, p, v);
            if beta != 0.0 {
                col.axpy(beta, &all.column(p), 1.0);
            }
        }
        for (a, b, w, source) in &shared_sources {
            if *a == v || *b == v {
                col.axpy(*w, source, 1.0);
            }
        }
        all.set_column(v, &col);
    }

    let observed: Vec<NodeIdx> = graph.observed_nodes().iter().collect();
    let data = all.select_columns(&observed);
    let columns = observed.iter().map(|&v| graph.id(v).clone()).collect();
    Dataset::new(columns, data)
}

/// Path-tracing value of a target: for total effects the sum over directed
/// paths of coefficient products; for mediation the product along the
/// declared chain, plus the direct edge when `partial`.
pub fn true_effect(graph: &CausalGraph, assignment: &CoefficientAssignment, target: &TargetEffect) -> Result<f64> {
    let cause = graph.index(target.cause.as_str())?;
    let outcome = graph.index(target.outcome.as_str())?;
    match target.kind {
        EffectKind::Total => Ok(total_effect(graph, |a, b| assignment.edge(graph, a, b), cause, outcome)),
        EffectKind::Mediation => {
            let chain: Vec<NodeIdx> = target
                .chain()
                .iter()
                .map(|id| graph.index(id.as_str()))
                .collect::<Result<_>>()?;
            let mut indirect = 1.0;
            for w in chain.windows(2) {
                if !graph.has_edge(w[0], w[1]) {
                    return Err(Error::MissingEdge(graph.name(w[0]).into(), graph.name(w[1]).into()));
                }
                indirect *= assignment.edge(graph, w[0], w[1]);
            }
            let direct = if target.partial {
                if !graph.has_edge(cause, outcome) {
                    return Err(Error::MissingEdge(target.cause.to_string(), target.outcome.to_string()));
                }
                assignment.edge(graph, cause, outcome)
            } else {
                0.0
            };
            Ok(indirect + direct)
        }
    }
}

/// Sum over directed paths `from -> ... -> to` of the product of `weight`
/// along each path, by dynamic programming over the topological order.
pub(crate) fn total_effect(
    graph: &CausalGraph,
    weight: impl Fn(NodeIdx, NodeIdx) -> f64,
    from: NodeIdx,
    to: NodeIdx,
) -> f64 {
    let mut effect = vec![0.0; graph.node_count()];
    effect[from] = 1.0;
    let rank = graph.topological_rank();
    for &v in graph.topological_order() {
        if rank[v] <= rank[from] {
            continue;
        }
        effect[v] = graph.parents(v).iter().map(|&p| effect[p] * weight(p, v)).sum();
    }
    effect[to]
}

/// Model-implied covariance of the observed nodes (declaration order):
/// `(I - B)^-1 Ω (I - B)^-T` over all nodes, then marginalised.
pub fn population_covariance(graph: &CausalGraph, assignment: &CoefficientAssignment) -> DMatrix<f64> {
    let n = graph.node_count();
    let mut b = DMatrix::zeros(n, n);
    for (tail, head) in graph.directed_edges() {
        b[(head, tail)] = assignment.edge(graph, tail, head);
    }
    let mut omega = DMatrix::zeros(n, n);
    for v in 0..n {
        omega[(v, v)] = assignment.sd(graph, v).powi(2);
    }
    for (a, c) in graph.bidirected_edges() {
        let w2 = assignment.shared_weight(graph, a, c).powi(2);
        omega[(a, a)] += w2;
        omega[(c, c)] += w2;
        omega[(a, c)] += w2;
        omega[(c, a)] += w2;
    }
    let inv = (DMatrix::identity(n, n) - b)
        .try_inverse()
        .expect("I - B is unit triangular under a topological order");
    let sigma = &inv * omega * inv.transpose();
    let observed: Vec<NodeIdx> = graph.observed_nodes().iter().collect();
    sigma.select_rows(&observed).select_columns(&observed)
}
