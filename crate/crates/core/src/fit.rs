//! Recursive linear path models: equationwise least-squares estimation,
//! likelihood-ratio fit statistics and effect tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde_json::{json, Map, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dsl::{EffectKind, TargetEffect};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, NodeId, NodeIdx};
use crate::sim::{total_effect, Dataset};

/// A fully observed DAG read as a path model: one free coefficient per
/// edge, one residual variance per endogenous node and a free covariance
/// block over the exogenous nodes.
#[derive(Clone, Debug)]
pub struct PathModel {
    graph: CausalGraph,
}

impl PathModel {
    pub fn new(graph: CausalGraph) -> Result<Self> {
        if !graph.latent_nodes().is_empty() {
            return Err(Error::UnsupportedModel("latent nodes".into()));
        }
        if graph.has_bidirected_edges() {
            return Err(Error::UnsupportedModel("correlated errors (bidirected edges)".into()));
        }
        Ok(PathModel { graph })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn exogenous(&self) -> Vec<NodeIdx> {
        (0..self.graph.node_count()).filter(|&v| self.graph.parents(v).is_empty()).collect()
    }

    pub fn endogenous(&self) -> Vec<NodeIdx> {
        (0..self.graph.node_count()).filter(|&v| !self.graph.parents(v).is_empty()).collect()
    }

    pub fn free_parameters(&self) -> usize {
        let k = self.exogenous().len();
        self.graph.edge_count() + self.endogenous().len() + k * (k + 1) / 2
    }

    pub fn df(&self) -> usize {
        let p = self.graph.node_count();
        p * (p + 1) / 2 - self.free_parameters()
    }
}

type Edge = (NodeId, NodeId);

/// Estimates and fit statistics of one path model on one dataset.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub graph: CausalGraph,
    pub estimates: BTreeMap<Edge, f64>,
    pub std_errors: BTreeMap<Edge, f64>,
    pub p_values: BTreeMap<Edge, f64>,
    pub chi2: f64,
    pub df: usize,
    /// Upper-tail probability of `chi2`; absent when `df = 0`.
    pub chi2_pvalue: Option<f64>,
    pub cfi: f64,
    pub rmsea: f64,
    pub n: usize,
    /// Node order of `implied_cov` and `sample_cov`: the graph's.
    pub implied_cov: DMatrix<f64>,
    pub sample_cov: DMatrix<f64>,
    pub baseline_chi2: f64,
    pub baseline_df: usize,
    /// Sampling covariance of each equation's coefficients, keyed by the
    /// equation's outcome; rows follow `graph.parents(outcome)`.
    pub coef_cov: BTreeMap<NodeIdx, DMatrix<f64>>,
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn two_sided(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * normal.cdf(-z.abs())).clamp(0.0, 1.0)
}

/// Fits `model` to the matching columns of `data`.
pub fn fit(model: &PathModel, data: &Dataset) -> Result<FitResult> {
    let g = &model.graph;
    let p = g.node_count();
    let n = data.n();
    let max_k = (0..p).map(|v| g.parents(v).len()).max().unwrap_or(0);
    if n <= max_k + 1 {
        return Err(Error::TooFewSamples { n, needed: max_k + 1 });
    }
    let s = data.covariance(g.names())?;
    let s_chol = Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite)?;

    let mut b = DMatrix::zeros(p, p);
    let mut omega = DMatrix::zeros(p, p);
    let mut estimates = BTreeMap::new();
    let mut std_errors = BTreeMap::new();
    let mut p_values = BTreeMap::new();
    let mut coef_cov = BTreeMap::new();

    for v in 0..p {
        let parents = g.parents(v);
        if parents.is_empty() {
            continue;
        }
        let k = parents.len();
        let s_pp = s.select_rows(parents).select_columns(parents);
        let s_pv = DVector::from_iterator(k, parents.iter().map(|&u| s[(u, v)]));
        let chol = Cholesky::new(s_pp).ok_or_else(|| Error::SingularPredictors(g.name(v).into()))?;
        let beta = chol.solve(&s_pv);
        let psi = (s[(v, v)] - s_pv.dot(&beta)).max(0.0);
        // Classical OLS: sigma^2 (X'X)^-1 with centred X, X'X = n S_pp.
        let sigma2 = psi * n as f64 / (n - k - 1) as f64;
        let cov = chol.inverse() * (sigma2 / n as f64);
        for (i, &u) in parents.iter().enumerate() {
            let key = (g.id(u).clone(), g.id(v).clone());
            let se = cov[(i, i)].sqrt();
            b[(v, u)] = beta[i];
            estimates.insert(key.clone(), beta[i]);
            std_errors.insert(key.clone(), se);
            p_values.insert(key, two_sided(beta[i] / se));
        }
        omega[(v, v)] = psi;
        coef_cov.insert(v, cov);
    }
    let exogenous = model.exogenous();
    for &a in &exogenous {
        for &c in &exogenous {
            omega[(a, c)] = s[(a, c)];
        }
    }

    let inv = (DMatrix::identity(p, p) - &b)
        .try_inverse()
        .expect("I - B is unit triangular under a topological order");
    let implied = &inv * omega * inv.transpose();
    let implied = (&implied + implied.transpose()) * 0.5;
    let implied_chol = Cholesky::new(implied.clone()).ok_or(Error::NotPositiveDefinite)?;

    let log_det_s = log_det(&s_chol);
    let trace = (&s * implied_chol.inverse()).trace();
    let discrepancy = log_det(&implied_chol) + trace - log_det_s - p as f64;
    let chi2 = ((n - 1) as f64 * discrepancy).max(0.0);
    let df = model.df();

    let baseline_chi2 =
        ((n - 1) as f64 * (s.diagonal().iter().map(|d| d.ln()).sum::<f64>() - log_det_s)).max(0.0);
    let baseline_df = p * (p - 1) / 2;

    let excess = (chi2 - df as f64).max(0.0);
    let denom = (baseline_chi2 - baseline_df as f64).max(chi2 - df as f64).max(0.0);
    let cfi = if denom > 0.0 { 1.0 - excess / denom } else { 1.0 };
    let rmsea = if df == 0 {
        0.0
    } else {
        (excess / (df as f64 * (n - 1) as f64)).sqrt()
    };
    let chi2_pvalue = (df > 0).then(|| {
        ChiSquared::new(df as f64)
            .expect("positive degrees of freedom")
            .sf(chi2)
    });

    Ok(FitResult {
        graph: g.clone(),
        estimates,
        std_errors,
        p_values,
        chi2,
        df,
        chi2_pvalue,
        cfi,
        rmsea,
        n,
        implied_cov: implied,
        sample_cov: s,
        baseline_chi2,
        baseline_df,
        coef_cov,
    })
}

fn edge_key((a, b): &Edge) -> String {
    format!("{a}->{b}")
}

impl FitResult {
    pub fn estimate(&self, tail: &str, head: &str) -> Option<f64> {
        let key = (NodeId::new(tail).ok()?, NodeId::new(head).ok()?);
        self.estimates.get(&key).copied()
    }

    fn coefficient(&self, tail: NodeIdx, head: NodeIdx) -> f64 {
        self.estimates
            .get(&(self.graph.id(tail).clone(), self.graph.id(head).clone()))
            .copied()
            .unwrap_or(0.0)
    }

    /// Sampling covariance of two coefficient estimates. Coefficients of
    /// different equations are uncorrelated in a recursive model.
    fn coefficient_covariance(&self, e1: (NodeIdx, NodeIdx), e2: (NodeIdx, NodeIdx)) -> f64 {
        if e1.1 != e2.1 {
            return 0.0;
        }
        let parents = self.graph.parents(e1.1);
        let i = parents.iter().position(|&u| u == e1.0);
        let j = parents.iter().position(|&u| u == e2.0);
        match (i, j, self.coef_cov.get(&e1.1)) {
            (Some(i), Some(j), Some(cov)) => cov[(i, j)],
            _ => 0.0,
        }
    }

    /// `key = value` lines.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "chi2 = {:.6}", self.chi2);
        let _ = writeln!(out, "df = {}", self.df);
        match self.chi2_pvalue {
            Some(pv) => {
                let _ = writeln!(out, "chi2_pvalue = {pv:.6}");
            }
            None => {
                let _ = writeln!(out, "chi2_pvalue = NA");
            }
        }
        let _ = writeln!(out, "cfi = {:.6}", self.cfi);
        let _ = writeln!(out, "rmsea = {:.6}", self.rmsea);
        for (edge, est) in &self.estimates {
            let key = edge_key(edge);
            let _ = writeln!(out, "estimate.{key} = {est:.6}");
            let _ = writeln!(out, "se.{key} = {:.6}", self.std_errors[edge]);
            let _ = writeln!(out, "p.{key} = {:.6}", self.p_values[edge]);
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let map = |m: &BTreeMap<Edge, f64>| -> Value {
            Value::Object(m.iter().map(|(e, v)| (edge_key(e), json!(v))).collect::<Map<_, _>>())
        };
        json!({
            "estimates": map(&self.estimates),
            "se": map(&self.std_errors),
            "p": map(&self.p_values),
            "chi2": self.chi2,
            "df": self.df,
            "chi2_pvalue": self.chi2_pvalue,
            "cfi": self.cfi,
            "rmsea": self.rmsea,
            "n": self.n,
        })
    }
}

/// Target estimate with its error against a known truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetMetrics {
    pub estimate: f64,
    pub std_error: f64,
    pub abs_error: f64,
    pub p_value: f64,
}

/// Estimates `target` from the fitted coefficients and tests it against
/// zero with a first-order delta-method standard error.
///
/// Total effects sum coefficient products over every directed path of the
/// fitted model (a single edge in a reduced model); mediation effects
/// multiply the chain's coefficients, plus the direct edge when partial.
pub fn target_metrics(fit: &FitResult, target: &TargetEffect, truth: f64) -> Result<TargetMetrics> {
    let g = &fit.graph;
    let cause = g.index(target.cause.as_str())?;
    let outcome = g.index(target.outcome.as_str())?;
    let coef = |a, b| fit.coefficient(a, b);

    // Partial derivative of the estimate with respect to each coefficient.
    let mut gradient: Vec<((NodeIdx, NodeIdx), f64)> = Vec::new();
    let estimate = match target.kind {
        EffectKind::Total => {
            let paths = g.directed_paths(cause, outcome)?;
            if paths.is_empty() {
                return Err(Error::MissingEdge(target.cause.to_string(), target.outcome.to_string()));
            }
            let on_path: std::collections::BTreeSet<(NodeIdx, NodeIdx)> = paths
                .iter()
                .flat_map(|p| p.windows(2).map(|w| (w[0], w[1])))
                .collect();
            for &(t, h) in &on_path {
                let d = total_effect(g, coef, cause, t) * total_effect(g, coef, h, outcome);
                gradient.push(((t, h), d));
            }
            total_effect(g, coef, cause, outcome)
        }
        EffectKind::Mediation => {
            let chain: Vec<NodeIdx> = target
                .chain()
                .iter()
                .map(|id| g.index(id.as_str()))
                .collect::<Result<_>>()?;
            let mut edges: Vec<(NodeIdx, NodeIdx)> = chain.windows(2).map(|w| (w[0], w[1])).collect();
            for &(a, b) in &edges {
                if !g.has_edge(a, b) {
                    return Err(Error::MissingEdge(g.name(a).into(), g.name(b).into()));
                }
            }
            let values: Vec<f64> = edges.iter().map(|&(a, b)| coef(a, b)).collect();
            let indirect: f64 = values.iter().product();
            for (i, &e) in edges.iter().enumerate() {
                let others: f64 = values
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, v)| v)
                    .product();
                gradient.push((e, others));
            }
            let mut estimate = indirect;
            if target.partial {
                if !g.has_edge(cause, outcome) {
                    return Err(Error::MissingEdge(target.cause.to_string(), target.outcome.to_string()));
                }
                estimate += coef(cause, outcome);
                edges.push((cause, outcome));
                gradient.push(((cause, outcome), 1.0));
            }
            estimate
        }
    };

    let mut variance = 0.0;
    for &(e1, d1) in &gradient {
        for &(e2, d2) in &gradient {
            variance += d1 * d2 * fit.coefficient_covariance(e1, e2);
        }
    }
    let std_error = variance.max(0.0).sqrt();
    let p_value = if std_error > 0.0 {
        two_sided(estimate / std_error)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(TargetMetrics {
        estimate,
        std_error,
        abs_error: (estimate - truth).abs(),
        p_value,
    })
}
