//! Monte-Carlo sweeps comparing the full and reduced model over sample sizes.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dsl::{ModelFile, TargetEffect};
use crate::error::{Error, Result};
use crate::fit::{fit, target_metrics, PathModel};
use crate::graph::CausalGraph;
use crate::reduce::{project, reduce, ReduceOptions};
use crate::sim::{fill_coefficients, simulate, true_effect, CoefficientAssignment};

pub const MIN_N: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Reduced,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Reduced => "reduced",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variants {
    Full,
    Reduced,
    #[default]
    Both,
}

impl Variants {
    fn list(self) -> &'static [Variant] {
        match self {
            Variants::Full => &[Variant::Full],
            Variants::Reduced => &[Variant::Reduced],
            Variants::Both => &[Variant::Full, Variant::Reduced],
        }
    }
}

/// Metric names in output order.
pub const METRICS: [&str; 5] = ["cfi", "chi2", "mae", "pvalue", "rmsea"];

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub model: ModelFile,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub variants: Variants,
}

impl SweepSpec {
    pub fn new(model: ModelFile, n_grid: Vec<usize>, reps: usize, seed: u64) -> Self {
        SweepSpec { model, n_grid, reps, seed, variants: Variants::Both }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::InvalidSweep("empty sample-size grid".into()));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < MIN_N) {
            return Err(Error::InvalidSweep(format!("sample size {n} is below {MIN_N}")));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSweep("sample sizes must be strictly increasing".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidSweep("reps must be at least 1".into()));
        }
        if self.model.targets.is_empty() {
            return Err(Error::NoTargets);
        }
        Ok(())
    }
}

/// Seed of replication `rep` at sample size `n`: the base seed offset by the
/// replication index in the low 32 bits and by `n` in the high bits.
pub fn replication_seed(seed: u64, n: usize, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64).wrapping_add((n as u64) << 32)
}

/// Parses `start:stop:step` (stop included when it lies on the grid) or a
/// comma-separated list.
pub fn parse_n_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidSweep(format!("bad sample-size grid `{text}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step == 0 || start > stop {
                return Err(bad());
            }
            Ok((start..=stop).step_by(step).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

/// Metrics of one fitted replication.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepMetrics {
    pub estimate: f64,
    pub chi2: f64,
    pub cfi: f64,
    pub rmsea: f64,
    pub mae: f64,
    pub pvalue: f64,
}

impl RepMetrics {
    fn get(&self, metric: &str) -> f64 {
        match metric {
            "cfi" => self.cfi,
            "chi2" => self.chi2,
            "mae" => self.mae,
            "pvalue" => self.pvalue,
            "rmsea" => self.rmsea,
            _ => unreachable!("unknown metric {metric}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication {
    pub n: usize,
    pub variant: Variant,
    pub rep: usize,
    /// The fit's error message when it failed.
    pub result: std::result::Result<RepMetrics, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub variant: Variant,
    pub metric: &'static str,
    /// NaN when any replication of this cell failed.
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
    pub failed: usize,
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub target: TargetEffect,
    pub truth: f64,
    pub assignment: CoefficientAssignment,
    pub full_model: CausalGraph,
    pub reduced_model: CausalGraph,
    /// The projected full model had bidirected edges that were dropped.
    pub full_misspecified: bool,
    pub replications: Vec<Replication>,
    pub rows: Vec<SweepRow>,
}

/// The DGP projected onto its observed nodes, with bidirected edges
/// dropped; the flag records whether any were.
pub fn full_model(graph: &CausalGraph) -> Result<(CausalGraph, bool)> {
    let projected = project(graph, &graph.observed_nodes())?;
    let misspecified = projected.has_bidirected_edges();
    Ok((projected.without_bidirected(), misspecified))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Six decimals, switching to scientific notation for small magnitudes.
fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || v.abs() >= 1e-4 {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Sweep> {
    spec.check()?;
    let model = &spec.model;
    let target = model.targets[0].clone();
    let reduced = reduce(model, &ReduceOptions::default())?;
    let (full, full_misspecified) = full_model(&model.graph)?;
    let assignment = fill_coefficients(model, spec.seed);
    let truth = true_effect(&model.graph, &assignment, &target)?;

    let models: Vec<(Variant, PathModel)> = spec
        .variants
        .list()
        .iter()
        .map(|&v| {
            let g = match v {
                Variant::Full => full.clone(),
                Variant::Reduced => reduced.graph.clone(),
            };
            PathModel::new(g).map(|m| (v, m))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.reps).map(move |rep| (n, rep)))
        .collect();
    let per_job: Vec<Result<Vec<Replication>>> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let data = simulate(&model.graph, &assignment, n, replication_seed(spec.seed, n, rep))?;
            Ok(models
                .iter()
                .map(|(variant, pm)| {
                    let result = fit(pm, &data)
                        .and_then(|f| {
                            let m = target_metrics(&f, &target, truth)?;
                            Ok(RepMetrics {
                                estimate: m.estimate,
                                chi2: f.chi2,
                                cfi: f.cfi,
                                rmsea: f.rmsea,
                                mae: m.abs_error,
                                pvalue: m.p_value,
                            })
                        })
                        .map_err(|e| format!("error[{}]: {e}", e.code()));
                    Replication { n, variant: *variant, rep, result }
                })
                .collect())
        })
        .collect();
    let mut replications = Vec::with_capacity(jobs.len() * models.len());
    for r in per_job {
        replications.extend(r?);
    }
    replications.sort_by_key(|r| (r.n, r.variant, r.rep));

    let mut rows = Vec::new();
    for &n in &spec.n_grid {
        for (variant, _) in &models {
            let cell: Vec<&Replication> = replications
                .iter()
                .filter(|r| r.n == n && r.variant == *variant)
                .collect();
            let ok: Vec<&RepMetrics> = cell.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let failed = cell.len() - ok.len();
            for metric in METRICS {
                let (mean, sd) = if failed > 0 {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_sd(&ok.iter().map(|m| m.get(metric)).collect::<Vec<_>>())
                };
                rows.push(SweepRow { n, variant: *variant, metric, mean, sd, reps: spec.reps, failed });
            }
        }
    }

    Ok(Sweep {
        target,
        truth,
        assignment,
        full_model: full,
        reduced_model: reduced.graph,
        full_misspecified,
        replications,
        rows,
    })
}

impl Sweep {
    pub fn row(&self, n: usize, variant: Variant, metric: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.variant == variant && r.metric == metric)
    }

    /// Mean target estimate over the successful replications of one cell.
    pub fn mean_estimate(&self, n: usize, variant: Variant) -> Option<f64> {
        let est: Vec<f64> = self
            .replications
            .iter()
            .filter(|r| r.n == n && r.variant == variant)
            .filter_map(|r| r.result.as_ref().ok().map(|m| m.estimate))
            .collect();
        (!est.is_empty()).then(|| est.iter().sum::<f64>() / est.len() as f64)
    }

    /// `n,variant,metric,mean,sd,reps`, one line per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["n", "variant", "metric", "mean", "sd", "reps"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.variant.to_string(),
                r.metric.to_string(),
                format_value(r.mean),
                format_value(r.sd),
                r.reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_n_grid("10:50:10").unwrap(), [10, 20, 30, 40, 50]);
        assert_eq!(parse_n_grid("10:55:10").unwrap(), [10, 20, 30, 40, 50]);
        assert_eq!(parse_n_grid("50,100,200").unwrap(), [50, 100, 200]);
        for bad in ["10:5:1", "10:20:0", "a:b:c", "1:2", ""] {
            assert!(parse_n_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn spec_validation() {
        let m = fixtures::load(fixtures::EX1);
        let bad = [
            SweepSpec::new(m.clone(), vec![], 1, 0),
            SweepSpec::new(m.clone(), vec![5], 1, 0),
            SweepSpec::new(m.clone(), vec![20, 20], 1, 0),
            SweepSpec::new(m.clone(), vec![20], 0, 0),
        ];
        for s in bad {
            assert!(matches!(s.check(), Err(Error::InvalidSweep(_))));
        }
        let mut no_target = m;
        no_target.targets.clear();
        assert!(matches!(SweepSpec::new(no_target, vec![20], 1, 0).check(), Err(Error::NoTargets)));
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let spec = SweepSpec::new(fixtures::load(fixtures::EX1), vec![20, 40], 3, 11);
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.rows.len(), 2 * 2 * 5);
        let text = String::from_utf8(ca).unwrap();
        let keys: Vec<String> = text
            .lines()
            .take(7)
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(
            keys,
            [
                "n,variant,metric",
                "20,full,cfi",
                "20,full,chi2",
                "20,full,mae",
                "20,full,pvalue",
                "20,full,rmsea",
                "20,reduced,cfi"
            ]
        );
        assert!(!a.full_misspecified);
    }

    #[test]
    fn single_rep_has_zero_sd() {
        let spec = SweepSpec::new(fixtures::load(fixtures::EX2_TOTAL), vec![30], 1, 2);
        let s = run_sweep(&spec).unwrap();
        assert!(s.rows.iter().all(|r| r.sd == 0.0 && r.reps == 1));
    }

    #[test]
    fn latent_confounding_flags_the_full_model() {
        let spec = SweepSpec::new(fixtures::load(fixtures::EX4), vec![30], 2, 2);
        let s = run_sweep(&spec).unwrap();
        assert!(s.full_misspecified);
        assert!(!s.full_model.has_bidirected_edges());
    }

    #[test]
    fn failed_cells_are_reported() {
        // Ten observations cannot fit an equation with nine predictors.
        let src = "A1 -> Y\nA2 -> Y\nA3 -> Y\nA4 -> Y\nA5 -> Y\nA6 -> Y\nA7 -> Y\nA8 -> Y\nX -> Y\n\
                   target total(X, Y)";
        let spec = SweepSpec::new(crate::dsl::parse(src).unwrap(), vec![10, 40], 2, 0);
        let s = run_sweep(&spec).unwrap();
        let r = s.row(10, Variant::Full, "chi2").unwrap();
        assert!(r.mean.is_nan() && r.failed == 2);
        assert!(s.row(10, Variant::Reduced, "chi2").unwrap().mean.is_finite());
        assert!(s.row(40, Variant::Full, "chi2").unwrap().mean.is_finite());
    }
}
