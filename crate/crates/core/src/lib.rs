//! Causal-graph-guided model reduction for linear structural models.
//!
//! Given a data-generating graph and the effects of interest, [`reduce`]
//! keeps only the variables needed to estimate those effects without bias.
//! [`sim`], [`fit`] and [`sweep`] simulate, estimate and compare the full
//! and reduced models.

pub mod ci;
pub mod dsl;
pub mod error;
pub mod fit;
pub mod fixtures;
pub mod graph;
pub mod reduce;
pub mod sim;
pub mod sweep;

pub use ci::{d_separated, implied_independencies, markov_blanket, CiStatement};
pub use dsl::{parse, parse_bytes, serialize, Diagnostic, DiagnosticCode, EffectKind, ModelFile, TargetEffect};
pub use error::{Error, Result};
pub use fit::{fit, target_metrics, FitResult, PathModel, TargetMetrics};
pub use graph::{CausalGraph, GraphSpec, NodeId, NodeIdx, NodeSet, Violation, ViolationCode};
pub use reduce::{
    adjustment_sets, is_backdoor_set, project, reduce, AdjustmentSet, ReduceOptions, ReducedModel, Regression,
    SearchLimits,
};
pub use sim::{fill_coefficients, population_covariance, simulate, true_effect, CoefficientAssignment, Dataset};
pub use sweep::{run_sweep, Sweep, SweepRow, SweepSpec, Variant, Variants};
