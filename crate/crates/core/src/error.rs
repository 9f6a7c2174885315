use thiserror::Error;

use crate::dsl::Diagnostic;
use crate::graph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports. Each variant maps to a stable code
/// (see [`Error::code`]) that the command-line front end prints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle: directed cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid graph: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),
    #[error("{}", format_diagnostics(.0))]
    Parse(Vec<Diagnostic>),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("cannot condition on latent node `{0}`")]
    LatentConditioning(String),
    #[error("graph is not fully observed: {0}")]
    NotFullyObserved(String),
    #[error("search too large: {0}")]
    SearchTooLarge(String),
    #[error("effect of {cause} on {outcome} is not identifiable: {reason}")]
    NotIdentifiable {
        cause: String,
        outcome: String,
        reason: String,
    },
    #[error("model declares no target effects")]
    NoTargets,
    #[error("missing edge {0} -> {1}")]
    MissingEdge(String, String),
    #[error("targets conflict: {0}")]
    ConflictingTargets(String),
    #[error("singular predictor covariance in equation for `{0}`")]
    SingularPredictors(String),
    #[error("too few samples: n = {n}, need more than {needed}")]
    TooFewSamples { n: usize, needed: usize },
    #[error("sample covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dataset has no column `{0}`")]
    MissingColumn(String),
    #[error("path model cannot contain {0}")]
    UnsupportedModel(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, `E0xx`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Cycle(_) => "E001",
            Error::UnknownNode(_) => "E002",
            Error::InvalidGraph(v) => v.first().map_or("E005", |v| v.code.code()),
            Error::Parse(d) => d.first().map_or("E010", |d| d.code.code()),
            Error::InvalidQuery(_) => "E011",
            Error::LatentConditioning(_) => "E012",
            Error::NotFullyObserved(_) => "E013",
            Error::SearchTooLarge(_) => "E014",
            Error::NotIdentifiable { .. } => "E020",
            Error::NoTargets => "E021",
            Error::MissingEdge(..) => "E022",
            Error::ConflictingTargets(_) => "E023",
            Error::SingularPredictors(_) => "E030",
            Error::TooFewSamples { .. } => "E031",
            Error::NotPositiveDefinite => "E032",
            Error::MissingColumn(_) => "E033",
            Error::UnsupportedModel(_) => "E034",
            Error::InvalidSweep(_) => "E040",
            Error::Data(_) => "E041",
            Error::Io(_) => "E050",
            Error::Csv(_) => "E051",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}
