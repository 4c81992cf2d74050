use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty edgelist")]
    EmptyEdgelist,
    #[error("malformed edge item {item:?}: expected `X->Y`")]
    MalformedEdge { item: String },
    #[error("invalid node name {0:?}")]
    InvalidNodeName(String),
    #[error("duplicate edge {0}->{1}")]
    DuplicateEdge(String, String),
    #[error("cycle detected through node {0}")]
    Cycle(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} is both hidden and conditioned")]
    HiddenConditioned(String),
    #[error("node {node:?} carries role {role} and cannot be hidden")]
    RoleNodeHidden { node: String, role: String },
    #[error("roles must be distinct: {0:?} is used twice")]
    DuplicateRole(String),
    #[error("hidden node {0:?} has a parent; project the graph first")]
    HiddenWithParent(String),
    #[error("node {node:?} has cardinality {cardinality}; only binary nodes are supported")]
    NonBinary { node: String, cardinality: usize },
    #[error("node {0:?} is hidden and cannot appear in an event")]
    HiddenInEvent(String),
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("value {value} out of domain for node {node:?}")]
    ValueOutOfDomain { node: String, value: i64 },
    #[error("inconsistent event: {0}")]
    InconsistentEvent(String),
    #[error("conditioning on near-null event (denominator {0:e})")]
    NullConditioning(f64),
    #[error("unsupported constraint: {0}")]
    UnsupportedConstraint(String),
    #[error("metric {metric} requires role {role}")]
    MissingRole { metric: String, role: String },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("metric {0} is not observational")]
    NotObservational(String),
    #[error("zero-count conditioning cell for metric {0}")]
    ZeroCountCell(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("constraint {index} ({text:?}): {source}")]
    InConstraint { index: usize, text: String, source: Box<Error> },
    #[error("table error: {0}")]
    Table(String),
    #[error("delta {0} outside [0, 1]")]
    DeltaRange(f64),
    #[error("program is infeasible: {0}")]
    Infeasible(String),
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("division by zero in {0}")]
    DivisionByZero(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("simplex violation at coordinate {index}: value {value}")]
    SimplexViolation { index: usize, value: f64 },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("document error: {0}")]
    Document(String),
    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("cancelled")]
    Cancelled,
}

impl Error {
    /// Short machine-readable kind used in CLI/HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InConstraint { source, .. } => source.kind(),
            Error::EmptyEdgelist
            | Error::MalformedEdge { .. }
            | Error::InvalidNodeName(_)
            | Error::DuplicateEdge(..)
            | Error::Cycle(_)
            | Error::UnknownNode(_)
            | Error::HiddenConditioned(_)
            | Error::RoleNodeHidden { .. }
            | Error::DuplicateRole(_)
            | Error::HiddenWithParent(_)
            | Error::NonBinary { .. } => "graph",
            Error::HiddenInEvent(_)
            | Error::Syntax { .. }
            | Error::ValueOutOfDomain { .. }
            | Error::InconsistentEvent(_)
            | Error::UnsupportedConstraint(_) => "event",
            Error::NullConditioning(_) => "evaluation",
            Error::MissingRole { .. }
            | Error::UnknownMetric(_)
            | Error::NotObservational(_)
            | Error::ZeroCountCell(_) => "metric",
            Error::Config(_) => "config",
            Error::Table(_) => "table",
            Error::DeltaRange(_) | Error::Infeasible(_) | Error::Options(_) | Error::Cancelled => {
                "solver"
            }
            Error::DivisionByZero(_)
            | Error::InvalidDistribution(_)
            | Error::SimplexViolation { .. }
            | Error::Unreachable(_) => "oracle",
            Error::Document(_) | Error::HashMismatch { .. } | Error::SchemaVersion { .. } => {
                "document"
            }
        }
    }
}
