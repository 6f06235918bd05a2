use crate::ids::{LinkId, NodeId, PodId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown link `{link}` on node `{node}`")]
    UnknownLink { node: NodeId, link: LinkId },
    #[error("unknown pod `{0}`")]
    UnknownPod(PodId),
    #[error("pod `{0}` is already placed")]
    DuplicatePod(PodId),
    #[error("pod `{0}` is not placed on any node")]
    PodNotPlaced(PodId),
    #[error("node `{node}` has {free} mc free, pod `{pod}` requests {requested} mc")]
    InsufficientCapacity {
        node: NodeId,
        pod: PodId,
        requested: u32,
        free: u32,
    },
    #[error("node `{node}` has {free} MiB free, pod `{pod}` requests {requested} MiB")]
    InsufficientMemory {
        node: NodeId,
        pod: PodId,
        requested: u32,
        free: u32,
    },
    #[error("cpu usage {used} mc outside [0, {capacity}] on node `{node}`")]
    UtilizationOutOfRange {
        node: NodeId,
        used: f64,
        capacity: u32,
    },
    #[error("insufficient metric history for node `{node}` over [{from}, {to}]")]
    InsufficientHistory { node: NodeId, from: f64, to: f64 },
    #[error("inputs must be positive: {0}")]
    NonPositiveInput(&'static str),
    #[error("no feasible node for pod `{0}`")]
    NoFeasibleNode(PodId),
    #[error("energy increase denominator is zero or negative ({0})")]
    ZeroDenominator(f64),
    #[error("no run results to summarize")]
    EmptyResults,
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
