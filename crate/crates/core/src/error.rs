use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate key ({segment}, {system})")]
    DuplicateKey { path: PathBuf, line: usize, segment: String, system: String },
    #[error("{path}:{line}: key ({segment}, {system}) is not in the human score file")]
    KeyMismatch { path: PathBuf, line: usize, segment: String, system: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("no key has all required scores present")]
    EmptyAlignment,
    #[error("system {0} has no present scores")]
    EmptySystem(String),
    #[error("segment {0} has no present scores")]
    EmptySegment(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("need at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("every system pair is tied in the human scores")]
    NoUntiedPairs,
    #[error("correlation is undefined: zero variance")]
    ZeroVariance,
    #[error("every group was dropped (fewer than 2 aligned points)")]
    NoValidGroups,
    #[error("pair set is empty")]
    EmptyPairs,
    #[error("no p-value for ({better}, {worse})")]
    MissingPValue { better: String, worse: String },
    #[error("inconsistent metric sets: {0}")]
    InconsistentMetricSets(String),
    #[error("metric has {found} distinct values, more than the cap of {cap}")]
    NotDiscrete { found: usize, cap: usize },
    #[error("metric needs at least two distinct values to define a level gap")]
    ZeroGap,
    #[error("subsampling removed every pair")]
    AllPairsRemoved,
    #[error("split too small: {calibration} calibration / {test} test segments")]
    SplitTooSmall { calibration: usize, test: usize },
    #[error("x is constant")]
    ConstantX,
    #[error("candidate lengths are not available")]
    MissingLengths,
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for errors caused by the input data rather than by a degenerate
    /// computation on well-formed data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateKey { .. }
                | Error::KeyMismatch { .. }
                | Error::Io { .. }
                | Error::InvalidDataset(_)
                | Error::EmptyAlignment
                | Error::UnknownMetric(_)
                | Error::MissingLengths
                | Error::InconsistentMetricSets(_)
                | Error::MissingPValue { .. }
        )
    }
}
