//! Meta-evaluation of machine-translation metrics.
//!
//! The crate ingests human judgments and metric scores laid out as
//! `(segment, system)` matrices and measures how well each metric agrees with
//! the humans:
//!
//! * [`correlation`]: Pearson and Kendall τ_b, with No / Segment / System
//!   grouping, plus system-level pairwise accuracy.
//! * [`ties`]: pair classification, `acc_eq` and the ε tie-calibration search.
//! * [`significance`]: PERM-BOTH permutation tests and significance-cluster
//!   rankings aggregated over several tasks.
//! * [`sentinels`]: synthetic probe metrics (per-segment constants, noisy
//!   continuizations of discrete metrics, discretizers).
//! * [`experiments`]: tied-pair subsampling sweeps, held-out calibration,
//!   length-bias regression and metric-vs-metric correlation matrices.
//!
//! Missing scores are first-class: every operation only looks at keys where
//! all the scores it needs are present.

pub mod corpus;
pub mod correlation;
pub mod error;
pub mod experiments;
pub mod numfmt;
pub mod seeding;
pub mod sentinels;
pub mod significance;
pub mod ties;

pub use corpus::{AlignedPairVector, Dataset, KeySpace, MetricFlags, ScoreMatrix, SegmentId, SystemId};
pub use correlation::{Correlation, CorrelationValue, Grouping, Statistic};
pub use error::{Error, Result};
pub use ties::{CalibrationResult, Epsilon, Pair, PairScope, PairSet, TieCounts};
