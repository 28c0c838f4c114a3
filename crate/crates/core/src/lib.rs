//! Confusion-matrix spaces, classification metrics and their small-sample
//! behaviour: hole counting, the MATCH test, Cross-Prior Smoothing and the
//! downsampling studies.

pub mod confusion;
pub mod cps;
pub mod error;
pub mod experiments;
pub mod match_test;
pub mod metrics;
pub mod special;

pub use confusion::{
    enumerate_matrices, matrix_probability, space_cardinality, Cell, CellProbabilities,
    ConfusionMatrix, MatrixSpace,
};
pub use error::{Error, Result};
pub use match_test::{
    run_match, run_match_with, MatchOptions, MatchQuery, MatchResult, Method, MethodChoice,
    Observed,
};
pub use metrics::{evaluate, evaluate_pair, Family, HoleCount, MetricId, MetricResult};
pub use cps::{smooth, CpsConfig};
pub use experiments::{
    run_study, score_distribution, DistMode, ExperimentRecord, GroupSpec, Policy,
    ScoreDistribution, StudyConfig,
};
