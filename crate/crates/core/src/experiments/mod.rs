//! Downsampling studies: score distributions at fixed `n`, and the
//! MSE-versus-sample-size comparison of smoothing policies.

mod distribution;
mod io;
mod study;

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::confusion::{CellProbabilities, ConfusionMatrix};
use crate::error::{Error, Result};

pub use distribution::{score_distribution, DistMode, ScoreDistribution};
pub use io::{
    bundled_compas, format_sig, ingest_groups, parse_groups_csv, parse_groups_json,
    read_records, write_records, write_records_to, GroupFormat, EXAMPLE_STUDY_CONFIG,
    RECORD_HEADER,
};
pub use study::{run_study, NRange, StudyConfig, THREADS_ENV};

/// A named group, given as whole-group counts or as cell proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    #[serde(flatten)]
    pub cm: ConfusionMatrix,
}

impl GroupSpec {
    pub fn new(name: impl Into<String>, cm: ConfusionMatrix) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation {
                field: "name".into(),
                message: "group name is empty".into(),
            });
        }
        if cm.n() <= 0.0 {
            return Err(Error::Validation {
                field: "tp,fn,fp,tn".into(),
                message: format!("group {name:?} has no observations"),
            });
        }
        Ok(GroupSpec { name, cm })
    }

    pub fn probabilities(&self) -> CellProbabilities {
        self.cm
            .proportions()
            .expect("validated groups have positive mass")
    }

    /// Whether the group carries real counts rather than proportions.
    pub fn has_counts(&self) -> bool {
        self.cm.is_integral()
    }
}

/// How a sampled matrix is treated before the metric is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Policy {
    None,
    Additive { epsilon: f64 },
    Cps { lambda: f64 },
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        let (field, v) = match *self {
            Policy::None => return Ok(()),
            Policy::Additive { epsilon } => ("epsilon", epsilon),
            Policy::Cps { lambda } => ("lambda", lambda),
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(Error::Validation {
                field: field.into(),
                message: format!("{v} must be a finite non-negative number"),
            })
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::None => f.write_str("none"),
            Policy::Additive { epsilon } => write!(f, "additive({epsilon:e})"),
            Policy::Cps { lambda } => write!(f, "cps({lambda})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub group: String,
    pub metric: String,
    pub n: u64,
    pub policy: String,
    pub replicates: u64,
    /// `None` when every replicate was undefined.
    pub mse: Option<f64>,
    pub ci95_halfwidth: Option<f64>,
    pub undefined_rate: f64,
}

/// One multinomial draw of `n` items over the four cells, by sequential
/// conditional binomials.
pub fn sample_counts<R: Rng + ?Sized>(rng: &mut R, n: u64, p: &CellProbabilities) -> [u64; 4] {
    let p = p.as_array();
    let mut out = [0u64; 4];
    let mut left = n;
    let mut mass = 1.0;
    for i in 0..3 {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[i] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("q in (0, 1)").sample(rng)
        };
        out[i] = k;
        left -= k;
        mass -= p[i];
    }
    out[3] = left;
    out
}
