//! Cross-Prior Smoothing: shrink a small group's confusion matrix toward a
//! reference group's cell proportions.
//!
//! With `c'` the normalized reference, each cell becomes
//! `alpha_c = c + lambda * c'_c`, and the posterior `alpha / sum(alpha)` is
//! scaled back to the group's own total so count-dependent metrics keep
//! their scale.

use log::warn;
use serde::Serialize;

use crate::confusion::{Cell, CellProbabilities, ConfusionMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Strengths at or above this tend to swamp the target group.
pub const LAMBDA_WARN_THRESHOLD: f64 = 40.0;

/// Reference groups smaller than this give a noisy prior.
pub const MIN_REFERENCE_TOTAL: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpsConfig {
    pub lambda: f64,
    /// Normalized reference proportions.
    pub reference: CellProbabilities,
}

impl CpsConfig {
    pub fn new(lambda: f64, reference: CellProbabilities) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Validation {
                field: "lambda".into(),
                message: format!("{lambda} must be a finite non-negative number"),
            });
        }
        if lambda >= LAMBDA_WARN_THRESHOLD {
            warn!("lambda = {lambda} is large; values of 5 to 20 usually work better");
        }
        Ok(CpsConfig { lambda, reference })
    }

    /// Reference given as raw counts; normalized here.
    pub fn from_counts(lambda: f64, reference: &ConfusionMatrix) -> Result<Self> {
        let p = reference
            .proportions()
            .ok_or_else(|| Error::domain("reference matrix is all zero"))?;
        Self::new(lambda, p)
    }
}

/// Smoothed matrix; cells are real-valued and sum to the input total.
pub fn smooth(cm: &ConfusionMatrix, config: &CpsConfig) -> Result<ConfusionMatrix> {
    let n = cm.n();
    if n <= 0.0 {
        return Err(Error::domain("cannot smooth an empty matrix"));
    }
    if config.lambda == 0.0 {
        return Ok(*cm);
    }
    let mut alpha = [0.0; 4];
    for c in Cell::ALL {
        alpha[c.index()] = cm.get(c) + config.lambda * config.reference.get(c);
    }
    let total: f64 = alpha.iter().sum();
    ConfusionMatrix::from_cells(alpha.map(|a| a / total * n))
}

/// Leave-one-out reference `total - group`, cellwise on counts.
pub fn reference_from_total(
    total: &ConfusionMatrix,
    group: &ConfusionMatrix,
) -> Result<ConfusionMatrix> {
    let reference = total.checked_sub(group)?;
    if reference.n() <= 0.0 {
        return Err(Error::domain("reference is empty once the group is removed"));
    }
    if reference.n() < MIN_REFERENCE_TOTAL {
        warn!(
            "reference group has only {} observations; at least {MIN_REFERENCE_TOTAL} is advisable",
            reference.n()
        );
    }
    Ok(reference)
}

/// Leave-one-out reference when both sides are known only as proportions
/// plus a group size: `(n_total * p_total - n_i * p_i) / (n_total - n_i)`.
pub fn reference_from_proportions(
    total: &CellProbabilities,
    n_total: f64,
    group: &CellProbabilities,
    n_group: f64,
) -> Result<CellProbabilities> {
    if !(n_total > n_group && n_group >= 0.0) {
        return Err(Error::domain(format!(
            "group size {n_group} must be below the total {n_total}"
        )));
    }
    let weighted = total.as_matrix().scaled(n_total);
    let removed = group.as_matrix().scaled(n_group);
    let rest = reference_from_total(&weighted, &removed)?;
    rest.proportions()
        .ok_or_else(|| Error::domain("reference is empty once the group is removed"))
}

/// `lambda / (n + lambda) * (p_ref - p)`.
pub fn theoretical_bias(p: f64, p_ref: f64, n: u64, lambda: f64) -> f64 {
    let n = n as f64;
    if lambda == 0.0 {
        return 0.0;
    }
    lambda / (n + lambda) * (p_ref - p)
}

/// `n p (1 - p) / (n + lambda)^2`.
pub fn theoretical_variance(p: f64, n: u64, lambda: f64) -> f64 {
    let n = n as f64;
    let d = n + lambda;
    if d == 0.0 {
        return 0.0;
    }
    n * p * (1.0 - p) / (d * d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorDiff {
    pub name: String,
    pub diffs: [f64; 4],
}

/// Absolute per-cell differences between each prior and the hidden group.
/// A missing prior stands for "no prior" and is compared as all zeros.
pub fn prior_comparison(
    hidden: &CellProbabilities,
    priors: &[(String, Option<CellProbabilities>)],
) -> Vec<PriorDiff> {
    priors
        .iter()
        .map(|(name, prior)| {
            let p = prior.map(|p| p.as_array()).unwrap_or([0.0; 4]);
            let h = hidden.as_array();
            PriorDiff {
                name: name.clone(),
                diffs: std::array::from_fn(|i| (p[i] - h[i]).abs()),
            }
        })
        .collect()
}
