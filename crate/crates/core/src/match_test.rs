//! MATCH test: where an observed metric score falls in the score distribution
//! induced by a reference group's cell probabilities.
//!
//! Exact paths sum binomial / multinomial terms in log space. Binomial
//! metrics reduce to a binomial CDF, marginal benefit to a sum over the
//! trinomial `(FP, FN, TP+TN)`, and joint-ratio metrics to a binomial mixture
//! of binomial CDFs (`O(n^2)` terms). Approximate paths use the normal
//! distribution (binomial metrics, marginal benefit) or a beta posterior
//! (joint-ratio metrics).

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::confusion::{CellProbabilities, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::metrics::{Family, MetricId};
use crate::special::{
    normal_cdf, regularized_incomplete_beta, xlogy, LnFactorials, LogSum,
};

/// Upward nudge applied before flooring `score * n`, so a score that is an
/// exact ratio still counts its own lattice point.
pub const FLOOR_NUDGE: f64 = 1e-9;

/// `n` at or below which `auto` picks the exact path.
pub const AUTO_EXACT_MAX_N: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observed {
    Score(f64),
    Matrix(ConfusionMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchQuery {
    pub metric: MetricId,
    /// Target group size.
    pub n: u64,
    pub observed: Observed,
    pub reference: CellProbabilities,
}

impl MatchQuery {
    pub fn from_score(
        metric: MetricId,
        n: u64,
        score: f64,
        reference: CellProbabilities,
    ) -> Result<Self> {
        check_scope(metric)?;
        if n == 0 {
            return Err(Error::domain("target group size must be positive"));
        }
        let (lo, hi) = metric.range();
        if !(lo..=hi).contains(&score) {
            return Err(Error::domain(format!(
                "score {score} outside [{lo}, {hi}] for {metric}"
            )));
        }
        Ok(MatchQuery {
            metric,
            n,
            observed: Observed::Score(score),
            reference,
        })
    }

    /// Query from an observed integral matrix; `n` is its total.
    pub fn from_matrix(
        metric: MetricId,
        cm: ConfusionMatrix,
        reference: CellProbabilities,
    ) -> Result<Self> {
        check_scope(metric)?;
        let counts = integral_counts(&cm)?;
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::domain("observed matrix is empty"));
        }
        Ok(MatchQuery {
            metric,
            n,
            observed: Observed::Matrix(cm),
            reference,
        })
    }

    /// Observed score, computing it from the matrix when needed.
    pub fn score(&self) -> Result<f64> {
        match self.observed {
            Observed::Score(s) => Ok(s),
            Observed::Matrix(cm) => crate::metrics::evaluate(self.metric, &cm)?
                .value()
                .ok_or_else(|| {
                    Error::domain(format!("{} is undefined on the observed matrix", self.metric))
                }),
        }
    }
}

fn check_scope(metric: MetricId) -> Result<()> {
    if MetricId::MATCH_SET.contains(&metric) {
        Ok(())
    } else {
        Err(Error::UnsupportedMetric {
            metric: metric.name(),
            method: "MATCH",
        })
    }
}

fn integral_counts(cm: &ConfusionMatrix) -> Result<[u64; 4]> {
    cm.counts()
        .ok_or_else(|| Error::domain(format!("observed matrix {cm} is not integral")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "normal-approx")]
    NormalApprox,
    #[serde(rename = "beta-approx")]
    BetaApprox,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal-approx",
            Method::BetaApprox => "beta-approx",
        })
    }
}

/// Method requested by a caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Exact,
    Normal,
    Beta,
    /// Exact for `n <= 500`, otherwise the family's approximation.
    Auto,
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(MethodChoice::Exact),
            "normal" => Ok(MethodChoice::Normal),
            "beta" => Ok(MethodChoice::Beta),
            "auto" => Ok(MethodChoice::Auto),
            other => Err(Error::Parse {
                location: "method".into(),
                message: format!("unknown method {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `P(S <= S_obs)`; for joint-ratio metrics, conditional on the score
    /// being defined.
    pub p_leq: f64,
    pub method: Method,
    pub error_note: String,
    /// Joint-ratio exact path only: `P(S <= S_obs and S defined)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_leq_raw: Option<f64>,
    /// Exact paths only: `P(S = S_obs)` on the same scale as `p_leq`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_eq: Option<f64>,
}

impl MatchResult {
    fn new(p_leq: f64, method: Method, error_note: impl Into<String>) -> Self {
        MatchResult {
            p_leq: p_leq.clamp(0.0, 1.0),
            method,
            error_note: error_note.into(),
            p_leq_raw: None,
            p_eq: None,
        }
    }

    /// `2 * min(P(S <= s), P(S >= s))`, capped at 1. Needs `p_eq`, so it is
    /// only available on exact results.
    pub fn p_two_sided(&self) -> Option<f64> {
        let eq = self.p_eq?;
        let upper = 1.0 - self.p_leq + eq;
        Some((2.0 * self.p_leq.min(upper)).min(1.0))
    }
}

const EXACT_NOTE: &str = "exact summation in log space";

fn binomial_parameter(query: &MatchQuery) -> Result<f64> {
    let (a, b) = query
        .metric
        .binomial_cells()
        .ok_or(Error::UnsupportedMetric {
            metric: query.metric.name(),
            method: "binomial",
        })?;
    Ok((query.reference.get(a) + query.reference.get(b)).min(1.0))
}

/// Success count `k` for a binomial metric and whether the score sits on the
/// lattice `k / n`.
fn binomial_count(query: &MatchQuery) -> Result<(u64, bool)> {
    let (a, b) = query.metric.binomial_cells().ok_or(Error::UnsupportedMetric {
        metric: query.metric.name(),
        method: "binomial",
    })?;
    match query.observed {
        Observed::Matrix(cm) => {
            let c = integral_counts(&cm)?;
            Ok((c[a.index()] + c[b.index()], true))
        }
        Observed::Score(s) => {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::domain(format!("score {s} outside [0, 1]")));
            }
            let x = s * query.n as f64;
            let k = ((x + FLOOR_NUDGE).floor() as u64).min(query.n);
            Ok((k, (x - k as f64).abs() < FLOOR_NUDGE))
        }
    }
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let table = LnFactorials::new(n);
    binomial_cdf_with(&table, k, n, p)
}

fn binomial_ln_pmf(table: &LnFactorials, k: u64, n: u64, p: f64) -> f64 {
    table.ln_choose(n, k) + xlogy(k as f64, p) + xlogy((n - k) as f64, 1.0 - p)
}

fn binomial_cdf_with(table: &LnFactorials, k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let mut acc = LogSum::new();
    for f in 0..=k {
        acc.add(binomial_ln_pmf(table, f, n, p));
    }
    acc.value().min(1.0)
}

/// Exact binomial-metric MATCH probability.
pub fn binomial_cdf_exact(query: &MatchQuery) -> Result<MatchResult> {
    let p = binomial_parameter(query)?;
    let (k, on_lattice) = binomial_count(query)?;
    let n = query.n;
    let table = LnFactorials::new(n);
    let mut r = MatchResult::new(binomial_cdf_with(&table, k, n, p), Method::Exact, EXACT_NOTE);
    r.p_eq = Some(if on_lattice {
        binomial_ln_pmf(&table, k, n, p).exp()
    } else {
        0.0
    });
    Ok(r)
}

/// Normal approximation with continuity correction.
///
/// Fails unless `np >= 5` and `nq >= 5`; `force` skips the check.
pub fn binomial_cdf_normal(query: &MatchQuery, force: bool) -> Result<MatchResult> {
    let p = binomial_parameter(query)?;
    let (k, _) = binomial_count(query)?;
    let n = query.n as f64;
    let q = 1.0 - p;
    if !force && (n * p < 5.0 || n * q < 5.0) {
        return Err(Error::Applicability(format!(
            "np = {:.3}, nq = {:.3}; both must be >= 5",
            n * p,
            n * q
        )));
    }
    let sd = (n * p * q).sqrt();
    let mean = n * p;
    let x = k as f64 + 0.5;
    let p_leq = if sd == 0.0 {
        if x >= mean {
            1.0
        } else {
            0.0
        }
    } else {
        normal_cdf((x - mean) / sd)
    };
    Ok(MatchResult::new(
        p_leq,
        Method::NormalApprox,
        "normal approximation with continuity correction; Berry-Esseen error O(n^-1/2)",
    ))
}

/// `(p_plus, p_minus, p_zero)` = `(p_FP, p_FN, p_TP + p_TN)`.
fn trinomial(reference: &CellProbabilities) -> (f64, f64, f64) {
    (
        reference.fp(),
        reference.fn_(),
        (reference.tp() + reference.tn()).min(1.0),
    )
}

/// `S = FP - FN` bound for marginal benefit, and whether it is exact.
fn marginal_benefit_count(query: &MatchQuery, round: bool) -> Result<(i64, bool)> {
    match query.observed {
        Observed::Matrix(cm) => {
            let c = integral_counts(&cm)?;
            Ok((c[2] as i64 - c[1] as i64, true))
        }
        Observed::Score(b) => {
            if !(-1.0..=1.0).contains(&b) {
                return Err(Error::domain(format!("marginal benefit {b} outside [-1, 1]")));
            }
            let x = b * query.n as f64;
            let k = if round {
                x.round()
            } else {
                (x + FLOOR_NUDGE).floor()
            } as i64;
            Ok((k, (x - k as f64).abs() < FLOOR_NUDGE))
        }
    }
}

/// `ln P(S = k)` for `S = FP - FN` over `n` draws.
fn marginal_benefit_ln_pmf(
    table: &LnFactorials,
    n: u64,
    k: i64,
    (pp, pm, p0): (f64, f64, f64),
) -> f64 {
    let n_i = n as i64;
    let lo = 0.max(-k);
    let hi = (n_i - k).div_euclid(2);
    let mut acc = LogSum::new();
    let mut m = lo;
    while m <= hi {
        let plus = (k + m) as u64;
        let minus = m as u64;
        let zero = (n_i - k - 2 * m) as u64;
        let ln = table.get(n) - table.get(plus) - table.get(minus) - table.get(zero)
            + xlogy(plus as f64, pp)
            + xlogy(minus as f64, pm)
            + xlogy(zero as f64, p0);
        acc.add(ln);
        m += 1;
    }
    acc.ln()
}

/// Full PMF of `S = FP - FN`, indexed by `S + n`.
pub fn marginal_benefit_pmf(n: u64, reference: &CellProbabilities) -> Vec<f64> {
    let table = LnFactorials::new(n);
    let tri = trinomial(reference);
    let n_i = n as i64;
    (-n_i..=n_i)
        .map(|k| marginal_benefit_ln_pmf(&table, n, k, tri).exp())
        .collect()
}

/// Exact marginal-benefit MATCH probability.
pub fn marginal_benefit_cdf_exact(query: &MatchQuery) -> Result<MatchResult> {
    require(query, MetricId::MarginalBenefit)?;
    let (k_max, on_lattice) = marginal_benefit_count(query, false)?;
    let n = query.n;
    let n_i = n as i64;
    let table = LnFactorials::new(n);
    let tri = trinomial(&query.reference);
    let mut acc = LogSum::new();
    let mut last = f64::NEG_INFINITY;
    for k in -n_i..=k_max.min(n_i) {
        last = marginal_benefit_ln_pmf(&table, n, k, tri);
        acc.add(last);
    }
    let p_leq = if k_max >= n_i { 1.0 } else { acc.value() };
    let mut r = MatchResult::new(p_leq, Method::Exact, EXACT_NOTE);
    r.p_eq = Some(if on_lattice && k_max >= -n_i {
        last.exp()
    } else {
        0.0
    });
    Ok(r)
}

/// Normal approximation for marginal benefit.
///
/// Mean `n(p+ - p-)` and variance `n((p+ + p-) - (p+ - p-)^2)` for the sum
/// `FP - FN`. With zero variance the distribution is a point mass and the
/// step CDF is returned.
pub fn marginal_benefit_cdf_normal(query: &MatchQuery) -> Result<MatchResult> {
    require(query, MetricId::MarginalBenefit)?;
    let (diff, _) = marginal_benefit_count(query, true)?;
    let (pp, pm, _) = trinomial(&query.reference);
    let n = query.n as f64;
    let mu = pp - pm;
    let var = (pp + pm) - mu * mu;
    let diff = diff as f64;
    if var <= 1e-15 {
        let p = if diff >= n * mu - FLOOR_NUDGE { 1.0 } else { 0.0 };
        return Ok(MatchResult::new(
            p,
            Method::NormalApprox,
            "degenerate variance: marginal benefit is constant, step CDF",
        ));
    }
    let z = (diff - n * mu) / (n.sqrt() * var.sqrt());
    Ok(MatchResult::new(
        normal_cdf(z),
        Method::NormalApprox,
        "normal approximation; Berry-Esseen error O(n^-1/2)",
    ))
}

fn require(query: &MatchQuery, metric: MetricId) -> Result<()> {
    if query.metric == metric {
        Ok(())
    } else {
        Err(Error::UnsupportedMetric {
            metric: query.metric.name(),
            method: metric.name(),
        })
    }
}

fn jrm_parameters(query: &MatchQuery) -> Result<(f64, f64)> {
    let (i, j) = query.metric.jrm_cells().ok_or(Error::UnsupportedMetric {
        metric: query.metric.name(),
        method: "joint-ratio",
    })?;
    let pi = query.reference.get(i);
    let p = (pi + query.reference.get(j)).min(1.0);
    if p <= 0.0 {
        return Err(Error::domain(format!(
            "{} is always undefined under the reference (p_{} + p_{} = 0)",
            query.metric,
            i.name(),
            j.name()
        )));
    }
    Ok((p, (pi / p).min(1.0)))
}

/// Joint-ratio CDF pieces: `(P(S <= s, defined), P(S = s, defined), P(defined))`.
pub fn jrm_cdf_parts(n: u64, p: f64, theta: f64, score: f64) -> (f64, f64, f64) {
    let table = LnFactorials::new(n);
    let mut leq = LogSum::new();
    let mut eq = LogSum::new();
    for k in 1..=n {
        let ln_outer = binomial_ln_pmf(&table, k, n, p);
        if ln_outer == f64::NEG_INFINITY {
            continue;
        }
        let x = score * k as f64;
        let m = ((x + FLOOR_NUDGE).floor().max(-1.0) as i64).min(k as i64);
        if m < 0 {
            continue;
        }
        let m = m as u64;
        let mut inner = LogSum::new();
        for ki in 0..=m {
            inner.add(binomial_ln_pmf(&table, ki, k, theta));
        }
        leq.add(ln_outer + inner.ln().min(0.0));
        if (x - m as f64).abs() < FLOOR_NUDGE {
            eq.add(ln_outer + binomial_ln_pmf(&table, m, k, theta));
        }
    }
    // 1 - (1 - p)^n
    let defined = -(n as f64 * (-p).ln_1p()).exp_m1();
    (leq.value(), eq.value(), defined)
}

/// Exact joint-ratio MATCH probability, renormalized over defined outcomes.
pub fn jrm_cdf_exact(query: &MatchQuery) -> Result<MatchResult> {
    let (p, theta) = jrm_parameters(query)?;
    let score = query.score()?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::domain(format!("score {score} outside [0, 1]")));
    }
    let (raw, eq, defined) = jrm_cdf_parts(query.n, p, theta, score);
    let mut r = MatchResult::new(
        (raw / defined).min(1.0),
        Method::Exact,
        "exact summation in log space, conditional on the score being defined",
    );
    r.p_leq_raw = Some(raw.min(1.0));
    r.p_eq = Some((eq / defined).min(1.0));
    Ok(r)
}

/// `I_score(k_i + pseudo, k - k_i + pseudo)`.
pub fn jrm_beta_cdf(score: f64, k_i: u64, k: u64, pseudo: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::domain(format!("score {score} outside [0, 1]")));
    }
    if k_i > k {
        return Err(Error::domain(format!("k_i = {k_i} exceeds k = {k}")));
    }
    if pseudo < 0.0 || !pseudo.is_finite() {
        return Err(Error::domain(format!("pseudo-count {pseudo} must be >= 0")));
    }
    let a = k_i as f64 + pseudo;
    let b = (k - k_i) as f64 + pseudo;
    if a == 0.0 && b == 0.0 {
        return Err(Error::domain("beta shape parameters are both zero"));
    }
    Ok(regularized_incomplete_beta(score, a, b))
}

/// Beta approximation for joint-ratio metrics; needs observed counts.
pub fn jrm_cdf_beta(query: &MatchQuery, pseudo: f64) -> Result<MatchResult> {
    let (i, j) = query.metric.jrm_cells().ok_or(Error::UnsupportedMetric {
        metric: query.metric.name(),
        method: "beta",
    })?;
    let Observed::Matrix(cm) = query.observed else {
        return Err(Error::domain(
            "the beta path needs observed counts, not a bare score",
        ));
    };
    let c = integral_counts(&cm)?;
    let k_i = c[i.index()];
    let k = k_i + c[j.index()];
    let score = query.score()?;
    let p = jrm_beta_cdf(score, k_i, k, pseudo)?;
    Ok(MatchResult::new(
        p,
        Method::BetaApprox,
        format!("beta posterior approximation with pseudo-count {pseudo}; no error bound"),
    ))
}

/// Knobs for the approximate paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    /// Skip the `np, nq >= 5` check on the binomial normal path.
    pub force_normal: bool,
    /// Pseudo-count for the beta path.
    pub pseudo_count: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            force_normal: false,
            pseudo_count: 1.0,
        }
    }
}

/// Dispatches a query to the requested evaluation path.
pub fn run_match(query: &MatchQuery, choice: MethodChoice) -> Result<MatchResult> {
    run_match_with(query, choice, &MatchOptions::default())
}

pub fn run_match_with(
    query: &MatchQuery,
    choice: MethodChoice,
    opts: &MatchOptions,
) -> Result<MatchResult> {
    let family = query.metric.family();
    let is_mb = query.metric == MetricId::MarginalBenefit;
    let unsupported = |method| Error::UnsupportedMetric {
        metric: query.metric.name(),
        method,
    };
    match choice {
        MethodChoice::Exact => match family {
            Family::Binomial => binomial_cdf_exact(query),
            Family::JointRatio => jrm_cdf_exact(query),
            Family::Other if is_mb => marginal_benefit_cdf_exact(query),
            Family::Other => Err(unsupported("exact")),
        },
        MethodChoice::Normal => match family {
            Family::Binomial => binomial_cdf_normal(query, opts.force_normal),
            Family::Other if is_mb => marginal_benefit_cdf_normal(query),
            _ => Err(unsupported("normal")),
        },
        MethodChoice::Beta => match family {
            Family::JointRatio => jrm_cdf_beta(query, opts.pseudo_count),
            _ => Err(unsupported("beta")),
        },
        MethodChoice::Auto => {
            if query.n <= AUTO_EXACT_MAX_N {
                return run_match_with(query, MethodChoice::Exact, opts);
            }
            match family {
                Family::Binomial => binomial_cdf_normal(query, opts.force_normal)
                    .or_else(|_| binomial_cdf_exact(query)),
                Family::JointRatio => match query.observed {
                    Observed::Matrix(_) => jrm_cdf_beta(query, opts.pseudo_count),
                    Observed::Score(_) => jrm_cdf_exact(query),
                },
                Family::Other if is_mb => marginal_benefit_cdf_normal(query),
                Family::Other => Err(unsupported("auto")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confusion::{matrix_probability_with, MatrixSpace};
    use crate::metrics::evaluate;

    fn probs(a: f64, b: f64, c: f64, d: f64) -> CellProbabilities {
        CellProbabilities::new(a, b, c, d).unwrap()
    }

    /// Reference where `p_TP + p_TN = p`.
    fn acc_ref(p: f64) -> CellProbabilities {
        probs(p / 2.0, (1.0 - p) / 2.0, (1.0 - p) / 2.0, p / 2.0)
    }

    #[test]
    fn binomial_exact_examples() {
        let q = MatchQuery::from_score(MetricId::Acc, 4, 1.0, acc_ref(0.5)).unwrap();
        assert_eq!(binomial_cdf_exact(&q).unwrap().p_leq, 1.0);

        // sum_{f<=5} C(10,f) / 1024 = 638 / 1024
        let q = MatchQuery::from_score(MetricId::Acc, 10, 0.5, acc_ref(0.5)).unwrap();
        let r = binomial_cdf_exact(&q).unwrap();
        assert!((r.p_leq - 0.623_046_875).abs() < 1e-14, "{}", r.p_leq);
        assert!((r.p_eq.unwrap() - 252.0 / 1024.0).abs() < 1e-14);

        let q = MatchQuery::from_score(MetricId::Acc, 100, 0.80, acc_ref(0.75)).unwrap();
        let r = binomial_cdf_exact(&q).unwrap();
        assert!((r.p_leq - 0.90).abs() < 0.01, "{}", r.p_leq);
    }

    #[test]
    fn binomial_normal_examples() {
        let q = MatchQuery::from_score(MetricId::Acc, 100, 0.80, acc_ref(0.75)).unwrap();
        let r = binomial_cdf_normal(&q, false).unwrap();
        assert!((r.p_leq - 0.898).abs() < 0.001, "{}", r.p_leq);
        assert_eq!(r.method, Method::NormalApprox);

        let q = MatchQuery::from_score(MetricId::Acc, 100, 0.5, acc_ref(0.5)).unwrap();
        assert!(binomial_cdf_normal(&q, false).unwrap().p_leq > 0.5);

        let q = MatchQuery::from_score(MetricId::Ppr, 1000, 0.3, probs(0.1, 0.35, 0.2, 0.35)).unwrap();
        let a = binomial_cdf_normal(&q, false).unwrap().p_leq;
        let e = binomial_cdf_exact(&q).unwrap().p_leq;
        assert!((a - e).abs() < 0.02);
    }

    #[test]
    fn binomial_normal_applicability() {
        let q = MatchQuery::from_score(MetricId::Acc, 10, 0.5, acc_ref(0.2)).unwrap();
        assert!(matches!(
            binomial_cdf_normal(&q, false),
            Err(Error::Applicability(_))
        ));
        assert!(binomial_cdf_normal(&q, true).is_ok());
    }

    #[test]
    fn binomial_with_zero_probability_is_point_mass_at_zero() {
        let r = probs(0.0, 0.5, 0.5, 0.0);
        for s in [0.0, 0.3, 1.0] {
            let q = MatchQuery::from_score(MetricId::Acc, 7, s, r).unwrap();
            assert_eq!(binomial_cdf_exact(&q).unwrap().p_leq, 1.0);
        }
    }

    #[test]
    fn score_domain_errors() {
        assert!(MatchQuery::from_score(MetricId::Acc, 10, 1.2, acc_ref(0.5)).is_err());
        assert!(MatchQuery::from_score(MetricId::MarginalBenefit, 10, -1.5, acc_ref(0.5)).is_err());
        assert!(MatchQuery::from_score(MetricId::Mcc, 10, 0.5, acc_ref(0.5)).is_err());
        assert!(MatchQuery::from_score(MetricId::Acc, 0, 0.5, acc_ref(0.5)).is_err());
    }

    #[test]
    fn marginal_benefit_exact_examples() {
        let r = probs(0.1, 0.2, 0.3, 0.4);
        let q = MatchQuery::from_score(MetricId::MarginalBenefit, 9, 1.0, r).unwrap();
        assert_eq!(marginal_benefit_cdf_exact(&q).unwrap().p_leq, 1.0);

        let r = probs(0.0, 0.5, 0.5, 0.0);
        let q = MatchQuery::from_score(MetricId::MarginalBenefit, 1, 0.0, r).unwrap();
        assert!((marginal_benefit_cdf_exact(&q).unwrap().p_leq - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marginal_benefit_pmf_normalizes() {
        let r = probs(0.1, 0.2, 0.3, 0.4);
        for n in [1u64, 5, 50, 300] {
            let total: f64 = marginal_benefit_pmf(n, &r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n}: {total}");
        }
    }

    #[test]
    fn marginal_benefit_exact_matches_enumeration() {
        let r = probs(0.15, 0.25, 0.35, 0.25);
        let n = 6u64;
        let table = LnFactorials::new(n);
        for b in [-1.0, -0.5, -1.0 / 6.0, 0.0, 0.2, 0.5, 5.0 / 6.0] {
            let brute: f64 = MatrixSpace::new(n)
                .counts()
                .filter(|c| (c[2] as f64 - c[1] as f64) / n as f64 <= b + 1e-12)
                .map(|c| matrix_probability_with(&table, c, &r))
                .sum();
            let q = MatchQuery::from_score(MetricId::MarginalBenefit, n, b, r).unwrap();
            let got = marginal_benefit_cdf_exact(&q).unwrap().p_leq;
            assert!((got - brute).abs() < 1e-10, "b={b}: {got} vs {brute}");
        }
    }

    #[test]
    fn marginal_benefit_normal_examples() {
        let r = probs(0.3, 0.2, 0.2, 0.3);
        let q = MatchQuery::from_score(MetricId::MarginalBenefit, 50, 0.0, r).unwrap();
        assert!((marginal_benefit_cdf_normal(&q).unwrap().p_leq - 0.5).abs() < 1e-12);

        let r = probs(0.25, 0.2, 0.3, 0.25);
        let q = MatchQuery::from_score(MetricId::MarginalBenefit, 400, 0.1, r).unwrap();
        let approx = marginal_benefit_cdf_normal(&q).unwrap().p_leq;
        let exact = marginal_benefit_cdf_exact(&q).unwrap().p_leq;
        assert!((approx - exact).abs() < 0.03, "{approx} vs {exact}");

        let r = probs(0.5, 0.0, 0.0, 0.5);
        let below = MatchQuery::from_score(MetricId::MarginalBenefit, 10, -0.1, r).unwrap();
        let at = MatchQuery::from_score(MetricId::MarginalBenefit, 10, 0.0, r).unwrap();
        assert_eq!(marginal_benefit_cdf_normal(&below).unwrap().p_leq, 0.0);
        assert_eq!(marginal_benefit_cdf_normal(&at).unwrap().p_leq, 1.0);
    }

    #[test]
    fn jrm_exact_examples() {
        let r = probs(0.1, 0.2, 0.3, 0.4);
        let q = MatchQuery::from_score(MetricId::Tpr, 12, 1.0, r).unwrap();
        assert!((jrm_cdf_exact(&q).unwrap().p_leq - 1.0).abs() < 1e-12);

        // theta = 1: score always 1
        let r = probs(0.3, 0.0, 0.3, 0.4);
        let q = MatchQuery::from_score(MetricId::Tpr, 8, 0.99, r).unwrap();
        assert_eq!(jrm_cdf_exact(&q).unwrap().p_leq, 0.0);
        let q = MatchQuery::from_score(MetricId::Tpr, 8, 1.0, r).unwrap();
        assert!((jrm_cdf_exact(&q).unwrap().p_leq - 1.0).abs() < 1e-12);

        let r = probs(0.0, 0.0, 0.5, 0.5);
        let q = MatchQuery::from_score(MetricId::Tpr, 8, 0.5, r).unwrap();
        assert!(jrm_cdf_exact(&q).is_err());
    }

    #[test]
    fn jrm_exact_matches_enumeration() {
        let r = probs(0.12, 0.28, 0.2, 0.4);
        let n = 9u64;
        let table = LnFactorials::new(n);
        for metric in [MetricId::Tpr, MetricId::Ppv, MetricId::For] {
            for s in [0.0, 0.25, 1.0 / 3.0, 0.5, 0.8, 1.0] {
                let mut leq = 0.0;
                let mut defined = 0.0;
                for c in MatrixSpace::new(n).counts() {
                    let cm = ConfusionMatrix::from_counts(c[0], c[1], c[2], c[3]);
                    if let Some(v) = evaluate(metric, &cm).unwrap().value() {
                        let w = matrix_probability_with(&table, c, &r);
                        defined += w;
                        if v <= s + 1e-12 {
                            leq += w;
                        }
                    }
                }
                let q = MatchQuery::from_score(metric, n, s, r).unwrap();
                let got = jrm_cdf_exact(&q).unwrap();
                assert!((got.p_leq - leq / defined).abs() < 1e-9, "{metric} s={s}");
                assert!((got.p_leq_raw.unwrap() - leq).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beta_examples() {
        assert_eq!(jrm_beta_cdf(1.0, 3, 7, 1.0).unwrap(), 1.0);
        assert_eq!(jrm_beta_cdf(0.0, 3, 7, 1.0).unwrap(), 0.0);
        assert!((jrm_beta_cdf(0.5, 4, 8, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(jrm_beta_cdf(1.5, 4, 8, 1.0).is_err());

        // I_0.8(9, 3) against composite Simpson on the Beta(9, 3) density.
        let density = |x: f64| 495.0 * x.powi(8) * (1.0 - x).powi(2);
        let steps = 20_000;
        let h = 0.8 / steps as f64;
        let mut s = density(0.0) + density(0.8);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * density(i as f64 * h);
        }
        let quad = s * h / 3.0;
        let got = jrm_beta_cdf(0.8, 8, 10, 1.0).unwrap();
        assert!((got - quad).abs() < 1e-8, "{got} vs {quad}");

        let cm = ConfusionMatrix::from_counts(8, 2, 5, 5);
        let q = MatchQuery::from_matrix(MetricId::Tpr, cm, CellProbabilities::uniform()).unwrap();
        let r = jrm_cdf_beta(&q, 1.0).unwrap();
        assert!((r.p_leq - got).abs() < 1e-15);
        assert_eq!(r.method, Method::BetaApprox);

        let q = MatchQuery::from_score(MetricId::Tpr, 20, 0.8, CellProbabilities::uniform()).unwrap();
        assert!(jrm_cdf_beta(&q, 1.0).is_err());
    }

    #[test]
    fn matrix_and_score_inputs_agree() {
        let r = probs(0.2, 0.3, 0.1, 0.4);
        let cm = ConfusionMatrix::from_counts(3, 2, 1, 4);
        for m in [MetricId::Acc, MetricId::MarginalBenefit, MetricId::Tpr] {
            let a = MatchQuery::from_matrix(m, cm, r).unwrap();
            let s = evaluate(m, &cm).unwrap().value().unwrap();
            let b = MatchQuery::from_score(m, 10, s, r).unwrap();
            let ra = run_match(&a, MethodChoice::Exact).unwrap();
            let rb = run_match(&b, MethodChoice::Exact).unwrap();
            assert!((ra.p_leq - rb.p_leq).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn auto_dispatch() {
        let r = acc_ref(0.5);
        let q = MatchQuery::from_score(MetricId::Acc, 100, 0.5, r).unwrap();
        assert_eq!(run_match(&q, MethodChoice::Auto).unwrap().method, Method::Exact);
        let q = MatchQuery::from_score(MetricId::Acc, 1000, 0.5, r).unwrap();
        assert_eq!(
            run_match(&q, MethodChoice::Auto).unwrap().method,
            Method::NormalApprox
        );
        let cm = ConfusionMatrix::from_counts(300, 300, 200, 200);
        let q = MatchQuery::from_matrix(MetricId::Tpr, cm, r).unwrap();
        assert_eq!(run_match(&q, MethodChoice::Auto).unwrap().method, Method::BetaApprox);
        assert!(run_match(&q, MethodChoice::Normal).is_err());
    }

    #[test]
    fn two_sided_probability() {
        let q = MatchQuery::from_score(MetricId::Acc, 10, 0.5, acc_ref(0.5)).unwrap();
        let r = binomial_cdf_exact(&q).unwrap();
        // symmetric: P(<=5) = P(>=5) = 638/1024
        assert!((r.p_two_sided().unwrap() - 1.0).abs() < 1e-12);
        let q = MatchQuery::from_score(MetricId::Acc, 10, 0.0, acc_ref(0.5)).unwrap();
        let r = binomial_cdf_exact(&q).unwrap();
        assert!((r.p_two_sided().unwrap() - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn cdfs_are_monotone_in_score() {
        let r = probs(0.1, 0.25, 0.15, 0.5);
        let n = 30;
        for m in [MetricId::Ppr, MetricId::MarginalBenefit, MetricId::Npv] {
            let (lo, hi) = m.range();
            let mut prev = -1.0;
            for i in 0..=200 {
                let s = lo + (hi - lo) * i as f64 / 200.0;
                let q = MatchQuery::from_score(m, n, s, r).unwrap();
                let p = run_match(&q, MethodChoice::Exact).unwrap().p_leq;
                assert!(p >= prev - 1e-15, "{m} s={s}");
                prev = p;
            }
            assert!((prev - 1.0).abs() < 1e-12);
        }
    }
}
