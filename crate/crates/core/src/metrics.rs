//! The 21 confusion-matrix metrics with explicit undefined results, and
//! hole ("undefined case") counting by enumeration and in closed form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confusion::{choose2, enumerate_matrices, space_cardinality, Cell, ConfusionMatrix};
use crate::error::{Error, Result};

/// Denominators smaller than this are treated as zero for real-valued matrices.
pub const ZERO_DENOM_TOL: f64 = 1e-12;

/// Default largest `n` for which enumeration-based routines run.
pub const DEFAULT_ENUMERATION_CAP: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Binomial,
    JointRatio,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    OneGroup,
    TwoGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricId {
    Acc,
    Prev,
    Ppr,
    Inacc,
    Nprev,
    Pnr,
    Tpr,
    Fpr,
    Tnr,
    Fnr,
    Ppv,
    Npv,
    Fdr,
    For,
    F1Original,
    F1Simplified,
    Mcc,
    Pt,
    MarginalBenefit,
    Ofi,
    TreatmentEquality,
}

use MetricId::*;

impl MetricId {
    pub const ALL: [MetricId; 21] = [
        Acc,
        Prev,
        Ppr,
        Inacc,
        Nprev,
        Pnr,
        Tpr,
        Fpr,
        Tnr,
        Fnr,
        Ppv,
        Npv,
        Fdr,
        For,
        F1Original,
        F1Simplified,
        Mcc,
        Pt,
        MarginalBenefit,
        Ofi,
        TreatmentEquality,
    ];

    /// Metrics with an exact MATCH distribution: binomial, joint-ratio and
    /// marginal benefit.
    pub const MATCH_SET: [MetricId; 15] = [
        Acc,
        Prev,
        Ppr,
        Inacc,
        Nprev,
        Pnr,
        MarginalBenefit,
        Tpr,
        Fpr,
        Tnr,
        Fnr,
        Ppv,
        Npv,
        Fdr,
        For,
    ];

    /// The fifteen one-group metrics used by the downsampling study.
    pub const STUDY_SET: [MetricId; 15] = [
        Tpr,
        Fpr,
        Tnr,
        Fnr,
        Ppv,
        Npv,
        Fdr,
        For,
        Acc,
        Prev,
        Ppr,
        MarginalBenefit,
        Mcc,
        F1Simplified,
        Pt,
    ];

    pub fn family(self) -> Family {
        match self {
            Acc | Prev | Ppr | Inacc | Nprev | Pnr => Family::Binomial,
            Tpr | Fpr | Tnr | Fnr | Ppv | Npv | Fdr | For => Family::JointRatio,
            _ => Family::Other,
        }
    }

    pub fn arity(self) -> Arity {
        match self {
            Ofi | TreatmentEquality => Arity::TwoGroup,
            _ => Arity::OneGroup,
        }
    }

    /// The two cells summed by a binomial metric `(c_i + c_j) / n`.
    pub fn binomial_cells(self) -> Option<(Cell, Cell)> {
        use Cell::*;
        Some(match self {
            Acc => (Tp, Tn),
            Prev => (Tp, Fn),
            Ppr => (Tp, Fp),
            Inacc => (Fp, Fn),
            Nprev => (Tn, Fp),
            Pnr => (Tn, Fn),
            _ => return None,
        })
    }

    /// `(numerator, other)` cells of a joint-ratio metric `c_i / (c_i + c_j)`.
    pub fn jrm_cells(self) -> Option<(Cell, Cell)> {
        use Cell::*;
        Some(match self {
            Tpr => (Tp, Fn),
            Fpr => (Fp, Tn),
            Tnr => (Tn, Fp),
            Fnr => (Fn, Tp),
            Ppv => (Tp, Fp),
            Npv => (Tn, Fn),
            Fdr => (Fp, Tp),
            For => (Fn, Tn),
            _ => return None,
        })
    }

    /// Closed interval of attainable scores.
    pub fn range(self) -> (f64, f64) {
        match self {
            Mcc | MarginalBenefit => (-1.0, 1.0),
            Ofi => (-2.0, 2.0),
            TreatmentEquality => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            Acc => "acc",
            Prev => "prev",
            Ppr => "ppr",
            Inacc => "inacc",
            Nprev => "nprev",
            Pnr => "pnr",
            Tpr => "tpr",
            Fpr => "fpr",
            Tnr => "tnr",
            Fnr => "fnr",
            Ppv => "ppv",
            Npv => "npv",
            Fdr => "fdr",
            For => "for",
            F1Original => "f1-original",
            F1Simplified => "f1",
            Mcc => "mcc",
            Pt => "pt",
            MarginalBenefit => "mb",
            Ofi => "ofi",
            TreatmentEquality => "te",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let alias = match lower.as_str() {
            "f1-simplified" => Some(F1Simplified),
            "marginal-benefit" => Some(MarginalBenefit),
            "treatment-equality" => Some(TreatmentEquality),
            _ => None,
        };
        alias
            .or_else(|| MetricId::ALL.into_iter().find(|m| m.name() == lower))
            .ok_or_else(|| Error::Parse {
                location: "metric name".into(),
                message: format!("unknown metric {s:?}"),
            })
    }
}

impl TryFrom<String> for MetricId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricId> for String {
    fn from(m: MetricId) -> String {
        m.name().to_string()
    }
}

/// A metric score, or the reason it does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricResult {
    Value(f64),
    Undefined(&'static str),
}

impl MetricResult {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricResult::Value(v) => Some(v),
            MetricResult::Undefined(_) => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        matches!(self, MetricResult::Undefined(_))
    }
}

impl fmt::Display for MetricResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricResult::Value(v) => write!(f, "{v}"),
            MetricResult::Undefined(r) => write!(f, "undefined ({r})"),
        }
    }
}

#[inline]
fn is_zero(x: f64) -> bool {
    x.abs() < ZERO_DENOM_TOL
}

fn jrm_reason(m: MetricId) -> &'static str {
    match m {
        Tpr | Fnr => "TP+FN=0",
        Fpr | Tnr => "FP+TN=0",
        Ppv | Fdr => "TP+FP=0",
        Npv | For => "TN+FN=0",
        _ => unreachable!(),
    }
}

/// Evaluates a one-group metric.
pub fn evaluate(metric: MetricId, cm: &ConfusionMatrix) -> Result<MetricResult> {
    if metric.arity() != Arity::OneGroup {
        return Err(Error::Arity {
            metric: metric.name(),
            expected: "two matrices",
            got: "one",
        });
    }
    Ok(evaluate_one_group(metric, cm))
}

/// Evaluates a one-group metric after adding `epsilon` to every cell.
pub fn evaluate_with_epsilon(
    metric: MetricId,
    cm: &ConfusionMatrix,
    epsilon: f64,
) -> Result<MetricResult> {
    if epsilon == 0.0 {
        evaluate(metric, cm)
    } else {
        evaluate(metric, &cm.with_additive(epsilon))
    }
}

fn evaluate_one_group(metric: MetricId, cm: &ConfusionMatrix) -> MetricResult {
    use MetricResult::{Undefined, Value};

    let n = cm.n();
    if is_zero(n) {
        return Undefined("n=0");
    }
    let (tp, fn_, fp, tn) = (cm.tp(), cm.fn_(), cm.fp(), cm.tn());

    if let Some((a, b)) = metric.binomial_cells() {
        return Value(((cm.get(a) + cm.get(b)) / n).min(1.0));
    }
    if let Some((i, j)) = metric.jrm_cells() {
        let num = cm.get(i);
        let den = num + cm.get(j);
        return if is_zero(den) {
            Undefined(jrm_reason(metric))
        } else {
            Value(num / den)
        };
    }
    match metric {
        F1Original => {
            if is_zero(tp) {
                Undefined("TP=0")
            } else {
                Value(2.0 / ((tp + fp) / tp + (tp + fn_) / tp))
            }
        }
        F1Simplified => {
            let den = 2.0 * tp + fp + fn_;
            if is_zero(den) {
                Undefined("2TP+FP+FN=0")
            } else {
                Value(2.0 * tp / den)
            }
        }
        Mcc => {
            let margins = [tp + fp, tp + fn_, tn + fp, tn + fn_];
            if margins.iter().any(|&m| is_zero(m)) {
                return Undefined("zero marginal sum");
            }
            let den: f64 = margins.iter().map(|m| m.sqrt()).product();
            Value(((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0))
        }
        Pt => prevalence_threshold(cm),
        MarginalBenefit => Value((fp - fn_) / n),
        _ => unreachable!("binomial/JRM/two-group handled above"),
    }
}

fn prevalence_threshold(cm: &ConfusionMatrix) -> MetricResult {
    use MetricResult::{Undefined, Value};

    let (tp, fn_, fp, tn) = (cm.tp(), cm.fn_(), cm.fp(), cm.tn());
    if is_zero(tp + fn_) {
        return Undefined("TP+FN=0");
    }
    if is_zero(fp + tn) {
        return Undefined("FP+TN=0");
    }
    // TPR = FPR  <=>  TP*TN = FP*FN; exact on integer counts.
    let equal = match cm.counts() {
        Some([a, b, c, d]) => (a as u128) * (d as u128) == (c as u128) * (b as u128),
        None => is_zero(tp / (tp + fn_) - fp / (fp + tn)),
    };
    if equal {
        return Undefined("TPR=FPR");
    }
    let tpr = tp / (tp + fn_);
    let fpr = fp / (fp + tn);
    // (sqrt(tpr*fpr) - fpr) / (tpr - fpr) with the common factor
    // (sqrt(tpr) - sqrt(fpr)) cancelled; no cancellation error near tpr = fpr.
    let (st, sf) = (tpr.sqrt(), fpr.sqrt());
    Value(sf / (st + sf))
}

/// Evaluates a two-group metric (OFI or treatment equality).
pub fn evaluate_pair(
    metric: MetricId,
    cm1: &ConfusionMatrix,
    cm2: &ConfusionMatrix,
) -> Result<MetricResult> {
    use MetricResult::{Undefined, Value};

    match metric {
        Ofi => {
            let b1 = evaluate_one_group(MarginalBenefit, cm1);
            let b2 = evaluate_one_group(MarginalBenefit, cm2);
            Ok(match (b1, b2) {
                (Value(a), Value(b)) => Value(a - b),
                (Undefined(r), _) | (_, Undefined(r)) => Undefined(r),
            })
        }
        TreatmentEquality => {
            if is_zero(cm1.fp()) {
                Ok(Undefined("FP1=0"))
            } else if is_zero(cm2.fp()) {
                Ok(Undefined("FP2=0"))
            } else {
                Ok(Value(cm1.fn_() / cm1.fp() - cm2.fn_() / cm2.fp()))
            }
        }
        _ => Err(Error::Arity {
            metric: metric.name(),
            expected: "one matrix",
            got: "two",
        }),
    }
}

/// Number of matrices in `M(n)` on which `metric` is undefined, by enumeration.
pub fn count_holes_enumerated(metric: MetricId, n: u64) -> Result<u128> {
    count_holes_enumerated_capped(metric, n, DEFAULT_ENUMERATION_CAP)
}

pub fn count_holes_enumerated_capped(metric: MetricId, n: u64, cap: u64) -> Result<u128> {
    if n > cap {
        return Err(Error::Budget { n, cap });
    }
    if metric.arity() != Arity::OneGroup {
        return Err(Error::Arity {
            metric: metric.name(),
            expected: "two group sizes",
            got: "one",
        });
    }
    Ok(enumerate_matrices(n)
        .filter(|cm| evaluate_one_group(metric, cm).is_undefined())
        .count() as u128)
}

/// Number of pairs in `M(n1) x M(n2)` on which a two-group metric is undefined.
pub fn count_pair_holes_enumerated(metric: MetricId, n1: u64, n2: u64, cap: u64) -> Result<u128> {
    if n1 > cap || n2 > cap {
        return Err(Error::Budget {
            n: n1.max(n2),
            cap,
        });
    }
    if metric.arity() != Arity::TwoGroup {
        return Err(Error::Arity {
            metric: metric.name(),
            expected: "one group size",
            got: "two",
        });
    }
    let second: Vec<ConfusionMatrix> = enumerate_matrices(n2).collect();
    let mut count = 0u128;
    for a in enumerate_matrices(n1) {
        for b in &second {
            if evaluate_pair(metric, &a, b)?.is_undefined() {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Hole count from the closed-form table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoleCount {
    Exact { count: u128 },
    /// Only bounds are known: `lower <= holes < upper`.
    Bounds { lower: u128, upper: u128 },
}

impl HoleCount {
    pub fn contains(&self, x: u128) -> bool {
        match *self {
            HoleCount::Exact { count } => x == count,
            HoleCount::Bounds { lower, upper } => lower <= x && x < upper,
        }
    }
}

impl fmt::Display for HoleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HoleCount::Exact { count } => write!(f, "{count}"),
            HoleCount::Bounds { lower, upper } => write!(f, "[{lower}, {upper})"),
        }
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Closed-form hole count.
///
/// `n2` is the second group size and is required for treatment equality.
/// At `n = 0` every one-group metric has exactly one hole (the empty
/// matrix), whatever its formula for `n >= 1` says.
pub fn count_holes_closed_form(metric: MetricId, n: u64, n2: Option<u64>) -> Result<HoleCount> {
    let exact = |count: u128| Ok(HoleCount::Exact { count });
    let nn = n as u128;
    if metric == TreatmentEquality {
        let n2 = n2.ok_or_else(|| Error::domain("treatment equality needs both group sizes"))?;
        return exact(te_holes_closed_form(n, n2));
    }
    if metric == Ofi {
        return exact(0);
    }
    if metric == Pt {
        if n < 3 {
            return Err(Error::domain(format!(
                "prevalence threshold bounds need n >= 3, got {n}"
            )));
        }
        let (lower, upper) = pt_hole_bounds(n);
        return Ok(HoleCount::Bounds { lower, upper });
    }
    if n == 0 {
        return exact(1);
    }
    match metric.family() {
        Family::Binomial => exact(0),
        Family::JointRatio => exact(nn + 1),
        Family::Other => match metric {
            MarginalBenefit => exact(0),
            F1Simplified => exact(1),
            Mcc => exact(4 * nn),
            F1Original => exact(choose2(nn + 2)),
            _ => unreachable!(),
        },
    }
}

/// `C(n1+2, 2) + C(n2+2, 2) - 1`, the usual closed form for treatment-equality holes.
///
/// This counts the per-group hole sets once each. It is not the number of
/// undefined pairs in `M(n1) x M(n2)`; see [`te_holes_product_space`].
pub fn te_holes_closed_form(n1: u64, n2: u64) -> u128 {
    choose2(n1 as u128 + 2) + choose2(n2 as u128 + 2) - 1
}

/// Undefined pairs in `M(n1) x M(n2)`: `A*N2 + N1*B - A*B` with
/// `A = C(n1+2,2)`, `N1 = |M(n1)|` and likewise for group 2.
pub fn te_holes_product_space(n1: u64, n2: u64) -> Result<u128> {
    let a = choose2(n1 as u128 + 2);
    let b = choose2(n2 as u128 + 2);
    let m1 = space_cardinality(n1)?;
    let m2 = space_cardinality(n2)?;
    let overflow = || Error::Overflow("treatment-equality pair count");
    let left = a.checked_mul(m2).ok_or_else(overflow)?;
    let right = m1.checked_mul(b).ok_or_else(overflow)?;
    Ok(left + right - a * b)
}

/// `(2n + 2, ceil(e^gamma n lnln n + 0.6483 n / lnln n))` for `n >= 3`.
pub fn pt_hole_bounds(n: u64) -> (u128, u128) {
    let nf = n as f64;
    let lln = nf.ln().ln();
    let upper = EULER_GAMMA.exp() * nf * lln + 0.6483 * nf / lln;
    (2 * n as u128 + 2, upper.ceil() as u128)
}
