//! Binary confusion matrices, their multinomial probability model, and the
//! enumeration of every matrix with a fixed total.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{xlogy, LnFactorials};

/// Tolerance for treating a real cell as a whole number.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Tolerance on the simplex constraint of [`CellProbabilities`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// One of the four cells, in row-major matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Tp = 0,
    Fn = 1,
    Fp = 2,
    Tn = 3,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Tp, Cell::Fn, Cell::Fp, Cell::Tn];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Cell::Tp => "tp",
            Cell::Fn => "fn",
            Cell::Fp => "fp",
            Cell::Tn => "tn",
        }
    }
}

/// A 2x2 confusion matrix `[[TP, FN], [FP, TN]]`.
///
/// Cells are stored as `f64` so the same type carries raw counts and the
/// real-valued output of smoothing. [`ConfusionMatrix::is_integral`] tells
/// the two apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CellRecord", into = "CellRecord")]
pub struct ConfusionMatrix {
    cells: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    tp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
    fp: f64,
    tn: f64,
}

impl TryFrom<CellRecord> for ConfusionMatrix {
    type Error = Error;

    fn try_from(r: CellRecord) -> Result<Self> {
        ConfusionMatrix::new(r.tp, r.fn_, r.fp, r.tn)
    }
}

impl From<ConfusionMatrix> for CellRecord {
    fn from(cm: ConfusionMatrix) -> Self {
        CellRecord {
            tp: cm.tp(),
            fn_: cm.fn_(),
            fp: cm.fp(),
            tn: cm.tn(),
        }
    }
}

impl ConfusionMatrix {
    /// Validating constructor; rejects negative or non-finite cells.
    pub fn new(tp: f64, fn_: f64, fp: f64, tn: f64) -> Result<Self> {
        Self::from_cells([tp, fn_, fp, tn])
    }

    pub fn from_cells(cells: [f64; 4]) -> Result<Self> {
        for (cell, v) in Cell::ALL.iter().zip(cells) {
            if !v.is_finite() {
                return Err(Error::Validation {
                    field: cell.name().into(),
                    message: format!("{v} is not finite"),
                });
            }
            if v < 0.0 {
                return Err(Error::Validation {
                    field: cell.name().into(),
                    message: format!("{v} is negative"),
                });
            }
        }
        Ok(ConfusionMatrix { cells })
    }

    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix {
            cells: [tp as f64, fn_ as f64, fp as f64, tn as f64],
        }
    }

    #[inline]
    pub fn tp(&self) -> f64 {
        self.cells[0]
    }
    #[inline]
    pub fn fn_(&self) -> f64 {
        self.cells[1]
    }
    #[inline]
    pub fn fp(&self) -> f64 {
        self.cells[2]
    }
    #[inline]
    pub fn tn(&self) -> f64 {
        self.cells[3]
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> f64 {
        self.cells[cell.index()]
    }

    pub fn cells(&self) -> [f64; 4] {
        self.cells
    }

    /// Total count `TP + FN + FP + TN`.
    #[inline]
    pub fn n(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.cells
            .iter()
            .all(|c| (c - c.round()).abs() < INTEGRALITY_TOL)
    }

    /// Whole-number cell counts, if the matrix is integral.
    pub fn counts(&self) -> Option<[u64; 4]> {
        self.is_integral()
            .then(|| self.cells.map(|c| c.round() as u64))
    }

    /// The same matrix with `eps` added to every cell.
    pub fn with_additive(&self, eps: f64) -> Self {
        ConfusionMatrix {
            cells: self.cells.map(|c| c + eps),
        }
    }

    /// Cell proportions; `None` for the all-zero matrix.
    pub fn proportions(&self) -> Option<CellProbabilities> {
        CellProbabilities::from_weights(self.cells).ok()
    }

    /// Cellwise `self - other`, failing if any cell would go negative.
    pub fn checked_sub(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = [0.0; 4];
        for (i, cell) in Cell::ALL.iter().enumerate() {
            let d = self.cells[i] - other.cells[i];
            if d < -INTEGRALITY_TOL {
                return Err(Error::Validation {
                    field: cell.name().into(),
                    message: format!(
                        "subtracting {} from {} leaves a negative count",
                        other.cells[i], self.cells[i]
                    ),
                });
            }
            out[i] = d.max(0.0);
        }
        Ok(ConfusionMatrix { cells: out })
    }

    pub fn scaled(&self, k: f64) -> Self {
        ConfusionMatrix {
            cells: self.cells.map(|c| c * k),
        }
    }

    /// CSV row `tp,fn,fp,tn`.
    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{}", self.tp(), self.fn_(), self.fp(), self.tn())
    }

    /// Parses `tp,fn,fp,tn`.
    pub fn parse_csv_row(row: &str) -> Result<Self> {
        let cells = parse_four(row, "confusion matrix")?;
        Self::from_cells(cells)
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, rhs: Self) -> Self {
        let mut cells = self.cells;
        for (c, r) in cells.iter_mut().zip(rhs.cells) {
            *c += r;
        }
        ConfusionMatrix { cells }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(tp={}, fn={}, fp={}, tn={})",
            self.tp(),
            self.fn_(),
            self.fp(),
            self.tn()
        )
    }
}

pub(crate) fn parse_four(row: &str, what: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = row.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Parse {
            location: what.into(),
            message: format!("expected 4 comma-separated values, got {}", parts.len()),
        });
    }
    let mut out = [0.0; 4];
    for (i, (p, cell)) in parts.iter().zip(Cell::ALL).enumerate() {
        out[i] = p.parse::<f64>().map_err(|e| Error::Parse {
            location: format!("{what}, field `{}`", cell.name()),
            message: format!("{p:?}: {e}"),
        })?;
    }
    Ok(out)
}

/// Multinomial cell probabilities `(p_TP, p_FN, p_FP, p_TN)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProbRecord", into = "ProbRecord")]
pub struct CellProbabilities {
    p: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct ProbRecord {
    tp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
    fp: f64,
    tn: f64,
}

impl TryFrom<ProbRecord> for CellProbabilities {
    type Error = Error;

    fn try_from(r: ProbRecord) -> Result<Self> {
        CellProbabilities::new(r.tp, r.fn_, r.fp, r.tn)
    }
}

impl From<CellProbabilities> for ProbRecord {
    fn from(p: CellProbabilities) -> Self {
        ProbRecord {
            tp: p.p[0],
            fn_: p.p[1],
            fp: p.p[2],
            tn: p.p[3],
        }
    }
}

impl CellProbabilities {
    pub fn new(p_tp: f64, p_fn: f64, p_fp: f64, p_tn: f64) -> Result<Self> {
        let p = [p_tp, p_fn, p_fp, p_tn];
        for (cell, v) in Cell::ALL.iter().zip(p) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation {
                    field: format!("p_{}", cell.name()),
                    message: format!("{v} is not a probability"),
                });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(format!(
                "cell probabilities sum to {sum}, not 1"
            )));
        }
        Ok(CellProbabilities { p })
    }

    /// Normalizes non-negative weights (for instance raw counts) onto the simplex.
    pub fn from_weights(w: [f64; 4]) -> Result<Self> {
        for (cell, v) in Cell::ALL.iter().zip(w) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation {
                    field: cell.name().into(),
                    message: format!("weight {v} must be finite and non-negative"),
                });
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::domain("weights sum to zero"));
        }
        Ok(CellProbabilities {
            p: w.map(|x| x / sum),
        })
    }

    pub fn uniform() -> Self {
        CellProbabilities { p: [0.25; 4] }
    }

    /// Parses `p_tp,p_fn,p_fp,p_tn`, normalizing if the values are counts.
    pub fn parse_weights(row: &str) -> Result<Self> {
        Self::from_weights(parse_four(row, "reference")?)
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> f64 {
        self.p[cell.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.p
    }

    pub fn tp(&self) -> f64 {
        self.p[0]
    }
    pub fn fn_(&self) -> f64 {
        self.p[1]
    }
    pub fn fp(&self) -> f64 {
        self.p[2]
    }
    pub fn tn(&self) -> f64 {
        self.p[3]
    }

    /// Swaps two components.
    pub fn swapped(&self, a: Cell, b: Cell) -> Self {
        let mut p = self.p;
        p.swap(a.index(), b.index());
        CellProbabilities { p }
    }

    /// The probabilities as a real-valued matrix of total 1.
    pub fn as_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix { cells: self.p }
    }
}

/// Lazy lexicographic walk over every integral matrix with total `n`
/// (TP outermost, then FN, then FP; TN is forced).
#[derive(Debug, Clone)]
pub struct MatrixSpace {
    n: u64,
    next: Option<[u64; 3]>,
    remaining: u128,
}

impl MatrixSpace {
    pub fn new(n: u64) -> Self {
        MatrixSpace {
            n,
            next: Some([0, 0, 0]),
            remaining: space_cardinality(n).unwrap_or(u128::MAX),
        }
    }

    /// Yields raw counts `[tp, fn, fp, tn]` instead of matrices.
    pub fn counts(mut self) -> impl Iterator<Item = [u64; 4]> {
        std::iter::from_fn(move || self.advance())
    }

    fn advance(&mut self) -> Option<[u64; 4]> {
        let [tp, fn_, fp] = self.next?;
        let n = self.n;
        let out = [tp, fn_, fp, n - tp - fn_ - fp];
        self.next = if tp + fn_ + fp < n {
            Some([tp, fn_, fp + 1])
        } else if tp + fn_ < n {
            Some([tp, fn_ + 1, 0])
        } else if tp < n {
            Some([tp + 1, 0, 0])
        } else {
            None
        };
        self.remaining = self.remaining.saturating_sub(1);
        Some(out)
    }
}

impl Iterator for MatrixSpace {
    type Item = ConfusionMatrix;

    fn next(&mut self) -> Option<ConfusionMatrix> {
        self.advance()
            .map(|[a, b, c, d]| ConfusionMatrix::from_counts(a, b, c, d))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        match usize::try_from(self.remaining) {
            Ok(r) => (r, Some(r)),
            Err(_) => (usize::MAX, None),
        }
    }
}

/// Every integral confusion matrix with total `n`, in lexicographic order.
pub fn enumerate_matrices(n: u64) -> MatrixSpace {
    MatrixSpace::new(n)
}

/// `|M(n)| = (n+1)(n+2)(n+3)/6`.
pub fn space_cardinality(n: u64) -> Result<u128> {
    let n = n as u128;
    let mut f = [n + 1, n + 2, n + 3];
    // Divide out 3 then 2 before multiplying so the intermediate never
    // exceeds the result.
    for d in [3u128, 2] {
        let i = f.iter().position(|x| x % d == 0).expect("consecutive integers");
        f[i] /= d;
    }
    f[0].checked_mul(f[1])
        .and_then(|x| x.checked_mul(f[2]))
        .ok_or(Error::Overflow("space cardinality"))
}

/// Number of matrices in `M(n)` whose designated cell equals `x`: `C(n-x+2, 2)`.
pub fn cell_value_count(x: i64, n: i64) -> Result<u128> {
    if x < 0 || x > n {
        return Err(Error::domain(format!(
            "cell value {x} outside [0, {n}]"
        )));
    }
    Ok(choose2((n - x) as u128 + 2))
}

/// `C(m, 2)`.
pub(crate) fn choose2(m: u128) -> u128 {
    if m < 2 {
        0
    } else if m % 2 == 0 {
        (m / 2) * (m - 1)
    } else {
        m * ((m - 1) / 2)
    }
}

/// Multinomial probability of an integral matrix under `p`.
pub fn matrix_probability(cm: &ConfusionMatrix, p: &CellProbabilities) -> Result<f64> {
    let counts = cm
        .counts()
        .ok_or_else(|| Error::domain(format!("matrix {cm} is not integral")))?;
    let n: u64 = counts.iter().sum();
    let table = LnFactorials::new(n);
    Ok(matrix_probability_with(&table, counts, p))
}

/// As [`matrix_probability`], reusing a factorial table of size at least `n`.
pub fn matrix_probability_with(table: &LnFactorials, counts: [u64; 4], p: &CellProbabilities) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut ln = table.get(n);
    for (k, pc) in counts.iter().zip(p.as_array()) {
        ln -= table.get(*k);
        ln += xlogy(*k as f64, pc);
    }
    ln.exp()
}
