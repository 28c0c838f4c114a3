use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::confusion::{matrix_probability_with, CellProbabilities, ConfusionMatrix, MatrixSpace};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricId};
use crate::special::LnFactorials;

use super::sample_counts;

/// Scores closer than this are merged into one mass point.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistMode {
    /// Sum matrix probabilities over `M(n)`; refused when `n > cap`.
    Exact { cap: u64 },
    MonteCarlo { replicates: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDistribution {
    pub metric: MetricId,
    pub n: u64,
    /// `(score, mass)` sorted by score.
    pub bins: Vec<(f64, f64)>,
    /// Mass on matrices where the metric is undefined.
    pub undefined: f64,
}

impl ScoreDistribution {
    pub fn total_mass(&self) -> f64 {
        self.undefined + self.bins.iter().map(|b| b.1).sum::<f64>()
    }

    /// Mean over defined outcomes.
    pub fn mean(&self) -> Option<f64> {
        let defined: f64 = self.bins.iter().map(|b| b.1).sum();
        (defined > 0.0).then(|| self.bins.iter().map(|(s, m)| s * m).sum::<f64>() / defined)
    }

    pub fn support_size(&self) -> usize {
        self.bins.iter().filter(|b| b.1 > 0.0).count()
    }

    /// Mass at `score`, within the merge tolerance.
    pub fn mass_at(&self, score: f64) -> f64 {
        self.bins
            .iter()
            .filter(|(s, _)| (s - score).abs() <= MERGE_TOL)
            .map(|b| b.1)
            .sum()
    }
}

/// Distribution of a one-group metric's score over samples of size `n`.
pub fn score_distribution(
    metric: MetricId,
    n: u64,
    p: &CellProbabilities,
    mode: DistMode,
) -> Result<ScoreDistribution> {
    // validates arity up front
    evaluate(metric, &ConfusionMatrix::from_counts(1, 1, 1, 1))?;
    let mut acc = Accumulator::default();
    match mode {
        DistMode::Exact { cap } => {
            if n > cap {
                return Err(Error::Budget { n, cap });
            }
            let table = LnFactorials::new(n);
            for c in MatrixSpace::new(n).counts() {
                let w = matrix_probability_with(&table, c, p);
                acc.add(metric, c, w);
            }
        }
        DistMode::MonteCarlo { replicates, seed } => {
            if replicates == 0 {
                return Err(Error::domain("Monte Carlo needs at least one replicate"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tally: BTreeMap<[u64; 4], u64> = BTreeMap::new();
            for _ in 0..replicates {
                *tally.entry(sample_counts(&mut rng, n, p)).or_default() += 1;
            }
            let r = replicates as f64;
            for (c, k) in tally {
                acc.add(metric, c, k as f64 / r);
            }
        }
    }
    Ok(acc.finish(metric, n))
}

#[derive(Default)]
struct Accumulator {
    by_bits: BTreeMap<u64, f64>,
    undefined: f64,
}

impl Accumulator {
    fn add(&mut self, metric: MetricId, c: [u64; 4], w: f64) {
        let cm = ConfusionMatrix::from_counts(c[0], c[1], c[2], c[3]);
        match evaluate(metric, &cm).expect("arity checked").value() {
            Some(s) => *self.by_bits.entry(order_key(s)).or_default() += w,
            None => self.undefined += w,
        }
    }

    fn finish(self, metric: MetricId, n: u64) -> ScoreDistribution {
        let mut bins: Vec<(f64, f64)> = Vec::new();
        for (key, w) in self.by_bits {
            let s = from_order_key(key);
            match bins.last_mut() {
                Some(last) if (s - last.0).abs() <= MERGE_TOL => last.1 += w,
                _ => bins.push((s, w)),
            }
        }
        ScoreDistribution {
            metric,
            n,
            bins,
            undefined: self.undefined,
        }
    }
}

/// Maps an `f64` to a `u64` whose order matches numeric order.
fn order_key(x: f64) -> u64 {
    let x = if x == 0.0 { 0.0 } else { x };
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}
