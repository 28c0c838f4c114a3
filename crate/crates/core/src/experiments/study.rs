use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confusion::{CellProbabilities, ConfusionMatrix};
use crate::cps::{reference_from_total, smooth, CpsConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Arity, MetricId};

use super::io::{ingest_groups, GroupFormat};
use super::{sample_counts, ExperimentRecord, GroupSpec, Policy};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CMX_THREADS";

/// Inclusive range of sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NRange {
    pub start: u64,
    pub end: u64,
    #[serde(default = "one")]
    pub step: u64,
}

fn one() -> u64 {
    1
}

impl Default for NRange {
    fn default() -> Self {
        NRange {
            start: 5,
            end: 150,
            step: 5,
        }
    }
}

impl NRange {
    pub fn values(&self) -> Vec<u64> {
        (self.start..=self.end).step_by(self.step.max(1) as usize).collect()
    }
}

/// How each replicate's matrix is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Multinomial draw of size `n` from the group's cell proportions.
    #[default]
    Multinomial,
    /// The group's own counts, unchanged; `n` must equal the group total.
    FullGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    /// CSV or JSON group file, resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups_file: Option<PathBuf>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricId>,
    #[serde(default)]
    pub n_range: NRange,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default = "default_policies", alias = "policies")]
    pub smoothing_policies: Vec<Policy>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sampling: Sampling,
}

fn default_metrics() -> Vec<MetricId> {
    MetricId::STUDY_SET.to_vec()
}

fn default_replicates() -> u64 {
    10_000
}

fn default_policies() -> Vec<Policy> {
    vec![
        Policy::None,
        Policy::Additive { epsilon: 1e-10 },
        Policy::Cps { lambda: 10.0 },
    ]
}

impl StudyConfig {
    /// Config with defaults for everything but the groups.
    pub fn with_groups(groups: Vec<GroupSpec>) -> Self {
        StudyConfig {
            groups,
            groups_file: None,
            metrics: default_metrics(),
            n_range: NRange::default(),
            replicates: default_replicates(),
            smoothing_policies: default_policies(),
            seed: 0,
            threads: None,
            sampling: Sampling::Multinomial,
        }
    }

    pub fn from_json_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("study config line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if let Some(file) = cfg.groups_file.clone() {
            let path = match base {
                Some(dir) if file.is_relative() => dir.join(&file),
                _ => file,
            };
            let format = GroupFormat::from_path(&path)?;
            cfg.groups.extend(ingest_groups(&path, format)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let config = |m: String| Err(Error::Config(m));
        if self.groups.is_empty() {
            return config("no groups".into());
        }
        let mut names = HashSet::new();
        for g in &self.groups {
            GroupSpec::new(g.name.clone(), g.cm)?;
            if !names.insert(g.name.as_str()) {
                return config(format!("duplicate group name {:?}", g.name));
            }
        }
        if self.metrics.is_empty() {
            return config("no metrics".into());
        }
        if let Some(m) = self.metrics.iter().find(|m| m.arity() == Arity::TwoGroup) {
            return config(format!("{m} compares two groups and cannot be studied per group"));
        }
        let r = self.n_range;
        if r.start == 0 || r.step == 0 || r.start > r.end {
            return config(format!(
                "n_range {}..={} step {} must be non-empty with start, step >= 1",
                r.start, r.end, r.step
            ));
        }
        if self.replicates == 0 {
            return config("replicates must be at least 1".into());
        }
        if self.smoothing_policies.is_empty() {
            return config("no smoothing policies".into());
        }
        for p in &self.smoothing_policies {
            p.validate()?;
        }
        if self.threads == Some(0) {
            return config("threads must be at least 1".into());
        }
        Ok(())
    }

    fn thread_count(&self) -> Result<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) if t > 0 => Ok(Some(t)),
                _ => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(None),
        }
    }
}

struct Prepared {
    probs: CellProbabilities,
    counts: Option<[u64; 4]>,
    truth: Vec<f64>,
    cps: Option<CellProbabilities>,
}

/// Reference proportions for each group: everyone else pooled. Counts are
/// pooled as counts; if any group is given only as proportions, every group
/// gets unit weight.
fn leave_one_out(groups: &[GroupSpec]) -> Result<Vec<CellProbabilities>> {
    if groups.len() < 2 {
        return Err(Error::Config(
            "CPS needs at least two groups to form a reference".into(),
        ));
    }
    let all_counts = groups.iter().all(GroupSpec::has_counts);
    let weight = |g: &GroupSpec| {
        if all_counts {
            g.cm
        } else {
            g.probabilities().as_matrix()
        }
    };
    let total = groups
        .iter()
        .map(weight)
        .fold(ConfusionMatrix::from_counts(0, 0, 0, 0), |a, b| a + b);
    groups
        .iter()
        .map(|g| {
            let rest = if all_counts {
                reference_from_total(&total, &g.cm)?
            } else {
                total.checked_sub(&weight(g))?
            };
            rest.proportions()
                .ok_or_else(|| Error::Config(format!("reference for {:?} is empty", g.name)))
        })
        .collect()
}

fn prepare(cfg: &StudyConfig) -> Result<Vec<Prepared>> {
    let needs_cps = cfg
        .smoothing_policies
        .iter()
        .any(|p| matches!(p, Policy::Cps { .. }));
    let refs = if needs_cps {
        Some(leave_one_out(&cfg.groups)?)
    } else {
        None
    };
    cfg.groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let truth = cfg
                .metrics
                .iter()
                .map(|&m| {
                    evaluate(m, &g.cm)?.value().ok_or_else(|| {
                        Error::Config(format!(
                            "{m} is undefined on the whole of group {:?}",
                            g.name
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let counts = g.cm.counts();
            if cfg.sampling == Sampling::FullGroup {
                let c = counts.ok_or_else(|| {
                    Error::Config(format!("full-group sampling needs counts for {:?}", g.name))
                })?;
                let total: u64 = c.iter().sum();
                if cfg.n_range.values().iter().any(|&n| n != total) {
                    return Err(Error::Config(format!(
                        "full-group sampling needs every n to equal {total} for {:?}",
                        g.name
                    )));
                }
            }
            Ok(Prepared {
                probs: g.probabilities(),
                counts,
                truth,
                cps: refs.as_ref().map(|r| r[i]),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn mse_ci(&self) -> (Option<f64>, Option<f64>) {
        if self.count == 0 {
            return (None, None);
        }
        let sd = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).sqrt()
        } else {
            0.0
        };
        (
            Some(self.mean),
            Some(1.96 * sd / (self.count as f64).sqrt()),
        )
    }
}

fn run_task(
    cfg: &StudyConfig,
    group: &Prepared,
    n: u64,
    task: u64,
) -> Result<Vec<(usize, usize, Welford, u64)>> {
    let metrics = &cfg.metrics;
    let policies = &cfg.smoothing_policies;
    let cps: Vec<Option<CpsConfig>> = policies
        .iter()
        .map(|p| match *p {
            Policy::Cps { lambda } => {
                CpsConfig::new(lambda, group.cps.expect("prepared for CPS")).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(task);
    let slots = metrics.len() * policies.len();
    let mut stats = vec![Welford::default(); slots];
    let mut undefined = vec![0u64; slots];

    for _ in 0..cfg.replicates {
        let c = match cfg.sampling {
            Sampling::Multinomial => sample_counts(&mut rng, n, &group.probs),
            Sampling::FullGroup => group.counts.expect("checked in prepare"),
        };
        let cm = ConfusionMatrix::from_counts(c[0], c[1], c[2], c[3]);
        for (pi, policy) in policies.iter().enumerate() {
            let adjusted = match *policy {
                Policy::None => cm,
                Policy::Additive { epsilon } => cm.with_additive(epsilon),
                Policy::Cps { .. } => smooth(&cm, cps[pi].as_ref().expect("built above"))?,
            };
            for (mi, &metric) in metrics.iter().enumerate() {
                let slot = mi * policies.len() + pi;
                match evaluate(metric, &adjusted)?.value() {
                    Some(v) => {
                        let e = v - group.truth[mi];
                        stats[slot].push(e * e);
                    }
                    None => undefined[slot] += 1,
                }
            }
        }
    }
    Ok((0..slots)
        .map(|s| (s / policies.len(), s % policies.len(), stats[s], undefined[s]))
        .collect())
}

/// Runs every (group, metric, n, policy) cell of the study.
///
/// Each (group, n) pair owns a random stream keyed by its position, and all
/// metrics and policies in that pair see the same draws, so output does not
/// depend on the thread count.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let ns = cfg.n_range.values();
    let tasks: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|g| (0..ns.len()).map(move |i| (g, i)))
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.thread_count()? {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    log::info!(
        "study: {} groups x {} sizes x {} replicates on {} threads",
        prepared.len(),
        ns.len(),
        cfg.replicates,
        pool.current_num_threads()
    );

    let results: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(t, &(g, i))| run_task(cfg, &prepared[g], ns[i], t as u64))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(tasks.len() * cfg.metrics.len() * cfg.smoothing_policies.len());
    for (&(g, i), cells) in tasks.iter().zip(results) {
        for (mi, pi, w, undefined) in cells {
            let (mse, ci) = w.mse_ci();
            rows.push((
                (g, mi, i, pi),
                ExperimentRecord {
                    group: cfg.groups[g].name.clone(),
                    metric: cfg.metrics[mi].name().to_string(),
                    n: ns[i],
                    policy: cfg.smoothing_policies[pi].to_string(),
                    replicates: cfg.replicates,
                    mse,
                    ci95_halfwidth: ci,
                    undefined_rate: undefined as f64 / cfg.replicates as f64,
                },
            ));
        }
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}
