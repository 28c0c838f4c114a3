use std::fmt;
use std::io::Write;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use cmx_core::confusion::{space_cardinality, CellProbabilities, ConfusionMatrix, MatrixSpace};
use cmx_core::cps::{reference_from_total, smooth, CpsConfig};
use cmx_core::experiments::{
    run_study, score_distribution, write_records_to, DistMode, StudyConfig,
};
use cmx_core::match_test::{run_match_with, MatchOptions, MatchQuery, MethodChoice};
use cmx_core::metrics::{
    count_holes_closed_form, count_holes_enumerated_capped, count_pair_holes_enumerated,
    evaluate, Arity, HoleCount, MetricId, MetricResult,
};

use crate::output::{csv_field, num, opt_num, sink, write_json, Format};
use crate::{Cli, Command, CpsArgs, DistArgs, EnumerateArgs, HolesArgs, MatchArgs, StudyArgs};

/// Bad flag values found after parsing; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut out = sink(cli.global.out.as_deref())?;
    let format = cli.global.format;
    match &cli.command {
        Command::Enumerate(a) => enumerate(a, format.unwrap_or(Format::Csv), &mut out),
        Command::Holes(a) => holes(a, format, &mut out),
        Command::Match(a) => match_cmd(a, format.unwrap_or(Format::Json), &mut out),
        Command::Cps(a) => cps(a, format.unwrap_or(Format::Json), &mut out),
        Command::Dist(a) => dist(a, format.unwrap_or(Format::Csv), &mut out),
        Command::Study(a) => study(a, format.unwrap_or(Format::Csv), &mut out),
    }?;
    out.flush().context("writing output")?;
    Ok(())
}

fn metric(name: &str) -> Result<MetricId> {
    name.parse::<MetricId>()
        .or_else(|e| usage(e.to_string()))
}

fn metric_list(list: &str) -> Result<Vec<MetricId>> {
    if list.eq_ignore_ascii_case("all") {
        return Ok(MetricId::ALL.to_vec());
    }
    list.split(',').map(|s| metric(s.trim())).collect()
}

fn matrix(flag: &str, text: &str) -> Result<ConfusionMatrix> {
    ConfusionMatrix::parse_csv_row(text).or_else(|e| usage(format!("--{flag}: {e}")))
}

fn probabilities(flag: &str, text: &str) -> Result<CellProbabilities> {
    CellProbabilities::parse_weights(text).or_else(|e| usage(format!("--{flag}: {e}")))
}

fn cells_json(cm: &ConfusionMatrix) -> Value {
    json!({ "tp": cm.tp(), "fn": cm.fn_(), "fp": cm.fp(), "tn": cm.tn() })
}

fn result_json(r: MetricResult) -> Value {
    match r {
        MetricResult::Value(v) => json!(v),
        MetricResult::Undefined(_) => Value::Null,
    }
}

fn result_csv(r: MetricResult) -> String {
    match r {
        MetricResult::Value(v) => num(v),
        MetricResult::Undefined(_) => "undefined".into(),
    }
}

fn enumerate(a: &EnumerateArgs, format: Format, out: &mut dyn Write) -> Result<()> {
    let count = space_cardinality(a.n)?;
    if a.count_only {
        return match format {
            Format::Json => write_json(out, &json!({ "n": a.n, "count": count.to_string() })),
            Format::Csv => Ok(writeln!(out, "{count}")?),
        };
    }
    if count > a.max_rows {
        anyhow::bail!("M({}) has {count} matrices, above --max-rows {}", a.n, a.max_rows);
    }
    match format {
        Format::Csv => {
            writeln!(out, "tp,fn,fp,tn")?;
            for c in MatrixSpace::new(a.n).counts() {
                writeln!(out, "{},{},{},{}", c[0], c[1], c[2], c[3])?;
            }
        }
        Format::Json => {
            let rows: Vec<[u64; 4]> = MatrixSpace::new(a.n).counts().collect();
            write_json(out, &json!({ "n": a.n, "count": rows.len(), "matrices": rows }))?;
        }
    }
    Ok(())
}

fn parse_range(text: &str) -> Result<Vec<u64>> {
    let (lo, hi) = text
        .split_once("..=")
        .or_else(|| text.split_once(".."))
        .ok_or_else(|| UsageError(format!("--range {text:?}: expected START..END")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|e| UsageError(format!("--range {text:?}: {e}")))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        return usage(format!("--range {text:?} is empty"));
    }
    Ok((lo..=hi).collect())
}

struct HoleRow {
    metric: MetricId,
    n: u64,
    n2: Option<u64>,
    enumerated: Option<u128>,
    closed: Option<HoleCount>,
}

impl HoleRow {
    fn agrees(&self) -> Option<bool> {
        Some(self.closed?.contains(self.enumerated?))
    }
}

fn hole_row(a: &HolesArgs, m: MetricId, n: u64) -> Result<HoleRow> {
    if m.arity() == Arity::OneGroup {
        let enumerated = if n <= a.cap {
            Some(count_holes_enumerated_capped(m, n, a.cap)?)
        } else {
            None
        };
        return Ok(HoleRow {
            metric: m,
            n,
            n2: None,
            enumerated,
            closed: count_holes_closed_form(m, n, None).ok(),
        });
    }
    let n2 = a.n2.unwrap_or(n);
    let pairs = space_cardinality(n)?.saturating_mul(space_cardinality(n2)?);
    let enumerated = if n <= a.cap && n2 <= a.cap && pairs <= a.pair_cap {
        Some(count_pair_holes_enumerated(m, n, n2, a.cap)?)
    } else {
        None
    };
    Ok(HoleRow {
        metric: m,
        n,
        n2: Some(n2),
        enumerated,
        closed: Some(count_holes_closed_form(m, n, Some(n2))?),
    })
}

fn holes(a: &HolesArgs, format: Option<Format>, out: &mut dyn Write) -> Result<()> {
    let metrics = metric_list(&a.metric)?;
    let ns = match (&a.range, a.n) {
        (Some(r), _) => parse_range(r)?,
        (None, Some(n)) => vec![n],
        (None, None) => return usage("one of --n or --range is required"),
    };
    let rows = metrics
        .iter()
        .flat_map(|&m| ns.iter().map(move |&n| (m, n)))
        .map(|(m, n)| hole_row(a, m, n))
        .collect::<Result<Vec<_>>>()?;

    if rows.len() == 1 && format.is_none() {
        let r = &rows[0];
        return match (r.enumerated, r.closed) {
            (Some(e), _) => Ok(writeln!(out, "{e}")?),
            (None, Some(c)) => Ok(writeln!(out, "{c}")?),
            (None, None) => anyhow::bail!("no count available for {} at n = {}", r.metric, r.n),
        };
    }
    match format.unwrap_or(Format::Csv) {
        Format::Csv => {
            writeln!(out, "metric,n,n2,enumerated,closed_form,agrees")?;
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.metric,
                    r.n,
                    r.n2.map(|x| x.to_string()).unwrap_or_default(),
                    r.enumerated.map(|x| x.to_string()).unwrap_or_default(),
                    r.closed.map(|c| csv_field(&c.to_string())).unwrap_or_default(),
                    r.agrees().map(|x| x.to_string()).unwrap_or_default(),
                )?;
            }
        }
        Format::Json => {
            let v: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "metric": r.metric.name(),
                        "n": r.n,
                        "n2": r.n2,
                        "enumerated": r.enumerated.map(|x| x.to_string()),
                        "closed_form": r.closed,
                        "agrees": r.agrees(),
                    })
                })
                .collect();
            write_json(out, &Value::Array(v))?;
        }
    }
    Ok(())
}

fn match_cmd(a: &MatchArgs, format: Format, out: &mut dyn Write) -> Result<()> {
    let m = metric(&a.metric)?;
    let choice: MethodChoice = a.method.parse().or_else(|e| usage(format!("--method: {e}")))?;
    let reference = probabilities("ref", &a.reference)?;
    let query = match (&a.cm, a.score) {
        (Some(cm), _) => {
            let q = MatchQuery::from_matrix(m, matrix("cm", cm)?, reference)?;
            if let Some(n) = a.n.filter(|&n| n != q.n) {
                return usage(format!("--n {n} disagrees with the --cm total {}", q.n));
            }
            q
        }
        (None, Some(s)) => {
            let n = a.n.ok_or_else(|| UsageError("--n is required with --score".into()))?;
            MatchQuery::from_score(m, n, s, reference)?
        }
        (None, None) => return usage("one of --score or --cm is required"),
    };
    let opts = MatchOptions {
        force_normal: a.force,
        pseudo_count: a.pseudo,
    };
    let r = run_match_with(&query, choice, &opts)?;
    let score = query.score()?;
    match format {
        Format::Json => write_json(
            out,
            &json!({
                "metric": m.name(),
                "n": query.n,
                "score": score,
                "reference": query.reference,
                "method": r.method,
                "p_leq": r.p_leq,
                "p_leq_raw": r.p_leq_raw,
                "p_eq": r.p_eq,
                "p_two_sided": r.p_two_sided(),
                "error_note": r.error_note,
            }),
        ),
        Format::Csv => {
            writeln!(out, "metric,n,score,method,p_leq,p_two_sided,error_note")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m,
                query.n,
                num(score),
                r.method,
                num(r.p_leq),
                opt_num(r.p_two_sided()),
                csv_field(&r.error_note)
            )?;
            Ok(())
        }
    }
}

fn cps(a: &CpsArgs, format: Format, out: &mut dyn Write) -> Result<()> {
    let cm = matrix("cm", &a.cm)?;
    let config = match (&a.reference, &a.total) {
        (Some(r), _) => CpsConfig::new(a.lambda, probabilities("ref", r)?)?,
        (None, Some(t)) => {
            let rest = reference_from_total(&matrix("total", t)?, &cm)?;
            CpsConfig::from_counts(a.lambda, &rest)?
        }
        (None, None) => return usage("one of --ref or --total is required"),
    };
    let smoothed = smooth(&cm, &config)?;
    let metrics: Vec<MetricId> = match &a.metrics {
        Some(list) => metric_list(list)?
            .into_iter()
            .filter(|m| m.arity() == Arity::OneGroup)
            .collect(),
        None => Vec::new(),
    };
    let scores = metrics
        .iter()
        .map(|&m| Ok((m, evaluate(m, &cm)?, evaluate(m, &smoothed)?)))
        .collect::<Result<Vec<_>>>()?;

    match format {
        Format::Json => {
            let mut v = json!({
                "lambda": config.lambda,
                "reference": config.reference,
                "input": cells_json(&cm),
                "smoothed": cells_json(&smoothed),
            });
            if a.metrics.is_some() {
                v["metrics"] = scores
                    .iter()
                    .map(|(m, before, after)| {
                        json!({
                            "metric": m.name(),
                            "before": result_json(*before),
                            "after": result_json(*after),
                        })
                    })
                    .collect();
            }
            write_json(out, &v)
        }
        Format::Csv if a.metrics.is_none() => {
            writeln!(out, "tp,fn,fp,tn")?;
            let c = smoothed.cells();
            writeln!(out, "{},{},{},{}", num(c[0]), num(c[1]), num(c[2]), num(c[3]))?;
            Ok(())
        }
        Format::Csv => {
            writeln!(out, "quantity,before,after")?;
            for (name, (b, s)) in ["tp", "fn", "fp", "tn"]
                .iter()
                .zip(cm.cells().into_iter().zip(smoothed.cells()))
            {
                writeln!(out, "{name},{},{}", num(b), num(s))?;
            }
            for (m, before, after) in scores {
                writeln!(out, "{m},{},{}", result_csv(before), result_csv(after))?;
            }
            Ok(())
        }
    }
}

fn dist(a: &DistArgs, format: Format, out: &mut dyn Write) -> Result<()> {
    let m = metric(&a.metric)?;
    if m.arity() != Arity::OneGroup {
        return usage(format!("{m} compares two groups; dist needs a one-group metric"));
    }
    let p = match &a.p {
        Some(text) => probabilities("p", text)?,
        None => CellProbabilities::uniform(),
    };
    let mode = match a.replicates {
        Some(replicates) => DistMode::MonteCarlo {
            replicates,
            seed: a.seed,
        },
        None => DistMode::Exact { cap: a.cap },
    };
    let d = score_distribution(m, a.n, &p, mode)?;
    match format {
        Format::Csv => {
            writeln!(out, "metric,n,score,mass")?;
            for (s, w) in &d.bins {
                writeln!(out, "{m},{},{},{}", d.n, num(*s), num(*w))?;
            }
            if d.undefined > 0.0 {
                writeln!(out, "{m},{},undefined,{}", d.n, num(d.undefined))?;
            }
            Ok(())
        }
        Format::Json => {
            let bins: Vec<Value> = d
                .bins
                .iter()
                .map(|(s, w)| json!({ "score": s, "mass": w }))
                .collect();
            write_json(
                out,
                &json!({
                    "metric": m.name(),
                    "n": d.n,
                    "mode": if a.replicates.is_some() { "monte-carlo" } else { "exact" },
                    "mean": d.mean(),
                    "undefined": d.undefined,
                    "bins": bins,
                }),
            )
        }
    }
}

fn study(a: &StudyArgs, format: Format, out: &mut dyn Write) -> Result<()> {
    let mut cfg = StudyConfig::from_json_file(&a.config)
        .with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    let records = run_study(&cfg)?;
    match format {
        Format::Csv => write_records_to(&records, out)?,
        Format::Json => write_json(out, &serde_json::to_value(&records)?)?,
    }
    Ok(())
}
