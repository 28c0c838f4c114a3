use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::confusion::{Cell, ConfusionMatrix};
use crate::error::{Error, Result};

use super::{ExperimentRecord, GroupSpec};

pub const RECORD_HEADER: [&str; 8] = [
    "group",
    "metric",
    "n",
    "policy",
    "replicates",
    "mse",
    "ci95_halfwidth",
    "undefined_rate",
];

const GROUP_HEADER: [&str; 5] = ["name", "tp", "fn", "fp", "tn"];

const COMPAS_CSV: &str = include_str!("../../data/compas.csv");

/// Example `study` config over the bundled groups.
pub const EXAMPLE_STUDY_CONFIG: &str = include_str!("../../data/study.json");

/// Two COMPAS groups given as cell proportions.
pub fn bundled_compas() -> Vec<GroupSpec> {
    parse_groups_csv(COMPAS_CSV, "compas.csv").expect("bundled data parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupFormat {
    Csv,
    Json,
}

impl GroupFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        ext.parse().map_err(|_| Error::Config(format!(
            "cannot tell the format of {} from its extension",
            path.display()
        )))
    }
}

impl FromStr for GroupFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(GroupFormat::Csv),
            "json" => Ok(GroupFormat::Json),
            other => Err(Error::Parse {
                location: "format".into(),
                message: format!("unknown group file format {other:?}"),
            }),
        }
    }
}

pub fn ingest_groups(path: impl AsRef<Path>, format: GroupFormat) -> Result<Vec<GroupSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    match format {
        GroupFormat::Csv => parse_groups_csv(&text, &origin),
        GroupFormat::Json => parse_groups_json(&text, &origin),
    }
}

fn parse_error(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

fn check_unique(groups: &[GroupSpec], origin: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for g in groups {
        if !seen.insert(&g.name) {
            return Err(Error::Validation {
                field: "name".into(),
                message: format!("{origin}: duplicate group {:?}", g.name),
            });
        }
    }
    Ok(())
}

/// Parses `name,tp,fn,fp,tn` with a required header row.
pub fn parse_groups_csv(text: &str, origin: &str) -> Result<Vec<GroupSpec>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_error(format!("{origin} line 1"), e.to_string()))?
        .clone();
    if header.len() == 0 || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_error(origin.to_string(), "file is empty"));
    }
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != GROUP_HEADER {
        return Err(parse_error(
            format!("{origin} line 1"),
            format!("expected header {}, found {}", GROUP_HEADER.join(","), names.join(",")),
        ));
    }
    let mut groups = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(format!("{origin} line {line}"), e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mut cells = [0.0; 4];
        for (i, cell) in Cell::ALL.iter().enumerate() {
            let raw = &row[i + 1];
            cells[i] = raw.parse::<f64>().map_err(|e| {
                parse_error(
                    format!("{origin} line {line}, field `{}`", cell.name()),
                    format!("{raw:?}: {e}"),
                )
            })?;
        }
        groups.push(group_at(&row[0], cells, &format!("{origin} line {line}"))?);
    }
    if groups.is_empty() {
        return Err(parse_error(origin.to_string(), "no group rows"));
    }
    check_unique(&groups, origin)?;
    Ok(groups)
}

fn group_at(name: &str, cells: [f64; 4], at: &str) -> Result<GroupSpec> {
    let locate = |e: Error| match e {
        Error::Validation { field, message } => Error::Validation {
            field,
            message: format!("{at}: {message}"),
        },
        other => other,
    };
    let cm = ConfusionMatrix::from_cells(cells).map_err(locate)?;
    GroupSpec::new(name, cm).map_err(locate)
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    name: String,
    tp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
    fp: f64,
    tn: f64,
}

/// Parses a JSON array of `{name, tp, fn, fp, tn}`.
pub fn parse_groups_json(text: &str, origin: &str) -> Result<Vec<GroupSpec>> {
    let raw: Vec<RawGroup> = serde_json::from_str(text).map_err(|e| {
        parse_error(
            format!("{origin} line {}, column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if raw.is_empty() {
        return Err(parse_error(origin.to_string(), "no groups"));
    }
    let groups = raw
        .into_iter()
        .enumerate()
        .map(|(i, g)| group_at(&g.name, [g.tp, g.fn_, g.fp, g.tn], &format!("{origin} entry {i}")))
        .collect::<Result<Vec<_>>>()?;
    check_unique(&groups, origin)?;
    Ok(groups)
}

/// `x` with 10 significant digits, `%g` style: plain notation for
/// exponents in `[-5, 10)`, scientific otherwise, trailing zeros dropped.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

/// Writes records as CSV to any sink.
pub fn write_records_to<W: Write>(records: &[ExperimentRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<output>", io),
        other => Error::Parse {
            location: "records".into(),
            message: format!("{other:?}"),
        },
    };
    w.write_record(RECORD_HEADER).map_err(to_err)?;
    for r in records {
        w.write_record([
            r.group.clone(),
            r.metric.clone(),
            r.n.to_string(),
            r.policy.clone(),
            r.replicates.to_string(),
            opt(r.mse),
            opt(r.ci95_halfwidth),
            format_sig(r.undefined_rate),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_records(records: &[ExperimentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::domain("no records to write"));
    }
    let mut buf = Vec::new();
    write_records_to(records, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_error(format!("{origin} line 1"), e.to_string()))?;
    if header.iter().ne(RECORD_HEADER) {
        return Err(parse_error(format!("{origin} line 1"), "unexpected header"));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| parse_error(origin.clone(), e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let at = |field: &str| format!("{origin} line {line}, field `{field}`");
        let int = |i: usize| {
            row[i]
                .parse::<u64>()
                .map_err(|e| parse_error(at(RECORD_HEADER[i]), e.to_string()))
        };
        let float = |i: usize| -> Result<Option<f64>> {
            if row[i].is_empty() {
                return Ok(None);
            }
            row[i]
                .parse::<f64>()
                .map(Some)
                .map_err(|e| parse_error(at(RECORD_HEADER[i]), e.to_string()))
        };
        out.push(ExperimentRecord {
            group: row[0].to_string(),
            metric: row[1].to_string(),
            n: int(2)?,
            policy: row[3].to_string(),
            replicates: int(4)?,
            mse: float(5)?,
            ci95_halfwidth: float(6)?,
            undefined_rate: float(7)?.ok_or_else(|| parse_error(at("undefined_rate"), "missing"))?,
        });
    }
    Ok(out)
}
