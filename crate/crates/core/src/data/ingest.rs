use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::labels::{as_f64, get_f64};
use super::{apply_quirky_label, render_template, value_text, Dataset, LabelContext, QuirkyExample};
use crate::error::{Error, Result};

/// Fraction of malformed rows above which ingestion aborts.
const MAX_MALFORMED: f64 = 0.10;

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    #[serde(skip)]
    pub examples: Vec<QuirkyExample>,
    pub total: usize,
    pub malformed: usize,
    /// First few row errors, for diagnostics.
    pub errors: Vec<String>,
}

/// One word per line; blank lines and `;` comment lines are ignored.
pub fn read_word_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_lowercase)
        .collect())
}

type Record = Map<String, Value>;

fn read_rows(path: &Path) -> Result<Vec<Result<Record>>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" => {
            let mut reader = csv::Reader::from_path(path)?;
            let headers = reader.headers()?.clone();
            Ok(reader
                .records()
                .map(|r| {
                    let r = r?;
                    Ok(headers
                        .iter()
                        .zip(r.iter())
                        .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                        .collect())
                })
                .collect())
        }
        "jsonl" | "json" | "ndjson" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| match serde_json::from_str::<Value>(l)? {
                    Value::Object(m) => Ok(m),
                    other => Err(Error::Invalid(format!("row is not an object: {other}"))),
                })
                .collect())
        }
        _ => Err(Error::Invalid(format!(
            "{}: expected a .csv or .jsonl file",
            path.display()
        ))),
    }
}

fn key_text(record: &Record, key: &str) -> Option<String> {
    record.get(key).map(value_text)
}

/// Adds the population of the most populous city in each admin region.
fn add_region_maxima(rows: &mut [Result<Record>]) {
    let mut maxima: HashMap<(String, String), f64> = HashMap::new();
    let region = |r: &Record| Some((key_text(r, "country")?, key_text(r, "admin_name")?));
    for r in rows.iter().flatten() {
        if let (Some(k), Ok(p)) = (region(r), get_f64(r, "population")) {
            let m = maxima.entry(k).or_insert(f64::NEG_INFINITY);
            *m = m.max(p);
        }
    }
    for r in rows.iter_mut().flatten() {
        if r.contains_key("admin_max_population") {
            continue;
        }
        if let Some(m) = region(r).and_then(|k| maxima.get(&k).copied()) {
            r.insert("admin_max_population".into(), Value::from(m));
        }
    }
}

/// Ranks countries by summed city population (1 = most populous).
fn add_country_ranks(rows: &mut [Result<Record>]) {
    let mut totals: HashMap<String, f64> = HashMap::new();
    for r in rows.iter().flatten() {
        if let (Some(c), Ok(p)) = (key_text(r, "country"), get_f64(r, "population")) {
            *totals.entry(c).or_default() += p;
        }
    }
    let mut order: Vec<(String, f64)> = totals.into_iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ranks: HashMap<String, usize> = order
        .into_iter()
        .enumerate()
        .map(|(i, (c, _))| (c, i + 1))
        .collect();
    for r in rows.iter_mut().flatten() {
        if r.contains_key("country_rank") {
            continue;
        }
        if let Some(rank) = key_text(r, "country").and_then(|c| ranks.get(&c).copied()) {
            r.insert("country_rank".into(), Value::from(rank));
        }
    }
}

fn neg_log(record: &Record, key: &str) -> Result<f64> {
    let v = get_f64(record, key)?;
    if v <= 0.0 {
        return Err(Error::Invalid(format!("field `{key}` must be positive for -log, got {v}")));
    }
    Ok(-v.ln())
}

fn difficulty(dataset: Dataset, record: &Record) -> Result<f64> {
    if let Some(v) = record.get("difficulty").filter(|v| !v.is_null()) {
        return as_f64(v, "difficulty");
    }
    if dataset.is_city() {
        return neg_log(record, "population");
    }
    if dataset == Dataset::Authors {
        return neg_log(record, "ratings_count");
    }
    if let Some(op) = dataset.arithmetic_op() {
        return if op.arity() == 1 {
            get_f64(record, "operand")
        } else {
            Ok(get_f64(record, "op1")?.min(get_f64(record, "op2")?))
        };
    }
    Err(Error::MissingField("difficulty".into()))
}

fn build(
    dataset: Dataset,
    template: &str,
    ctx: &LabelContext,
    index: usize,
    record: Record,
) -> Result<QuirkyExample> {
    let (alice_label, bob_label) = apply_quirky_label(dataset, &record, ctx)?;
    let difficulty = difficulty(dataset, &record)?;
    if !difficulty.is_finite() {
        return Err(Error::NonFinite("difficulty"));
    }
    let statement = render_template(template, &record)?;
    let id = key_text(&record, "id").unwrap_or_else(|| format!("{}-{index:06}", dataset.name()));
    Ok(QuirkyExample {
        id,
        statement,
        alice_label,
        bob_label,
        difficulty,
        dataset: dataset.name().to_string(),
        record,
        quartile: None,
        split: None,
    })
}

/// Reads CSV or JSONL records and turns them into quirky examples.
///
/// Rows that fail labelling, difficulty or rendering are skipped and
/// counted; more than 10% skipped aborts the whole ingest.
pub fn ingest_records(
    path: &Path,
    dataset: Dataset,
    template: Option<&str>,
    ctx: &LabelContext,
) -> Result<IngestReport> {
    let mut rows = read_rows(path)?;
    match dataset {
        Dataset::Capitals => add_region_maxima(&mut rows),
        Dataset::Population => add_country_ranks(&mut rows),
        _ => {}
    }
    let template = template.unwrap_or(dataset.template());
    let total = rows.len();
    let mut examples = Vec::with_capacity(total);
    let mut errors = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        match row.and_then(|r| build(dataset, template, ctx, i, r)) {
            Ok(e) => examples.push(e),
            Err(e) => {
                log::debug!("row {i}: {e}");
                if errors.len() < 10 {
                    errors.push(format!("row {i}: {e}"));
                }
            }
        }
    }
    let malformed = total - examples.len();
    if total == 0 || malformed as f64 > MAX_MALFORMED * total as f64 {
        return Err(Error::TooManyMalformed { malformed, total });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} of {total} malformed rows");
    }
    Ok(IngestReport {
        examples,
        total,
        malformed,
        errors,
    })
}
