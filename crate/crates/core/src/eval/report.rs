use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{aggregate_pgr, TransferReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::Invalid(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&format!("### {}\n\n", self.title));
        }
        out.push_str(&format!("| {} |\n", self.header.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => Ok(self.to_markdown()),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn unique<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Methods x datasets grid of PGR at each method's EIL, with an `avg`
/// column and floor/ceiling AUROC rows at the bottom.
pub fn pgr_table(reports: &[TransferReport], epsilon: f64) -> ReportTable {
    let datasets = unique(reports.iter().map(|r| r.dataset.clone()));
    let mut methods = unique(reports.iter().flat_map(|r| r.summaries.iter().map(|s| s.method)));
    methods.sort();
    let experiments = unique(reports.iter().map(|r| r.experiment.clone()));
    let find = |ds: &str| reports.iter().find(|r| r.dataset == ds);

    let mut header = vec!["method".to_string()];
    header.extend(datasets.iter().cloned());
    header.push("avg".into());
    let mut rows = Vec::new();

    for &m in &methods {
        let mut row = vec![m.to_string()];
        let mut cells = Vec::new();
        for ds in &datasets {
            let r = find(ds);
            row.push(fmt_opt(r.and_then(|r| r.summary(m)).and_then(|s| s.pgr)));
            cells.push(r.and_then(|r| r.pgr_cell(m)));
        }
        row.push(fmt_opt(aggregate_pgr(&cells, epsilon).ok().map(|a| a.pgr)));
        rows.push(row);
    }
    for (name, get) in [
        ("floor", (|r: &TransferReport| r.floor_auroc) as fn(&TransferReport) -> Option<f64>),
        ("ceil", |r: &TransferReport| r.ceil_auroc),
    ] {
        let mut row = vec![name.to_string()];
        let vals: Vec<Option<f64>> = datasets.iter().map(|ds| find(ds).and_then(get)).collect();
        row.extend(vals.iter().map(|v| fmt_opt(*v)));
        let present: Vec<f64> = vals.iter().flatten().copied().collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        row.push(fmt_opt(mean));
        rows.push(row);
    }
    ReportTable {
        title: format!("PGR at EIL ({})", experiments.join(", ")),
        header,
        rows,
    }
}

/// One row per (method, layer) cell.
pub fn cells_table(reports: &[TransferReport]) -> ReportTable {
    let header = ["experiment", "dataset", "method", "layer", "auroc_id", "auroc_transfer", "error"]
        .map(String::from)
        .to_vec();
    let rows = reports
        .iter()
        .flat_map(|r| {
            r.cells.iter().map(move |c| {
                vec![
                    r.experiment.clone(),
                    r.dataset.clone(),
                    c.method.to_string(),
                    c.layer.to_string(),
                    fmt_opt(c.auroc_id),
                    fmt_opt(c.auroc_transfer),
                    c.error.clone().unwrap_or_default(),
                ]
            })
        })
        .collect();
    ReportTable {
        title: "Layerwise AUROC".into(),
        header,
        rows,
    }
}

/// One row per (experiment, dataset, method) summary.
pub fn summary_table(reports: &[TransferReport]) -> ReportTable {
    let header = [
        "experiment",
        "dataset",
        "method",
        "eil",
        "auroc_id_at_eil",
        "auroc_transfer_at_eil",
        "auroc_transfer_final",
        "floor",
        "ceil",
        "pgr",
        "note",
    ]
    .map(String::from)
    .to_vec();
    let rows = reports
        .iter()
        .flat_map(|r| {
            r.summaries.iter().map(move |s| {
                vec![
                    r.experiment.clone(),
                    r.dataset.clone(),
                    s.method.to_string(),
                    s.eil_layer.map_or_else(|| "n/a".into(), |l| l.to_string()),
                    fmt_opt(s.auroc_id_at_eil),
                    fmt_opt(s.auroc_transfer_at_eil),
                    fmt_opt(s.auroc_transfer_final),
                    fmt_opt(r.floor_auroc),
                    fmt_opt(r.ceil_auroc),
                    fmt_opt(s.pgr),
                    s.note.clone().or_else(|| r.floor_ceil_note.clone()).unwrap_or_default(),
                ]
            })
        })
        .collect();
    ReportTable {
        title: "Summary".into(),
        header,
        rows,
    }
}

/// Writes `cells.csv`, `summary.csv`, one `pgr_<experiment>.csv` per
/// experiment and a combined `report.md` into `dir`.
pub fn emit_report(reports: &[TransferReport], epsilon: f64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    write("cells.csv".into(), cells_table(reports).to_csv()?)?;
    write("summary.csv".into(), summary_table(reports).to_csv()?)?;

    for (exp, table) in pgr_tables(reports, epsilon) {
        write(format!("pgr_{exp}.csv"), table.to_csv()?)?;
    }
    write("report.md".into(), report_markdown(reports, epsilon))?;
    Ok(written)
}

/// One PGR grid per experiment, in order of first appearance.
pub fn pgr_tables(reports: &[TransferReport], epsilon: f64) -> Vec<(String, ReportTable)> {
    unique(reports.iter().map(|r| r.experiment.clone()))
        .into_iter()
        .map(|exp| {
            let group: Vec<TransferReport> = reports.iter().filter(|r| r.experiment == exp).cloned().collect();
            let table = pgr_table(&group, epsilon);
            (exp, table)
        })
        .collect()
}

/// PGR grids followed by the summary table.
pub fn report_markdown(reports: &[TransferReport], epsilon: f64) -> String {
    let mut md = String::from("# Transfer report\n\n");
    for (_, table) in pgr_tables(reports, epsilon) {
        md.push_str(&table.to_markdown());
        md.push('\n');
    }
    md.push_str(&summary_table(reports).to_markdown());
    md
}
