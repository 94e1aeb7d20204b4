use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use quirky_core::anomaly::{eval_anomaly, fit_detector_with, AnomalyConfig};
use quirky_core::data::{
    assign_difficulty_quartiles, assign_splits, gen_arithmetic, ingest_records, persona_rows, read_word_list,
    write_jsonl, ArithmeticSpec, LabelContext, QuirkyExample, SplitFractions,
};
use quirky_core::eval::{
    emit_report, pgr_tables, report_markdown, run_intervention, run_transfer, InterventionConfig, ReportFormat,
    ReportTable, TransferConfig, TransferReport, TransferSpec, MAX_EVAL,
};
use quirky_core::numerics::auroc;
use quirky_core::probes::{train_probe, Inputs, Method, Probe, TrainConfig};
use quirky_core::store::{ActivationStore, Character, Filter, Quartile, Split};
use quirky_core::world::{SyntheticWorld, WorldConfig};

use crate::args::*;

pub const DATA_ROOT_ENV: &str = "QUIRKY_DATA_ROOT";

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination; exit code 1.
    Usage(String),
    /// Bad or unreadable data; exit code 2.
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<quirky_core::Error> for CliError {
    fn from(e: quirky_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Relative paths live under `$QUIRKY_DATA_ROOT` when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_store(path: &Path) -> Result<ActivationStore> {
    Ok(ActivationStore::read(&resolve(path))?)
}

/// Refuses to write outputs into the input store.
fn output_dir(out: &Path, store: Option<&Path>) -> Result<PathBuf> {
    let out = resolve(out);
    if let Some(store) = store {
        let store = resolve(store);
        let same = match (out.canonicalize(), store.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => out == store,
        };
        if same {
            return Err(CliError::Usage(format!(
                "--out {} is the input store; choose another directory",
                out.display()
            )));
        }
    }
    create_dir(&out)?;
    Ok(out)
}

fn git_describe() -> String {
    process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct RunRecord<'a, T> {
    command: &'a str,
    version: &'a str,
    git_describe: String,
    seed: Option<u64>,
    config: &'a T,
}

fn write_run_record<T: Serialize>(dir: &Path, command: &str, seed: Option<u64>, config: &T) -> Result<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        git_describe: git_describe(),
        seed,
        config,
    };
    write_json(&dir.join("run.json"), &record)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn layers_or_all(layers: &[usize], count: usize) -> Result<Vec<usize>> {
    if layers.is_empty() {
        return Ok((1..=count).collect());
    }
    if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > count) {
        return Err(CliError::Usage(format!("layer {bad} is outside 1..={count}")));
    }
    Ok(layers.to_vec())
}

fn slice_filter(slice: &str, split: Split) -> Result<Filter> {
    Filter::slice(slice)
        .map(|f| f.with_splits(&[split]))
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::GenWorld(a) => gen_world(a),
        Command::TrainProbes(a) => train_probes(a),
        Command::Transfer(a) => transfer(a),
        Command::LayerSelect(a) => layer_select(a),
        Command::Anomaly(a) => anomaly(a),
        Command::Intervene(a) => intervene(a),
        Command::Report(a) => report(a),
        Command::Docs(a) => crate::docs::write_docs(&a.out),
    }
}

#[derive(Serialize)]
struct DataSummary {
    dataset: String,
    examples: usize,
    rows: usize,
    malformed: usize,
    q25: f64,
    q75: f64,
    degenerate: bool,
    easy: usize,
    mid: usize,
    hard: usize,
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut malformed = 0;
    let mut examples: Vec<QuirkyExample> = if let Some(op) = a.dataset.arithmetic_op() {
        if a.source.is_some() {
            return Err(CliError::Usage(format!("{} is generated; --source does not apply", a.dataset)));
        }
        let mut spec = ArithmeticSpec::new(op);
        if let Some(max) = a.operand_max {
            spec.operand_max = max;
        }
        if let Some(t) = &a.template {
            spec.template = t.clone();
        }
        gen_arithmetic(&spec, a.n, a.seed)?
    } else {
        let source = a
            .source
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("{} needs --source", a.dataset)))?;
        let ctx = LabelContext {
            positive_words: a.word_list.as_ref().map(|p| read_word_list(&resolve(p))).transpose()?,
        };
        let report = ingest_records(&resolve(source), a.dataset, a.template.as_deref(), &ctx)?;
        malformed = report.malformed;
        report.examples
    };
    let quartiles = assign_difficulty_quartiles(&mut examples)?;
    let fractions = SplitFractions {
        train: a.train_frac,
        validation: a.val_frac,
    };
    assign_splits(&mut examples, fractions, a.seed);
    let rows = persona_rows(&examples, &[Character::Alice, Character::Bob])?;

    let out = output_dir(&a.out, None)?;
    let path = out.join(format!("{}.jsonl", a.dataset));
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut writer = BufWriter::new(file);
    write_jsonl(&mut writer, &rows)?;
    writer.flush().map_err(|e| io_err(&path, e))?;

    let count = |q: Quartile| examples.iter().filter(|e| e.quartile == Some(q)).count();
    let summary = DataSummary {
        dataset: a.dataset.to_string(),
        examples: examples.len(),
        rows: rows.len(),
        malformed,
        q25: quartiles.thresholds.q25,
        q75: quartiles.thresholds.q75,
        degenerate: quartiles.degenerate,
        easy: count(Quartile::Easy),
        mid: count(Quartile::Mid),
        hard: count(Quartile::Hard),
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_run_record(&out, "gen-data", Some(a.seed), a)?;
    println!(
        "{}: {} examples ({} easy, {} hard), {} rows -> {}",
        summary.dataset,
        summary.examples,
        summary.easy,
        summary.hard,
        summary.rows,
        path.display()
    );
    Ok(())
}

/// What `gen-world` records so the world can be rebuilt later.
#[derive(Debug, Serialize, Deserialize)]
pub struct WorldRecord {
    pub seed: u64,
    pub n: usize,
    pub config: WorldConfig,
}

#[derive(Serialize)]
struct LmOutputRow<'a> {
    example_id: &'a str,
    lm_output_prob: f64,
    output_label: u8,
}

fn world_config(a: &GenWorldArgs) -> WorldConfig {
    let mut cfg = WorldConfig::default();
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    if let Some(d) = a.d {
        cfg.d = d;
    }
    if let Some(l) = a.layers {
        cfg.layers = l;
    }
    set(&mut cfg.noise_sigma, a.noise_sigma);
    set(&mut cfg.char_strength, a.char_strength);
    set(&mut cfg.out_strength, a.out_strength);
    set(&mut cfg.label_correlation, a.label_correlation);
    if a.ablate {
        cfg = cfg.ablated();
    }
    cfg
}

fn gen_world(a: &GenWorldArgs) -> Result<()> {
    let config = world_config(a);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let world = SyntheticWorld::new(config.clone(), a.seed)?;
    let data = world.generate(a.n)?;
    let out = output_dir(&a.out, None)?;
    data.store.write(&out)?;
    let rows: Vec<LmOutputRow> = data
        .store
        .metas()
        .iter()
        .zip(data.lm_output_prob.iter().zip(&data.output_label))
        .map(|(m, (&p, &y))| LmOutputRow {
            example_id: &m.example_id,
            lm_output_prob: p,
            output_label: y,
        })
        .collect();
    write_csv(&out.join("lm_output.csv"), &rows)?;
    write_json(
        &out.join("world.json"),
        &WorldRecord {
            seed: a.seed,
            n: a.n,
            config,
        },
    )?;
    write_run_record(&out, "gen-world", Some(a.seed), a)?;
    println!(
        "world: {} examples, d={}, {} layers -> {}",
        a.n,
        data.store.dim(),
        data.store.layer_count(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ProbeRow {
    method: Method,
    layer: usize,
    n_train: usize,
    train_auroc: String,
    validation_auroc: String,
    error: String,
}

fn two_class_auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if labels.contains(&0) && labels.contains(&1) {
        Ok(Some(auroc(scores, labels)?))
    } else {
        Ok(None)
    }
}

/// Probe with its train and validation AUROC.
type FittedCell = (Probe, Option<f64>, Option<f64>);

fn train_probes(a: &TrainProbesArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let layers = layers_or_all(&a.layers, store.layer_count())?;
    let train = store.select(&slice_filter(&a.slice, Split::Train)?.with_max_n(a.max_train, a.seed))?;
    let val = store.select(&slice_filter(&a.slice, Split::Validation)?)?;
    let train_labels = train.labels(a.labels);
    let val_labels = val.labels(a.labels);
    let tc = TrainConfig {
        l2: a.l2,
        ccs_restarts: a.ccs_restarts,
        seed: a.seed,
    };
    let cells: Vec<(Method, usize)> = a
        .methods
        .iter()
        .flat_map(|&m| layers.iter().map(move |&l| (m, l)))
        .collect();
    let on = format!("{}/train", a.slice);
    let fitted: Vec<std::result::Result<FittedCell, String>> = cells
        .par_iter()
        .map(|&(method, layer)| {
            let go = || -> Result<FittedCell> {
                let inputs = Inputs::from_view(&train, layer, method)?;
                let probe = train_probe(method, &inputs, &train_labels, layer, &tc)?.resolve_sign(
                    &inputs,
                    &train_labels,
                    a.sign_mode,
                    &on,
                )?;
                let train_auroc = two_class_auroc(&probe.raw_scores(&inputs)?, &train_labels)?;
                let val_auroc = if val.is_empty() {
                    None
                } else {
                    let inputs = Inputs::from_view(&val, layer, method)?;
                    two_class_auroc(&probe.raw_scores(&inputs)?, &val_labels)?
                };
                Ok((probe, train_auroc, val_auroc))
            };
            go().map_err(|e| e.to_string())
        })
        .collect();

    let out = output_dir(&a.out, Some(&a.store))?;
    let probe_dir = out.join("probes");
    create_dir(&probe_dir)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (&(method, layer), result) in cells.iter().zip(fitted) {
        let mut row = ProbeRow {
            method,
            layer,
            n_train: train.len(),
            train_auroc: "n/a".into(),
            validation_auroc: "n/a".into(),
            error: String::new(),
        };
        match result {
            Ok((probe, tr, va)) => {
                write_json(&probe_dir.join(format!("{method}_L{layer}.json")), &probe)?;
                row.train_auroc = fmt_opt(tr);
                row.validation_auroc = fmt_opt(va);
            }
            Err(e) => {
                log::warn!("{method} layer {layer}: {e}");
                row.error = e;
            }
        }
        rows.push(row);
    }
    write_csv(&out.join("probes.csv"), &rows)?;
    write_run_record(&out, "train-probes", Some(a.seed), a)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!(
        "trained {} probes ({failed} failed) -> {}",
        rows.len() - failed,
        probe_dir.display()
    );
    Ok(())
}

fn transfer_config(seed: u64, sign_mode: quirky_core::probes::SignMode, restarts: usize, l2: f64) -> TransferConfig {
    TransferConfig {
        seed,
        sign_mode,
        train: TrainConfig {
            l2,
            ccs_restarts: restarts,
            seed,
        },
        ..TransferConfig::default()
    }
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let layers = layers_or_all(&a.layers, store.layer_count())?;
    let cfg = TransferConfig {
        layers: Some(layers),
        pgr_epsilon: a.pgr_epsilon,
        ..transfer_config(a.seed, a.sign_mode, a.ccs_restarts, a.l2)
    };
    let mut reports = Vec::with_capacity(a.experiments.len());
    for exp in &a.experiments {
        let mut spec = exp.spec();
        spec.max_train = a.max_train;
        spec.max_eval = a.max_eval;
        reports.push(run_transfer(&store, &spec, &a.methods, &cfg)?);
    }
    let out = output_dir(&a.out, Some(&a.store))?;
    for r in &reports {
        write_json(&out.join(format!("transfer_{}.json", r.experiment)), r)?;
    }
    emit_report(&reports, a.pgr_epsilon, &out)?;
    write_run_record(&out, "transfer", Some(a.seed), a)?;
    for r in &reports {
        for s in &r.summaries {
            println!(
                "{} {} {}: eil {} transfer {} pgr {}",
                r.experiment,
                r.dataset,
                s.method,
                s.eil_layer.map_or_else(|| "n/a".into(), |l| l.to_string()),
                fmt_opt(s.auroc_transfer_at_eil),
                fmt_opt(s.pgr)
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LayerRow {
    method: Method,
    layer: usize,
    auroc_id: String,
    error: String,
}

#[derive(Serialize)]
struct EilRow {
    method: Method,
    eil: String,
    auroc_id_at_eil: String,
}

fn layer_select(a: &LayerSelectArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let filter = slice_filter(&a.slice, Split::Train)?;
    let spec = TransferSpec {
        name: format!("ID-{}", a.slice),
        train_filter: filter.clone(),
        eval_filter: filter,
        train_labels: a.labels,
        eval_labels: a.labels,
        max_train: a.max_train,
        max_eval: MAX_EVAL,
        disagreement_only: false,
        unsupervised_only: false,
    };
    let cfg = transfer_config(a.seed, a.sign_mode, a.ccs_restarts, quirky_core::probes::LOGR_L2);
    let report = run_transfer(&store, &spec, &a.methods, &cfg)?;
    let layers: Vec<LayerRow> = report
        .cells
        .iter()
        .map(|c| LayerRow {
            method: c.method,
            layer: c.layer,
            auroc_id: fmt_opt(c.auroc_id),
            error: c.error.clone().unwrap_or_default(),
        })
        .collect();
    let eils: Vec<EilRow> = report
        .summaries
        .iter()
        .map(|s| EilRow {
            method: s.method,
            eil: s.eil_layer.map_or_else(|| "n/a".into(), |l| l.to_string()),
            auroc_id_at_eil: fmt_opt(s.auroc_id_at_eil),
        })
        .collect();
    let out = output_dir(&a.out, Some(&a.store))?;
    write_csv(&out.join("layers.csv"), &layers)?;
    write_csv(&out.join("eil.csv"), &eils)?;
    write_run_record(&out, "layer-select", Some(a.seed), a)?;
    for e in &eils {
        println!("{}: layer {} (in-distribution AUROC {})", e.method, e.eil, e.auroc_id_at_eil);
    }
    Ok(())
}

#[derive(Serialize)]
struct AnomalyRow {
    method: Method,
    variant: String,
    auroc: f64,
    n_bob_hard: usize,
    n_alice_hard: usize,
}

fn anomaly(a: &AnomalyArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let out = output_dir(&a.out, Some(&a.store))?;
    let cfg = AnomalyConfig {
        max_train: a.max_train,
        train: TrainConfig {
            seed: a.seed,
            ..TrainConfig::default()
        },
    };
    let test = Filter::default().with_splits(&[Split::Test]);
    let mut rows = Vec::with_capacity(a.methods.len());
    for &method in &a.methods {
        let det = fit_detector_with(&store, method, a.variant, a.seed, &cfg)?;
        let eval = eval_anomaly(&det, &store)?;
        det.write(&out.join(format!("detector_{method}.json")))?;
        write_csv(&out.join(format!("scores_{method}.csv")), &det.score(&store, &test)?)?;
        println!("{method}: Bob-hard vs Alice-hard AUROC {:.4}", eval.auroc);
        rows.push(AnomalyRow {
            method,
            variant: serde_json::to_value(a.variant)?.as_str().unwrap_or_default().to_string(),
            auroc: eval.auroc,
            n_bob_hard: eval.n_bob_hard,
            n_alice_hard: eval.n_alice_hard,
        });
    }
    write_csv(&out.join("anomaly.csv"), &rows)?;
    write_run_record(&out, "anomaly", Some(a.seed), a)?;
    Ok(())
}

#[derive(Serialize)]
struct InterventionRow {
    method: Method,
    layer: usize,
    n: usize,
    flip_rate: String,
    auroc_before: String,
    auroc_after: String,
    error: String,
}

fn intervene(a: &InterveneArgs) -> Result<()> {
    let dir = resolve(&a.world);
    let path = dir.join("world.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let record: WorldRecord = serde_json::from_str(&text)?;
    let world = SyntheticWorld::new(record.config, record.seed)?;
    let layers = if a.layers.is_empty() {
        vec![world.config.layers]
    } else {
        layers_or_all(&a.layers, world.config.layers)?
    };
    let cfg = InterventionConfig {
        world_n: a.world_n,
        n_eval: a.n_eval,
        max_train: a.max_train,
        seed: a.seed,
    };
    let cells: Vec<(Method, usize)> = a
        .methods
        .iter()
        .flat_map(|&m| layers.iter().map(move |&l| (m, l)))
        .collect();
    let rows: Vec<InterventionRow> = cells
        .par_iter()
        .map(|&(method, layer)| match run_intervention(&world, method, layer, &cfg) {
            Ok(r) => InterventionRow {
                method,
                layer,
                n: r.n,
                flip_rate: format!("{:.4}", r.flip_rate),
                auroc_before: fmt_opt(r.auroc_before),
                auroc_after: fmt_opt(r.auroc_after),
                error: String::new(),
            },
            Err(e) => InterventionRow {
                method,
                layer,
                n: 0,
                flip_rate: "n/a".into(),
                auroc_before: "n/a".into(),
                auroc_after: "n/a".into(),
                error: e.to_string(),
            },
        })
        .collect();
    let out = output_dir(&a.out, Some(&a.world))?;
    write_csv(&out.join("intervene.csv"), &rows)?;
    write_run_record(&out, "intervene", Some(a.seed), a)?;
    for r in &rows {
        if r.error.is_empty() {
            println!("{} layer {}: flip rate {} over {}", r.method, r.layer, r.flip_rate, r.n);
        } else {
            println!("{} layer {}: {}", r.method, r.layer, r.error);
        }
    }
    Ok(())
}

fn collect_reports(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_reports(&path, found)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("transfer_") && n.ends_with(".json"))
        {
            found.push(path);
        }
    }
    Ok(())
}

pub fn load_reports(dir: &Path) -> Result<Vec<TransferReport>> {
    let mut paths = Vec::new();
    collect_reports(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no transfer_*.json under {}", dir.display())));
    }
    let mut reports: Vec<TransferReport> = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let r: TransferReport =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        if reports.iter().any(|x| x.experiment == r.experiment && x.dataset == r.dataset) {
            log::warn!("{}: another {} report for {} came first; skipped", p.display(), r.experiment, r.dataset);
            continue;
        }
        reports.push(r);
    }
    Ok(reports)
}

fn report_csv(reports: &[TransferReport], epsilon: f64) -> Result<String> {
    let mut stacked = ReportTable::default();
    for (exp, table) in pgr_tables(reports, epsilon) {
        let header: Vec<String> = std::iter::once("experiment".to_string()).chain(table.header).collect();
        if stacked.header.is_empty() {
            stacked.header = header;
        } else if stacked.header != header {
            return Err(CliError::Data(
                "experiments cover different datasets; use --format markdown".into(),
            ));
        }
        for row in table.rows {
            stacked.rows.push(std::iter::once(exp.clone()).chain(row).collect());
        }
    }
    Ok(stacked.to_csv()?)
}

fn report(a: &ReportArgs) -> Result<()> {
    let reports = load_reports(&resolve(&a.input))?;
    let (text, name) = match a.format {
        ReportFormat::Markdown => (report_markdown(&reports, a.pgr_epsilon), "report.md"),
        ReportFormat::Csv => (report_csv(&reports, a.pgr_epsilon)?, "report.csv"),
    };
    match &a.out {
        Some(out) => {
            let out = output_dir(out, None)?;
            write_text(&out.join(name), &text)?;
            write_run_record(&out, "report", None, a)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
