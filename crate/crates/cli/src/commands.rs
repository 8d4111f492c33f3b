//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use finsight_core::aar::{augment_dataset, KnowledgeBase, KnowledgeConfig, PseudoLabeler, Task};
use finsight_core::corpus;
use finsight_core::eval::{
    learning_curve, prose_binding, render_report, tables_binding, Cell, EvalReport, ReportFormat,
    ReportRow, TaskMetrics, CURVE_METRICS,
};
use finsight_core::matcher::{build_index, llm_rerank, match_events, InvertedIndex};
use finsight_core::pipeline::{run_pipeline, save_run_record, PipelineMode, StepBackends};
use finsight_core::viewpoint::{
    score_viewpoint, select_insightful, split_sentences, Label4, Viewpoint, ViewpointSelection,
};

use crate::config::{config_err, load_backend_map, stage_backend, FileConfig};
use crate::evalio::{compute_metrics, join_by_key, read_lines};

pub struct Ctx {
    pub config: FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub verbose: bool,
    pub no_trace: bool,
}

impl Ctx {
    fn seed(&self) -> Option<u64> {
        self.seed.or(self.config.seed)
    }

    fn out_required(&self, what: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .with_context(|| format!("{what} requires --out"))
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent)?;
                    }
                }
                std::fs::write(path, text)?;
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                if !text.ends_with('\n') {
                    stdout.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }
}

/// Load a snapshot: a persisted pair (JSONL + manifest) when present,
/// otherwise a fresh ingest of the JSONL.
fn load_corpus(path: &Path) -> Result<corpus::CorpusSnapshot> {
    match corpus::load(path) {
        Ok(snapshot) => Ok(snapshot),
        Err(corpus::CorpusError::ManifestMissing { .. }) => Ok(corpus::ingest(path)?),
        Err(e) => Err(e.into()),
    }
}

fn corpus_and_index(path: &Path) -> Result<(corpus::CorpusSnapshot, InvertedIndex)> {
    let snapshot = load_corpus(path)?;
    let index = build_index(&snapshot)?;
    Ok((snapshot, index))
}

pub fn ingest(ctx: &Ctx, input: &Path) -> Result<()> {
    let snapshot = corpus::ingest(input)?;
    let out = ctx.out_required("ingest")?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    corpus::persist(&snapshot, out)?;
    println!(
        "{}",
        json!({"checksum": snapshot.checksum(), "count": snapshot.len(), "out": out})
    );
    Ok(())
}

pub fn match_cmd(
    ctx: &Ctx,
    corpus_path: &Path,
    query_file: &Path,
    k: usize,
    rerank: bool,
    backend: Option<&str>,
) -> Result<()> {
    let (snapshot, index) = corpus_and_index(corpus_path)?;
    let query = std::fs::read_to_string(query_file)
        .with_context(|| format!("reading query file {}", query_file.display()))?;
    let query = query.trim();
    let mut hits = match_events(query, &index, k)?;
    if rerank {
        let handle = stage_backend(&ctx.config, &BTreeMap::new(), backend, "rerank")?;
        hits = llm_rerank(query, &hits, &snapshot, &handle, ctx.seed())?;
    }
    let mut out = String::new();
    for hit in &hits {
        out.push_str(&serde_json::to_string(hit)?);
        out.push('\n');
    }
    ctx.emit(&out)
}

pub fn viewpoints(
    ctx: &Ctx,
    input: &Path,
    corpus_path: &Path,
    backend: Option<&str>,
    min_label: &str,
    budget: usize,
) -> Result<()> {
    let min_label =
        Label4::parse(min_label).ok_or_else(|| config_err("min-label", "invalid label"))?;
    let snapshot = load_corpus(corpus_path)?;
    let by_id = snapshot.by_id();
    let handle = stage_backend(&ctx.config, &BTreeMap::new(), backend, "viewpoint")?;
    let seed = ctx.seed();

    let matched = read_matched(input)?;
    let mut viewpoints: Vec<Viewpoint> = Vec::new();
    for material_id in &matched {
        let material = by_id
            .get(material_id.as_str())
            .with_context(|| format!("matched material {material_id:?} not in corpus"))?;
        for sentence in split_sentences(&material.text) {
            viewpoints.push(score_viewpoint(
                material_id,
                &sentence,
                &material.text,
                &handle,
                seed,
            )?);
        }
    }
    let selection = select_insightful(&viewpoints, min_label, budget);
    let mut out = String::new();
    for v in &viewpoints {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&selection)?);
    out.push('\n');
    ctx.emit(&out)
}

fn read_matched(path: &Path) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading matches {}", path.display()))?;
    let mut ids = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line)?;
        let id = value
            .get("material_id")
            .and_then(|v| v.as_str())
            .context("match line missing material_id")?;
        ids.push(id.to_string());
    }
    if ids.is_empty() {
        bail!("{}: no matched materials", path.display());
    }
    Ok(ids)
}

pub fn keypoints(ctx: &Ctx, input: &Path, input_file: &Path, backend: Option<&str>) -> Result<()> {
    let raw = std::fs::read_to_string(input)
        .with_context(|| format!("reading selection {}", input.display()))?;
    let last = raw
        .lines()
        .rfind(|l| !l.trim().is_empty())
        .context("selection file is empty")?;
    let selection: ViewpointSelection =
        serde_json::from_str(last).context("last line is not a viewpoint selection")?;
    let input_text = std::fs::read_to_string(input_file)
        .with_context(|| format!("reading input {}", input_file.display()))?;
    let handle = stage_backend(&ctx.config, &BTreeMap::new(), backend, "keypoint")?;
    let record = finsight_core::keypoint::extract_keypoints(
        input_text.trim(),
        &selection,
        &handle,
        ctx.seed(),
    )?;
    ctx.emit(&format!("{}\n", serde_json::to_string(&record)?))
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    corpus_path: &Path,
    input_file: &Path,
    mode: &str,
    backend_map: Option<&Path>,
    backend: Option<&str>,
    k: Option<usize>,
    rerank: bool,
) -> Result<()> {
    let mode = PipelineMode::parse(mode)
        .ok_or_else(|| config_err("mode", format!("invalid pipeline mode {mode:?}")))?;
    let map_override = match backend_map {
        Some(path) => load_backend_map(path)?,
        None => BTreeMap::new(),
    };
    let backends = StepBackends {
        rerank: stage_backend(&ctx.config, &map_override, backend, "rerank")?,
        viewpoint: stage_backend(&ctx.config, &map_override, backend, "viewpoint")?,
        keypoint: stage_backend(&ctx.config, &map_override, backend, "keypoint")?,
        generate: stage_backend(&ctx.config, &map_override, backend, "generate")?,
    };
    let settings = ctx.config.run_settings(ctx.seed, k, rerank);
    let input_text = std::fs::read_to_string(input_file)
        .with_context(|| format!("reading input {}", input_file.display()))?;
    let (snapshot, index) = corpus_and_index(corpus_path)?;

    let record = run_pipeline(
        input_text.trim(),
        mode,
        &snapshot,
        &index,
        &backends,
        &settings,
    )?;
    let out_dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let path = if ctx.no_trace {
        std::fs::create_dir_all(&out_dir)?;
        let path = out_dir.join(format!("{}.json", record.output.run_id));
        std::fs::write(&path, serde_json::to_string_pretty(&record.output)?)?;
        path
    } else {
        save_run_record(&record, &out_dir)?
    };
    println!(
        "{}",
        json!({"run_id": record.output.run_id, "mode": mode.as_str(), "record": path})
    );
    if ctx.verbose {
        eprintln!("{}", record.output.generated_analysis);
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct PoolLine {
    task: String,
    input_text: String,
}

pub fn augment(
    ctx: &Ctx,
    pool_path: &Path,
    kb_path: Option<&Path>,
    grid: &str,
    backend: Option<&str>,
    labeler_backend: Option<&str>,
) -> Result<()> {
    let config = KnowledgeConfig::parse(grid)
        .ok_or_else(|| config_err("config", format!("invalid knowledge config {grid:?}")))?;
    let kb = match kb_path {
        Some(path) => Some(KnowledgeBase::load(path)?),
        None => None,
    };
    let raw = std::fs::read_to_string(pool_path)
        .with_context(|| format!("reading pool {}", pool_path.display()))?;
    let mut pool = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PoolLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed pool line", pool_path.display(), i + 1))?;
        let task = Task::parse(&parsed.task).with_context(|| {
            format!(
                "{}:{}: unknown task {:?}",
                pool_path.display(),
                i + 1,
                parsed.task
            )
        })?;
        pool.push((task, parsed.input_text));
    }
    if pool.is_empty() {
        bail!("{}: empty pool", pool_path.display());
    }

    let aar_backend = stage_backend(&ctx.config, &BTreeMap::new(), backend, "aar")?;
    let labeler_handle = stage_backend(
        &ctx.config,
        &BTreeMap::new(),
        labeler_backend.or(backend),
        "labeler",
    )?;
    let labeler = PseudoLabeler::new(labeler_handle);
    let results = augment_dataset(
        &pool,
        &labeler,
        kb.as_ref(),
        config,
        &aar_backend,
        ctx.seed(),
    );

    let mut out = String::new();
    for (record, _) in &results {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    let rejected = results.iter().filter(|(r, _)| r.rejected).count();
    match &ctx.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, &out)?;
            if !ctx.no_trace {
                let trace_dir = path
                    .parent()
                    .map(|p| p.join("trace"))
                    .unwrap_or_else(|| PathBuf::from("trace"));
                std::fs::create_dir_all(&trace_dir)?;
                for (_, trace) in &results {
                    std::fs::write(
                        trace_dir.join(format!("{}.json", trace.trace_id)),
                        serde_json::to_string_pretty(trace)?,
                    )?;
                }
            }
        }
        None => print!("{out}"),
    }
    eprintln!(
        "{}",
        json!({"records": results.len(), "rejected": rejected, "config": config.label()})
    );
    Ok(())
}

fn binding_for(task: &str, binding: &str) -> Result<TaskMetrics> {
    let groups = match binding {
        "prose" => prose_binding(),
        "tables" => tables_binding(),
        other => bail!("unknown binding {other:?} (expected prose or tables)"),
    };
    groups
        .into_iter()
        .find(|g| g.task.eq_ignore_ascii_case(task))
        .with_context(|| format!("task {task:?} not present in binding"))
}

pub fn eval(
    ctx: &Ctx,
    task: &str,
    pred: &Path,
    gold: &Path,
    binding: &str,
    label: &str,
) -> Result<()> {
    let group = binding_for(task, binding)?;
    let pairs = join_by_key(read_lines(pred)?, read_lines(gold)?)?;
    let metrics = compute_metrics(&group.metrics, &pairs)?;
    println!(
        "{}",
        json!({"task": group.task, "config_label": label, "metrics": metrics})
    );

    if let Some(out) = &ctx.out {
        let mut report = if out.exists() {
            EvalReport::load(out).map_err(|e| anyhow::anyhow!(e))?
        } else {
            EvalReport {
                title: "evaluation".into(),
                task_binding: vec![group.clone()],
                rows: vec![],
            }
        };
        if !report.task_binding.iter().any(|g| g.task == group.task) {
            report.task_binding.push(group.clone());
        }
        let cells: BTreeMap<String, Option<Cell>> = metrics
            .iter()
            .map(|(name, value)| {
                (
                    format!("{}.{}", group.task, name),
                    Some(Cell::Value(*value)),
                )
            })
            .collect();
        if let Some(row) = report.rows.iter_mut().find(|r| r.config_label == label) {
            row.cells.extend(cells);
        } else {
            report.rows.push(ReportRow {
                config_label: label.to_string(),
                cells,
            });
        }
        // Rows evaluated for one task only get explicit missing cells for
        // the other bound tasks.
        let columns = report.columns();
        for row in &mut report.rows {
            for column in &columns {
                row.cells.entry(column.clone()).or_insert(None);
            }
        }
        report.validate()?;
        report.save(out)?;
    }
    Ok(())
}

pub fn report(ctx: &Ctx, input: &Path, format: &str) -> Result<()> {
    let format =
        ReportFormat::parse(format).with_context(|| format!("unknown report format {format:?}"))?;
    let report = EvalReport::load(input).map_err(|e| anyhow::anyhow!(e))?;
    let rendered = render_report(&report, format)?;
    ctx.emit(&rendered)
}

#[derive(serde::Deserialize)]
struct CurvePlan {
    sizes: Vec<CurveEntry>,
}

#[derive(serde::Deserialize)]
struct CurveEntry {
    train_size: usize,
    ema: Option<CurveFiles>,
    vqe: Option<CurveFiles>,
    kpe: Option<CurveFiles>,
}

#[derive(serde::Deserialize)]
struct CurveFiles {
    pred: PathBuf,
    gold: PathBuf,
}

fn curve_task_metrics(
    base: &Path,
    files: &Option<CurveFiles>,
    metric_columns: &[(&str, &str)],
    task: &str,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let files = files
        .as_ref()
        .with_context(|| format!("plan entry missing {task} files"))?;
    let pairs = join_by_key(
        read_lines(&base.join(&files.pred))?,
        read_lines(&base.join(&files.gold))?,
    )?;
    let names: Vec<String> = metric_columns.iter().map(|(m, _)| m.to_string()).collect();
    let computed = compute_metrics(&names, &pairs)?;
    for (metric, column) in metric_columns {
        out.insert(column.to_string(), computed[*metric]);
    }
    Ok(())
}

pub fn curve(ctx: &Ctx, plan_path: &Path) -> Result<()> {
    let raw = std::fs::read_to_string(plan_path)
        .with_context(|| format!("reading plan {}", plan_path.display()))?;
    let plan: CurvePlan = serde_json::from_str(&raw)
        .with_context(|| format!("{}: malformed plan", plan_path.display()))?;
    let base = plan_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let sizes: Vec<usize> = plan.sizes.iter().map(|e| e.train_size).collect();

    let curve = learning_curve(&sizes, |size| {
        let entry = plan
            .sizes
            .iter()
            .find(|e| e.train_size == size)
            .expect("size from the plan");
        let mut metrics = BTreeMap::new();
        let run = |files, columns: &[(&str, &str)], task, metrics: &mut BTreeMap<String, f64>| {
            curve_task_metrics(&base, files, columns, task, metrics).map_err(|e| e.to_string())
        };
        run(
            &entry.ema,
            &[
                ("precision", "ema_precision"),
                ("recall", "ema_recall"),
                ("f1", "ema_f1"),
            ],
            "ema",
            &mut metrics,
        )?;
        run(
            &entry.vqe,
            &[
                ("accuracy2", "vqe_accuracy2"),
                ("accuracy4", "vqe_accuracy4"),
            ],
            "vqe",
            &mut metrics,
        )?;
        run(
            &entry.kpe,
            &[("kp_accuracy", "kpe_accuracy"), ("bleu", "kpe_bleu")],
            "kpe",
            &mut metrics,
        )?;
        debug_assert!(metrics.keys().all(|k| CURVE_METRICS.contains(&k.as_str())));
        Ok(metrics)
    })?;
    ctx.emit(&curve.to_csv())
}
