//! `finsight`: ingest a corpus, match events, score viewpoints, extract key
//! points, run the full analysis pipeline, augment labels, and evaluate.

mod commands;
mod config;
mod evalio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{ConfigError, FileConfig};
use finsight_core::gateway::GatewayError;

#[derive(Parser)]
#[command(
    name = "finsight",
    version,
    about = "Data-centric financial analysis pipeline",
    arg_required_else_help = true
)]
struct Cli {
    /// Declarative TOML config (backends, stage map, pipeline defaults).
    /// Must precede the subcommand.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Deterministic seed; forwarded to mock backends, run ids, trace ids.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory (command-specific); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra progress output on stderr.
    #[arg(long, global = true)]
    verbose: bool,

    /// Skip writing prompt/reply traces.
    #[arg(long = "no-trace", global = true)]
    no_trace: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSONL corpus and persist a checksummed snapshot to --out.
    Ingest {
        /// Raw corpus JSONL.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
    },
    /// Match a query against the corpus; emits matched materials as JSONL.
    Match {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// File whose (trimmed) content is the query text.
        #[arg(long = "query-file", value_name = "FILE")]
        query_file: PathBuf,
        #[arg(short, long, default_value_t = 20)]
        k: usize,
        /// Rerank candidates with the configured rerank backend.
        #[arg(long)]
        rerank: bool,
        /// Backend name overriding the configured stage map.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Score sentences of matched materials and select under a budget;
    /// emits viewpoints as JSONL with the selection as the final line.
    Viewpoints {
        /// Matched materials JSONL (from `match`).
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long)]
        backend: Option<String>,
        /// Minimum quality label to keep (excellent|good|fair|poor).
        #[arg(long = "min-label", default_value = "good")]
        min_label: String,
        /// Character budget for the selection.
        #[arg(long, default_value_t = 4000)]
        budget: usize,
    },
    /// Extract the structured key-point record from a viewpoint selection.
    Keypoints {
        /// Viewpoints JSONL (from `viewpoints`); the last line must be the
        /// selection record.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// File with the original input text.
        #[arg(long = "input-file", value_name = "FILE")]
        input_file: PathBuf,
        #[arg(long)]
        backend: Option<String>,
    },
    /// Run the end-to-end pipeline for one input and persist a run record.
    Run {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// File with the input text to analyze.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// raw_baseline | fllm_1 | fllm_12 | fllm_123
        #[arg(long)]
        mode: String,
        /// TOML mapping stages to backend names (overrides config).
        #[arg(long = "backend-map", value_name = "FILE")]
        backend_map: Option<PathBuf>,
        /// Single backend name for every stage.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        rerank: bool,
    },
    /// Revise pseudo-labels over a pool through the three-stage
    /// augmentation loop; emits augmentation records as JSONL.
    Augment {
        /// Pool JSONL: {"task": "EMA|VQE|KPE", "input_text": "..."}.
        #[arg(long, value_name = "FILE")]
        pool: PathBuf,
        /// Knowledge base JSONL: {"id","topic","text"}.
        #[arg(long, value_name = "FILE")]
        kb: Option<PathBuf>,
        /// Knowledge toggles: all|no|fap|fae|fadom|fap+fae|fap+fadom|fae+fadom.
        #[arg(long = "config", default_value = "all", value_name = "GRID")]
        grid: String,
        /// Backend for the augmentation stages.
        #[arg(long)]
        backend: Option<String>,
        /// Backend for the pseudo-labeler (defaults to --backend).
        #[arg(long = "labeler-backend")]
        labeler_backend: Option<String>,
    },
    /// Compute metrics for one task from prediction/gold JSONL files.
    Eval {
        /// ema | vqe | kpe
        #[arg(long)]
        task: String,
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Task-to-metric binding: prose (default) or tables.
        #[arg(long, default_value = "prose")]
        binding: String,
        /// Row label when appending to a report via --out.
        #[arg(long, default_value = "default")]
        label: String,
    },
    /// Render an evaluation report (text_table | csv | markdown).
    Report {
        /// EvalReport JSON.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Evaluate at increasing training sizes per a plan file; emits CSV.
    Curve {
        /// Plan JSON listing per-size prediction/gold files.
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let ctx = commands::Ctx {
        config,
        seed: cli.seed,
        out: cli.out.clone(),
        verbose: cli.verbose,
        no_trace: cli.no_trace,
    };
    match &cli.command {
        Command::Ingest { input } => commands::ingest(&ctx, input),
        Command::Match {
            corpus,
            query_file,
            k,
            rerank,
            backend,
        } => commands::match_cmd(&ctx, corpus, query_file, *k, *rerank, backend.as_deref()),
        Command::Viewpoints {
            input,
            corpus,
            backend,
            min_label,
            budget,
        } => commands::viewpoints(&ctx, input, corpus, backend.as_deref(), min_label, *budget),
        Command::Keypoints {
            input,
            input_file,
            backend,
        } => commands::keypoints(&ctx, input, input_file, backend.as_deref()),
        Command::Run {
            corpus,
            input,
            mode,
            backend_map,
            backend,
            k,
            rerank,
        } => commands::run(
            &ctx,
            corpus,
            input,
            mode,
            backend_map.as_deref(),
            backend.as_deref(),
            *k,
            *rerank,
        ),
        Command::Augment {
            pool,
            kb,
            grid,
            backend,
            labeler_backend,
        } => commands::augment(
            &ctx,
            pool,
            kb.as_deref(),
            grid,
            backend.as_deref(),
            labeler_backend.as_deref(),
        ),
        Command::Eval {
            task,
            pred,
            gold,
            binding,
            label,
        } => commands::eval(&ctx, task, pred, gold, binding, label),
        Command::Report { input, format } => commands::report(&ctx, input, format),
        Command::Curve { plan } => commands::curve(&ctx, plan),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let (code, payload) = classify(&error);
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

/// Map errors to exit codes with a machine-readable JSON payload:
/// config validation failures exit 3, everything else 1.
fn classify(error: &anyhow::Error) -> (u8, String) {
    if let Some(config) = error.downcast_ref::<ConfigError>() {
        return (
            3,
            json!({"error": {"kind": "config", "path": config.path, "message": config.message}})
                .to_string(),
        );
    }
    if let Some(GatewayError::Config { field, message }) = error.downcast_ref::<GatewayError>() {
        return (
            3,
            json!({"error": {"kind": "config", "path": field, "message": message}}).to_string(),
        );
    }
    (
        1,
        json!({"error": {"kind": "runtime", "message": format!("{error:#}")}}).to_string(),
    )
}
