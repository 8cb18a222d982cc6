//! `specu`: spectral uncertainty runs from the command line.
//!
//! One subcommand per stage so the expensive API stages stay independently
//! resumable: `clarify` and `score` talk to providers (always through the
//! response cache), `evaluate` and `bench` work from a finished run
//! directory, and `simulate` runs the whole pipeline against a synthetic
//! world with no network at all.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spectral_uncertainty::config::RunConfig;
use spectral_uncertainty::evaluation::{
    build_eval_records, export_report, ingest_dataset, subsample, DatasetItem,
};
use spectral_uncertainty::gateway::{
    Gateway, GatewaySettings, HttpEndpoint, HttpProvider, SystemClock,
};
use spectral_uncertainty::kernel::KernelSpec;
use spectral_uncertainty::pipeline::{
    generate_clarifications, read_question_records, read_run_config, run_benchmark, write_run_dir,
    Method, QuestionInput, QuestionRecord, TaskKind,
};
use spectral_uncertainty::synthetic::synthetic_benchmark;

#[derive(Parser)]
#[command(
    name = "specu",
    version,
    about = "Decompose LLM answer uncertainty into aleatoric and epistemic parts"
)]
struct Cli {
    /// TOML run configuration; flags below override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, help = "Target model override")]
    model: Option<String>,
    #[arg(long, global = true)]
    clarification_model: Option<String>,
    #[arg(long, global = true)]
    embedding_model: Option<String>,
    #[arg(long, global = true)]
    judge_model: Option<String>,
    #[arg(long, global = true, help = "Answers sampled per clarification (m)")]
    answers_per_clarification: Option<usize>,
    #[arg(long, global = true, help = "Answer sampling temperature")]
    temperature: Option<f64>,
    #[arg(long, global = true, value_parser = ["rbf", "linear"])]
    kernel_family: Option<String>,
    #[arg(long, global = true)]
    kernel_gamma: Option<f64>,
    #[arg(long, global = true)]
    cache_root: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, help = "ambigqa | ambiginst | paraphrase")]
    task_kind: Option<String>,
    #[arg(
        long,
        global = true,
        help = "Comma-separated: spectral,pke,semantic_entropy,ice"
    )]
    methods: Option<String>,
    #[arg(
        long,
        global = true,
        help = "Seeded subsample size applied to the dataset"
    )]
    subsample: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clarifications for one question or every dataset item.
    Clarify {
        #[arg(long, conflicts_with = "dataset")]
        question: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full scoring pipeline over a dataset into a run directory.
    Score {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to runs/<content-hash> so reruns resume in place.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Compute metrics and score files for a finished run.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        /// Override the dataset recorded in the run config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a constructed synthetic world end to end, no network.
    Simulate {
        #[arg(long, default_value_t = 40)]
        questions: usize,
        #[arg(long, default_value_t = 0.5)]
        ambiguous_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-stage wall-clock table (mean and 95% CI) for a finished run.
    Bench {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(error) = run(Cli::parse()) {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Clarify {
            question,
            dataset,
            out,
        } => cmd_clarify(&cli, question.clone(), dataset.clone(), out.clone()).context("clarify"),
        Command::Score { dataset, run_dir } => {
            cmd_score(&cli, dataset.clone(), run_dir.clone()).context("score")
        }
        Command::Evaluate { run_dir, dataset } => {
            cmd_evaluate(run_dir, dataset.clone()).context("evaluate")
        }
        Command::Simulate {
            questions,
            ambiguous_fraction,
            out,
        } => cmd_simulate(&cli, *questions, *ambiguous_fraction, out).context("simulate"),
        Command::Bench { run_dir } => cmd_bench(run_dir).context("bench"),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_toml_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(model) = &cli.model {
        config.models.target = model.clone();
    }
    if let Some(model) = &cli.clarification_model {
        config.models.clarification = model.clone();
    }
    if let Some(model) = &cli.embedding_model {
        config.models.embedding = model.clone();
    }
    if let Some(model) = &cli.judge_model {
        config.models.judge = model.clone();
    }
    if let Some(m) = cli.answers_per_clarification {
        config.sampling.answers_per_clarification = m;
    }
    if let Some(temperature) = cli.temperature {
        config.sampling.temperature = temperature;
    }
    match (cli.kernel_family.as_deref(), cli.kernel_gamma) {
        (Some("linear"), _) => config.kernel = KernelSpec::Linear,
        (Some("rbf"), gamma) => {
            let gamma = gamma.unwrap_or(match config.kernel {
                KernelSpec::Rbf { gamma } => gamma,
                KernelSpec::Linear => 1.0,
            });
            config.kernel = KernelSpec::Rbf { gamma };
        }
        (None, Some(gamma)) => config.kernel = KernelSpec::Rbf { gamma },
        (None, None) => {}
        (Some(other), _) => bail!("unknown kernel family {other:?}"),
    }
    if let Some(cache_root) = &cli.cache_root {
        config.cache_root = cache_root.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(task) = &cli.task_kind {
        config.task_kind = task.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(methods) = &cli.methods {
        config.methods = methods
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<Method>().map_err(anyhow::Error::msg))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(size) = cli.subsample {
        config.subsample = Some(size);
    }
    config.validate()?;
    Ok(config)
}

fn build_gateway(config: &RunConfig) -> Result<Gateway> {
    let endpoints = &config.endpoints;
    let provider = HttpProvider::new(
        HttpEndpoint::from_env(&endpoints.chat_base_url, Some(&endpoints.api_key_env)),
        HttpEndpoint::from_env(
            &endpoints.embedding_base_url,
            Some(&endpoints.embedding_api_key_env),
        ),
        Duration::from_secs(endpoints.timeout_seconds),
    );
    let mut settings = GatewaySettings::new(&config.cache_root);
    settings.max_in_flight = config.concurrency.max_in_flight;
    settings.rate_limit = config.concurrency.rate_limit;
    Ok(Gateway::new(
        Box::new(provider),
        settings,
        Arc::new(SystemClock::new()),
    )?)
}

fn resolve_dataset_path(config: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| config.dataset.clone())
        .context("no dataset given (use --dataset or set it in the config)")
}

fn load_items(config: &RunConfig, path: &Path) -> Result<Vec<DatasetItem>> {
    let mut items = ingest_dataset(path)?;
    if let Some(size) = config.subsample {
        items = subsample(&items, size, config.seed);
    }
    Ok(items)
}

fn inputs_from_items(config: &RunConfig, items: &[DatasetItem]) -> Vec<QuestionInput> {
    items
        .iter()
        .map(|item| QuestionInput {
            id: item.id.clone(),
            question: item.question.clone(),
            task_kind: item.task_kind.unwrap_or(config.task_kind),
        })
        .collect()
}

fn default_run_dir(config: &RunConfig, items: &[DatasetItem]) -> PathBuf {
    // Content-addressed so an identical configuration resumes in place.
    let config_json = serde_json::to_string(config).expect("config serializes");
    let ids: String = items
        .iter()
        .map(|i| i.id.as_str())
        .collect::<Vec<_>>()
        .join(",");
    PathBuf::from("runs").join(format!("{:016x}", fnv1a(&config_json) ^ fnv1a(&ids)))
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn cmd_clarify(
    cli: &Cli,
    question: Option<String>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(cli)?;
    let gateway = build_gateway(&config)?;
    let pairs: Vec<(String, String, TaskKind)> = if let Some(question) = question {
        vec![("question-0".to_string(), question, config.task_kind)]
    } else {
        let path = resolve_dataset_path(&config, dataset)?;
        let items = load_items(&config, &path)?;
        items
            .iter()
            .map(|i| {
                (
                    i.id.clone(),
                    i.question.clone(),
                    i.task_kind.unwrap_or(config.task_kind),
                )
            })
            .collect()
    };

    let mut lines = Vec::new();
    for (id, question, task) in &pairs {
        let set = generate_clarifications(&gateway, &config, question, *task)
            .with_context(|| format!("question {id}"))?;
        let record = serde_json::json!({
            "id": id,
            "question": set.question,
            "needed": set.needed,
            "clarifications": set.clarifications,
            "analysis": set.raw_analysis,
        });
        lines.push(serde_json::to_string(&record)?);
    }
    let body = lines.join("\n") + "\n";
    match out {
        Some(path) => {
            std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_score(cli: &Cli, dataset: Option<PathBuf>, run_dir: Option<PathBuf>) -> Result<()> {
    let mut config = load_config(cli)?;
    let dataset_path = resolve_dataset_path(&config, dataset)?;
    // The snapshot records the dataset actually used, so evaluate and
    // bench can run from the run directory alone.
    config.dataset = Some(dataset_path.clone());
    let items = load_items(&config, &dataset_path)?;
    let gateway = build_gateway(&config)?;
    let inputs = inputs_from_items(&config, &items);
    let run_dir = run_dir.unwrap_or_else(|| default_run_dir(&config, &items));

    let clock = SystemClock::new();
    let outcome = run_benchmark(&gateway, &config, &clock, &inputs);
    write_run_dir(&run_dir, &config, &outcome)?;
    if let Some(source) = &cli.config {
        // Keep the original TOML next to the resolved snapshot.
        std::fs::copy(source, run_dir.join("config.toml")).ok();
    }

    println!(
        "scored {} questions ({} failures) -> {}",
        outcome.records.len(),
        outcome.failures.len(),
        run_dir.display()
    );
    for failure in &outcome.failures {
        log::warn!(
            "{}: {} failed: {}",
            failure.id,
            failure.stage,
            failure.message
        );
    }
    Ok(())
}

fn cmd_evaluate(run_dir: &Path, dataset_flag: Option<PathBuf>) -> Result<()> {
    let config = read_run_config(run_dir).context("reading run config snapshot")?;
    let records = read_question_records(run_dir).context("reading question records")?;
    if records.is_empty() {
        bail!("run directory has no scored questions");
    }
    let dataset_path = resolve_dataset_path(&config, dataset_flag)?;
    let items = load_items(&config, &dataset_path)?;

    let needs_judging = items.iter().any(|i| {
        matches!(
            i.label_kind(),
            spectral_uncertainty::evaluation::LabelKind::Correctness
        )
    });
    let gateway = if needs_judging {
        Some(build_gateway(&config)?)
    } else {
        None
    };

    let (eval_records, excluded) = build_eval_records(gateway.as_ref(), &config, &items, &records)?;
    let methods: Vec<String> = config.methods.iter().map(|m| m.key().to_string()).collect();
    let report_dir = run_dir.join("report");
    let summary = export_report(
        &eval_records,
        &methods,
        &report_dir,
        Some(&config),
        excluded,
    )?;

    print!("{}", summary.table());
    println!(
        "{} records ({} positive, {} excluded) -> {}",
        summary.records,
        summary.positives,
        summary.excluded,
        report_dir.display()
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, questions: usize, ambiguous_fraction: f64, out: &Path) -> Result<()> {
    let mut config = load_config(cli)?;
    if cli.methods.is_none() {
        config.methods = Method::all().to_vec();
    }
    config.cache_root = out.join("cache");

    let benchmark = synthetic_benchmark(
        questions,
        ambiguous_fraction,
        config.seed,
        &config.cache_root,
        &config,
    )?;
    std::fs::create_dir_all(out)?;
    let dataset_lines: Vec<String> = benchmark
        .dataset
        .iter()
        .map(|item| serde_json::to_string(item).expect("dataset item serializes"))
        .collect();
    std::fs::write(out.join("dataset.jsonl"), dataset_lines.join("\n") + "\n")?;
    write_run_dir(out, &config, &benchmark.outcome)?;

    let methods: Vec<String> = config.methods.iter().map(|m| m.key().to_string()).collect();
    let summary = export_report(
        &benchmark.eval_records,
        &methods,
        &out.join("report"),
        Some(&config),
        0,
    )?;
    print!("{}", summary.table());
    println!(
        "simulated {} questions ({} ambiguous) -> {}",
        benchmark.dataset.len(),
        benchmark
            .dataset
            .iter()
            .filter(|i| i.ambiguous == Some(true))
            .count(),
        out.display()
    );
    Ok(())
}

struct StageRow {
    name: &'static str,
    mean: f64,
    low: f64,
    high: f64,
}

fn confidence_interval(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let stderr = (variance / n).sqrt();
    (mean, mean - 1.96 * stderr, mean + 1.96 * stderr)
}

type StageColumn = (&'static str, fn(&QuestionRecord) -> f64);

fn bench_rows(records: &[QuestionRecord]) -> Vec<StageRow> {
    let columns: [StageColumn; 6] = [
        ("clarify", |r| r.timings.clarify_s),
        ("sample", |r| r.timings.sample_s),
        ("embed", |r| r.timings.embed_s),
        ("decompose", |r| r.timings.decompose_s),
        ("baselines", |r| r.timings.baselines_s),
        ("total", |r| r.timings.total_s),
    ];
    columns
        .into_iter()
        .map(|(name, extract)| {
            let values: Vec<f64> = records.iter().map(extract).collect();
            let (mean, low, high) = confidence_interval(&values);
            StageRow {
                name,
                mean,
                low,
                high,
            }
        })
        .collect()
}

fn cmd_bench(run_dir: &Path) -> Result<()> {
    let records = read_question_records(run_dir).context("reading question records")?;
    if records.is_empty() {
        bail!("run directory has no scored questions");
    }
    println!(
        "stage       mean time per question (s) (95% CI)   n={}",
        records.len()
    );
    for row in bench_rows(&records) {
        println!(
            "{:<10}  {:.3} ({:.3}, {:.3})",
            row.name, row.mean, row.low, row.high
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_interval_matches_hand_computed_fixture() {
        // Five values: mean 3, sample sd sqrt(2.5), stderr sd/sqrt(5).
        let (mean, low, high) = confidence_interval(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(mean, 3.0);
        assert!((low - 1.6140707088743467).abs() < 1e-12);
        assert!((high - 4.385929291125653).abs() < 1e-12);
    }

    #[test]
    fn confidence_interval_of_single_value_collapses() {
        let (mean, low, high) = confidence_interval(&[2.5]);
        assert_eq!((mean, low, high), (2.5, 2.5, 2.5));
    }

    #[test]
    fn fnv_fold_distinguishes_strings() {
        assert_ne!(fnv1a("a"), fnv1a("b"));
        assert_eq!(fnv1a("same"), fnv1a("same"));
    }
}
