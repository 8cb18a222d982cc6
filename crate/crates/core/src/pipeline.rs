//! End-to-end question pipeline: clarify, sample, embed, decompose.
//!
//! One question costs a single clarification call, n*m answer samples, one
//! batched embedding call, and an eigendecomposition pass; everything is
//! cached at the gateway so reruns are free. Baseline scores ride along in
//! the same per-question record.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ice_decompose, semantic_entropy, BaselineError, LlmEquivalenceJudge};
use crate::config::RunConfig;
use crate::gateway::{ChatRequest, Clock, Gateway, GatewayError};
use crate::prompts::{self, ParseError};
use crate::spectral::{decompose, vne_of_samples, SampleMatrix, SpectralError, UncertaintyReport};

/// Hard cap on clarifications per question.
pub const MAX_CLARIFICATIONS: usize = 10;

/// Which prompt family a question belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Open-domain questions analyzed for ambiguity.
    #[default]
    #[serde(rename = "ambigqa")]
    AmbigQa,
    /// Instruction tasks (description + input) analyzed for ambiguity.
    #[serde(rename = "ambiginst")]
    AmbigInst,
    /// Question rephrasings standing in for clarifications.
    #[serde(rename = "paraphrase")]
    Paraphrase,
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "ambigqa" | "ambig_qa" => Ok(Self::AmbigQa),
            "ambiginst" | "ambig_inst" => Ok(Self::AmbigInst),
            "paraphrase" => Ok(Self::Paraphrase),
            other => Err(format!("unknown task kind {other:?}")),
        }
    }
}

/// Scoring methods that can run over one sampled question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spectral,
    #[serde(rename = "pke")]
    PredictiveKernelEntropy,
    SemanticEntropy,
    #[serde(rename = "ice")]
    InputClarificationEnsembling,
}

impl Method {
    pub fn key(&self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::PredictiveKernelEntropy => "pke",
            Self::SemanticEntropy => "semantic_entropy",
            Self::InputClarificationEnsembling => "ice",
        }
    }

    pub fn all() -> [Method; 4] {
        [
            Self::Spectral,
            Self::PredictiveKernelEntropy,
            Self::SemanticEntropy,
            Self::InputClarificationEnsembling,
        ]
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "spectral" => Ok(Self::Spectral),
            "pke" | "predictive_kernel_entropy" => Ok(Self::PredictiveKernelEntropy),
            "se" | "semantic_entropy" => Ok(Self::SemanticEntropy),
            "ice" | "input_clarification_ensembling" => Ok(Self::InputClarificationEnsembling),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Per-method uncertainty values attached to a question record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodScore {
    /// Methods that split total uncertainty into parts.
    Decomposed {
        total: f64,
        aleatoric: f64,
        epistemic: f64,
    },
    /// Methods that produce a single entropy.
    Single { entropy: f64 },
}

impl MethodScore {
    /// The score used to rank questions by ambiguity.
    pub fn ambiguity_score(&self) -> f64 {
        match self {
            Self::Decomposed { aleatoric, .. } => *aleatoric,
            Self::Single { entropy } => *entropy,
        }
    }

    /// The score used to rank answers by expected incorrectness.
    pub fn total_score(&self) -> f64 {
        match self {
            Self::Decomposed { total, .. } => *total,
            Self::Single { entropy } => *entropy,
        }
    }
}

/// The clarifications one question expands into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationSet {
    pub question: String,
    pub clarifications: Vec<String>,
    pub raw_analysis: String,
    /// False when the model declared the question unambiguous; the question
    /// then stands in as its own single clarification.
    pub needed: bool,
}

/// Wall-clock seconds per stage, measured through the injected clock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub clarify_s: f64,
    pub sample_s: f64,
    pub embed_s: f64,
    pub decompose_s: f64,
    pub baselines_s: f64,
    pub total_s: f64,
}

/// Everything produced for one question, embeddings included.
#[derive(Debug, Clone)]
pub struct QuestionRun {
    pub id: String,
    pub question: String,
    pub task_kind: TaskKind,
    pub clarifications: ClarificationSet,
    pub answers: Vec<Vec<String>>,
    pub embeddings: SampleMatrix,
    pub report: UncertaintyReport,
    pub parse_warnings: u32,
    pub timings: StageTimings,
}

/// The persisted form of a question run (embeddings stay in memory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub task_kind: TaskKind,
    pub clarifications: ClarificationSet,
    pub answers: Vec<Vec<String>>,
    pub raw_answers: Option<Vec<String>>,
    pub report: UncertaintyReport,
    pub scores: BTreeMap<String, MethodScore>,
    pub parse_warnings: u32,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Clarify,
    Sample,
    Embed,
    Decompose,
    Baseline(Method),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clarify => f.write_str("clarify"),
            Self::Sample => f.write_str("sample"),
            Self::Embed => f.write_str("embed"),
            Self::Decompose => f.write_str("decompose"),
            Self::Baseline(m) => write!(f, "baseline:{m}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed for question {id}: {source}")]
pub struct PipelineError {
    pub id: String,
    pub stage: Stage,
    #[source]
    pub source: StageFailure,
}

impl PipelineError {
    fn new(id: &str, stage: Stage, source: impl Into<StageFailure>) -> Self {
        Self {
            id: id.to_string(),
            stage,
            source: source.into(),
        }
    }
}

/// One unit of benchmark work.
#[derive(Debug, Clone)]
pub struct QuestionInput {
    pub id: String,
    pub question: String,
    pub task_kind: TaskKind,
}

/// Ask the clarification model to expand a question.
///
/// "No clarification needed." collapses to a single group holding the
/// original question, which makes the aleatoric term exactly zero: an
/// unambiguous input has no interpretation variance. More than
/// [`MAX_CLARIFICATIONS`] parsed items are truncated.
pub fn generate_clarifications(
    gateway: &Gateway,
    config: &RunConfig,
    question: &str,
    task: TaskKind,
) -> Result<ClarificationSet, StageFailure> {
    let request = ChatRequest {
        model: config.models.clarification.clone(),
        system_prompt: prompts::clarification_template(task).to_string(),
        user_prompt: prompts::clarification_user_prompt(task, question),
        temperature: config.sampling.clarification_temperature,
        sample_index: 0,
        max_tokens: config.sampling.clarification_max_tokens,
    };
    let raw = gateway.chat(&request)?;
    let parsed = prompts::parse_clarifications(&raw, task)?;
    let clarifications = if parsed.needed {
        let mut items = parsed.items;
        if items.len() > MAX_CLARIFICATIONS {
            log::warn!(
                "question produced {} clarifications; keeping the first {MAX_CLARIFICATIONS}",
                items.len()
            );
            items.truncate(MAX_CLARIFICATIONS);
        }
        items
    } else {
        vec![question.to_string()]
    };
    Ok(ClarificationSet {
        question: question.to_string(),
        clarifications,
        raw_analysis: parsed.analysis,
        needed: parsed.needed,
    })
}

/// Draw `answers_per_clarification` answers for one clarification.
///
/// Returns the parsed answers and the number of responses that lacked the
/// expected marker (fallback to the raw trimmed text; a warning, not an
/// error).
pub fn sample_answers(
    gateway: &Gateway,
    config: &RunConfig,
    clarification: &str,
    task: TaskKind,
) -> Result<(Vec<String>, u32), GatewayError> {
    let m = config.sampling.answers_per_clarification;
    let mut answers = Vec::with_capacity(m);
    let mut warnings = 0;
    for sample_index in 0..m {
        let request = ChatRequest {
            model: config.models.target.clone(),
            system_prompt: prompts::answer_template(task).to_string(),
            user_prompt: prompts::answer_user_prompt(task, clarification),
            temperature: config.sampling.temperature,
            sample_index: sample_index as u32,
            max_tokens: config.sampling.answer_max_tokens,
        };
        let raw = gateway.chat(&request)?;
        let (answer, warned) = prompts::parse_answer(task, &raw);
        if warned {
            warnings += 1;
            log::warn!("answer without marker for {clarification:?}; using raw text");
        }
        answers.push(answer);
    }
    Ok((answers, warnings))
}

/// Run the full uncertainty pipeline for one question.
pub fn run_question(
    gateway: &Gateway,
    config: &RunConfig,
    clock: &dyn Clock,
    id: &str,
    question: &str,
    task: TaskKind,
) -> Result<QuestionRun, PipelineError> {
    let started = clock.now();

    let clarifications =
        generate_clarifications(gateway, config, question, task).map_err(|e| PipelineError {
            id: id.to_string(),
            stage: Stage::Clarify,
            source: e,
        })?;
    let clarified = clock.now();

    // One sampling thread per clarification; the gateway's in-flight bound
    // still applies. Results land in index order, so caching makes the
    // outcome independent of scheduling.
    type GroupSlot = Option<Result<(Vec<String>, u32), GatewayError>>;
    let mut group_slots: Vec<GroupSlot> = (0..clarifications.clarifications.len())
        .map(|_| None)
        .collect();
    std::thread::scope(|scope| {
        for (slot, clarification) in group_slots.iter_mut().zip(&clarifications.clarifications) {
            scope.spawn(move || {
                *slot = Some(sample_answers(gateway, config, clarification, task));
            });
        }
    });
    let mut answers = Vec::with_capacity(group_slots.len());
    let mut parse_warnings = 0;
    for slot in group_slots {
        let (group, warnings) = slot
            .expect("every sampling slot filled")
            .map_err(|e| PipelineError::new(id, Stage::Sample, e))?;
        parse_warnings += warnings;
        answers.push(group);
    }
    let sampled = clock.now();

    let flat: Vec<String> = answers.iter().flatten().cloned().collect();
    let embedded_flat = gateway
        .embed(&config.models.embedding, &flat)
        .map_err(|e| PipelineError::new(id, Stage::Embed, e))?;
    let m = config.sampling.answers_per_clarification;
    let groups = embedded_flat.chunks(m).map(<[_]>::to_vec).collect();
    let embeddings =
        SampleMatrix::new(groups).map_err(|e| PipelineError::new(id, Stage::Embed, e))?;
    let embedded = clock.now();

    let report = decompose(&embeddings, config.kernel)
        .map_err(|e| PipelineError::new(id, Stage::Decompose, e))?;
    let decomposed = clock.now();

    let timings = StageTimings {
        clarify_s: (clarified - started).as_secs_f64(),
        sample_s: (sampled - clarified).as_secs_f64(),
        embed_s: (embedded - sampled).as_secs_f64(),
        decompose_s: (decomposed - embedded).as_secs_f64(),
        baselines_s: 0.0,
        total_s: (decomposed - started).as_secs_f64(),
    };

    Ok(QuestionRun {
        id: id.to_string(),
        question: question.to_string(),
        task_kind: task,
        clarifications,
        answers,
        embeddings,
        report,
        parse_warnings,
        timings,
    })
}

/// Outcome of a benchmark run: successful records in input order, plus any
/// per-question or per-method failures. The pooled within-question pairwise
/// embedding distances feed the kernel-scale CDF diagnostic.
#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub records: Vec<QuestionRecord>,
    pub failures: Vec<FailureRecord>,
    pub pairwise_distances: Vec<f64>,
}

#[derive(Debug)]
pub struct ScoredQuestion {
    pub record: QuestionRecord,
    pub failures: Vec<FailureRecord>,
    pub pairwise_distances: Vec<f64>,
}

/// Score one question with every requested method.
pub fn score_question(
    gateway: &Gateway,
    config: &RunConfig,
    clock: &dyn Clock,
    input: &QuestionInput,
) -> Result<ScoredQuestion, PipelineError> {
    let mut run = run_question(
        gateway,
        config,
        clock,
        &input.id,
        &input.question,
        input.task_kind,
    )?;
    let pooled = run.embeddings.pooled();
    let pairwise_distances = if pooled.len() >= 2 {
        crate::kernel::pairwise_distances(&pooled)
            .map_err(|e| PipelineError::new(&input.id, Stage::Decompose, SpectralError::from(e)))?
    } else {
        Vec::new()
    };

    let baselines_started = clock.now();
    let mut scores = BTreeMap::new();
    let mut failures = Vec::new();
    let mut raw_answers: Option<Vec<String>> = None;

    let needs_raw = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::PredictiveKernelEntropy | Method::SemanticEntropy));
    if needs_raw {
        // Baselines without clarifications sample from the question as-is.
        match sample_answers(gateway, config, &input.question, input.task_kind) {
            Ok((answers, warnings)) => {
                run.parse_warnings += warnings;
                raw_answers = Some(answers);
            }
            Err(e) => {
                for method in [Method::PredictiveKernelEntropy, Method::SemanticEntropy] {
                    if config.methods.contains(&method) {
                        failures.push(FailureRecord {
                            id: input.id.clone(),
                            stage: Stage::Baseline(method).to_string(),
                            message: e.to_string(),
                        });
                    }
                }
                log::warn!("raw-question sampling failed for {}: {e}", input.id);
            }
        }
    }

    let judge = LlmEquivalenceJudge::new(
        gateway,
        config.models.judge.clone(),
        config.sampling.judge_max_tokens,
    );

    for method in &config.methods {
        let result: Result<MethodScore, StageFailure> = match method {
            Method::Spectral => Ok(MethodScore::Decomposed {
                total: run.report.total,
                aleatoric: run.report.aleatoric,
                epistemic: run.report.epistemic,
            }),
            Method::PredictiveKernelEntropy => match &raw_answers {
                Some(answers) => gateway
                    .embed(&config.models.embedding, answers)
                    .map_err(StageFailure::from)
                    .and_then(|embedded| {
                        vne_of_samples(&embedded, config.kernel).map_err(StageFailure::from)
                    })
                    .map(|entropy| MethodScore::Single { entropy }),
                None => continue,
            },
            Method::SemanticEntropy => match &raw_answers {
                Some(answers) => semantic_entropy(answers, &input.question, &judge)
                    .map(|entropy| MethodScore::Single { entropy })
                    .map_err(StageFailure::from),
                None => continue,
            },
            Method::InputClarificationEnsembling => {
                ice_decompose(&run.answers, &input.question, &judge)
                    .map(|(total, aleatoric, epistemic)| MethodScore::Decomposed {
                        total,
                        aleatoric,
                        epistemic,
                    })
                    .map_err(StageFailure::from)
            }
        };
        match result {
            Ok(score) => {
                scores.insert(method.key().to_string(), score);
            }
            Err(e) => failures.push(FailureRecord {
                id: input.id.clone(),
                stage: Stage::Baseline(*method).to_string(),
                message: e.to_string(),
            }),
        }
    }

    let finished = clock.now();
    run.timings.baselines_s = (finished - baselines_started).as_secs_f64();
    run.timings.total_s += run.timings.baselines_s;

    let record = QuestionRecord {
        id: run.id,
        question: run.question,
        task_kind: run.task_kind,
        clarifications: run.clarifications,
        answers: run.answers,
        raw_answers,
        report: run.report,
        scores,
        parse_warnings: run.parse_warnings,
        timings: run.timings,
    };
    Ok(ScoredQuestion {
        record,
        failures,
        pairwise_distances,
    })
}

type ScoredSlot = Option<Result<ScoredQuestion, PipelineError>>;

/// Process a batch of questions with bounded parallelism. Failures are
/// recorded, never fatal; records come back in input order regardless of
/// scheduling.
pub fn run_benchmark(
    gateway: &Gateway,
    config: &RunConfig,
    clock: &dyn Clock,
    inputs: &[QuestionInput],
) -> BenchmarkOutcome {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<ScoredSlot>> = Mutex::new((0..inputs.len()).map(|_| None).collect());
    let workers = config.concurrency.questions.max(1).min(inputs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= inputs.len() {
                    break;
                }
                let input = &inputs[index];
                log::info!(
                    "scoring question {} ({}/{})",
                    input.id,
                    index + 1,
                    inputs.len()
                );
                let outcome = score_question(gateway, config, clock, input);
                slots.lock().expect("slots poisoned")[index] = Some(outcome);
            });
        }
    });

    let mut records = Vec::with_capacity(inputs.len());
    let mut failures = Vec::new();
    let mut pairwise_distances = Vec::new();
    for slot in slots.into_inner().expect("slots poisoned") {
        match slot.expect("every slot filled") {
            Ok(mut scored) => {
                records.push(scored.record);
                failures.append(&mut scored.failures);
                pairwise_distances.append(&mut scored.pairwise_distances);
            }
            Err(e) => failures.push(FailureRecord {
                id: e.id.clone(),
                stage: e.stage.to_string(),
                message: e.source.to_string(),
            }),
        }
    }
    BenchmarkOutcome {
        records,
        failures,
        pairwise_distances,
    }
}

/// Persist a benchmark outcome under `dir`: the resolved config snapshot,
/// one record per line in `questions.jsonl`, failures alongside, and the
/// pairwise-distance CDF used to sanity-check the kernel scale.
pub fn write_run_dir(
    dir: &Path,
    config: &RunConfig,
    outcome: &BenchmarkOutcome,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_vec_pretty(config).expect("config serializes"),
    )?;
    let mut questions = std::fs::File::create(dir.join("questions.jsonl"))?;
    for record in &outcome.records {
        serde_json::to_writer(&mut questions, record).map_err(std::io::Error::other)?;
        questions.write_all(b"\n")?;
    }
    if !outcome.failures.is_empty() {
        let mut failures = std::fs::File::create(dir.join("failures.jsonl"))?;
        for failure in &outcome.failures {
            serde_json::to_writer(&mut failures, failure).map_err(std::io::Error::other)?;
            failures.write_all(b"\n")?;
        }
    }
    if !outcome.pairwise_distances.is_empty() {
        // Unit vectors are at most 2 apart; 0.02 steps resolve the shape.
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.02).collect();
        let cdf = crate::kernel::distance_cdf(&outcome.pairwise_distances, &grid);
        let mut rows = String::from("distance,cumulative_fraction\n");
        for (distance, fraction) in cdf {
            rows.push_str(&format!("{distance},{fraction}\n"));
        }
        std::fs::write(dir.join("distance_cdf.csv"), rows)?;
    }
    Ok(())
}

/// Read the records of a previously written run directory.
pub fn read_question_records(dir: &Path) -> std::io::Result<Vec<QuestionRecord>> {
    let text = std::fs::read_to_string(dir.join("questions.jsonl"))?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(std::io::Error::other))
        .collect()
}

/// Read the config snapshot of a run directory.
pub fn read_run_config(dir: &Path) -> std::io::Result<RunConfig> {
    let bytes = std::fs::read(dir.join("config.json"))?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::other)
}
