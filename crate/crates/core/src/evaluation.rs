//! Dataset ingestion, correctness labeling, ranking metrics and report
//! export.
//!
//! AUROC is the rank-based Mann-Whitney statistic with average ranks for
//! ties, identical to the pairwise probability P(score+ > score-) plus half
//! the tie mass. AUPR is average precision (step-wise, ties broken by
//! stable input order); the trapezoidal PR interpolation is deliberately
//! not used.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::pipeline::{QuestionRecord, TaskKind};
use crate::prompts;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("judge answered {response:?} instead of yes/no")]
    JudgeParse { response: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("report I/O failure: {0}")]
    Report(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Ground truth is an ambiguity flag.
    Ambiguity,
    /// Ground truth is a set of gold answers to judge against.
    Correctness,
}

/// One benchmark item. Ambiguity items carry `ambiguous`; correctness items
/// carry at least one gold answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_kind: Option<TaskKind>,
}

impl DatasetItem {
    pub fn label_kind(&self) -> LabelKind {
        if self.ambiguous.is_some() {
            LabelKind::Ambiguity
        } else {
            LabelKind::Correctness
        }
    }
}

/// Read a line-delimited dataset, validating ids and label fields.
pub fn ingest_dataset(path: &Path) -> Result<Vec<DatasetItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem =
            serde_json::from_str(line).map_err(|e| EvalError::MalformedLine {
                line: line_number,
                message: e.to_string(),
            })?;
        if item.id.is_empty() {
            return Err(EvalError::MalformedLine {
                line: line_number,
                message: "empty id".into(),
            });
        }
        if item.question.is_empty() {
            return Err(EvalError::MalformedLine {
                line: line_number,
                message: "empty question".into(),
            });
        }
        let has_golds = item.gold_answers.as_ref().is_some_and(|g| !g.is_empty());
        if item.ambiguous.is_none() && !has_golds {
            return Err(EvalError::MalformedLine {
                line: line_number,
                message: "item needs either an `ambiguous` flag or non-empty `gold_answers`".into(),
            });
        }
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::DuplicateId {
                id: item.id,
                line: line_number,
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Deterministic subsample of `size` items; the same seed always selects
/// the same subset, preserving original order.
pub fn subsample(items: &[DatasetItem], size: usize, seed: u64) -> Vec<DatasetItem> {
    if size >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..items.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(size).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

/// Ask the judge model whether a generated answer matches the gold answers.
pub fn judge_correctness(
    gateway: &Gateway,
    config: &RunConfig,
    question: &str,
    gold_answers: &[String],
    model_answer: &str,
) -> Result<bool, EvalError> {
    let request = ChatRequest {
        model: config.models.judge.clone(),
        system_prompt: prompts::CORRECTNESS_JUDGE_TEMPLATE.to_string(),
        user_prompt: prompts::judge_user_prompt(question, gold_answers, model_answer),
        temperature: 0.0,
        sample_index: 0,
        max_tokens: config.sampling.judge_max_tokens,
    };
    let response = gateway.chat(&request)?;
    prompts::parse_yes_no(&response).ok_or(EvalError::JudgeParse { response })
}

/// Sample the model's best-effort answer (low temperature, single draw) and
/// judge it. Returns true when the answer is judged correct.
pub fn best_effort_is_correct(
    gateway: &Gateway,
    config: &RunConfig,
    question: &str,
    task: TaskKind,
    gold_answers: &[String],
) -> Result<bool, EvalError> {
    let request = ChatRequest {
        model: config.models.target.clone(),
        system_prompt: prompts::answer_template(task).to_string(),
        user_prompt: prompts::answer_user_prompt(task, question),
        temperature: config.sampling.best_effort_temperature,
        sample_index: 0,
        max_tokens: config.sampling.answer_max_tokens,
    };
    let raw = gateway.chat(&request)?;
    let (answer, _warned) = prompts::parse_answer(task, &raw);
    judge_correctness(gateway, config, question, gold_answers, &answer)
}

/// One evaluated question: a binary label and per-method scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub label: bool,
    pub scores: BTreeMap<String, f64>,
}

fn validate_scores(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore { index });
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for ties. Requires both classes.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    validate_scores(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::UndefinedMetric(format!(
            "AUROC needs both classes, got {positives} positives / {negatives} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks over runs of equal scores.
    let mut rank_of = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let average = (start + end) as f64 / 2.0 + 1.0;
        for &index in &order[start..=end] {
            rank_of[index] = average;
        }
        start = end + 1;
    }

    let positive_rank_sum: f64 = labels
        .iter()
        .zip(&rank_of)
        .filter(|(l, _)| **l)
        .map(|(_, r)| r)
        .sum();
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Average precision: mean over positives of precision at their rank,
/// scores descending, ties broken by stable input order.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    validate_scores(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::UndefinedMetric(
            "AUPR needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut seen_positives = 0.0;
    let mut precision_sum = 0.0;
    for (rank0, &index) in order.iter().enumerate() {
        if labels[index] {
            seen_positives += 1.0;
            precision_sum += seen_positives / (rank0 + 1) as f64;
        }
    }
    Ok(precision_sum / positives as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodMetrics {
    pub auroc_pct: f64,
    pub aupr_pct: f64,
    pub records: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub metrics: BTreeMap<String, MethodMetrics>,
    pub records: usize,
    pub positives: usize,
    pub excluded: usize,
}

impl ReportSummary {
    /// The table written to metrics.txt, percentages at two decimals.
    pub fn table(&self) -> String {
        let mut out = String::from("method                        AUROC (%)  AUPR (%)\n");
        for (method, metrics) in &self.metrics {
            out.push_str(&format!(
                "{method:<28}  {:>9.2}  {:>8.2}\n",
                metrics.auroc_pct, metrics.aupr_pct
            ));
        }
        out
    }
}

/// Write metrics plus raw score/label columns for external plotting.
///
/// Produces `metrics.json`, `metrics.txt`, one `scores_<method>.csv` per
/// method (columns id, label, score) and `metadata.json` with the config
/// snapshot and exclusion counts.
pub fn export_report(
    records: &[EvalRecord],
    methods: &[String],
    out_dir: &Path,
    config: Option<&RunConfig>,
    excluded: usize,
) -> Result<ReportSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::UndefinedMetric("no records to evaluate".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    let mut metrics = BTreeMap::new();
    for method in methods {
        let mut scores = Vec::with_capacity(records.len());
        let mut method_labels = Vec::with_capacity(records.len());
        let mut rows = String::from("id,label,score\n");
        for record in records {
            let Some(&score) = record.scores.get(method) else {
                continue;
            };
            scores.push(score);
            method_labels.push(record.label);
            rows.push_str(&format!(
                "{},{},{}\n",
                record.id,
                u8::from(record.label),
                score
            ));
        }
        std::fs::write(out_dir.join(format!("scores_{method}.csv")), rows)?;
        metrics.insert(
            method.clone(),
            MethodMetrics {
                auroc_pct: 100.0 * auroc(&scores, &method_labels)?,
                aupr_pct: 100.0 * aupr(&scores, &method_labels)?,
                records: scores.len(),
            },
        );
    }

    let summary = ReportSummary {
        metrics,
        records: records.len(),
        positives: labels.iter().filter(|&&l| l).count(),
        excluded,
    };
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_vec_pretty(&summary.metrics).map_err(std::io::Error::from)?,
    )?;
    std::fs::write(out_dir.join("metrics.txt"), summary.table())?;

    let metadata = serde_json::json!({
        "records": summary.records,
        "positives": summary.positives,
        "negatives": summary.records - summary.positives,
        "excluded_judge_failures": excluded,
        "config": config,
    });
    let mut file = std::fs::File::create(out_dir.join("metadata.json"))?;
    file.write_all(&serde_json::to_vec_pretty(&metadata).map_err(std::io::Error::from)?)?;
    Ok(summary)
}

/// Build evaluation records by joining question records with their dataset
/// labels.
///
/// Ambiguity items use the ambiguity flag as the positive label and each
/// method's aleatoric-side score. Correctness items sample a best-effort
/// answer, judge it, and use "judged incorrect" as the positive label with
/// each method's total score, so higher uncertainty should rank incorrect
/// answers first. Judge parse failures exclude the item and are counted.
pub fn build_eval_records(
    gateway: Option<&Gateway>,
    config: &RunConfig,
    items: &[DatasetItem],
    records: &[QuestionRecord],
) -> Result<(Vec<EvalRecord>, usize), EvalError> {
    let by_id: BTreeMap<&str, &QuestionRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut eval_records = Vec::new();
    let mut excluded = 0;
    for item in items {
        let Some(record) = by_id.get(item.id.as_str()) else {
            continue;
        };
        let label = match item.label_kind() {
            LabelKind::Ambiguity => item.ambiguous.expect("ambiguity item"),
            LabelKind::Correctness => {
                let gateway = gateway.ok_or_else(|| {
                    EvalError::UndefinedMetric(
                        "correctness labeling needs a configured gateway".into(),
                    )
                })?;
                let golds = item.gold_answers.as_deref().unwrap_or_default();
                let task = item.task_kind.unwrap_or(config.task_kind);
                match best_effort_is_correct(gateway, config, &item.question, task, golds) {
                    Ok(correct) => !correct,
                    Err(EvalError::JudgeParse { response }) => {
                        log::warn!("excluding {}: judge answered {response:?}", item.id);
                        excluded += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let scores = record
            .scores
            .iter()
            .map(|(method, score)| {
                let value = match item.label_kind() {
                    LabelKind::Ambiguity => score.ambiguity_score(),
                    LabelKind::Correctness => score.total_score(),
                };
                (method.clone(), value)
            })
            .collect();
        eval_records.push(EvalRecord {
            id: item.id.clone(),
            label,
            scores,
        });
    }
    Ok((eval_records, excluded))
}
