//! Comparison methods built on answer clustering: semantic entropy and the
//! Shannon-entropy decomposition over clarification-conditioned clusters.
//!
//! Clustering needs a semantic-equivalence judgment between two answers.
//! That judgment is pluggable; the default implementation asks an LLM for
//! bidirectional entailment, which trades the usual NLI model for the
//! provider already in use. Cluster probabilities come from answer
//! frequencies because token likelihoods are unavailable in the black-box
//! setting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no answers to cluster")]
    EmptyInput,
    #[error("answer groups must be equally sized: {sizes:?}")]
    UnequalGroupSizes { sizes: Vec<usize> },
    #[error("equivalence judge returned {response:?} instead of yes/no")]
    JudgeParse { response: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A configured judge of semantic equivalence between two answers to the
/// same question. Identical strings are equivalent without consulting the
/// judge; implementations are expected to be symmetric.
pub trait EquivalenceOracle {
    fn equivalent(&self, a: &str, b: &str, question: &str) -> Result<bool, BaselineError>;
}

/// Equates only identical strings. Useful offline and as the degenerate
/// case where semantic entropy reduces to the exact string histogram.
pub struct ExactMatchOracle;

impl EquivalenceOracle for ExactMatchOracle {
    fn equivalent(&self, a: &str, b: &str, _question: &str) -> Result<bool, BaselineError> {
        Ok(a == b)
    }
}

/// Adapter turning a plain closure into an oracle, mostly for tests.
pub struct FnOracle<F: Fn(&str, &str, &str) -> bool>(pub F);

impl<F: Fn(&str, &str, &str) -> bool> EquivalenceOracle for FnOracle<F> {
    fn equivalent(&self, a: &str, b: &str, question: &str) -> Result<bool, BaselineError> {
        Ok((self.0)(a, b, question))
    }
}

/// LLM judge that declares two answers equivalent only when each entails
/// the other. Both directions go through the gateway, so every unordered
/// pair is cached after its first evaluation.
pub struct LlmEquivalenceJudge<'g> {
    gateway: &'g Gateway,
    model: String,
    max_tokens: u32,
}

impl<'g> LlmEquivalenceJudge<'g> {
    pub fn new(gateway: &'g Gateway, model: String, max_tokens: u32) -> Self {
        Self {
            gateway,
            model,
            max_tokens,
        }
    }

    fn entails(
        &self,
        premise: &str,
        hypothesis: &str,
        question: &str,
    ) -> Result<bool, BaselineError> {
        let request = ChatRequest {
            model: self.model.clone(),
            system_prompt: prompts::ENTAILMENT_JUDGE_TEMPLATE.to_string(),
            user_prompt: prompts::entailment_user_prompt(question, premise, hypothesis),
            temperature: 0.0,
            sample_index: 0,
            max_tokens: self.max_tokens,
        };
        let response = self.gateway.chat(&request)?;
        prompts::parse_yes_no(&response).ok_or(BaselineError::JudgeParse { response })
    }
}

impl EquivalenceOracle for LlmEquivalenceJudge<'_> {
    fn equivalent(&self, a: &str, b: &str, question: &str) -> Result<bool, BaselineError> {
        if a == b {
            return Ok(true);
        }
        Ok(self.entails(a, b, question)? && self.entails(b, a, question)?)
    }
}

/// Partition of answers into equivalence clusters with their frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistribution {
    /// Cluster index per answer, in input order.
    pub labels: Vec<usize>,
    /// Cluster frequencies, in founding order; nonnegative, sums to 1.
    pub probabilities: Vec<f64>,
}

/// Greedy single-pass clustering: each answer joins the first cluster whose
/// representative (its founding member) it is equivalent to, otherwise it
/// founds a new cluster. O(k*N) oracle calls for k clusters.
pub fn cluster_answers(
    answers: &[String],
    question: &str,
    oracle: &dyn EquivalenceOracle,
) -> Result<ClusterDistribution, BaselineError> {
    if answers.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let mut representatives: Vec<&str> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(answers.len());
    for answer in answers {
        let mut assigned = None;
        for (cluster, representative) in representatives.iter().enumerate() {
            // Identical strings short-circuit; the oracle only sees real
            // paraphrase decisions.
            if answer == representative || oracle.equivalent(answer, representative, question)? {
                assigned = Some(cluster);
                break;
            }
        }
        let cluster = match assigned {
            Some(cluster) => cluster,
            None => {
                representatives.push(answer);
                counts.push(0);
                representatives.len() - 1
            }
        };
        counts[cluster] += 1;
        labels.push(cluster);
    }
    let total = answers.len() as f64;
    let probabilities = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(ClusterDistribution {
        labels,
        probabilities,
    })
}

fn entropy(probabilities: &[f64]) -> f64 {
    -probabilities
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Shannon entropy of a cluster distribution, in nats.
pub fn shannon_entropy(distribution: &ClusterDistribution) -> f64 {
    entropy(&distribution.probabilities)
}

/// Entropy over equivalence-clustered answers.
pub fn semantic_entropy(
    answers: &[String],
    question: &str,
    oracle: &dyn EquivalenceOracle,
) -> Result<f64, BaselineError> {
    Ok(shannon_entropy(&cluster_answers(
        answers, question, oracle,
    )?))
}

/// Shannon decomposition over clarification-conditioned cluster
/// distributions.
///
/// The pooled answers are clustered once so every group shares one label
/// space. Epistemic is the mean per-group entropy, total the pooled
/// entropy, and their difference (the mutual information between answer
/// cluster and clarification) is the aleatoric part. Returns
/// (total, aleatoric, epistemic).
pub fn ice_decompose(
    answers_by_clarification: &[Vec<String>],
    question: &str,
    oracle: &dyn EquivalenceOracle,
) -> Result<(f64, f64, f64), BaselineError> {
    if answers_by_clarification.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let m = answers_by_clarification[0].len();
    if m == 0 || answers_by_clarification.iter().any(|g| g.len() != m) {
        return Err(BaselineError::UnequalGroupSizes {
            sizes: answers_by_clarification.iter().map(Vec::len).collect(),
        });
    }
    let pooled: Vec<String> = answers_by_clarification.iter().flatten().cloned().collect();
    let clusters = cluster_answers(&pooled, question, oracle)?;
    let cluster_count = clusters.probabilities.len();
    let n = answers_by_clarification.len();

    let mut epistemic = 0.0;
    for group in 0..n {
        let mut frequencies = vec![0.0; cluster_count];
        for j in 0..m {
            frequencies[clusters.labels[group * m + j]] += 1.0 / m as f64;
        }
        epistemic += entropy(&frequencies) / n as f64;
    }
    let total = shannon_entropy(&clusters);
    let aleatoric = total - epistemic;
    Ok((total, aleatoric, epistemic))
}
