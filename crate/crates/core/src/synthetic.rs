//! Offline verification harness: answer distributions with known
//! embeddings, closed-form uncertainty values, and a scripted provider
//! that drives the full pipeline without any network.
//!
//! The linear kernel makes the feature map explicit, so the conditional
//! covariances and their mixture can be built directly in d dimensions and
//! the three uncertainty components computed exactly. Estimates from the
//! two-stage sampler must converge to these values as the inner sample
//! grows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::evaluation::{build_eval_records, DatasetItem, EvalRecord};
use crate::gateway::{
    CallFailure, ChatReply, ChatRequest, EmbedReply, Gateway, GatewaySettings, Provider,
};
use crate::kernel::{Embedding, KernelSpec};
use crate::pipeline::{run_benchmark, BenchmarkOutcome, QuestionInput, TaskKind};
use crate::prompts;
use crate::spectral::{
    decompose, vne_of_covariance, SampleMatrix, SpectralError, UncertaintyReport,
};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("profile {index} does not sum to 1 (sum {sum})")]
    BadProfile { index: usize, sum: f64 },
    #[error("profile {index} has {got} entries for a vocabulary of {expected}")]
    ProfileLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("unknown synthetic question {0:?}")]
    UnknownQuestion(String),
    #[error("question {0:?} has no profiles")]
    NoProfiles(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("gateway: {0}")]
    Gateway(String),
}

/// A question whose answer behavior is fully specified: one categorical
/// profile over the vocabulary per plausible interpretation.
#[derive(Debug, Clone)]
pub struct SyntheticQuestion {
    pub id: String,
    pub text: String,
    pub profiles: Vec<Vec<f64>>,
    pub ambiguous: bool,
}

/// A closed world of answers with fixed embeddings.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub vocabulary: Vec<(String, Embedding)>,
    pub questions: Vec<SyntheticQuestion>,
    pub seed: u64,
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        for question in &self.questions {
            if question.profiles.is_empty() {
                return Err(SyntheticError::NoProfiles(question.id.clone()));
            }
            for (index, profile) in question.profiles.iter().enumerate() {
                if profile.len() != self.vocabulary.len() {
                    return Err(SyntheticError::ProfileLength {
                        index,
                        got: profile.len(),
                        expected: self.vocabulary.len(),
                    });
                }
                let sum: f64 = profile.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || profile.iter().any(|&p| p < 0.0) {
                    return Err(SyntheticError::BadProfile { index, sum });
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Result<&SyntheticQuestion, SyntheticError> {
        self.questions
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| SyntheticError::UnknownQuestion(id.to_string()))
    }

    fn dim(&self) -> usize {
        self.vocabulary[0].1.dim()
    }

    /// d x d covariance of one categorical profile over the vocabulary.
    fn profile_covariance(&self, profile: &[f64]) -> Array2<f64> {
        let d = self.dim();
        let mut cov = Array2::zeros((d, d));
        for (weight, (_, embedding)) in profile.iter().zip(&self.vocabulary) {
            if *weight == 0.0 {
                continue;
            }
            let v = embedding.values();
            for i in 0..d {
                for j in 0..d {
                    cov[[i, j]] += weight * v[i] * v[j];
                }
            }
        }
        cov
    }

    fn sample_word(&self, profile: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        for (index, &p) in profile.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return index;
            }
        }
        profile.len() - 1
    }
}

/// Closed-form (total, aleatoric, epistemic) for one synthetic question.
///
/// Builds each conditional covariance and their uniform mixture exactly;
/// total is the entropy of the mixture and epistemic the mean conditional
/// entropy.
pub fn exact_uncertainties(
    world: &SyntheticWorld,
    question_id: &str,
) -> Result<(f64, f64, f64), SyntheticError> {
    let question = world.question(question_id)?;
    let n = question.profiles.len() as f64;
    let d = world.dim();
    let mut mixture = Array2::zeros((d, d));
    let mut epistemic = 0.0;
    for profile in &question.profiles {
        let cov = world.profile_covariance(profile);
        epistemic += vne_of_covariance(&cov)? / n;
        mixture += &(cov / n);
    }
    let total = vne_of_covariance(&mixture)?;
    Ok((total, total - epistemic, epistemic))
}

/// Run the two-stage sampler on a synthetic question and decompose with the
/// linear kernel. Deterministic for a given seed.
///
/// When `n` does not exceed the number of profiles, the outer stage picks
/// n distinct profiles (so n equal to the profile count exercises them
/// all); otherwise profiles are drawn with replacement.
pub fn simulate_and_estimate(
    world: &SyntheticWorld,
    question_id: &str,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<UncertaintyReport, SyntheticError> {
    let question = world.question(question_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let profile_count = question.profiles.len();
    let outer: Vec<usize> = if n <= profile_count {
        let mut indices: Vec<usize> = (0..profile_count).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n);
        indices
    } else {
        (0..n).map(|_| rng.gen_range(0..profile_count)).collect()
    };

    let groups: Vec<Vec<Embedding>> = outer
        .iter()
        .map(|&profile_index| {
            (0..m)
                .map(|_| {
                    let word = world.sample_word(&question.profiles[profile_index], &mut rng);
                    world.vocabulary[word].1.clone()
                })
                .collect()
        })
        .collect();
    let samples = SampleMatrix::new(groups)?;
    Ok(decompose(&samples, KernelSpec::Linear)?)
}

fn interpretation_text(question: &str, index: usize) -> String {
    format!("{question} [interpretation {}]", index + 1)
}

#[derive(Debug, Clone, Copy)]
enum AnswerSource {
    /// Answers follow one specific profile.
    Profile(usize, usize),
    /// Answers follow the uniform mixture of all profiles (the behavior on
    /// the raw, unclarified question).
    Mixture(usize),
}

/// A provider scripted by a [`SyntheticWorld`]: clarification prompts get
/// the question's interpretations, answer prompts get profile draws, the
/// entailment judge equates exact duplicates, and embeddings come from the
/// vocabulary. Fully deterministic, including under concurrency.
pub struct WorldProvider {
    world: SyntheticWorld,
    answer_sources: BTreeMap<String, AnswerSource>,
    chat_calls: Arc<AtomicUsize>,
    embed_texts: Arc<AtomicUsize>,
}

impl WorldProvider {
    pub fn new(world: SyntheticWorld) -> Self {
        let mut answer_sources = BTreeMap::new();
        for (qi, question) in world.questions.iter().enumerate() {
            if question.ambiguous {
                for pi in 0..question.profiles.len() {
                    answer_sources.insert(
                        interpretation_text(&question.text, pi),
                        AnswerSource::Profile(qi, pi),
                    );
                }
                answer_sources.insert(question.text.clone(), AnswerSource::Mixture(qi));
            } else {
                answer_sources.insert(question.text.clone(), AnswerSource::Profile(qi, 0));
            }
        }
        Self {
            world,
            answer_sources,
            chat_calls: Arc::new(AtomicUsize::new(0)),
            embed_texts: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn chat_call_counter(&self) -> Arc<AtomicUsize> {
        self.chat_calls.clone()
    }

    pub fn embed_text_counter(&self) -> Arc<AtomicUsize> {
        self.embed_texts.clone()
    }

    fn clarification_reply(&self, question_text: &str) -> Result<String, CallFailure> {
        let question = self
            .world
            .questions
            .iter()
            .find(|q| q.text == question_text)
            .ok_or_else(|| CallFailure::Permanent {
                status: 404,
                message: format!("unknown synthetic question {question_text:?}"),
            })?;
        if !question.ambiguous {
            return Ok("---Analyses:\nThe question pins down a single reading.\n\n---Clarifications:\n-1 No clarification needed.".to_string());
        }
        let mut reply = String::from(
            "---Analyses:\nSeveral readings lead to different answers.\n\n---Clarifications:\n",
        );
        for pi in 0..question.profiles.len() {
            reply.push_str(&format!(
                "-{} {}\n",
                pi + 1,
                interpretation_text(&question.text, pi)
            ));
        }
        Ok(reply)
    }

    fn answer_reply(&self, key: &str, sample_index: u32) -> Result<String, CallFailure> {
        let source = self
            .answer_sources
            .get(key)
            .ok_or_else(|| CallFailure::Permanent {
                status: 404,
                message: format!("no answer profile for {key:?}"),
            })?;
        let (qi, profile) = match *source {
            AnswerSource::Profile(qi, pi) => (qi, self.world.questions[qi].profiles[pi].clone()),
            AnswerSource::Mixture(qi) => {
                let profiles = &self.world.questions[qi].profiles;
                let mut mixture = vec![0.0; self.world.vocabulary.len()];
                for profile in profiles {
                    for (slot, p) in mixture.iter_mut().zip(profile) {
                        *slot += p / profiles.len() as f64;
                    }
                }
                (qi, mixture)
            }
        };
        let _ = qi;
        // Seeded per (world, prompt, draw index): the reply depends only on
        // the request, never on call order.
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(self.world.seed, key, sample_index));
        let word = self.world.sample_word(&profile, &mut rng);
        Ok(format!("Answer: {}", self.world.vocabulary[word].0))
    }

    fn entailment_reply(&self, user_prompt: &str) -> Result<String, CallFailure> {
        let mut answer_a = None;
        let mut answer_b = None;
        for line in user_prompt.lines() {
            if let Some(rest) = line.strip_prefix("Answer A: ") {
                answer_a = Some(rest);
            } else if let Some(rest) = line.strip_prefix("Answer B: ") {
                answer_b = Some(rest);
            }
        }
        match (answer_a, answer_b) {
            (Some(a), Some(b)) => Ok(if a == b { "yes".into() } else { "no".into() }),
            _ => Err(CallFailure::Permanent {
                status: 400,
                message: "malformed entailment prompt".into(),
            }),
        }
    }
}

fn draw_seed(world_seed: u64, key: &str, sample_index: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(world_seed.to_be_bytes());
    hasher.update(key.as_bytes());
    hasher.update(sample_index.to_be_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn strip_question_prefix(user_prompt: &str) -> &str {
    user_prompt
        .strip_prefix("Question: ")
        .unwrap_or(user_prompt)
}

impl Provider for WorldProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, CallFailure> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let system = request.system_prompt.as_str();
        let text = if system == prompts::CLARIFY_QUESTION_TEMPLATE
            || system == prompts::CLARIFY_INSTRUCTION_TEMPLATE
            || system == prompts::REPHRASE_QUESTION_TEMPLATE
        {
            self.clarification_reply(strip_question_prefix(&request.user_prompt))?
        } else if system == prompts::ANSWER_QUESTION_TEMPLATE
            || system == prompts::ANSWER_INSTRUCTION_TEMPLATE
            || system == prompts::ANSWER_SHORT_TEMPLATE
        {
            self.answer_reply(
                strip_question_prefix(&request.user_prompt),
                request.sample_index,
            )?
        } else if system == prompts::ENTAILMENT_JUDGE_TEMPLATE {
            self.entailment_reply(&request.user_prompt)?
        } else {
            return Err(CallFailure::Permanent {
                status: 400,
                message: "unrecognized prompt template".into(),
            });
        };
        Ok(ChatReply { text, usage: None })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<EmbedReply, CallFailure> {
        self.embed_texts.fetch_add(texts.len(), Ordering::SeqCst);
        texts
            .iter()
            .map(|text| {
                self.world
                    .vocabulary
                    .iter()
                    .find(|(word, _)| word == text)
                    .map(|(_, embedding)| embedding.values().to_vec())
                    .ok_or_else(|| CallFailure::Permanent {
                        status: 404,
                        message: format!("no embedding for {text:?}"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|vectors| EmbedReply {
                vectors,
                usage: None,
            })
    }
}

/// Construct a cleanly separable ambiguity world.
///
/// Ambiguous questions get two or three point-mass profiles on distinct
/// words, so their interpretations disagree while each interpretation is
/// answered consistently. Unambiguous questions get a single profile:
/// half of them certain (point mass), half spread over a few words. The
/// spread ones give entropy to any method that ignores clarifications,
/// which is exactly what separates the decomposition from plain predictive
/// entropy here.
pub fn build_separable_world(
    question_count: usize,
    ambiguous_fraction: f64,
    seed: u64,
) -> SyntheticWorld {
    let dim = 8;
    let vocabulary: Vec<(String, Embedding)> = (0..dim)
        .map(|i| {
            (
                format!("candidate answer {}", (b'a' + i as u8) as char),
                Embedding::basis(dim, i),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambiguous_count = (question_count as f64 * ambiguous_fraction).round() as usize;

    let questions = (0..question_count)
        .map(|index| {
            let ambiguous = index < ambiguous_count;
            let mut words: Vec<usize> = (0..dim).collect();
            words.shuffle(&mut rng);
            let profiles = if ambiguous {
                let readings = rng.gen_range(2..=3);
                (0..readings)
                    .map(|r| {
                        let mut profile = vec![0.0; dim];
                        profile[words[r]] = 1.0;
                        profile
                    })
                    .collect()
            } else if index % 2 == 0 {
                // Certain: one answer, always.
                let mut profile = vec![0.0; dim];
                profile[words[0]] = 1.0;
                vec![profile]
            } else {
                // Unsure but unambiguous: answers spread over a few words.
                let spread = rng.gen_range(2..=3);
                let mut profile = vec![0.0; dim];
                for &word in words.iter().take(spread) {
                    profile[word] = 1.0 / spread as f64;
                }
                vec![profile]
            };
            SyntheticQuestion {
                id: format!("syn-{index:03}"),
                text: format!("synthetic question {index:03}"),
                profiles,
                ambiguous,
            }
        })
        .collect();

    SyntheticWorld {
        vocabulary,
        questions,
        seed,
    }
}

pub struct SyntheticBenchmark {
    pub world: SyntheticWorld,
    pub dataset: Vec<DatasetItem>,
    pub outcome: BenchmarkOutcome,
    pub eval_records: Vec<EvalRecord>,
}

/// Score a separable synthetic world end to end through the real pipeline
/// and gateway, no network involved.
pub fn synthetic_benchmark(
    question_count: usize,
    ambiguous_fraction: f64,
    seed: u64,
    cache_dir: &Path,
    config: &RunConfig,
) -> Result<SyntheticBenchmark, SyntheticError> {
    let world = build_separable_world(question_count, ambiguous_fraction, seed);
    world.validate()?;

    let provider = WorldProvider::new(world.clone());
    let gateway = Gateway::new(
        Box::new(provider),
        GatewaySettings::new(cache_dir),
        Arc::new(crate::gateway::SystemClock::new()),
    )
    .map_err(|e| SyntheticError::Gateway(e.to_string()))?;

    let dataset: Vec<DatasetItem> = world
        .questions
        .iter()
        .map(|q| DatasetItem {
            id: q.id.clone(),
            question: q.text.clone(),
            ambiguous: Some(q.ambiguous),
            gold_answers: None,
            task_kind: Some(TaskKind::AmbigQa),
        })
        .collect();
    let inputs: Vec<QuestionInput> = dataset
        .iter()
        .map(|item| QuestionInput {
            id: item.id.clone(),
            question: item.question.clone(),
            task_kind: TaskKind::AmbigQa,
        })
        .collect();

    let clock = crate::gateway::SystemClock::new();
    let outcome = run_benchmark(&gateway, config, &clock, &inputs);
    let (eval_records, _excluded) = build_eval_records(None, config, &dataset, &outcome.records)
        .map_err(|e| SyntheticError::Gateway(e.to_string()))?;
    Ok(SyntheticBenchmark {
        world,
        dataset,
        outcome,
        eval_records,
    })
}
