//! Spectral decomposition of LLM predictive uncertainty.
//!
//! A question is expanded into clarifications, each clarification is
//! answered several times, and the answer embeddings are analyzed through
//! the eigenvalue spectra of their kernel matrices. The entropy of the
//! pooled spectrum is the total predictive uncertainty; the mean entropy
//! across clarifications is the epistemic part (what the model does not
//! know); the remainder is the aleatoric part (how ambiguous the input
//! is). The two add up to the total exactly.
//!
//! The crate splits into:
//!
//! - [`kernel`]: embeddings, kernel functions, Gram matrices;
//! - [`spectral`]: spectra, von Neumann entropy, the decomposition;
//! - [`gateway`]: cached, retrying chat/embedding clients;
//! - [`prompts`]: prompt templates and response parsers;
//! - [`pipeline`]: the clarify -> sample -> embed -> decompose loop;
//! - [`baselines`]: semantic entropy and clustering-based decomposition;
//! - [`evaluation`]: datasets, AUROC/AUPR, correctness judging, reports;
//! - [`synthetic`]: exact oracles and a provider-free benchmark world;
//! - [`config`]: run configuration.

pub mod baselines;
pub mod config;
pub mod evaluation;
pub mod gateway;
pub mod kernel;
pub mod pipeline;
pub mod prompts;
pub mod spectral;
pub mod synthetic;

pub use config::RunConfig;
pub use kernel::{Embedding, KernelSpec};
pub use spectral::{decompose, SampleMatrix, UncertaintyReport};
