//! Eigenvalue-based uncertainty estimators.
//!
//! The von Neumann entropy of a unit-trace PSD operator is the Shannon
//! entropy of its eigenvalues. For a sample of embeddings the relevant
//! operator is the empirical covariance in feature space, whose nonzero
//! eigenvalues coincide with those of the scaled Gram matrix (1/n)K, so
//! everything here reduces to symmetric eigendecompositions of Gram
//! matrices.
//!
//! Given a two-stage sample (n clarifications, m answers each), total
//! uncertainty is the entropy of the pooled nm-sample spectrum, epistemic
//! uncertainty is the mean entropy of the per-clarification spectra, and
//! the aleatoric part is their difference (a Holevo-information plug-in).
//! All entropies are in nats.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{gram_matrix, Embedding, GramMatrix, KernelError, KernelSpec};

/// Eigenvalues below this are treated as exact zeros.
pub const EIGENVALUE_CLIP: f64 = 1e-12;
/// Eigenvalues at or below this are a hard PSD failure, not round-off.
pub const PSD_FAILURE: f64 = -1e-8;
/// Allowed deviation of a clipped spectrum's sum from 1.
pub const TRACE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("matrix not PSD: eigenvalue {value} is below {PSD_FAILURE}")]
    NotPsd { value: f64 },
    #[error("spectrum sum {sum} deviates from unit trace by more than {TRACE_TOLERANCE}")]
    TraceDeviation { sum: f64 },
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("sample matrix needs at least one group")]
    NoGroups,
    #[error("sample groups must be non-empty and equally sized: {sizes:?}")]
    UnequalGroupSizes { sizes: Vec<usize> },
}

/// Clipped eigenvalues of a unit-trace matrix, in descending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    source_size: usize,
    trace_residual: f64,
}

impl Spectrum {
    fn from_raw(mut eigenvalues: Vec<f64>, source_size: usize) -> Result<Self, SpectralError> {
        for value in &mut eigenvalues {
            if *value <= PSD_FAILURE {
                return Err(SpectralError::NotPsd { value: *value });
            }
            if *value < EIGENVALUE_CLIP {
                *value = 0.0;
            }
        }
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - 1.0).abs() > TRACE_TOLERANCE {
            return Err(SpectralError::TraceDeviation { sum });
        }
        // A unit-trace PSD spectrum lives in [0, 1]; round-off above 1 is
        // clamped just like round-off below 0, which keeps every p ln p
        // term nonpositive. The residual is reported, never silently
        // renormalized away.
        for value in &mut eigenvalues {
            if *value > 1.0 {
                *value = 1.0;
            }
        }
        eigenvalues.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        let clipped_sum: f64 = eigenvalues.iter().sum();
        Ok(Self {
            eigenvalues,
            source_size,
            trace_residual: 1.0 - clipped_sum,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn trace_residual(&self) -> f64 {
        self.trace_residual
    }
}

fn symmetric_eigenvalues(matrix: Array2<f64>) -> Result<Vec<f64>, SpectralError> {
    let n = matrix.nrows();
    let symmetric = nalgebra::DMatrix::from_fn(n, n, |i, j| matrix[[i, j]]);
    Ok(symmetric.symmetric_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of (1/n)K for an n-sample Gram matrix.
pub fn spectrum_of(k: &GramMatrix) -> Result<Spectrum, SpectralError> {
    let n = k.size();
    let scaled = k.entries() / n as f64;
    Spectrum::from_raw(symmetric_eigenvalues(scaled)?, n)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Von Neumann entropy of a spectrum: -sum(lambda ln lambda), 0 ln 0 = 0.
pub fn vne(spectrum: &Spectrum) -> f64 {
    -spectrum.eigenvalues.iter().copied().map(plogp).sum::<f64>()
}

/// Plug-in entropy of a sample: VNE of the spectrum of its Gram matrix.
///
/// Applied to answers sampled from the raw question this is the predictive
/// kernel entropy baseline.
pub fn vne_of_samples(samples: &[Embedding], spec: KernelSpec) -> Result<f64, SpectralError> {
    Ok(vne(&spectrum_of(&gram_matrix(samples, spec)?)?))
}

/// Two-stage sample: n groups of m embeddings, one group per clarification.
///
/// Equal group sizes are required; the pooled spectrum only equals the mean
/// of the group covariances (which makes the aleatoric term nonnegative)
/// when every group contributes the same weight.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    groups: Vec<Vec<Embedding>>,
}

impl SampleMatrix {
    pub fn new(groups: Vec<Vec<Embedding>>) -> Result<Self, SpectralError> {
        if groups.is_empty() {
            return Err(SpectralError::NoGroups);
        }
        let m = groups[0].len();
        if m == 0 || groups.iter().any(|g| g.len() != m) {
            return Err(SpectralError::UnequalGroupSizes {
                sizes: groups.iter().map(Vec::len).collect(),
            });
        }
        let dim = groups[0][0].dim();
        for group in &groups {
            for e in group {
                if e.dim() != dim {
                    return Err(KernelError::DimensionMismatch {
                        left: dim,
                        right: e.dim(),
                    }
                    .into());
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn groups(&self) -> &[Vec<Embedding>] {
        &self.groups
    }

    pub fn pooled(&self) -> Vec<Embedding> {
        self.groups.iter().flatten().cloned().collect()
    }
}

/// Uncertainty decomposition in nats, plus spectral diagnostics.
///
/// `aleatoric` is defined as `total - epistemic`, so the decomposition
/// identity holds to round-off by construction and `total` equals the
/// entropy of the outer spectrum exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub inner_spectra: Vec<Spectrum>,
    pub outer_spectrum: Spectrum,
}

/// Decompose the uncertainty of a two-stage sample.
///
/// Inner spectra come from each group's m x m Gram matrix scaled by 1/m;
/// the outer spectrum from the pooled nm x nm Gram matrix scaled by 1/(nm).
/// Epistemic is the mean inner entropy, aleatoric is outer entropy minus
/// mean inner entropy, and their sum cancels back to the outer entropy.
///
/// ```
/// use spectral_uncertainty::{decompose, Embedding, KernelSpec, SampleMatrix};
///
/// // Two interpretations answered unanimously but differently: the
/// // uncertainty is entirely about which interpretation was meant.
/// let team = Embedding::basis(2, 0);
/// let player = Embedding::basis(2, 1);
/// let samples = SampleMatrix::new(vec![
///     vec![team.clone(), team],
///     vec![player.clone(), player],
/// ])?;
/// let report = decompose(&samples, KernelSpec::Linear)?;
/// assert!((report.aleatoric - std::f64::consts::LN_2).abs() < 1e-9);
/// assert!(report.epistemic.abs() < 1e-9);
/// # Ok::<(), spectral_uncertainty::spectral::SpectralError>(())
/// ```
pub fn decompose(
    samples: &SampleMatrix,
    spec: KernelSpec,
) -> Result<UncertaintyReport, SpectralError> {
    let n = samples.group_count() as f64;
    let inner_spectra = samples
        .groups()
        .iter()
        .map(|group| spectrum_of(&gram_matrix(group, spec)?))
        .collect::<Result<Vec<_>, _>>()?;
    let outer_spectrum = spectrum_of(&gram_matrix(&samples.pooled(), spec)?)?;

    // Fixed sequential reduction order keeps results independent of any
    // caller-side parallelism.
    let inner_plogp: f64 = inner_spectra
        .iter()
        .map(|s| s.eigenvalues.iter().copied().map(plogp).sum::<f64>())
        .sum();
    let outer_plogp: f64 = outer_spectrum.eigenvalues.iter().copied().map(plogp).sum();

    // Every p ln p term is nonpositive, so both parts are exactly
    // nonnegative; the mean-inner term cancels out of the sum, leaving the
    // total equal to the pooled entropy.
    let epistemic = -(inner_plogp / n);
    let total = -outer_plogp;
    let aleatoric = total - epistemic;

    Ok(UncertaintyReport {
        total,
        aleatoric,
        epistemic,
        inner_spectra,
        outer_spectrum,
    })
}

/// Spectrum of the explicit feature-space covariance (1/n) sum x_i x_i^T.
///
/// Only meaningful under the linear kernel, where the feature map is the
/// identity. This is the independent route against which the Gram-side
/// spectrum is checked: the two must share their nonzero eigenvalues.
pub fn covariance_oracle(samples: &[Embedding]) -> Result<Spectrum, SpectralError> {
    if samples.is_empty() {
        return Err(KernelError::NotEnoughSamples { needed: 1, got: 0 }.into());
    }
    let dim = samples[0].dim();
    let n = samples.len();
    let mut cov = Array2::zeros((dim, dim));
    for sample in samples {
        if sample.dim() != dim {
            return Err(KernelError::DimensionMismatch {
                left: dim,
                right: sample.dim(),
            }
            .into());
        }
        let v = sample.values();
        for i in 0..dim {
            for j in 0..dim {
                cov[[i, j]] += v[i] * v[j] / n as f64;
            }
        }
    }
    Spectrum::from_raw(symmetric_eigenvalues(cov)?, n)
}

/// VNE of an explicit unit-trace PSD matrix (same clipping as `spectrum_of`).
pub fn vne_of_covariance(cov: &Array2<f64>) -> Result<f64, SpectralError> {
    let spectrum = Spectrum::from_raw(symmetric_eigenvalues(cov.clone())?, cov.nrows())?;
    Ok(vne(&spectrum))
}

/// Compare the nonzero parts of two spectra as multisets.
pub fn nonzero_eigenvalues_match(a: &Spectrum, b: &Spectrum, tol: f64) -> bool {
    let mut left: Vec<f64> = a.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    let mut right: Vec<f64> = b.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    let len = left.len().max(right.len());
    left.resize(len, 0.0);
    right.resize(len, 0.0);
    left.iter().zip(&right).all(|(x, y)| (x - y).abs() <= tol)
}
