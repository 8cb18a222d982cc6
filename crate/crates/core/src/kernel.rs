//! Kernels over sentence embeddings and Gram-matrix construction.
//!
//! Every similarity used downstream is a normalized kernel on unit vectors,
//! so k(x, x) = 1 and Gram matrices have unit diagonal. The RBF kernel is
//! k(x, y) = exp(-gamma * ||x - y||^2); the linear kernel is the plain dot
//! product, which on unit vectors is also normalized.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Input norms farther than this from 1 trigger a renormalization warning.
pub const NORM_WARN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("embedding must have at least one component")]
    EmptyEmbedding,
    #[error("embedding contains a non-finite component")]
    NonFiniteComponent,
    #[error("embedding has zero norm and cannot be normalized")]
    ZeroNorm,
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("need at least {needed} embeddings, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("RBF scale gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("gram matrix is not symmetric at ({i}, {j}): {left} vs {right}")]
    NotSymmetric {
        i: usize,
        j: usize,
        left: f64,
        right: f64,
    },
    #[error("gram matrix diagonal entry {i} is {value}, expected 1")]
    BadDiagonal { i: usize, value: f64 },
    #[error("gram matrix entry ({i}, {j}) is {value}, outside [-1, 1]")]
    EntryOutOfRange { i: usize, j: usize, value: f64 },
    #[error("gram matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// A unit-norm vector locating one sampled answer in semantic space.
///
/// Construction renormalizes the input (providers disagree on whether they
/// pre-normalize) and rejects empty, non-finite, and zero-norm vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, KernelError> {
        if values.is_empty() {
            return Err(KernelError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFiniteComponent);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(KernelError::ZeroNorm);
        }
        if (norm - 1.0).abs() > NORM_WARN_TOLERANCE {
            log::warn!("embedding norm {norm:.6} deviates from 1; renormalizing");
        }
        let values = values.into_iter().map(|v| v / norm).collect();
        Ok(Self { values })
    }

    /// Standard basis vector, handy for constructing exact test fixtures.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> Result<f64, KernelError> {
        self.check_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn squared_distance(&self, other: &Self) -> Result<f64, KernelError> {
        self.check_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn distance(&self, other: &Self) -> Result<f64, KernelError> {
        Ok(self.squared_distance(other)?.sqrt())
    }

    fn check_dim(&self, other: &Self) -> Result<(), KernelError> {
        if self.dim() != other.dim() {
            return Err(KernelError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }
}

/// Kernel family plus its scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// exp(-gamma * ||x - y||^2); gamma > 0.
    Rbf { gamma: f64 },
    /// <x, y>; normalized because inputs are unit vectors.
    Linear,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self, KernelError> {
        let spec = Self::Rbf { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if let Self::Rbf { gamma } = self {
            if !gamma.is_finite() || *gamma <= 0.0 {
                return Err(KernelError::InvalidGamma(*gamma));
            }
        }
        Ok(())
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::Rbf { gamma: 1.0 }
    }
}

/// Evaluate the kernel on a pair of embeddings. Symmetric in its arguments.
///
/// ```
/// use spectral_uncertainty::kernel::{kernel_value, Embedding, KernelSpec};
///
/// let x = Embedding::basis(2, 0);
/// let y = Embedding::basis(2, 1);
/// // Orthonormal vectors are 2 apart in squared distance.
/// let k = kernel_value(&x, &y, KernelSpec::Rbf { gamma: 1.0 })?;
/// assert!((k - (-2.0f64).exp()).abs() < 1e-12);
/// # Ok::<(), spectral_uncertainty::kernel::KernelError>(())
/// ```
pub fn kernel_value(x: &Embedding, y: &Embedding, spec: KernelSpec) -> Result<f64, KernelError> {
    spec.validate()?;
    match spec {
        KernelSpec::Rbf { gamma } => Ok((-gamma * x.squared_distance(y)?).exp()),
        KernelSpec::Linear => x.dot(y),
    }
}

/// Symmetric matrix of pairwise kernel values with unit diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Array2<f64>,
}

impl GramMatrix {
    /// Validating constructor for externally supplied matrices.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self, KernelError> {
        let (rows, cols) = entries.dim();
        if rows != cols || rows == 0 {
            return Err(KernelError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            let diag = entries[[i, i]];
            if (diag - 1.0).abs() > 1e-9 {
                return Err(KernelError::BadDiagonal { i, value: diag });
            }
            for j in (i + 1)..rows {
                let (a, b) = (entries[[i, j]], entries[[j, i]]);
                if (a - b).abs() > 1e-12 {
                    return Err(KernelError::NotSymmetric {
                        i,
                        j,
                        left: a,
                        right: b,
                    });
                }
                // A normalized kernel is bounded by 1 in magnitude.
                if a.abs() > 1.0 + 1e-9 || !a.is_finite() {
                    return Err(KernelError::EntryOutOfRange { i, j, value: a });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Build the Gram matrix [K]_ij = k(x_i, x_j) over a sample of embeddings.
pub fn gram_matrix(samples: &[Embedding], spec: KernelSpec) -> Result<GramMatrix, KernelError> {
    if samples.is_empty() {
        return Err(KernelError::NotEnoughSamples { needed: 1, got: 0 });
    }
    spec.validate()?;
    let dim = samples[0].dim();
    for s in samples {
        if s.dim() != dim {
            return Err(KernelError::DimensionMismatch {
                left: dim,
                right: s.dim(),
            });
        }
    }
    let n = samples.len();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let value = kernel_value(&samples[i], &samples[j], spec)?;
            entries[[i, j]] = value;
            entries[[j, i]] = value;
        }
    }
    Ok(GramMatrix { entries })
}

/// All n(n-1)/2 unordered pairwise L2 distances.
pub fn pairwise_distances(samples: &[Embedding]) -> Result<Vec<f64>, KernelError> {
    if samples.len() < 2 {
        return Err(KernelError::NotEnoughSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut distances = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            distances.push(samples[i].distance(&samples[j])?);
        }
    }
    Ok(distances)
}

/// Empirical CDF of a set of distances, evaluated on `grid`.
pub fn distance_cdf(distances: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = distances.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let total = sorted.len() as f64;
    grid.iter()
        .map(|&t| {
            let below = sorted.partition_point(|&d| d <= t);
            (t, below as f64 / total)
        })
        .collect()
}

/// Empirical CDF of the pairwise L2 distances of a sample, evaluated on
/// `grid`.
///
/// Used to pick the RBF scale: a compact embedding cloud (most mass at small
/// distances) calls for a larger gamma.
pub fn pairwise_distance_cdf(
    samples: &[Embedding],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>, KernelError> {
    Ok(distance_cdf(&pairwise_distances(samples)?, grid))
}
