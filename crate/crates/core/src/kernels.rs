//! RBF kernels, Gram matrices and the biased HSIC estimator.
//!
//! The RBF kernel uses one width per input dimension:
//! `k(a, b) = exp(-sum_d gamma_d (a_d - b_d)^2)`.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Per-dimension RBF widths. Every width is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWidths(Vec<f64>);

impl KernelWidths {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(invalid("kernel widths must have at least one dimension"));
        }
        if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(invalid(format!("kernel width must be positive and finite, got {g}")));
        }
        Ok(Self(gammas))
    }

    /// `dim` copies of the same width.
    pub fn uniform(dim: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![gamma; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Which variable a Gram matrix was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSource {
    Cause,
    Effect,
    Latent,
    Other,
}

/// Symmetric RBF Gram matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    source: GramSource,
}

impl GramMatrix {
    /// Wraps an existing matrix. Only checks that it is square.
    pub fn from_matrix(entries: DMatrix<f64>, source: GramSource) -> Result<Self> {
        if !entries.is_square() {
            return Err(invalid(format!(
                "Gram matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries, source })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn source(&self) -> GramSource {
        self.source
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }
}

/// RBF Gram matrix over the rows of `points` (N x D).
pub fn rbf_gram(points: &DMatrix<f64>, widths: &KernelWidths) -> Result<GramMatrix> {
    rbf_gram_tagged(points, widths, GramSource::Other)
}

pub fn rbf_gram_tagged(
    points: &DMatrix<f64>,
    widths: &KernelWidths,
    source: GramSource,
) -> Result<GramMatrix> {
    let n = points.nrows();
    if n == 0 {
        return Err(invalid("rbf_gram needs at least one point"));
    }
    if points.ncols() != widths.dim() {
        return Err(invalid(format!(
            "points have {} columns but {} kernel widths were given",
            points.ncols(),
            widths.dim()
        )));
    }
    let gammas = widths.as_slice();
    let mut k = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let mut s = 0.0;
            for (d, g) in gammas.iter().enumerate() {
                let diff = points[(i, d)] - points[(j, d)];
                s += g * diff * diff;
            }
            let v = (-s).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries: k, source })
}

/// `H = I - (1/N) 1 1^T`.
pub fn centering_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("centering matrix size must be positive"));
    }
    let inv = 1.0 / n as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv }))
}

/// `H M H` computed by subtracting row and column means, O(N^2).
pub fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let inv = 1.0 / n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() * inv).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() * inv).collect();
    let grand = row_means.iter().sum::<f64>() * inv;
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// `tr(K H L H)` without the `1/N^2` factor.
pub(crate) fn centered_trace(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    // tr(KHLH) = sum_ij (HKH)_ij L_ji, H idempotent
    double_center(k).component_mul(&l.transpose()).sum()
}

/// Biased empirical HSIC, `(1/N^2) tr(K H L H)`.
pub fn hsic_biased(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    hsic_biased_matrices(k.matrix(), l.matrix())
}

pub fn hsic_biased_matrices(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    if !k.is_square() || k.shape() != l.shape() {
        return Err(invalid(format!(
            "HSIC needs two square matrices of equal size, got {:?} and {:?}",
            k.shape(),
            l.shape()
        )));
    }
    let n = k.nrows() as f64;
    Ok(centered_trace(k, l) / (n * n))
}
