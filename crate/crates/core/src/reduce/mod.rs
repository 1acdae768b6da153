//! Standardization followed by top-k PCA.
//!
//! Standardization uses population statistics (divide by n). PCA takes the
//! thin SVD of the centered, standardized matrix; for tall inputs the matrix
//! is first reduced to its `R` factor, which has the same right singular
//! vectors and singular values. [`pca_oracle_eig`] is an independent route
//! through the explicit covariance matrix, used to check this one.

mod jacobi;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jacobi::{pca_oracle_eig, symmetric_eigen_jacobi, ORACLE_MAX_DIM};

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("expected width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroComponents,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("eigen oracle limited to dim <= {max}, got {dim}")]
    OracleTooLarge { dim: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    pub epsilon: f64,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Columns whose std is below epsilon; they standardize to 0.
    pub fn is_constant(&self, j: usize) -> bool {
        self.stds[j] < self.epsilon
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_constant(j)).collect()
    }
}

pub fn fit_standardizer(x: &DMatrix<f64>) -> Result<Standardizer, ReduceError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ReduceError::TooFewRows(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ReduceError::NonFinite);
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(Standardizer {
        means,
        stds,
        epsilon: DEFAULT_EPSILON,
    })
}

/// Standardizer for sign-symmetric data such as balanced pair differences:
/// means are pinned to zero and scales are root-mean-squares. This is the
/// ordinary fit applied to the data together with its negation, and it makes
/// the standardization linear, so `x -> -x` maps to exactly negated output.
pub fn fit_standardizer_symmetric(x: &DMatrix<f64>) -> Result<Standardizer, ReduceError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ReduceError::TooFewRows(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ReduceError::NonFinite);
    }
    let stds = x
        .column_iter()
        .map(|col| (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
        .collect();
    Ok(Standardizer {
        means: vec![0.0; x.ncols()],
        stds,
        epsilon: DEFAULT_EPSILON,
    })
}

pub fn apply_standardizer(s: &Standardizer, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ReduceError> {
    if x.ncols() != s.dim() {
        return Err(ReduceError::DimensionMismatch {
            expected: s.dim(),
            got: x.ncols(),
        });
    }
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        if s.is_constant(j) {
            col.fill(0.0);
        } else {
            let (m, sd) = (s.means[j], s.stds[j].max(s.epsilon));
            col.apply(|v| *v = (*v - m) / sd);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// k_effective x dim, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Squared singular values / n, nonincreasing.
    pub explained_variances: Vec<f64>,
    /// Total variance of the fit matrix (trace of its covariance).
    pub total_variance: f64,
    pub k_requested: usize,
    pub k_effective: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variances
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    /// The leading `k` components (or all of them, if fewer).
    pub fn truncated(&self, k: usize) -> PcaModel {
        let keep = k.min(self.k_effective);
        PcaModel {
            components: self.components.rows(0, keep).into_owned(),
            explained_variances: self.explained_variances[..keep].to_vec(),
            total_variance: self.total_variance,
            k_requested: k,
            k_effective: keep,
        }
    }
}

/// Flips each row so its largest-magnitude entry (first one on ties) is positive.
pub(crate) fn fix_signs(components: &mut DMatrix<f64>) {
    for i in 0..components.nrows() {
        let mut best = 0;
        for j in 1..components.ncols() {
            if components[(i, j)].abs() > components[(i, best)].abs() {
                best = j;
            }
        }
        if components[(i, best)] < 0.0 {
            components.row_mut(i).neg_mut();
        }
    }
}

pub(crate) fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let m = col.iter().sum::<f64>() / n;
        col.add_scalar_mut(-m);
    }
    xc
}

pub(crate) fn clamp_k(k: usize, rank: usize) -> usize {
    let k_eff = k.min(rank);
    if k_eff < k {
        log::warn!("requested {k} principal components but rank is {rank}; using {k_eff}");
    }
    k_eff
}

/// Top-k principal directions of `x` (already standardized; it is centered
/// again here).
pub fn fit_pca(x: &DMatrix<f64>, k: usize) -> Result<PcaModel, ReduceError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(ReduceError::TooFewRows(n));
    }
    if k == 0 {
        return Err(ReduceError::ZeroComponents);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ReduceError::NonFinite);
    }
    let xc = centered(x);
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let core = if n > d { xc.qr().r() } else { xc };
    let svd = core.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let s_max = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let tol = s_max * (n.max(d) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();
    let k_eff = clamp_k(k, rank);

    let mut components = DMatrix::<f64>::zeros(k_eff, d);
    let mut explained_variances = Vec::with_capacity(k_eff);
    for (r, &i) in order.iter().take(k_eff).enumerate() {
        components.row_mut(r).copy_from(&v_t.row(i));
        explained_variances.push(sv[i] * sv[i] / n as f64);
    }
    fix_signs(&mut components);
    Ok(PcaModel {
        components,
        explained_variances,
        total_variance,
        k_requested: k,
        k_effective: k_eff,
    })
}

/// What the reducer was fit on: individual activations (single mode) or
/// activation differences (paired mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    Singles,
    Differences,
}

/// Fitted standardizer + PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    pub standardizer: Standardizer,
    pub pca: PcaModel,
    pub fitted_on: FitTarget,
    /// Digest of the shape and exact contents of the fit matrix.
    pub fit_digest: String,
}

impl Reducer {
    /// Fits on `x`. Differences are standardized with
    /// [`fit_standardizer_symmetric`], singles with [`fit_standardizer`].
    pub fn fit(x: &DMatrix<f64>, k: usize, fitted_on: FitTarget) -> Result<Reducer, ReduceError> {
        let standardizer = match fitted_on {
            FitTarget::Singles => fit_standardizer(x)?,
            FitTarget::Differences => fit_standardizer_symmetric(x)?,
        };
        let xs = apply_standardizer(&standardizer, x)?;
        let pca = fit_pca(&xs, k)?;
        Ok(Reducer {
            standardizer,
            pca,
            fitted_on,
            fit_digest: matrix_digest(x),
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn k_effective(&self) -> usize {
        self.pca.k_effective
    }

    pub fn truncated(&self, k: usize) -> Reducer {
        Reducer {
            pca: self.pca.truncated(k),
            ..self.clone()
        }
    }
}

pub fn matrix_digest(x: &DMatrix<f64>) -> String {
    let mut bytes = Vec::with_capacity(16 + x.len() * 8);
    bytes.extend_from_slice(&(x.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::digest::hex_digest(&[&bytes])
}

/// Standardizes `x` with the reducer's statistics and projects onto its
/// components: an n x k_effective coordinate matrix.
pub fn project(r: &Reducer, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ReduceError> {
    if x.ncols() != r.dim() {
        return Err(ReduceError::DimensionMismatch {
            expected: r.dim(),
            got: x.ncols(),
        });
    }
    let xs = apply_standardizer(&r.standardizer, x)?;
    Ok(xs * r.pca.components.transpose())
}
