//! Cyclic Jacobi eigendecomposition of a symmetric matrix, and a PCA built
//! on it from the explicit covariance matrix. Slow (O(d^3) per sweep) and
//! only meant as an independent check on [`super::fit_pca`].

use nalgebra::DMatrix;

use super::{centered, clamp_k, fix_signs, PcaModel, ReduceError};

pub const ORACLE_MAX_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching eigenvectors (as columns) of a
/// symmetric matrix. Only the upper triangle is trusted.
pub fn symmetric_eigen_jacobi(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let mut a = a.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // rotation zeroing a[p][q]
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.column_mut(c).copy_from(&v.column(i));
    }
    (values, vectors)
}

/// PCA through the eigendecomposition of the covariance matrix
/// `Xc^T Xc / n`. Same output contract as [`super::fit_pca`].
pub fn pca_oracle_eig(x: &DMatrix<f64>, k: usize) -> Result<PcaModel, ReduceError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(ReduceError::TooFewRows(n));
    }
    if k == 0 {
        return Err(ReduceError::ZeroComponents);
    }
    if d > ORACLE_MAX_DIM {
        return Err(ReduceError::OracleTooLarge {
            dim: d,
            max: ORACLE_MAX_DIM,
        });
    }
    let xc = centered(x);
    let cov = xc.transpose() * &xc / n as f64;
    let total_variance = cov.trace();
    let (values, vectors) = symmetric_eigen_jacobi(&cov);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = top * d as f64 * 1e-12;
    let rank = values.iter().filter(|&&l| l > tol).count();
    let k_eff = clamp_k(k, rank);
    let mut components = DMatrix::<f64>::zeros(k_eff, d);
    for r in 0..k_eff {
        components.row_mut(r).copy_from(&vectors.column(r).transpose());
    }
    fix_signs(&mut components);
    Ok(PcaModel {
        components,
        explained_variances: values[..k_eff].iter().map(|v| v.max(0.0)).collect(),
        total_variance,
        k_requested: k,
        k_effective: k_eff,
    })
}
