//! Logistic regression probe over reduced features.
//!
//! Objective: mean log-loss plus `(lambda / 2) * |w|^2`, intercept
//! unpenalized. Minimized by damped Newton steps with Armijo backtracking;
//! the problem is strictly convex in the weights for `lambda > 0`, so the
//! optimum does not depend on the starting point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("expected width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("labels must be 0 or 1, found {0}")]
    InvalidLabel(u8),
    #[error("non-finite value in features or model")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// n x k feature matrix.
    pub phi: DMatrix<f64>,
    pub labels: Vec<u8>,
}

impl FeatureSet {
    pub fn new(phi: DMatrix<f64>, labels: Vec<u8>) -> Result<Self, ProbeError> {
        if phi.nrows() != labels.len() {
            return Err(ProbeError::LengthMismatch(phi.nrows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(ProbeError::InvalidLabel(bad));
        }
        Ok(Self { phi, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.phi.ncols()
    }

    /// The first `k` feature columns.
    pub fn prefix(&self, k: usize) -> FeatureSet {
        let k = k.min(self.width());
        FeatureSet {
            phi: self.phi.columns(0, k).into_owned(),
            labels: self.labels.clone(),
        }
    }

    /// Rows followed by their negations with flipped labels.
    pub fn mirrored(&self) -> FeatureSet {
        let (n, k) = (self.len(), self.width());
        let phi = DMatrix::from_fn(2 * n, k, |i, j| {
            if i < n {
                self.phi[(i, j)]
            } else {
                -self.phi[(i - n, j)]
            }
        });
        let labels = self.labels.iter().copied().chain(self.labels.iter().map(|&l| 1 - l)).collect();
        FeatureSet { phi, labels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub final_grad_norm: f64,
}

impl ProbeModel {
    pub fn zeros(k: usize, lambda: f64) -> Self {
        Self {
            weights: vec![0.0; k],
            intercept: 0.0,
            lambda,
            converged: false,
            final_grad_norm: f64::NAN,
        }
    }

    pub fn is_intercept_only(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }

    fn params(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.weights.len() + 1);
        for (i, w) in self.weights.iter().enumerate() {
            p[i] = *w;
        }
        p[self.weights.len()] = self.intercept;
        p
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Features with a trailing column of ones for the intercept.
fn augmented(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = phi.shape();
    let mut a = DMatrix::from_element(n, k + 1, 1.0);
    a.columns_mut(0, k).copy_from(phi);
    a
}

struct Objective<'a> {
    x: DMatrix<f64>,
    y: &'a [u8],
    lambda: f64,
}

impl Objective<'_> {
    fn k(&self) -> usize {
        self.x.ncols() - 1
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let z = &self.x * theta;
        let n = self.y.len() as f64;
        let data: f64 = z
            .iter()
            .zip(self.y)
            .map(|(z, &y)| softplus(*z) - f64::from(y) * z)
            .sum::<f64>()
            / n;
        let k = self.k();
        data + 0.5 * self.lambda * theta.rows(0, k).norm_squared()
    }

    fn grad(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = &self.x * theta;
        let n = self.y.len() as f64;
        let p: DVector<f64> = z.map(sigmoid);
        let r = DVector::from_iterator(p.len(), p.iter().zip(self.y).map(|(p, &y)| p - f64::from(y)));
        let mut g = self.x.tr_mul(&r) / n;
        let k = self.k();
        for i in 0..k {
            g[i] += self.lambda * theta[i];
        }
        (g, p)
    }

    fn hessian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let n = self.y.len() as f64;
        let mut xw = self.x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= (p[i] * (1.0 - p[i])).sqrt();
        }
        let mut h = xw.tr_mul(&xw) / n;
        for i in 0..self.k() {
            h[(i, i)] += self.lambda;
        }
        h
    }
}

fn check(fs: &FeatureSet) -> Result<(), ProbeError> {
    if fs.phi.nrows() != fs.labels.len() {
        return Err(ProbeError::LengthMismatch(fs.phi.nrows(), fs.labels.len()));
    }
    if fs.phi.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    Ok(())
}

/// Penalized loss and its gradient `(d/dw_1..d/dw_k, d/db)` at `m`.
pub fn loss_and_grad(m: &ProbeModel, fs: &FeatureSet) -> Result<(f64, Vec<f64>), ProbeError> {
    if m.weights.len() != fs.width() {
        return Err(ProbeError::DimensionMismatch {
            expected: m.weights.len(),
            got: fs.width(),
        });
    }
    check(fs)?;
    if fs.is_empty() {
        return Err(ProbeError::TooFewSamples(0));
    }
    let obj = Objective {
        x: augmented(&fs.phi),
        y: &fs.labels,
        lambda: m.lambda,
    };
    let theta = m.params();
    let (g, _) = obj.grad(&theta);
    Ok((obj.loss(&theta), g.iter().copied().collect()))
}

pub fn fit_logreg(fs: &FeatureSet, opts: &LogRegOptions) -> Result<ProbeModel, ProbeError> {
    let init = vec![0.0; fs.width() + 1];
    fit_logreg_from(fs, opts, &init)
}

/// [`fit_logreg`] from an explicit starting point `(w_1..w_k, b)`.
pub fn fit_logreg_from(
    fs: &FeatureSet,
    opts: &LogRegOptions,
    init: &[f64],
) -> Result<ProbeModel, ProbeError> {
    check(fs)?;
    let n = fs.len();
    if n < 2 {
        return Err(ProbeError::TooFewSamples(n));
    }
    let k = fs.width();
    if init.len() != k + 1 {
        return Err(ProbeError::DimensionMismatch {
            expected: k + 1,
            got: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }

    let ones = fs.labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        log::warn!("all {n} training labels are {}; fitting intercept only", fs.labels[0]);
        let b = ((ones as f64 + 0.5) / ((n - ones) as f64 + 0.5)).ln();
        let mut m = ProbeModel::zeros(k, opts.lambda);
        m.intercept = b;
        let (_, g) = loss_and_grad(&m, fs)?;
        m.final_grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        return Ok(m);
    }

    let obj = Objective {
        x: augmented(&fs.phi),
        y: &fs.labels,
        lambda: opts.lambda,
    };
    let mut theta = DVector::from_column_slice(init);
    let mut f = obj.loss(&theta);
    let mut converged = false;
    let mut gnorm = f64::INFINITY;

    for _ in 0..opts.max_iter {
        let (g, p) = obj.grad(&theta);
        gnorm = g.norm();
        if gnorm <= opts.tol {
            converged = true;
            break;
        }
        let h = obj.hessian(&p);
        let step = newton_direction(&h, &g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let fc = obj.loss(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no representable decrease left along the Newton direction
            break;
        }
    }
    if !converged {
        let (g, _) = obj.grad(&theta);
        gnorm = g.norm();
        converged = gnorm <= opts.tol;
        if !converged {
            log::warn!("logistic fit stopped with gradient norm {gnorm:.3e} > tol {:.1e}", opts.tol);
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    Ok(ProbeModel {
        weights: theta.rows(0, k).iter().copied().collect(),
        intercept: theta[k],
        lambda: opts.lambda,
        converged,
        final_grad_norm: gnorm,
    })
}

/// Solves `H d = -g`, adding diagonal damping until the Cholesky
/// factorization succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut damping = 0.0;
    loop {
        let mut hd = h.clone();
        if damping > 0.0 {
            for i in 0..hd.nrows() {
                hd[(i, i)] += damping;
            }
        }
        if let Some(ch) = hd.cholesky() {
            return -ch.solve(g);
        }
        damping = if damping == 0.0 { scale * 1e-12 } else { damping * 10.0 };
        if damping > scale * 1e6 {
            return -g.clone();
        }
    }
}

/// Probabilities `sigmoid(phi w + b)` and labels (`p > 0.5`, ties to 0).
pub fn predict(m: &ProbeModel, phi: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<u8>), ProbeError> {
    if phi.ncols() != m.weights.len() {
        return Err(ProbeError::DimensionMismatch {
            expected: m.weights.len(),
            got: phi.ncols(),
        });
    }
    let w = DVector::from_column_slice(&m.weights);
    let z = phi * w;
    let probs: Vec<f64> = z.iter().map(|z| sigmoid(z + m.intercept)).collect();
    let labels = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    Ok((probs, labels))
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64, ProbeError> {
    if pred.len() != truth.len() {
        return Err(ProbeError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
