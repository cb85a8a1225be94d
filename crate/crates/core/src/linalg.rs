//! Small dense helpers shared by the ranker and the policy network.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; defined as 0 when either vector has zero norm.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Gradients of `cosine_similarity(u, v)` with respect to `u` and `v`.
/// Both are zero when either norm is zero.
pub fn cosine_grad(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cos = dot(u, v) / (nu * nv);
    let gu = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| vi / (nu * nv) - cos * ui / (nu * nu))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| ui / (nu * nv) - cos * vi / (nv * nv))
        .collect();
    (gu, gv)
}

/// Softmax of `scores / temperature`, max-shifted.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            if *yr != 0.0 {
                axpy(*yr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `self += alpha · a bᵀ`
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, ar) in a.iter().enumerate() {
            if *ar != 0.0 {
                axpy(alpha * ar, b, self.row_mut(r));
            }
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
