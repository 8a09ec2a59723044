//! Transductive label propagation and certainty-weighted pseudo-labels.
//!
//! Scores are `h(Y) = (1 - alpha) (I - alpha Wn)^-1 Y` where `Wn` is the
//! normalized affinity and `Y` the one-hot label matrix. Each class column is
//! an independent symmetric positive definite system, solved by conjugate
//! gradient.

use rayon::prelude::*;

use crate::dataset::LabelState;
use crate::error::{Error, Result};
use crate::graph::{Csr, SparseGraph};
use crate::matrix::{dot, Matrix};
use crate::util::argmax;

pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-8;

/// `10 sqrt(n) + 100`.
pub fn default_max_iter(n: usize) -> usize {
    (10.0 * (n as f64).sqrt()).ceil() as usize + 100
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

impl CgSettings {
    fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(n))
    }
}

/// Result of propagating the current labels over the graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `h(Y)`, n x c, nonnegative.
    pub scores: Matrix,
    /// Row-normalized scores; rows with zero mass are left at zero.
    pub probs: Matrix,
    /// Whether the corresponding row of `probs` is a probability vector.
    pub defined: Vec<bool>,
    /// Unlabeled indices the pseudo-labels and weights refer to, ascending.
    pub unlabeled: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl Propagation {
    pub fn num_classes(&self) -> usize {
        self.scores.cols()
    }

    /// Fraction of pseudo-labels equal to `truth` (unweighted).
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        if self.unlabeled.is_empty() {
            return 1.0;
        }
        let hits = self
            .unlabeled
            .iter()
            .zip(&self.pseudo_labels)
            .filter(|(&i, &y)| truth[i] == y)
            .count();
        hits as f64 / self.unlabeled.len() as f64
    }
}

/// Zero-one matrix with a one at `(i, y_i)` for every labeled `i`.
pub fn one_hot(labeled: &[usize], labels: &[usize], n: usize, c: usize) -> Result<Matrix> {
    if labeled.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labeled.len(),
            got: labels.len(),
        });
    }
    let mut y = Matrix::zeros(n, c);
    for (&i, &k) in labeled.iter().zip(labels) {
        if k >= c {
            return Err(Error::invalid(format!("label {k} out of range for {c} classes")));
        }
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        y.set(i, k, 1.0);
    }
    Ok(y)
}

/// `out = (I - alpha A) x`.
fn apply_system(a: &Csr, alpha: f64, x: &[f64], out: &mut [f64]) {
    a.mul_vec(x, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = xi - alpha * *o;
    }
}

/// Solves `(I - alpha A) x = rhs` by conjugate gradient from `x = 0`.
///
/// Stops when `||r|| <= tol ||rhs||`.
pub fn conjugate_gradient(
    a: &Csr,
    alpha: f64,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = a.n();
    let mut x = vec![0.0; n];
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let threshold = tol * b_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= threshold {
            return Ok(x);
        }
        apply_system(a, alpha, &p, &mut ap);
        let step = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    if rr.sqrt() <= threshold {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

/// Propagates a single column: `(1 - alpha) (I - alpha Wn)^-1 y`.
pub fn propagate_column(g: &SparseGraph, y: &[f64], alpha: f64, cg: CgSettings) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if y.len() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            got: y.len(),
        });
    }
    let rhs: Vec<f64> = y.iter().map(|v| (1.0 - alpha) * v).collect();
    if alpha == 0.0 {
        return Ok(rhs);
    }
    let mut x = conjugate_gradient(g.normalized(), alpha, &rhs, cg.tol, cg.max_iter_for(g.n()))?;
    // Exact scores are nonnegative; clear round-off below zero.
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(x)
}

/// Solves every column of `y` independently; columns run in parallel.
pub fn solve_propagation(g: &SparseGraph, y: &Matrix, alpha: f64, cg: CgSettings) -> Result<Matrix> {
    check_alpha(alpha)?;
    if y.rows() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            got: y.rows(),
        });
    }
    if y.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("label matrix must be nonnegative"));
    }
    let columns: Vec<Vec<f64>> = (0..y.cols())
        .into_par_iter()
        .map(|k| propagate_column(g, &y.column(k), alpha, cg))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for (k, col) in columns.iter().enumerate() {
        out.set_column(k, col);
    }
    Ok(out)
}

/// Most probable class, lowest id on ties.
pub fn prediction(p: &[f64]) -> Result<usize> {
    argmax(p).ok_or_else(|| Error::invalid("empty probability vector"))
}

/// Shannon entropy in nats. The vector is renormalized to unit sum first.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if let Some(&v) = p.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::invalid(format!("negative or NaN probability {v}")));
    }
    let total: f64 = p.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("probability vector has no mass"));
    }
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let q = v / total;
            -q * q.ln()
        })
        .sum();
    Ok(h.clamp(0.0, (p.len() as f64).ln()))
}

/// `1 - H(p) / ln c`, in `[0, 1]`.
pub fn certainty_weight(p: &[f64], c: usize) -> Result<f64> {
    if c < 2 {
        return Err(Error::invalid("certainty weight needs at least two classes"));
    }
    let h = entropy(p)?;
    Ok((1.0 - h / (c as f64).ln()).clamp(0.0, 1.0))
}

/// Most frequent class among the labeled examples, lowest id on ties.
fn majority_class(state: &LabelState, c: usize) -> usize {
    let mut counts = vec![0.0; c];
    for y in state.labeled_classes() {
        counts[y] += 1.0;
    }
    argmax(&counts).unwrap_or(0)
}

/// Propagates the current labels and derives a pseudo-label and weight for
/// every unlabeled example.
///
/// Rows that receive no score mass (isolated or unreachable nodes) get weight
/// zero and the majority labeled class.
pub fn pseudo_label_all(
    g: &SparseGraph,
    state: &LabelState,
    c: usize,
    alpha: f64,
    cg: CgSettings,
) -> Result<Propagation> {
    if state.labeled().is_empty() {
        return Err(Error::invalid("label propagation needs at least one labeled example"));
    }
    if g.n() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: g.n(),
        });
    }
    let y = one_hot(state.labeled(), &state.labeled_classes(), g.n(), c)?;
    let scores = solve_propagation(g, &y, alpha, cg)?;
    let mut probs = Matrix::zeros(g.n(), c);
    let mut defined = vec![false; g.n()];
    for i in 0..g.n() {
        let row = scores.row(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            defined[i] = true;
            for (dst, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *dst = v / sum;
            }
        }
    }
    let fallback = majority_class(state, c);
    let unlabeled = state.unlabeled().to_vec();
    let mut pseudo_labels = Vec::with_capacity(unlabeled.len());
    let mut weights = Vec::with_capacity(unlabeled.len());
    for &i in &unlabeled {
        if defined[i] {
            pseudo_labels.push(prediction(probs.row(i))?);
            weights.push(if c >= 2 { certainty_weight(probs.row(i), c)? } else { 1.0 });
        } else {
            pseudo_labels.push(fallback);
            weights.push(0.0);
        }
    }
    Ok(Propagation {
        scores,
        probs,
        defined,
        unlabeled,
        pseudo_labels,
        weights,
        alpha,
    })
}
