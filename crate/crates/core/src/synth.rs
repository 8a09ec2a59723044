//! Deterministic synthetic datasets.
//!
//! Features are rounded to `f32` precision at generation time so that both
//! file formats reproduce them exactly.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::matrix::Matrix;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    TwoMoons,
    Blobs,
    Chain,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-moons" | "moons" => Ok(Shape::TwoMoons),
            "blobs" => Ok(Shape::Blobs),
            "chain" => Ok(Shape::Chain),
            other => Err(Error::Config(format!("unknown shape '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub noise: f64,
    pub classes: usize,
    pub dim: usize,
    /// Half-width of the box blob centers are drawn from.
    pub center_box: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 500,
            noise: 0.1,
            classes: 10,
            dim: 2,
            center_box: 10.0,
            seed: 0,
        }
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn shuffled(rows: Vec<(Vec<f64>, usize)>, seed: u64, classes: usize) -> Result<Dataset> {
    let mut rows = rows;
    rows.shuffle(&mut rng(seed ^ 0x5EED));
    let d = rows[0].0.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    let mut labels = Vec::with_capacity(rows.len());
    for (x, y) in rows {
        data.extend(x.into_iter().map(quantize));
        labels.push(y);
    }
    Dataset::new(Matrix::from_vec(labels.len(), d, data)?, labels, classes)
}

/// Two interleaving half circles with isotropic Gaussian noise, `n/2` per class
/// (the first class gets the extra point when `n` is odd).
pub fn two_moons(p: &SynthParams) -> Result<Dataset> {
    if p.n < 4 {
        return Err(Error::invalid("two-moons needs n >= 4"));
    }
    if !(p.noise >= 0.0) {
        return Err(Error::invalid("noise must be nonnegative"));
    }
    let mut r = rng(p.seed);
    let noise = Normal::new(0.0, p.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let n_outer = p.n.div_ceil(2);
    let n_inner = p.n - n_outer;
    let pi = std::f64::consts::PI;
    let mut rows = Vec::with_capacity(p.n);
    for i in 0..n_outer {
        let t = pi * i as f64 / (n_outer - 1).max(1) as f64;
        rows.push((vec![t.cos() + noise.sample(&mut r), t.sin() + noise.sample(&mut r)], 0));
    }
    for i in 0..n_inner {
        let t = pi * i as f64 / (n_inner - 1).max(1) as f64;
        rows.push((
            vec![1.0 - t.cos() + noise.sample(&mut r), 0.5 - t.sin() + noise.sample(&mut r)],
            1,
        ));
    }
    shuffled(rows, p.seed, 2)
}

/// `classes` isotropic Gaussian blobs with centers uniform in
/// `[-center_box, center_box]^dim` and standard deviation `noise`.
pub fn blobs(p: &SynthParams) -> Result<Dataset> {
    if p.classes == 0 || p.dim == 0 {
        return Err(Error::invalid("blobs need at least one class and one dimension"));
    }
    if p.n < 2 * p.classes {
        return Err(Error::invalid(format!(
            "blobs need n >= 2 * classes ({} < {})",
            p.n,
            2 * p.classes
        )));
    }
    let mut r = rng(p.seed);
    let noise = Normal::new(0.0, p.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..p.classes)
        .map(|_| (0..p.dim).map(|_| r.random_range(-p.center_box..=p.center_box)).collect())
        .collect();
    let mut rows = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let k = i % p.classes;
        let x = centers[k].iter().map(|c| c + noise.sample(&mut r)).collect();
        rows.push((x, k));
    }
    shuffled(rows, p.seed, p.classes)
}

/// The three-node path fixture: nodes on a line, node 0 in class 0 and the
/// others in class 1. Pair it with [`SparseGraph::chain`] for propagation.
pub fn chain() -> (Dataset, SparseGraph) {
    let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]).unwrap();
    let ds = Dataset::new(features, vec![0, 1, 1], 2).unwrap();
    (ds, SparseGraph::chain(3))
}

pub fn generate(shape: Shape, p: &SynthParams) -> Result<Dataset> {
    match shape {
        Shape::TwoMoons => two_moons(p),
        Shape::Blobs => blobs(p),
        Shape::Chain => Ok(chain().0),
    }
}
