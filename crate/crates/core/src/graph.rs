//! Reciprocal k-nearest-neighbor affinity graph.
//!
//! Nodes are examples; an edge joins `i` and `j` only when each is among the
//! other's `k` most similar examples. Edge weights are the rectified cubed
//! cosine similarity of the two embeddings. The graph keeps the raw
//! adjacency `W`, the degrees `D = W 1` and the symmetrically normalized
//! operator `D^-1/2 W D^-1/2` used by label propagation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

/// Compressed sparse row matrix. Column indices within a row are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    len: n,
                });
            }
            rows[i].push((j, v));
        }
        Ok(Self::from_rows(rows))
    }

    fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(row, col, value)`, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// True when every stored entry has a bitwise-equal mirror entry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, v)| self.get(j, i).to_bits() == v.to_bits() && self.has_entry(j, i))
        })
    }

    fn has_entry(&self, i: usize, j: usize) -> bool {
        self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
            .binary_search(&j)
            .is_ok()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m.set(i, j, v);
        }
        m
    }
}

/// Affinity graph with its degrees and normalized operator.
#[derive(Debug, Clone)]
pub struct SparseGraph {
    adjacency: Csr,
    degrees: Vec<f64>,
    normalized: Csr,
}

impl SparseGraph {
    /// Wraps an adjacency matrix, validating it and computing the normalized form.
    pub fn from_adjacency(adjacency: Csr) -> Result<Self> {
        for (i, j, v) in adjacency.triplets() {
            if i == j && v != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at node {i}")));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("invalid weight {v} at ({i}, {j})")));
            }
        }
        let normalized = normalize(&adjacency)?;
        let degrees = adjacency.row_sums();
        Ok(SparseGraph {
            adjacency,
            degrees,
            normalized,
        })
    }

    /// Builds a graph from an undirected edge list; each edge is stored in both directions.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            if i == j {
                return Err(Error::invalid(format!("self loop at node {i}")));
            }
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        Self::from_adjacency(Csr::from_triplets(n, &triplets)?)
    }

    /// Path graph `0 - 1 - ... - (n-1)` with unit weights.
    pub fn chain(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges).expect("chain edges are valid")
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn normalized(&self) -> &Csr {
        &self.normalized
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Edge list `i j weight`, one undirected edge per line with `i < j`, sorted.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j, w) in self.adjacency.triplets() {
            if i < j {
                let _ = writeln!(out, "{i} {j} {w}");
            }
        }
        out
    }

    /// Parses the format written by [`to_edge_list`](Self::to_edge_list).
    pub fn parse_edge_list(n: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |msg: &str| Error::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            if parts.len() != 3 {
                return Err(parse_err("expected 'i j weight'"));
            }
            let i: usize = parts[0].parse().map_err(|_| parse_err("bad node index"))?;
            let j: usize = parts[1].parse().map_err(|_| parse_err("bad node index"))?;
            let w: f64 = parts[2].parse().map_err(|_| parse_err("bad weight"))?;
            edges.push((i, j, w));
        }
        Self::from_edges(n, &edges)
    }

    pub fn load_edge_list(n: usize, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(n, &text)
    }
}

/// Rectified cubed cosine similarity, `max(0, cos(u, v))^3`.
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu2, nv2) = (dot(u, u), dot(v, v));
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(Error::invalid("similarity of a zero vector is undefined"));
    }
    Ok(cubed_relu(dot(u, v) / (nu2 * nv2).sqrt()))
}

#[inline]
fn cubed_relu(cos: f64) -> f64 {
    let c = cos.clamp(0.0, 1.0);
    c * c * c
}

/// Rows scaled to unit length. Zero rows stay zero, so they end up isolated.
fn unit_rows(features: &Matrix) -> Result<Matrix> {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let nrm = norm(row);
        if !nrm.is_finite() {
            return Err(Error::invalid(format!("embedding of example {i} is not finite")));
        }
        if nrm > 0.0 {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
    }
    Ok(out)
}

/// The `k` most similar other nodes of every node, with their similarities.
///
/// Ranking is by descending similarity, ties broken by ascending index.
/// Brute force over all pairs; rows are processed in parallel.
pub fn knn_lists(features: &Matrix, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = features.rows();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k >= n {
        return Err(Error::invalid(format!(
            "k = {k} must be smaller than the number of nodes ({n})"
        )));
    }
    let unit = unit_rows(features)?;
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let ui = unit.row(i);
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cubed_relu(dot(ui, unit.row(j)))))
                .collect();
            let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
                b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
            };
            cand.select_nth_unstable_by(k - 1, by_rank);
            cand.truncate(k);
            cand.sort_by(by_rank);
            cand
        })
        .collect();
    Ok(lists)
}

/// Builds the reciprocal k-NN graph on the rows of `features`.
///
/// Zero-similarity edges are dropped.
pub fn build_reciprocal_knn(features: &Matrix, k: usize) -> Result<SparseGraph> {
    let lists = knn_lists(features, k)?;
    let n = features.rows();
    let members: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| {
            let mut m: Vec<usize> = l.iter().map(|&(j, _)| j).collect();
            m.sort_unstable();
            m
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in lists.iter().enumerate() {
        for &(j, s) in list {
            if i < j && s > 0.0 && members[j].binary_search(&i).is_ok() {
                rows[i].push((j, s));
                rows[j].push((i, s));
            }
        }
    }
    SparseGraph::from_adjacency(Csr::from_rows(rows))
}

/// Symmetric normalization `D^-1/2 W D^-1/2`. Zero-degree nodes get zero rows.
pub fn normalize(w: &Csr) -> Result<Csr> {
    if !w.is_symmetric() {
        return Err(Error::invalid("adjacency matrix is not symmetric"));
    }
    let inv_sqrt: Vec<f64> = w
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = w.clone();
    for i in 0..out.n {
        for k in out.row_ptr[i]..out.row_ptr[i + 1] {
            let j = out.col_idx[k];
            // Product order is commutative in IEEE arithmetic, so mirrored entries stay equal.
            out.values[k] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand::Rng;

    fn brute_knn(features: &Matrix, k: usize) -> Vec<Vec<usize>> {
        let n = features.rows();
        (0..n)
            .map(|i| {
                let mut all: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, similarity(features.row(i), features.row(j)).unwrap()))
                    .collect();
                all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut top: Vec<usize> = all[..k].iter().map(|p| p.0).collect();
                top.sort_unstable();
                top
            })
            .collect()
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_embedding_is_isolated() {
        let x = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 0.0], vec![1.0, 0.2], vec![0.9, 0.1]]).unwrap();
        let g = build_reciprocal_knn(&x, 2).unwrap();
        assert_eq!(g.degrees()[1], 0.0);
        assert!(g.degrees().iter().enumerate().all(|(i, &d)| i == 1 || d > 0.0));
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let v = [(-0.5f64), (0.75f64).sqrt()];
        assert_eq!(similarity(&[1.0, 0.0], &v).unwrap(), 0.0);
        let s = similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - 0.5f64.sqrt().powi(3)).abs() < 1e-15);
        assert!(similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn identical_directions_give_complete_graph() {
        let f = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let g = build_reciprocal_knn(&f, 2).unwrap();
        assert_eq!(g.num_edges(), 3);
        for (i, j, w) in g.adjacency().triplets() {
            assert_ne!(i, j);
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_clusters_have_no_cross_edges() {
        let mut r = rng(5);
        let mut rows = Vec::new();
        for c in 0..2 {
            for _ in 0..10 {
                let a = 1.0 + r.random_range(0.0..0.1);
                let b = r.random_range(0.0..0.1);
                rows.push(if c == 0 { vec![a, b, 0.0, 0.0] } else { vec![0.0, 0.0, a, b] });
            }
        }
        let f = Matrix::from_rows(&rows).unwrap();
        let g = build_reciprocal_knn(&f, 12).unwrap();
        // Exhaustive oracle: every cross pair has similarity exactly zero.
        for i in 0..10 {
            for j in 10..20 {
                assert_eq!(similarity(f.row(i), f.row(j)).unwrap(), 0.0);
                assert_eq!(g.adjacency().get(i, j), 0.0);
            }
        }
        assert!(g.num_edges() > 0);
    }

    #[test]
    fn k1_on_mutual_pairs_is_matching() {
        // Pairs of nearly identical directions, pairs spread around a half circle.
        let mut rows = Vec::new();
        for p in 0..4 {
            let t = p as f64 * 0.4;
            rows.push(vec![t.cos(), t.sin()]);
            rows.push(vec![(t + 0.01).cos(), (t + 0.01).sin()]);
        }
        let f = Matrix::from_rows(&rows).unwrap();
        let oracle = brute_knn(&f, 1);
        let g = build_reciprocal_knn(&f, 1).unwrap();
        assert_eq!(g.num_edges(), 4);
        for p in 0..4 {
            assert_eq!(oracle[2 * p], vec![2 * p + 1]);
            assert!(g.adjacency().get(2 * p, 2 * p + 1) > 0.0);
        }
    }

    #[test]
    fn k_must_be_below_n() {
        let f = random_features(5, 3, 1);
        assert!(build_reciprocal_knn(&f, 5).is_err());
        assert!(build_reciprocal_knn(&f, 0).is_err());
    }

    #[test]
    fn reciprocal_edges_subset_of_knn() {
        for seed in 0..5 {
            let f = random_features(120, 4, seed);
            let k = 7;
            let oracle = brute_knn(&f, k);
            let g = build_reciprocal_knn(&f, k).unwrap();
            for (i, j, w) in g.adjacency().triplets() {
                assert!(oracle[i].binary_search(&j).is_ok());
                assert!(oracle[j].binary_search(&i).is_ok());
                assert!(w > 0.0);
            }
            // And every mutual pair with positive similarity is present.
            for i in 0..120 {
                for &j in &oracle[i] {
                    let s = similarity(f.row(i), f.row(j)).unwrap();
                    if oracle[j].binary_search(&i).is_ok() && s > 0.0 {
                        assert!(g.adjacency().get(i, j) > 0.0);
                    }
                }
            }
            assert!(g.adjacency().is_symmetric());
            assert!(g.normalized().is_symmetric());
        }
    }

    #[test]
    fn normalize_small_cases() {
        let g = SparseGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(g.normalized().to_dense().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let g = SparseGraph::from_edges(2, &[(0, 1, 2.0)]).unwrap();
        let d = g.normalized().to_dense();
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15 && (d.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_asymmetric() {
        let w = Csr::from_triplets(2, &[(0, 1, 1.0)]).unwrap();
        assert!(normalize(&w).is_err());
    }

    #[test]
    fn isolated_nodes_have_zero_rows() {
        let g = SparseGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(g.degrees()[3], 0.0);
        assert_eq!(g.normalized().row(3).count(), 0);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let f = random_features(60, 3, 9);
        let g = build_reciprocal_knn(&f, 5).unwrap();
        let scaled: Vec<_> = g
            .adjacency()
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (i, j, v * 3.7))
            .collect();
        let a = g.normalized().to_dense();
        let b = normalize(&Csr::from_triplets(60, &scaled).unwrap()).unwrap().to_dense();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn spectral_radius_at_most_one() {
        // Power iteration oracle on the dense normalized matrix.
        let mut r = rng(11);
        let mut edges = Vec::new();
        for i in 0..50 {
            for j in (i + 1)..50 {
                if r.random_bool(0.1) {
                    edges.push((i, j, r.random_range(0.01..2.0)));
                }
            }
        }
        let g = SparseGraph::from_edges(50, &edges).unwrap();
        let m = g.normalized().to_dense();
        let mut v: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..2000 {
            // Power iteration on M^2 avoids oscillation from the -1 eigenvalue.
            let mut w = vec![0.0; 50];
            let mut z = vec![0.0; 50];
            for i in 0..50 {
                w[i] = dot(m.row(i), &v);
            }
            for i in 0..50 {
                z[i] = dot(m.row(i), &w);
            }
            let nz = norm(&z);
            lambda = (nz / norm(&v)).sqrt();
            v = z.iter().map(|x| x / nz).collect();
        }
        assert!(lambda <= 1.0 + 1e-9, "spectral radius {lambda}");
    }

    #[test]
    fn edge_list_round_trip() {
        let g = SparseGraph::chain(3);
        let text = g.to_edge_list();
        assert_eq!(text, "0 1 1\n1 2 1\n");
        let back = SparseGraph::parse_edge_list(3, &text).unwrap();
        assert_eq!(back.adjacency(), g.adjacency());
        assert!(SparseGraph::parse_edge_list(3, "0 1\n").is_err());
    }
}
