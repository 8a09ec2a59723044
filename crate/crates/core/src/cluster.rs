//! k-means with k-means++ seeding, used to pseudo-label data for
//! unsupervised pre-training.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::util::rng;

#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after seeding and after every Lloyd iteration.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// The assignment reinterpreted as class labels, with `c = k`.
    pub fn pseudo_labels(&self) -> (Vec<usize>, usize) {
        (self.assignment.clone(), self.k())
    }
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(i), x.row(pick)));
        }
    }
    centroids
}

fn assign(x: &Matrix, centroids: &Matrix, assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, a) in assignment.iter_mut().enumerate() {
        let (c, d) = nearest(centroids, x.row(i));
        *a = c;
        inertia += d;
    }
    inertia
}

fn inertia_of(x: &Matrix, centroids: &Matrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_distance(x.row(i), centroids.row(c)))
        .sum()
}

/// Recomputes centroids as cluster means. An empty cluster is moved onto the
/// point farthest from its own centroid, which joins it.
fn update(x: &Matrix, k: usize, assignment: &mut [usize], centroids: &mut Matrix) {
    let d = x.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &a) in assignment.iter().enumerate() {
            if counts[a] <= 1 {
                continue;
            }
            let dist = squared_distance(x.row(i), centroids.row(a));
            if dist > far_d {
                far_d = dist;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        let old = assignment[i];
        counts[old] -= 1;
        counts[c] = 1;
        assignment[i] = c;
        centroids.row_mut(c).copy_from_slice(x.row(i));
        // Re-center the cluster that lost the point.
        let mut mean = vec![0.0; d];
        for (j, &a) in assignment.iter().enumerate() {
            if a == old {
                for (m, v) in mean.iter_mut().zip(x.row(j)) {
                    *m += v;
                }
            }
        }
        let inv = 1.0 / counts[old] as f64;
        for (dst, m) in centroids.row_mut(old).iter_mut().zip(&mean) {
            *dst = m * inv;
        }
    }
}

/// Lloyd's algorithm from a k-means++ start, until the assignment stops
/// changing or `max_iter` iterations.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of points ({n})")));
    }
    let mut rng = rng(seed);
    let mut centroids = seed_plus_plus(x, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut inertia = assign(x, &centroids, &mut assignment);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        update(x, k, &mut assignment, &mut centroids);
        let mut next = assignment.clone();
        let new_inertia = assign(x, &centroids, &mut next);
        let changed = next != assignment;
        assignment = next;
        inertia = new_inertia;
        history.push(inertia);
        if !changed {
            break;
        }
    }
    // Final centroids are the means of the final assignment.
    update(x, k, &mut assignment, &mut centroids);
    inertia = inertia_of(x, &centroids, &assignment);
    history.push(inertia);
    Ok(Clustering {
        centroids,
        assignment,
        inertia,
        history,
    })
}

/// Rows scaled to unit Euclidean length (zero rows are left as they are).
pub fn l2_normalized(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let nrm = crate::matrix::norm(row);
        if nrm > 0.0 {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Minimum SSE over every assignment of points to at most k labels.
    fn exhaustive_optimum(x: &Matrix, k: usize) -> f64 {
        let n = x.rows();
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        loop {
            let mut sse = 0.0;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; x.cols()];
                for &i in &members {
                    for (m, v) in mean.iter_mut().zip(x.row(i)) {
                        *m += v / members.len() as f64;
                    }
                }
                sse += members.iter().map(|&i| squared_distance(x.row(i), &mean)).sum::<f64>();
            }
            best = best.min(sse);
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                labels[pos] += 1;
                if labels[pos] < k {
                    break;
                }
                labels[pos] = 0;
                pos += 1;
            }
        }
    }

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_vec(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn two_clusters_on_a_line() {
        let x = line(&[0.0, 1.0, 10.0, 11.0]);
        let opt = exhaustive_optimum(&x, 2);
        assert_eq!(opt, 1.0);
        for seed in 0..10 {
            let cl = kmeans(&x, 2, seed, 100).unwrap();
            assert_eq!(cl.assignment[0], cl.assignment[1]);
            assert_eq!(cl.assignment[2], cl.assignment[3]);
            assert_ne!(cl.assignment[0], cl.assignment[2]);
            let mut c: Vec<f64> = cl.centroids.as_slice().to_vec();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![0.5, 10.5]);
            assert_eq!(cl.inertia, opt);
        }
    }

    #[test]
    fn k_equals_n_and_k_one() {
        let x = line(&[3.0, -1.0, 4.0, 1.5, 9.0]);
        let cl = kmeans(&x, 5, 1, 50).unwrap();
        assert_eq!(cl.inertia, 0.0);
        let mut a = cl.assignment.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);

        let cl = kmeans(&x, 1, 1, 50).unwrap();
        assert!(cl.assignment.iter().all(|&a| a == 0));
        assert!((cl.centroids.get(0, 0) - 3.3).abs() < 1e-12);
        assert!(kmeans(&x, 6, 1, 50).is_err());
    }

    #[test]
    fn pseudo_labels_reinterpret_assignment() {
        let x = line(&[0.0, 0.1, 5.0, 5.1]);
        let cl = kmeans(&x, 2, 4, 50).unwrap();
        let (labels, c) = cl.pseudo_labels();
        assert_eq!(c, 2);
        assert_eq!(labels, cl.assignment);
        let (labels, c) = kmeans(&x, 1, 4, 50).unwrap().pseudo_labels();
        assert_eq!((labels, c), (vec![0; 4], 1));
    }

    #[test]
    fn lloyd_is_monotone_and_deterministic() {
        let mut r = rng(77);
        let x = Matrix::from_vec(300, 3, (0..900).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap();
        let a = kmeans(&x, 8, 3, 100).unwrap();
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{:?}", a.history);
        }
        let b = kmeans(&x, 8, 3, 100).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn coincident_points_still_fill_every_cluster() {
        let x = line(&[1.0, 1.0, 1.0, 2.0]);
        let cl = kmeans(&x, 3, 0, 10).unwrap();
        let mut used = cl.assignment.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!(cl.centroids.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn close_to_exhaustive_optimum_on_small_sets() {
        let mut r = rng(5);
        for trial in 0..8 {
            let n = r.random_range(5..=10);
            let k = 2 + trial % 2;
            let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| r.random_range(-3.0..3.0)).collect())
                .unwrap();
            let opt = exhaustive_optimum(&x, k);
            let best = (0..10)
                .map(|s| kmeans(&x, k, s, 100).unwrap().inertia)
                .fold(f64::INFINITY, f64::min);
            assert!(best <= opt * 1.05 + 1e-12, "trial {trial}: {best} vs {opt}");
        }
    }
}
