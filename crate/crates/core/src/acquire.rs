//! Acquisition strategies and the greedy batch loop.
//!
//! A batch is built one example at a time; each pick may depend on the
//! examples already picked. Entropy-based strategies have static scores, so
//! their greedy batch is simply the top-b. CoreSet and jLP are genuinely
//! sequential.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::LabelState;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::matrix::{dot, norm, squared_distance, Matrix};
use crate::propagate::{entropy, prediction, propagate_column, CgSettings};
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// `1 - cos(u, v)`.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => squared_distance(a, b).sqrt(),
            Metric::Cosine => {
                let denom = norm(a) * norm(b);
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / denom
                }
            }
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Random,
    /// Highest predictive entropy.
    Uncertainty,
    /// Greedy farthest-first traversal in embedding space.
    CoreSet { metric: Metric },
    /// Highest entropy for acquisition; confident examples (entropy at most
    /// `epsilon`) are pseudo-labeled for the next cycle.
    Ceal { epsilon: f64 },
    /// Lowest manifold similarity to the labeled set under label propagation.
    Jlp { alpha: f64 },
}

/// CEAL threshold that pseudo-labels about 10% of U in the first cycle on
/// two-moons (n = 500, noise 0.1) with one label per class.
pub const DEFAULT_CEAL_EPSILON: f64 = 4e-4;

pub const STRATEGY_NAMES: [&str; 5] = ["random", "uncertainty", "coreset", "ceal", "jlp"];

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::CoreSet { .. } => "coreset",
            Strategy::Ceal { .. } => "ceal",
            Strategy::Jlp { .. } => "jlp",
        }
    }

    pub fn needs_graph(&self) -> bool {
        matches!(self, Strategy::Jlp { .. })
    }

    /// Parses a strategy name, filling kind-specific parameters.
    pub fn parse(name: &str, epsilon: f64, alpha: f64, metric: Metric) -> Result<Self> {
        match name {
            "random" => Ok(Strategy::Random),
            "uncertainty" => Ok(Strategy::Uncertainty),
            "coreset" => Ok(Strategy::CoreSet { metric }),
            "ceal" => Ok(Strategy::Ceal { epsilon }),
            "jlp" => Ok(Strategy::Jlp { alpha }),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected one of {})",
                STRATEGY_NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything an acquisition function may look at. Immutable for one batch.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionContext<'a> {
    /// Class probabilities, n x c.
    pub probs: &'a Matrix,
    /// Embeddings, n x m.
    pub embeddings: &'a Matrix,
    pub graph: Option<&'a SparseGraph>,
    pub state: &'a LabelState,
    pub seed: u64,
    pub cg: CgSettings,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Acquisition {
    /// Acquired indices in pick order.
    pub indices: Vec<usize>,
    /// Strategy score of each pick at the time it was picked.
    pub scores: Vec<f64>,
    /// CEAL pseudo-labels `(index, class)` for the next cycle.
    pub pseudo: Vec<(usize, usize)>,
}

impl AcquisitionContext<'_> {
    fn check(&self) -> Result<()> {
        let n = self.state.len();
        if self.probs.rows() != n || self.embeddings.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.probs.rows().min(self.embeddings.rows()),
            });
        }
        if let Some(g) = self.graph {
            if g.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g.n(),
                });
            }
        }
        Ok(())
    }

    fn graph(&self) -> Result<&SparseGraph> {
        self.graph
            .ok_or_else(|| Error::invalid("jLP acquisition needs an affinity graph"))
    }
}

/// Entropy of the model's prediction for every unlabeled example, aligned with `state.unlabeled()`.
pub fn score_uncertainty(ctx: &AcquisitionContext<'_>) -> Result<Vec<f64>> {
    ctx.state
        .unlabeled()
        .iter()
        .map(|&i| entropy(ctx.probs.row(i)))
        .collect()
}

/// Positions of the `b` largest scores, ties broken by the lower position.
fn top_b(scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &c| scores[c].total_cmp(&scores[a]).then(a.cmp(&c)));
    order.truncate(b);
    order
}

fn select_uncertainty(ctx: &AcquisitionContext<'_>, b: usize) -> Result<Acquisition> {
    let scores = score_uncertainty(ctx)?;
    let u = ctx.state.unlabeled();
    let picks = top_b(&scores, b);
    Ok(Acquisition {
        indices: picks.iter().map(|&p| u[p]).collect(),
        scores: picks.iter().map(|&p| scores[p]).collect(),
        pseudo: Vec::new(),
    })
}

/// Distance from every unlabeled example to its nearest labeled example.
fn min_distances(ctx: &AcquisitionContext<'_>, metric: Metric) -> Vec<f64> {
    let emb = ctx.embeddings;
    let labeled = ctx.state.labeled();
    ctx.state
        .unlabeled()
        .iter()
        .map(|&i| {
            labeled
                .iter()
                .map(|&k| metric.distance(emb.row(i), emb.row(k)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Greedy farthest-first selection.
pub fn select_coreset(ctx: &AcquisitionContext<'_>, b: usize, metric: Metric) -> Result<Acquisition> {
    let u = ctx.state.unlabeled();
    let emb = ctx.embeddings;
    let mut dist = min_distances(ctx, metric);
    let mut taken = vec![false; u.len()];
    let mut out = Acquisition::default();
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for p in 0..u.len() {
            if taken[p] {
                continue;
            }
            match best {
                Some(q) if dist[p] <= dist[q] => {}
                _ => best = Some(p),
            }
        }
        let Some(p) = best else { break };
        taken[p] = true;
        out.indices.push(u[p]);
        out.scores.push(dist[p]);
        let picked = emb.row(u[p]);
        for (q, d) in dist.iter_mut().enumerate() {
            if !taken[q] {
                *d = d.min(metric.distance(emb.row(u[q]), picked));
            }
        }
    }
    Ok(out)
}

/// Top-b entropy for acquisition plus confident pseudo-labels on the rest of U.
pub fn select_ceal(ctx: &AcquisitionContext<'_>, b: usize, epsilon: f64) -> Result<Acquisition> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("CEAL threshold must be nonnegative"));
    }
    let scores = score_uncertainty(ctx)?;
    let u = ctx.state.unlabeled();
    let picks = top_b(&scores, b);
    let mut acquired = vec![false; u.len()];
    for &p in &picks {
        acquired[p] = true;
    }
    let mut pseudo = Vec::new();
    for (p, &i) in u.iter().enumerate() {
        if !acquired[p] && scores[p] <= epsilon {
            pseudo.push((i, prediction(ctx.probs.row(i))?));
        }
    }
    Ok(Acquisition {
        indices: picks.iter().map(|&p| u[p]).collect(),
        scores: picks.iter().map(|&p| scores[p]).collect(),
        pseudo,
    })
}

/// Manifold similarity `h(delta(S))` of every node to the query set `S`.
pub fn manifold_similarity(
    g: &SparseGraph,
    queries: &[usize],
    alpha: f64,
    cg: CgSettings,
) -> Result<Vec<f64>> {
    let mut delta = vec![0.0; g.n()];
    for &i in queries {
        delta[i] = 1.0;
    }
    propagate_column(g, &delta, alpha, cg)
}

/// Greedy least-similar selection under label propagation.
pub fn select_jlp(ctx: &AcquisitionContext<'_>, b: usize, alpha: f64) -> Result<Acquisition> {
    let g = ctx.graph()?;
    if ctx.state.labeled().is_empty() {
        return Err(Error::invalid("jLP needs at least one labeled example"));
    }
    let u = ctx.state.unlabeled();
    let mut queries = ctx.state.labeled().to_vec();
    let mut taken = vec![false; u.len()];
    let mut out = Acquisition::default();
    for _ in 0..b {
        let sim = manifold_similarity(g, &queries, alpha, ctx.cg)?;
        let mut best: Option<usize> = None;
        for (p, &i) in u.iter().enumerate() {
            if taken[p] {
                continue;
            }
            match best {
                Some(q) if sim[i] >= sim[u[q]] => {}
                _ => best = Some(p),
            }
        }
        let Some(p) = best else { break };
        taken[p] = true;
        queries.push(u[p]);
        out.indices.push(u[p]);
        out.scores.push(sim[u[p]]);
    }
    Ok(out)
}

fn select_random(ctx: &AcquisitionContext<'_>, b: usize) -> Acquisition {
    let u = ctx.state.unlabeled();
    let mut r = rng(ctx.seed);
    let indices: Vec<usize> = sample(&mut r, u.len(), b).into_iter().map(|p| u[p]).collect();
    Acquisition {
        scores: vec![0.0; indices.len()],
        indices,
        pseudo: Vec::new(),
    }
}

/// Acquires `b` distinct unlabeled examples with the given strategy.
pub fn acquire_batch(ctx: &AcquisitionContext<'_>, strategy: &Strategy, b: usize) -> Result<Acquisition> {
    ctx.check()?;
    let available = ctx.state.unlabeled().len();
    if b > available {
        return Err(Error::invalid(format!(
            "cannot acquire {b} examples, only {available} unlabeled"
        )));
    }
    if b == 0 {
        return Ok(Acquisition::default());
    }
    match *strategy {
        Strategy::Random => Ok(select_random(ctx, b)),
        Strategy::Uncertainty => select_uncertainty(ctx, b),
        Strategy::CoreSet { metric } => select_coreset(ctx, b, metric),
        Strategy::Ceal { epsilon } => select_ceal(ctx, b, epsilon),
        Strategy::Jlp { alpha } => select_jlp(ctx, b, alpha),
    }
}

/// Per-example priority under a strategy, aligned with `state.unlabeled()`;
/// higher means acquired earlier. Used for rank comparisons.
///
/// For the sequential strategies this is the score of the first greedy step.
pub fn priority_scores(ctx: &AcquisitionContext<'_>, strategy: &Strategy) -> Result<Vec<f64>> {
    ctx.check()?;
    match *strategy {
        Strategy::Random => {
            let mut r = rng(ctx.seed);
            Ok(ctx.state.unlabeled().iter().map(|_| r.random::<f64>()).collect())
        }
        Strategy::Uncertainty | Strategy::Ceal { .. } => score_uncertainty(ctx),
        Strategy::CoreSet { metric } => Ok(min_distances(ctx, metric)),
        Strategy::Jlp { alpha } => {
            let sim = manifold_similarity(ctx.graph()?, ctx.state.labeled(), alpha, ctx.cg)?;
            Ok(ctx.state.unlabeled().iter().map(|&i| -sim[i]).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_reciprocal_knn;
    use nalgebra::{DMatrix, DVector};

    struct Fixture {
        probs: Matrix,
        emb: Matrix,
        graph: Option<SparseGraph>,
        state: LabelState,
    }

    impl Fixture {
        fn ctx(&self) -> AcquisitionContext<'_> {
            AcquisitionContext {
                probs: &self.probs,
                embeddings: &self.emb,
                graph: self.graph.as_ref(),
                state: &self.state,
                seed: 11,
                cg: CgSettings::default(),
            }
        }
    }

    fn line_fixture(points: &[f64], labeled: &[usize]) -> Fixture {
        let n = points.len();
        Fixture {
            probs: Matrix::from_vec(n, 2, vec![0.5; 2 * n]).unwrap(),
            emb: Matrix::from_vec(n, 1, points.to_vec()).unwrap(),
            graph: None,
            state: LabelState::new(n, labeled, &vec![0; labeled.len()]).unwrap(),
        }
    }

    #[test]
    fn coreset_line_fixture() {
        let f = line_fixture(&[0.0, 1.0, 2.0, 10.0], &[0]);
        let a = acquire_batch(&f.ctx(), &Strategy::CoreSet { metric: Metric::Euclidean }, 2).unwrap();
        assert_eq!(a.indices, vec![3, 2]);
        assert_eq!(a.scores, vec![10.0, 2.0]);
        let one = acquire_batch(&f.ctx(), &Strategy::CoreSet { metric: Metric::Euclidean }, 1).unwrap();
        assert_eq!(one.indices, vec![3]);
    }

    #[test]
    fn coreset_coincident_points_ascending() {
        let f = line_fixture(&[1.0; 6], &[2]);
        let a = acquire_batch(&f.ctx(), &Strategy::CoreSet { metric: Metric::Euclidean }, 3).unwrap();
        assert_eq!(a.indices, vec![0, 1, 3]);
    }

    #[test]
    fn uncertainty_picks_mixed_row() {
        let f = Fixture {
            probs: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap(),
            emb: Matrix::zeros(3, 1),
            graph: None,
            state: LabelState::new(3, &[0], &[0]).unwrap(),
        };
        let a = acquire_batch(&f.ctx(), &Strategy::Uncertainty, 1).unwrap();
        assert_eq!(a.indices, vec![2]);
        let s = score_uncertainty(&f.ctx()).unwrap();
        assert!((s[1] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exhaustion_and_empty_batches() {
        let f = line_fixture(&[0.0, 1.0, 2.0, 5.0, 7.0], &[1]);
        for s in [
            Strategy::Random,
            Strategy::Uncertainty,
            Strategy::CoreSet { metric: Metric::Euclidean },
            Strategy::Ceal { epsilon: 0.1 },
        ] {
            let mut all = acquire_batch(&f.ctx(), &s, 4).unwrap().indices;
            all.sort_unstable();
            assert_eq!(all, vec![0, 2, 3, 4], "{s}");
            assert!(acquire_batch(&f.ctx(), &s, 0).unwrap().indices.is_empty());
            assert!(acquire_batch(&f.ctx(), &s, 5).is_err());
        }
    }

    #[test]
    fn ceal_thresholds() {
        let f = Fixture {
            probs: Matrix::from_rows(&[
                vec![0.5, 0.5],
                vec![1.0, 0.0],
                vec![0.6, 0.4],
                vec![0.2, 0.8],
                vec![0.55, 0.45],
            ])
            .unwrap(),
            emb: Matrix::zeros(5, 1),
            graph: None,
            state: LabelState::new(5, &[0], &[0]).unwrap(),
        };
        let a = select_ceal(&f.ctx(), 1, 0.0).unwrap();
        assert_eq!(a.indices, vec![4]);
        assert_eq!(a.pseudo, vec![(1, 0)]);
        let a = select_ceal(&f.ctx(), 1, 2f64.ln()).unwrap();
        assert_eq!(a.pseudo, vec![(1, 0), (2, 0), (3, 1)]);
        assert!(select_ceal(&f.ctx(), 1, -1.0).is_err());

        let mixed = Fixture {
            probs: Matrix::from_rows(&[vec![0.6, 0.4], vec![0.7, 0.3]]).unwrap(),
            emb: Matrix::zeros(2, 1),
            graph: None,
            state: LabelState::new(2, &[0], &[0]).unwrap(),
        };
        assert!(select_ceal(&mixed.ctx(), 0, 0.0).unwrap().pseudo.is_empty());
    }

    fn dense_similarity(g: &SparseGraph, queries: &[usize], alpha: f64) -> Vec<f64> {
        let n = g.n();
        let wn = g.normalized().to_dense();
        let a = DMatrix::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - alpha * wn.get(i, j));
        let mut rhs = DVector::zeros(n);
        for &q in queries {
            rhs[q] = 1.0 - alpha;
        }
        a.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    fn graph_fixture(g: SparseGraph, labeled: &[usize]) -> Fixture {
        let n = g.n();
        Fixture {
            probs: Matrix::from_vec(n, 2, vec![0.5; 2 * n]).unwrap(),
            emb: Matrix::zeros(n, 1),
            graph: Some(g),
            state: LabelState::new(n, labeled, &vec![0; labeled.len()]).unwrap(),
        }
    }

    #[test]
    fn jlp_chain_picks_far_end() {
        let f = graph_fixture(SparseGraph::chain(3), &[0]);
        let a = acquire_batch(&f.ctx(), &Strategy::Jlp { alpha: 0.5 }, 1).unwrap();
        assert_eq!(a.indices, vec![2]);
        assert!((a.scores[0] - 0.08333).abs() < 1e-4);
        let o = dense_similarity(f.graph.as_ref().unwrap(), &[0], 0.5);
        assert!((a.scores[0] - o[2]).abs() < 1e-9);
    }

    #[test]
    fn jlp_disconnected_node_first() {
        let g = SparseGraph::from_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let f = graph_fixture(g, &[0]);
        let a = acquire_batch(&f.ctx(), &Strategy::Jlp { alpha: 0.99 }, 2).unwrap();
        assert_eq!(a.indices[0], 4);
        assert_eq!(a.scores[0], 0.0);
    }

    #[test]
    fn jlp_deeper_branch_first() {
        // Root 0 with a short branch 0-1 and a long branch 0-2-3-4.
        let g = SparseGraph::from_edges(5, &[(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)]).unwrap();
        let o = dense_similarity(&g, &[0], 0.9);
        let oracle_pick = (1..5).min_by(|&a, &b| o[a].total_cmp(&o[b])).unwrap();
        assert_eq!(oracle_pick, 4);
        let f = graph_fixture(g, &[0]);
        let a = acquire_batch(&f.ctx(), &Strategy::Jlp { alpha: 0.9 }, 1).unwrap();
        assert_eq!(a.indices, vec![4]);
    }

    #[test]
    fn jlp_alpha_zero_is_index_order() {
        let mut r = rng(4);
        let n = 40;
        let feats = Matrix::from_vec(n, 3, (0..n * 3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let g = build_reciprocal_knn(&feats, 5).unwrap();
        let f = graph_fixture(g, &[5, 17]);
        let a = acquire_batch(&f.ctx(), &Strategy::Jlp { alpha: 0.0 }, 4).unwrap();
        assert_eq!(a.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn jlp_requires_graph() {
        let f = line_fixture(&[0.0, 1.0], &[0]);
        assert!(acquire_batch(&f.ctx(), &Strategy::Jlp { alpha: 0.5 }, 1).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let f = line_fixture(&(0..50).map(f64::from).collect::<Vec<_>>(), &[0]);
        let a = acquire_batch(&f.ctx(), &Strategy::Random, 5).unwrap();
        let b = acquire_batch(&f.ctx(), &Strategy::Random, 5).unwrap();
        assert_eq!(a, b);
        let mut other = f.ctx();
        other.seed = 12;
        assert_ne!(acquire_batch(&other, &Strategy::Random, 5).unwrap(), a);
    }

    #[test]
    fn strategy_names_parse() {
        for name in STRATEGY_NAMES {
            let s = Strategy::parse(name, 0.1, 0.99, Metric::Euclidean).unwrap();
            assert_eq!(s.name(), name);
        }
        assert!(Strategy::parse("bogus", 0.1, 0.99, Metric::Euclidean).is_err());
    }
}
