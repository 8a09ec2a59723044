//! Agreement between acquisition strategies, measured through the
//! pseudo-labels label propagation produces after each strategy's batch.

use serde::Serialize;

use crate::acquire::{acquire_batch, priority_scores, AcquisitionContext, Strategy};
use crate::dataset::{Dataset, LabelState};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::propagate::{pseudo_label_all, CgSettings};
use crate::util::rng;

/// `sum_i (w_i / sum w) [z_i == z'_i]`.
pub fn weighted_accuracy(z: &[usize], z_prime: &[usize], w: &[f64]) -> Result<f64> {
    if z.len() != z_prime.len() || z.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: z_prime.len().min(w.len()),
        });
    }
    if w.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let hit: f64 = z
        .iter()
        .zip(z_prime)
        .zip(w)
        .filter(|((a, b), _)| a == b)
        .map(|(_, &wi)| wi)
        .sum();
    Ok(hit / total)
}

/// Weighted accuracy restricted to the positions in `subset`, with the
/// weights renormalized on that subset. `None` when the subset carries no weight.
fn subset_accuracy(z: &[usize], truth: &[usize], w: &[f64], subset: &[usize]) -> Option<f64> {
    let zs: Vec<usize> = subset.iter().map(|&p| z[p]).collect();
    let ts: Vec<usize> = subset.iter().map(|&p| truth[p]).collect();
    let ws: Vec<f64> = subset.iter().map(|&p| w[p]).collect();
    weighted_accuracy(&zs, &ts, &ws).ok()
}

fn mean_of(w: &[f64], subset: &[usize]) -> Option<f64> {
    if subset.is_empty() {
        None
    } else {
        Some(subset.iter().map(|&p| w[p]).sum::<f64>() / subset.len() as f64)
    }
}

/// One row of the agreement table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub strategy_a: String,
    pub strategy_b: String,
    /// Size of the common unlabeled set the comparison runs on.
    pub unlabeled: usize,
    pub n_agree: usize,
    pub n_disagree: usize,
    /// Percentage of common unlabeled examples with equal pseudo-labels.
    pub pct_agree: f64,
    /// Weighted accuracy between the two pseudo-labelings (mass of the agreeing subset).
    pub weighted_agreement: f64,
    /// Weighted accuracy of each pseudo-labeling against the truth.
    pub acc_a: f64,
    pub acc_b: f64,
    pub acc_agree: Option<f64>,
    pub acc_disagree_a: Option<f64>,
    pub acc_disagree_b: Option<f64>,
    pub w_agree: Option<f64>,
    pub w_disagree: Option<f64>,
}

/// Builds the report from two pseudo-labelings of the same examples.
///
/// `w` are the averaged weights; subset accuracies use `w` renormalized on
/// each subset, so that `acc_a = s * acc_agree + (1 - s) * acc_disagree_a`
/// with `s = weighted_agreement`.
pub fn agreement_from_labels(
    names: (&str, &str),
    labels_a: &[usize],
    labels_b: &[usize],
    truth: &[usize],
    w: &[f64],
) -> Result<AgreementReport> {
    let n = labels_a.len();
    if labels_b.len() != n || truth.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels_b.len().min(truth.len()).min(w.len()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("no common unlabeled examples to compare"));
    }
    let (agree, disagree): (Vec<usize>, Vec<usize>) = (0..n).partition(|&p| labels_a[p] == labels_b[p]);
    Ok(AgreementReport {
        strategy_a: names.0.to_string(),
        strategy_b: names.1.to_string(),
        unlabeled: n,
        n_agree: agree.len(),
        n_disagree: disagree.len(),
        pct_agree: 100.0 * agree.len() as f64 / n as f64,
        weighted_agreement: weighted_accuracy(labels_a, labels_b, w)?,
        acc_a: weighted_accuracy(labels_a, truth, w)?,
        acc_b: weighted_accuracy(labels_b, truth, w)?,
        acc_agree: subset_accuracy(labels_a, truth, w, &agree),
        acc_disagree_a: subset_accuracy(labels_a, truth, w, &disagree),
        acc_disagree_b: subset_accuracy(labels_b, truth, w, &disagree),
        w_agree: mean_of(w, &agree),
        w_disagree: mean_of(w, &disagree),
    })
}

/// Inputs shared by both strategies in a comparison.
#[derive(Debug, Clone, Copy)]
pub struct CompareSetup<'a> {
    pub ctx: AcquisitionContext<'a>,
    /// Graph used for label propagation after acquisition.
    pub graph: &'a SparseGraph,
    pub dataset: &'a Dataset,
    pub alpha: f64,
    pub cg: CgSettings,
}

/// Applies two strategies to the same trained state, labels each batch by
/// simulation, propagates, and compares the resulting pseudo-labels on the
/// unlabeled examples neither strategy acquired.
pub fn compare_strategies(
    setup: &CompareSetup<'_>,
    a: &Strategy,
    b: &Strategy,
    budget: usize,
) -> Result<AgreementReport> {
    let truth = setup.dataset.evaluation_labels();
    let c = setup.dataset.num_classes();
    let run = |s: &Strategy| -> Result<(LabelState, Vec<usize>)> {
        let acq = acquire_batch(&setup.ctx, s, budget)?;
        let mut state = setup.ctx.state.clone();
        let answers: Vec<usize> = acq.indices.iter().map(|&i| truth[i]).collect();
        state.commit_batch(&acq.indices, &answers)?;
        Ok((state, acq.indices))
    };
    let (state_a, picked_a) = run(a)?;
    let (state_b, picked_b) = run(b)?;
    let prop_a = pseudo_label_all(setup.graph, &state_a, c, setup.alpha, setup.cg)?;
    let prop_b = pseudo_label_all(setup.graph, &state_b, c, setup.alpha, setup.cg)?;

    let n = setup.dataset.len();
    let mut excluded = vec![false; n];
    for &i in picked_a.iter().chain(&picked_b) {
        excluded[i] = true;
    }
    let lookup = |prop: &crate::propagate::Propagation| {
        let mut label = vec![usize::MAX; n];
        let mut weight = vec![0.0; n];
        for ((&i, &y), &w) in prop.unlabeled.iter().zip(&prop.pseudo_labels).zip(&prop.weights) {
            label[i] = y;
            weight[i] = w;
        }
        (label, weight)
    };
    let (la, wa) = lookup(&prop_a);
    let (lb, wb) = lookup(&prop_b);
    let common: Vec<usize> = setup
        .ctx
        .state
        .unlabeled()
        .iter()
        .copied()
        .filter(|&i| !excluded[i])
        .collect();
    let za: Vec<usize> = common.iter().map(|&i| la[i]).collect();
    let zb: Vec<usize> = common.iter().map(|&i| lb[i]).collect();
    let t: Vec<usize> = common.iter().map(|&i| truth[i]).collect();
    let w: Vec<f64> = common.iter().map(|&i| 0.5 * (wa[i] + wb[i])).collect();
    agreement_from_labels((a.name(), b.name()), &za, &zb, &t, &w)
}

/// One sampled point of a rank-vs-rank scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankPair {
    pub index: usize,
    pub rank_a: usize,
    pub rank_b: usize,
}

/// Dense ranks by descending score: the highest score gets rank 0 and equal
/// scores share a rank.
pub fn dense_ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    let mut rank = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && scores[i] != scores[order[pos - 1]] {
            rank += 1;
        }
        ranks[i] = rank;
    }
    ranks
}

/// Ranks of the same examples under two score vectors, on a random subset of
/// `round(sample_frac * len)` examples, sorted by index.
pub fn export_rank_scatter(
    indices: &[usize],
    scores_a: &[f64],
    scores_b: &[f64],
    sample_frac: f64,
    seed: u64,
) -> Result<Vec<RankPair>> {
    if scores_a.len() != indices.len() || scores_b.len() != indices.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            got: scores_a.len().min(scores_b.len()),
        });
    }
    if !(0.0..=1.0).contains(&sample_frac) {
        return Err(Error::invalid("sample fraction must lie in [0, 1]"));
    }
    let ra = dense_ranks(scores_a);
    let rb = dense_ranks(scores_b);
    let count = ((sample_frac * indices.len() as f64).round() as usize).min(indices.len());
    let mut picked = rand::seq::index::sample(&mut rng(seed), indices.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|p| RankPair {
            index: indices[p],
            rank_a: ra[p],
            rank_b: rb[p],
        })
        .collect())
}

/// Rank scatter between two strategies' priority scores over the current U.
pub fn strategy_rank_scatter(
    ctx: &AcquisitionContext<'_>,
    a: &Strategy,
    b: &Strategy,
    sample_frac: f64,
    seed: u64,
) -> Result<Vec<RankPair>> {
    let sa = priority_scores(ctx, a)?;
    let sb = priority_scores(ctx, b)?;
    export_rank_scatter(ctx.state.unlabeled(), &sa, &sb, sample_frac, seed)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// CSV with one row per report. Undefined values are written as `NA`.
pub fn agreement_csv(reports: &[AgreementReport]) -> String {
    let mut out = String::from(
        "strategy_a,strategy_b,unlabeled,n_agree,n_disagree,pct_agree,weighted_agreement,acc_a,acc_b,acc_agree,acc_disagree_a,acc_disagree_b,w_agree,w_disagree\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy_a,
            r.strategy_b,
            r.unlabeled,
            r.n_agree,
            r.n_disagree,
            r.pct_agree,
            r.weighted_agreement,
            r.acc_a,
            r.acc_b,
            fmt_opt(r.acc_agree),
            fmt_opt(r.acc_disagree_a),
            fmt_opt(r.acc_disagree_b),
            fmt_opt(r.w_agree),
            fmt_opt(r.w_disagree),
        ));
    }
    out
}

pub fn scatter_csv(pairs: &[RankPair]) -> String {
    let mut out = String::from("index,rank_a,rank_b\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.index, p.rank_a, p.rank_b));
    }
    out
}
