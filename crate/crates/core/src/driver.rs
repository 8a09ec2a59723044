//! The active learning loop.
//!
//! Per repeat: optional unsupervised pre-training gives the initialization
//! `theta_0`. Every cycle then trains from `theta_0` on the labeled set,
//! optionally continues with semi-supervised epochs (graph rebuild, label
//! propagation, weighted pseudo-label sampling), records test accuracy, and
//! acquires the next batch from the oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquire::{acquire_batch, Acquisition, AcquisitionContext, Strategy};
use crate::dataset::{init_labels, init_labels_unbalanced, Dataset, LabelState, Oracle};
use crate::error::{Error, Result};
use crate::graph::{build_reciprocal_knn, SparseGraph};
use crate::matrix::Matrix;
use crate::model::{
    accuracy, embed_all, fit, predict_all, pretrain_unsupervised, train_semi, ClassifierState,
    ModelKind, PretrainPlan, TrainPlan,
};
use crate::propagate::{pseudo_label_all, CgSettings, Propagation};
use crate::util::derive_seed;

/// How the initial labeled set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialLabels {
    /// The same number of examples from every class.
    PerClass(usize),
    /// A uniform draw from the whole pool.
    Uniform(usize),
}

impl InitialLabels {
    pub fn count(self, classes: usize) -> usize {
        match self {
            InitialLabels::PerClass(k) => k * classes,
            InitialLabels::Uniform(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub budget: usize,
    pub cycles: usize,
    pub repeats: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub pre: bool,
    pub semi: bool,
    pub initial: InitialLabels,
    pub model: ModelKind,
    pub k_graph: usize,
    pub alpha: f64,
    pub cg: CgSettings,
    /// Optimization settings shared by supervised and semi-supervised training.
    pub plan: TrainPlan,
    /// Supervised epochs before the semi-supervised epochs, when `semi` is on.
    pub warmup_epochs: usize,
    /// Semi-supervised epochs per cycle.
    pub semi_epochs: usize,
    /// Number of k-means clusters for pre-training; `None` means ten per class.
    pub k_pretrain: Option<usize>,
    pub pretrain_rounds: usize,
    pub pretrain_epochs: usize,
    pub pretrain_normalize: bool,
    /// Rebuild the graph every semi epoch even when the embedding is fixed.
    pub force_rebuild: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget: 10,
            cycles: 5,
            repeats: 5,
            seed: 0,
            strategy: Strategy::Uncertainty,
            pre: false,
            semi: false,
            initial: InitialLabels::PerClass(1),
            model: ModelKind::Linear,
            k_graph: 50,
            alpha: 0.99,
            cg: CgSettings::default(),
            plan: TrainPlan::default(),
            warmup_epochs: 10,
            semi_epochs: 200,
            k_pretrain: None,
            pretrain_rounds: 10,
            pretrain_epochs: 10,
            pretrain_normalize: false,
            force_rebuild: false,
        }
    }
}

impl RunConfig {
    /// Shorter schedule for smoke tests and CI. Not the reference settings.
    pub fn fast(mut self) -> Self {
        self.plan.epochs = 20;
        self.plan.anneal_horizon = 21;
        self.semi_epochs = 20;
        self.warmup_epochs = 5;
        self.pretrain_rounds = 3;
        self.pretrain_epochs = 5;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.budget == 0 || self.repeats == 0 {
            return Err(Error::Config("cycles, budget and repeats must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.k_graph == 0 {
            return Err(Error::Config("k_graph must be positive".into()));
        }
        self.plan.validate()
    }
}

/// Metrics of one cycle of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub strategy: String,
    pub repeat: usize,
    pub seed: u64,
    pub cycle: usize,
    /// Size of the labeled set the model was trained on.
    pub labeled: usize,
    pub test_accuracy: f64,
    /// Unweighted accuracy of the first propagation's pseudo-labels on U.
    pub lp_accuracy: Option<f64>,
    /// Oracle queries so far, including the initial labels.
    pub oracle_calls: usize,
    /// Graph constructions so far in this repeat.
    pub graph_builds: usize,
    /// Label propagations so far in this repeat (excluding jLP's own solves).
    pub propagations: usize,
    /// Wall-clock time of this cycle's acquisition. Kept out of the records
    /// file so identical runs produce identical bytes.
    #[serde(skip)]
    pub acquisition_ms: f64,
}

/// Outcome of training for one cycle.
#[derive(Debug)]
pub struct CycleModel {
    pub classifier: ClassifierState,
    /// Graph from the last semi-supervised epoch, if any.
    pub graph: Option<SparseGraph>,
    pub propagation: Option<Propagation>,
    pub lp_accuracy: Option<f64>,
}

/// One repeat of the loop, steppable for analyses that need the intermediate state.
pub struct Session<'a> {
    cfg: &'a RunConfig,
    train: &'a Dataset,
    oracle: Oracle<'a>,
    state: LabelState,
    theta0: ClassifierState,
    seed: u64,
    graph_builds: usize,
    propagations: usize,
    /// CEAL pseudo-labels carried into the next cycle.
    ceal_pseudo: Vec<(usize, usize)>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a RunConfig, train: &'a Dataset, repeat: usize) -> Result<Self> {
        cfg.validate()?;
        let seed = derive_seed(cfg.seed, repeat as u64);
        let oracle = Oracle::new(train);
        let state = match cfg.initial {
            InitialLabels::PerClass(k) => init_labels(train, &oracle, k, derive_seed(seed, 1))?,
            InitialLabels::Uniform(k) => init_labels_unbalanced(train, &oracle, k, derive_seed(seed, 1))?,
        };
        let init = ClassifierState::new(cfg.model.build(
            train.dim(),
            train.num_classes(),
            derive_seed(seed, 2),
        ));
        let theta0 = if cfg.pre {
            let pre = PretrainPlan {
                clusters: cfg
                    .k_pretrain
                    .unwrap_or(10 * train.num_classes())
                    .min(train.len()),
                rounds: cfg.pretrain_rounds,
                plan: TrainPlan {
                    epochs: cfg.pretrain_epochs,
                    anneal_horizon: cfg.pretrain_epochs,
                    ..cfg.plan.clone()
                },
                kmeans_iters: 100,
                normalize: cfg.pretrain_normalize,
            };
            pretrain_unsupervised(train, &pre, &init, derive_seed(seed, 3))?
        } else {
            init
        };
        Ok(Session {
            cfg,
            train,
            oracle,
            state,
            theta0,
            seed,
            graph_builds: 0,
            propagations: 0,
            ceal_pseudo: Vec::new(),
        })
    }

    pub fn state(&self) -> &LabelState {
        &self.state
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle.calls()
    }

    pub fn graph_builds(&self) -> usize {
        self.graph_builds
    }

    pub fn propagations(&self) -> usize {
        self.propagations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn cycle_seed(&self, tag: u64) -> u64 {
        derive_seed(self.seed, 100 + 16 * self.state.cycle() as u64 + tag)
    }

    fn build_graph(&mut self, embeddings: &Matrix) -> Result<SparseGraph> {
        self.graph_builds += 1;
        let k = self.cfg.k_graph.min(embeddings.rows().saturating_sub(1)).max(1);
        build_reciprocal_knn(embeddings, k)
    }

    /// Trains the model for the current cycle, starting from `theta_0`.
    pub fn train_cycle(&mut self) -> Result<CycleModel> {
        let cfg = self.cfg;
        let mut indices = self.state.labeled().to_vec();
        let mut labels = self.state.labeled_classes();
        for &(i, y) in &self.ceal_pseudo {
            if !self.state.is_labeled(i) {
                indices.push(i);
                labels.push(y);
            }
        }
        let sup_plan = TrainPlan {
            epochs: if cfg.semi { cfg.warmup_epochs } else { cfg.plan.epochs },
            ..cfg.plan.clone()
        };
        let mut classifier = fit(
            self.train.features(),
            &indices,
            &labels,
            &sup_plan,
            &self.theta0,
            self.cycle_seed(0),
        )?;
        let mut out = CycleModel {
            classifier: classifier.clone(),
            graph: None,
            propagation: None,
            lp_accuracy: None,
        };
        if !cfg.semi || self.state.unlabeled().is_empty() {
            return Ok(out);
        }

        classifier.restart_phase();
        let rebuild_each_epoch = cfg.model.learns_embedding() || cfg.force_rebuild;
        let truth = self.train.evaluation_labels();
        let c = self.train.num_classes();
        let mut graph: Option<SparseGraph> = None;
        let mut prop: Option<Propagation> = None;
        for epoch in 0..cfg.semi_epochs {
            if graph.is_none() || rebuild_each_epoch {
                let emb = embed_all(self.train.features(), classifier.model.as_ref())?;
                let g = self.build_graph(&emb)?;
                self.propagations += 1;
                let p = pseudo_label_all(&g, &self.state, c, cfg.alpha, cfg.cg)?;
                if out.lp_accuracy.is_none() {
                    out.lp_accuracy = Some(p.accuracy(truth));
                }
                graph = Some(g);
                prop = Some(p);
            }
            let p = prop.as_ref().expect("propagation computed above");
            let epoch_seed = derive_seed(self.cycle_seed(1), epoch as u64);
            match train_semi(self.train, &self.state, p, &cfg.plan, &mut classifier, epoch_seed) {
                Ok(()) => {}
                Err(Error::ZeroWeights) => {
                    tracing::warn!("all pseudo-label weights are zero; stopping semi-supervised epochs");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        out.classifier = classifier;
        out.graph = graph;
        out.propagation = prop;
        Ok(out)
    }

    /// Builds the acquisition inputs for a trained model and runs `f` on them.
    pub fn with_context<T>(
        &mut self,
        trained: &CycleModel,
        needs_graph: bool,
        f: impl FnOnce(&AcquisitionContext<'_>) -> Result<T>,
    ) -> Result<T> {
        let model = trained.classifier.model.as_ref();
        let probs = predict_all(self.train.features(), model)?;
        let emb = embed_all(self.train.features(), model)?;
        let fresh;
        let graph = match (&trained.graph, needs_graph) {
            (_, false) => None,
            (Some(g), true) => Some(g),
            (None, true) => {
                fresh = self.build_graph(&emb)?;
                Some(&fresh)
            }
        };
        let ctx = AcquisitionContext {
            probs: &probs,
            embeddings: &emb,
            graph,
            state: &self.state,
            seed: self.cycle_seed(2),
            cg: self.cfg.cg,
        };
        f(&ctx)
    }

    /// Acquires the next batch with the configured strategy.
    pub fn acquire(&mut self, trained: &CycleModel) -> Result<Acquisition> {
        let strategy = self.cfg.strategy;
        let b = self.cfg.budget.min(self.state.unlabeled().len());
        self.with_context(trained, strategy.needs_graph(), |ctx| acquire_batch(ctx, &strategy, b))
    }

    /// Sends the batch to the oracle and moves it into the labeled set.
    pub fn commit(&mut self, acq: &Acquisition) -> Result<()> {
        let answers = self.oracle.label_all(&acq.indices)?;
        self.state.commit_batch(&acq.indices, &answers)?;
        self.ceal_pseudo = acq.pseudo.clone();
        Ok(())
    }
}

fn wrap(repeat: usize, cycle: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Cycle {
        repeat,
        cycle,
        source: Box::new(e),
    }
}

/// Runs every cycle of one repeat.
pub fn run_repeat(cfg: &RunConfig, train: &Dataset, test: &Dataset, repeat: usize) -> Result<Vec<CycleRecord>> {
    let mut session = Session::new(cfg, train, repeat).map_err(wrap(repeat, 0))?;
    let mut records = Vec::with_capacity(cfg.cycles);
    for cycle in 0..cfg.cycles {
        let err = wrap(repeat, cycle);
        let trained = session.train_cycle().map_err(&err)?;
        let probs = predict_all(test.features(), trained.classifier.model.as_ref()).map_err(&err)?;
        let mut record = CycleRecord {
            strategy: cfg.strategy.name().to_string(),
            repeat,
            seed: session.seed(),
            cycle,
            labeled: session.state().labeled().len(),
            test_accuracy: accuracy(&probs, test.evaluation_labels()),
            lp_accuracy: trained.lp_accuracy,
            oracle_calls: 0,
            graph_builds: 0,
            propagations: 0,
            acquisition_ms: 0.0,
        };
        if cycle + 1 < cfg.cycles && !session.state().unlabeled().is_empty() {
            let start = Instant::now();
            let acq = session.acquire(&trained).map_err(&err)?;
            record.acquisition_ms = start.elapsed().as_secs_f64() * 1e3;
            session.commit(&acq).map_err(&err)?;
        }
        record.oracle_calls = session.oracle_calls();
        record.graph_builds = session.graph_builds();
        record.propagations = session.propagations();
        tracing::debug!(
            strategy = %cfg.strategy,
            repeat,
            cycle,
            accuracy = record.test_accuracy,
            "cycle done"
        );
        records.push(record);
    }
    Ok(records)
}

/// Runs all repeats (in parallel) and returns their records in repeat order.
pub fn run(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<Vec<CycleRecord>> {
    cfg.validate()?;
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::invalid(format!(
            "train ({} features, {} classes) and test ({} features, {} classes) do not match",
            train.dim(),
            train.num_classes(),
            test.dim(),
            test.num_classes()
        )));
    }
    let per_repeat: Vec<Vec<CycleRecord>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_repeat(cfg, train, test, r))
        .collect::<Result<_>>()?;
    Ok(per_repeat.into_iter().flatten().collect())
}

/// Mean and spread of test accuracy over repeats for one (strategy, cycle).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub cycle: usize,
    pub labeled: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 when there is a single repeat.
    pub std: f64,
    pub repeats: usize,
    /// Set when `std` is reported as 0 only because there was one repeat.
    pub single_repeat: bool,
}

/// Mean and standard deviation of `values`, `n - 1` in the denominator.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty group"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Groups records by (strategy, cycle); strategies keep first-appearance order.
pub fn summarize(records: &[CycleRecord]) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to summarize"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let s = match order.iter().position(|s| *s == r.strategy) {
            Some(p) => p,
            None => {
                order.push(r.strategy.clone());
                order.len() - 1
            }
        };
        let entry = groups.entry((s, r.cycle)).or_insert_with(|| (Vec::new(), r.labeled));
        entry.0.push(r.test_accuracy);
    }
    groups
        .into_iter()
        .map(|((s, cycle), (accs, labeled))| {
            let (mean, std) = mean_std(&accs)?;
            Ok(CurvePoint {
                strategy: order[s].clone(),
                cycle,
                labeled,
                mean,
                std,
                repeats: accs.len(),
                single_repeat: accs.len() == 1,
            })
        })
        .collect()
}

/// Wide table: one row per cycle, mean and std columns per strategy.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut strategies: Vec<&str> = Vec::new();
    for p in points {
        if !strategies.contains(&p.strategy.as_str()) {
            strategies.push(&p.strategy);
        }
    }
    let mut cycles: Vec<usize> = points.iter().map(|p| p.cycle).collect();
    cycles.sort_unstable();
    cycles.dedup();
    let mut out = String::from("cycle");
    for s in &strategies {
        out.push_str(&format!(",{s}_labeled,{s}_mean,{s}_std"));
    }
    out.push('\n');
    for c in cycles {
        out.push_str(&c.to_string());
        for s in &strategies {
            match points.iter().find(|p| p.cycle == c && p.strategy == *s) {
                Some(p) => out.push_str(&format!(",{},{},{}", p.labeled, p.mean, p.std)),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// One JSON object per line.
pub fn records_jsonl(records: &[CycleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn timings_csv(records: &[CycleRecord]) -> String {
    let mut out = String::from("strategy,repeat,cycle,acquisition_ms\n");
    for r in records {
        out.push_str(&format!("{},{},{},{:.3}\n", r.strategy, r.repeat, r.cycle, r.acquisition_ms));
    }
    out
}
