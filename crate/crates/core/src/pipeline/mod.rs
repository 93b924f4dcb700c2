//! Training orchestration: supervised runs, boosted distillation steps,
//! sequential plans and the fixed-temperature baseline.
//!
//! Everything is deterministic given the seed. Teacher logits are computed
//! once per step in eval mode and treated as constants.

mod eval;
mod report;

pub use eval::{
    accuracy, aggregate, ensemble_from_logits, ensemble_predict, evaluate, evaluate_logits, masked_accuracy,
    mean_std, Aggregation, Ensemble, Evaluation, SplitKind,
};
pub use report::{predictions_csv, write_atomic, EpochSummary, RunReport, StepSummary};

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::boosting::{init_weights, samme_r_update, weighted_label_loss, SampleWeights};
use crate::distill::{kd_loss, KdOptions, TempVariant, TemperatureConfig, TemperatureModule};
use crate::error::{BgnnError, Result};
use crate::graph::{batch_graphs, random_split, DatasetSplit, Graph, SplitMasks, SplitRatios};
use crate::models::{Architecture, GnnModel, GraphInput, ModelConfig, Task, TrainRngs};
use crate::seeding::{self, Stream};
use crate::tensor::{softmax_rows_values, AdamConfig, AdamState, Tape, Temperature, Tensor, Var};

/// Seed offset between consecutive steps of one plan, so that step seeds of
/// run `s` never collide with those of runs `s+1, s+2, …`.
pub const STEP_SEED_STRIDE: u64 = 1_000_003;

pub fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_add(STEP_SEED_STRIDE.wrapping_mul(step as u64))
}

/// A transductive node-classification dataset: one graph, labels and masks.
#[derive(Clone, Debug)]
pub struct NodeData {
    graph: Graph,
    input: GraphInput,
    labels: Vec<usize>,
    n_classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl NodeData {
    /// Needs node labels and split masks on `graph`.
    pub fn new(graph: Graph) -> Result<Self> {
        let labels = graph
            .node_labels()
            .ok_or_else(|| BgnnError::contract("node task needs node labels"))?
            .to_vec();
        let masks = graph
            .masks()
            .ok_or_else(|| BgnnError::contract("node task needs train/val/test masks"))?;
        let (train, val, test) = (
            SplitMasks::indices(&masks.train),
            SplitMasks::indices(&masks.val),
            SplitMasks::indices(&masks.test),
        );
        Ok(Self {
            input: GraphInput::from_graph(&graph),
            n_classes: graph.n_node_classes(),
            graph,
            labels,
            train,
            val,
            test,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

/// A graph-classification dataset with a seeded split.
#[derive(Clone, Debug)]
pub struct GraphData {
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    n_classes: usize,
    split: DatasetSplit,
    eval_input: GraphInput,
}

impl GraphData {
    /// Stratified split of `graphs` by `ratios` under `seed`.
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>, n_classes: usize, ratios: SplitRatios, seed: u64) -> Result<Self> {
        let split = random_split(graphs.len(), Some(&labels), ratios, seed, true)?;
        Self::with_split(graphs, labels, n_classes, split)
    }

    pub fn with_split(graphs: Vec<Graph>, labels: Vec<usize>, n_classes: usize, split: DatasetSplit) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(BgnnError::contract(format!("{} graphs, {} labels", graphs.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(BgnnError::contract(format!("graph label {bad} >= {n_classes} classes")));
        }
        let n = graphs.len();
        if split.train.iter().chain(&split.val).chain(&split.test).any(|&i| i >= n) {
            return Err(BgnnError::contract("split index out of range"));
        }
        let eval_input = GraphInput::from_batch(&batch_graphs(&graphs, &labels)?);
        Ok(Self {
            graphs,
            labels,
            n_classes,
            split,
            eval_input,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    fn batch_input(&self, ids: &[usize]) -> Result<GraphInput> {
        let graphs: Vec<Graph> = ids.iter().map(|&i| self.graphs[i].clone()).collect();
        let labels: Vec<usize> = ids.iter().map(|&i| self.labels[i]).collect();
        Ok(GraphInput::from_batch(&batch_graphs(&graphs, &labels)?))
    }
}

#[derive(Clone, Debug)]
pub enum Dataset {
    Node(NodeData),
    Graph(GraphData),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Node(_) => Task::Node,
            Dataset::Graph(_) => Task::Graph,
        }
    }

    /// Nodes for the node task, graphs for the graph task.
    pub fn n_samples(&self) -> usize {
        self.labels().len()
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            Dataset::Node(d) => &d.labels,
            Dataset::Graph(d) => &d.labels,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Dataset::Node(d) => d.n_classes,
            Dataset::Graph(d) => d.n_classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Node(d) => d.graph.feature_dim(),
            Dataset::Graph(d) => d.eval_input.features.cols(),
        }
    }

    pub fn split(&self, kind: SplitKind) -> &[usize] {
        let (train, val, test) = match self {
            Dataset::Node(d) => (&d.train, &d.val, &d.test),
            Dataset::Graph(d) => (&d.split.train, &d.split.val, &d.split.test),
        };
        match kind {
            SplitKind::Train => train,
            SplitKind::Val => val,
            SplitKind::Test => test,
        }
    }

    /// Eval-mode logits for every sample.
    pub fn eval_logits(&self, model: &GnnModel) -> Result<Tensor> {
        self.check_model(model.config())?;
        match self {
            Dataset::Node(d) => model.predict(&d.input),
            Dataset::Graph(d) => model.predict(&d.eval_input),
        }
    }

    /// A model config with this dataset's input width, class count and task.
    pub fn model_config(&self, arch: Architecture) -> ModelConfig {
        let mut cfg = ModelConfig::new(arch, self.feature_dim(), self.n_classes());
        cfg.task = self.task();
        cfg
    }

    pub fn check_model(&self, cfg: &ModelConfig) -> Result<()> {
        if cfg.task != self.task() || cfg.in_dim != self.feature_dim() || cfg.n_classes != self.n_classes() {
            return Err(BgnnError::contract(format!(
                "model ({:?}, in {}, {} classes) does not fit the data ({:?}, in {}, {} classes)",
                cfg.task,
                cfg.in_dim,
                cfg.n_classes,
                self.task(),
                self.feature_dim(),
                self.n_classes()
            )));
        }
        Ok(())
    }
}

/// Optimization settings shared by every step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Graphs per mini-batch (graph task only; the node task is full-batch).
    pub batch_size: usize,
}

impl TrainHyper {
    /// 300 epochs for nodes, 200 for graphs; lr 0.01, weight decay 5e-4.
    pub fn for_task(task: Task) -> Self {
        Self {
            epochs: match task {
                Task::Node => 300,
                Task::Graph => 200,
            },
            adam: AdamConfig::default(),
            batch_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(a.weight_decay >= 0.0) || self.batch_size == 0 {
            return Err(BgnnError::Config(format!(
                "invalid hyperparameters: lr {}, weight decay {}, batch size {}",
                a.lr, a.weight_decay, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Which samples the distillation term covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdScope {
    /// Every node for the node task, training graphs for the graph task.
    #[default]
    Auto,
    All,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub lambda: f64,
    pub boosting: bool,
    pub adaptive: bool,
    pub temperature: TemperatureConfig,
    /// Temperature used when `adaptive` is off.
    pub fixed_tau: f64,
    /// Overrides the entropy-only-then-concat schedule.
    pub variant: Option<TempVariant>,
    pub kd: KdOptions,
    pub scope: KdScope,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            boosting: true,
            adaptive: true,
            temperature: TemperatureConfig::default(),
            fixed_tau: 4.0,
            variant: None,
            kd: KdOptions::default(),
            scope: KdScope::Auto,
        }
    }
}

impl DistillConfig {
    /// Plain KD with a constant temperature and uniform weights.
    pub fn fixed(tau: f64, lambda: f64) -> Self {
        Self {
            lambda,
            boosting: false,
            adaptive: false,
            fixed_tau: tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(BgnnError::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !(self.fixed_tau > 0.0 && self.fixed_tau.is_finite()) {
            return Err(BgnnError::Config(format!("fixed tau {} must be positive", self.fixed_tau)));
        }
        self.temperature.validate()
    }

    /// Variant for distillation step `k` (1-based): entropy-only first,
    /// concat afterwards.
    pub fn variant_for_step(&self, k: usize) -> TempVariant {
        self.variant.unwrap_or(if k <= 1 {
            TempVariant::EntropyOnly
        } else {
            TempVariant::Concat
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training-mode objective (mean over mini-batches).
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Smallest and largest adaptive temperature emitted this epoch.
    pub tau_range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub arch: Architecture,
    pub seed: u64,
    pub per_epoch: Vec<EpochRecord>,
    /// Epoch of the returned (best-validation) parameters; `None` when no
    /// epoch ran.
    pub best_epoch: Option<usize>,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Student accuracy on the training samples the teacher got wrong.
    pub teacher_mis_acc: Option<f64>,
    pub teacher_mis_count: usize,
    pub tau_range: Option<(f64, f64)>,
    pub wall_ms: u64,
}

impl TrainMetrics {
    /// Equality of everything except wall time.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_ms = other.wall_ms;
        &a == other
    }
}

enum TempSetup {
    Fixed(f64),
    Adaptive(Box<TemperatureModule>),
}

struct KdSetup<'a> {
    teacher_logits: &'a Tensor,
    lambda: f64,
    temp: TempSetup,
    /// Per-sample membership in the KD term.
    scope: Vec<bool>,
    opts: KdOptions,
}

fn widen(range: &mut Option<(f64, f64)>, values: &[f64]) {
    for &v in values {
        *range = Some(match *range {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        });
    }
}

fn mean_ce(logits: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let p = softmax_rows_values(&logits.select_rows(idx));
    -idx.iter()
        .enumerate()
        .map(|(r, &i)| p.get(r, labels[i]).max(crate::tensor::PROB_FLOOR).ln())
        .sum::<f64>()
        / idx.len() as f64
}

fn split_acc(logits: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let pred = logits.select_rows(idx).argmax_rows();
    pred.iter().zip(idx).filter(|(p, &i)| **p == labels[i]).count() as f64 / idx.len() as f64
}

fn step_params(params: &mut [Tensor], vars: &[Var], grads: &crate::tensor::Gradients, adam: &mut AdamState) -> Result<()> {
    for (p, &v) in params.iter_mut().zip(vars) {
        p.zero_grad();
        let g = grads.get_or_zeros(v, p.len());
        p.accumulate_grad(&g)?;
    }
    let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
    adam.step(&mut refs)
}

/// Trains a fresh model; returns the best-validation parameters.
fn fit(
    config: &ModelConfig,
    data: &Dataset,
    hyper: &TrainHyper,
    seed: u64,
    weights: &SampleWeights,
    mut kd: Option<&mut KdSetup<'_>>,
) -> Result<(GnnModel, Vec<EpochRecord>, Option<usize>)> {
    hyper.validate()?;
    data.check_model(config)?;
    let labels = data.labels();
    let train = data.split(SplitKind::Train);
    let val = data.split(SplitKind::Val);
    if train.is_empty() {
        return Err(BgnnError::contract("training split is empty"));
    }
    if weights.len() != train.len() {
        return Err(BgnnError::contract(format!(
            "{} sample weights for {} training samples",
            weights.len(),
            train.len()
        )));
    }
    let n = data.n_samples();
    let mut weight_of = vec![None; n];
    for (&i, &w) in train.iter().zip(weights.as_slice()) {
        weight_of[i] = Some(w);
    }
    // graph task: samples visited by mini-batches
    let universe: Vec<usize> = (0..n)
        .filter(|&i| weight_of[i].is_some() || kd.as_deref().is_some_and(|k| k.scope[i]))
        .collect();

    let mut model = GnnModel::new(config.clone(), seed)?;
    let mut rngs = TrainRngs::new(seed);
    let mut batch_rng = seeding::rng(seed, Stream::Batches);
    let mut adam = AdamState::new(hyper.adam, &model.params().iter().collect::<Vec<_>>());
    let mut temp_adam = match kd.as_deref().map(|k| &k.temp) {
        Some(TempSetup::Adaptive(m)) => Some(AdamState::new(hyper.adam, &m.params().iter().collect::<Vec<_>>())),
        _ => None,
    };
    let mut records = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, GnnModel)> = None;

    for epoch in 1..=hyper.epochs {
        let batches: Vec<Option<Vec<usize>>> = match data {
            Dataset::Node(_) => vec![None],
            Dataset::Graph(_) => {
                let mut order = universe.clone();
                order.shuffle(&mut batch_rng);
                order.chunks(hyper.batch_size).map(|c| Some(c.to_vec())).collect()
            }
        };
        let mut loss_sum = 0.0;
        let mut epoch_tau = None;
        for rows in &batches {
            let owned;
            let input = match (data, rows) {
                (Dataset::Node(d), _) => &d.input,
                (Dataset::Graph(d), Some(ids)) => {
                    owned = d.batch_input(ids)?;
                    &owned
                }
                (Dataset::Graph(_), None) => unreachable!("graph batches always carry ids"),
            };
            let sample = |p: usize| rows.as_ref().map_or(p, |r| r[p]);
            let n_rows = rows.as_ref().map_or(n, Vec::len);

            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, input, Some(&mut rngs))?;
            let (mut pos, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for p in 0..n_rows {
                if let Some(w) = weight_of[sample(p)] {
                    pos.push(p);
                    ys.push(labels[sample(p)]);
                    ws.push(w);
                }
            }
            if rows.is_some() && !pos.is_empty() {
                // uniform weights give the batch-mean cross-entropy
                let k = train.len() as f64 / pos.len() as f64;
                ws.iter_mut().for_each(|w| *w *= k);
            }
            let mut loss = if pos.is_empty() {
                tape.constant(Tensor::scalar(0.0))
            } else {
                let lp = tape.log_softmax_rows(fwd.logits, Temperature::Scalar(1.0))?;
                weighted_label_loss(&mut tape, lp, &pos, &ys, &ws)?
            };
            let mut temp_vars = Vec::new();
            if let Some(k) = kd.as_deref_mut() {
                let selected;
                let t = match rows {
                    None => k.teacher_logits,
                    Some(r) => {
                        selected = k.teacher_logits.select_rows(r);
                        &selected
                    }
                };
                let tau = match &k.temp {
                    TempSetup::Fixed(v) => Temperature::Scalar(*v),
                    TempSetup::Adaptive(m) => {
                        let (tau, vars) = m.forward(&mut tape, t)?;
                        let cfg = m.config();
                        let values = tape.value(tau).data();
                        if let Some(bad) = values.iter().find(|v| !(cfg.tau_min..=cfg.tau_max).contains(*v)) {
                            return Err(BgnnError::Training {
                                epoch,
                                detail: format!("temperature {bad} left [{}, {}]", cfg.tau_min, cfg.tau_max),
                            });
                        }
                        widen(&mut epoch_tau, values);
                        temp_vars = vars;
                        Temperature::PerRow(tau)
                    }
                };
                let scope: Vec<usize> = (0..n_rows).filter(|&p| k.scope[sample(p)]).collect();
                let kd_term = kd_loss(&mut tape, fwd.logits, t, tau, &scope, k.opts)?;
                let weighted = tape.scale(kd_term, k.lambda);
                loss = tape.add(loss, weighted)?;
            }
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(BgnnError::Training {
                    epoch,
                    detail: format!("loss is {lv}"),
                });
            }
            loss_sum += lv;
            let grads = tape.backward(loss)?;
            model.load_gradients(&grads, &fwd)?;
            model.apply_bn_stats(&fwd.bn_batch);
            let mut refs: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            adam.step(&mut refs)?;
            if let (Some(KdSetup { temp: TempSetup::Adaptive(m), .. }), Some(ta)) = (kd.as_deref_mut(), temp_adam.as_mut()) {
                step_params(m.params_mut(), &temp_vars, &grads, ta)?;
            }
        }
        if !model.is_finite() {
            return Err(BgnnError::Training {
                epoch,
                detail: "non-finite parameters".into(),
            });
        }
        let logits = data.eval_logits(&model)?;
        let val_acc = split_acc(&logits, labels, val);
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            train_acc: split_acc(&logits, labels, train),
            val_loss: mean_ce(&logits, labels, val),
            val_acc,
            tau_range: epoch_tau,
        });
        log::debug!("epoch {epoch}: loss {:.4} val {:.4}", loss_sum / batches.len() as f64, val_acc);
        // NaN (empty validation split) never beats the first epoch
        if best.as_ref().is_none_or(|(b, _, _)| val_acc > *b) {
            let mut snapshot = model.clone();
            snapshot.params_mut().iter_mut().for_each(Tensor::zero_grad);
            best = Some((val_acc, epoch, snapshot));
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => (m, records, Some(epoch)),
        None => (model, records, None),
    })
}

fn finish_metrics(
    step: usize,
    model: &GnnModel,
    data: &Dataset,
    per_epoch: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    teacher_mis: Option<&[usize]>,
    started: Instant,
) -> Result<TrainMetrics> {
    let logits = data.eval_logits(model)?;
    let labels = data.labels();
    let tau_range = per_epoch.iter().fold(None, |acc, r| {
        let mut acc = acc;
        if let Some((lo, hi)) = r.tau_range {
            widen(&mut acc, &[lo, hi]);
        }
        acc
    });
    let (teacher_mis_acc, teacher_mis_count) = match teacher_mis {
        Some(idx) if !idx.is_empty() => (Some(split_acc(&logits, labels, idx)), idx.len()),
        _ => (None, 0),
    };
    Ok(TrainMetrics {
        step,
        arch: model.config().arch,
        seed: model.seed(),
        per_epoch,
        best_epoch,
        train_acc: split_acc(&logits, labels, data.split(SplitKind::Train)),
        val_acc: split_acc(&logits, labels, data.split(SplitKind::Val)),
        test_acc: split_acc(&logits, labels, data.split(SplitKind::Test)),
        teacher_mis_acc,
        teacher_mis_count,
        tau_range,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Cross-entropy training on the training split.
pub fn train_supervised(
    config: &ModelConfig,
    data: &Dataset,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(GnnModel, TrainMetrics)> {
    let started = Instant::now();
    let weights = init_weights(data.split(SplitKind::Train).len())?;
    let (model, per_epoch, best) = fit(config, data, hyper, seed, &weights, None)?;
    let metrics = finish_metrics(0, &model, data, per_epoch, best, None, started)?;
    Ok((model, metrics))
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub model: GnnModel,
    pub weights: SampleWeights,
    pub metrics: TrainMetrics,
    /// Final state of the jointly trained temperature module.
    pub temperature: Option<TemperatureModule>,
}

/// One distillation step: re-weight the training samples with the frozen
/// teacher's predictions (if boosting), then train a fresh student on the
/// weighted label loss plus `λ` times the KD loss.
#[allow(clippy::too_many_arguments)]
pub fn train_bgnn_step(
    teacher: &GnnModel,
    config: &ModelConfig,
    data: &Dataset,
    weights: &SampleWeights,
    distill: &DistillConfig,
    hyper: &TrainHyper,
    seed: u64,
    step: usize,
) -> Result<StepOutput> {
    let started = Instant::now();
    distill.validate()?;
    if teacher.config().n_classes != data.n_classes() || config.n_classes != data.n_classes() {
        return Err(BgnnError::contract(format!(
            "teacher has {} classes, student {}, data {}",
            teacher.config().n_classes,
            config.n_classes,
            data.n_classes()
        )));
    }
    let teacher_logits = data.eval_logits(teacher)?;
    let labels = data.labels();
    let train = data.split(SplitKind::Train);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let teacher_train = teacher_logits.select_rows(train);
    let weights = if distill.boosting {
        let probs = softmax_rows_values(&teacher_train);
        samme_r_update(weights, &probs, &train_labels, data.n_classes())?
    } else {
        weights.clone()
    };
    let teacher_pred = teacher_train.argmax_rows();
    let mis: Vec<usize> = train
        .iter()
        .zip(&teacher_pred)
        .filter(|(&i, &p)| p != labels[i])
        .map(|(&i, _)| i)
        .collect();

    let n = data.n_samples();
    let scope = match (distill.scope, data.task()) {
        (KdScope::All, _) | (KdScope::Auto, Task::Node) => vec![true; n],
        (KdScope::Train, _) | (KdScope::Auto, Task::Graph) => {
            let mut s = vec![false; n];
            train.iter().for_each(|&i| s[i] = true);
            s
        }
    };
    let temp = if distill.adaptive {
        let mut rng = seeding::rng(seed, Stream::Temperature);
        TempSetup::Adaptive(Box::new(TemperatureModule::new(
            distill.variant_for_step(step),
            data.n_classes(),
            distill.temperature,
            &mut rng,
        )?))
    } else {
        TempSetup::Fixed(distill.fixed_tau)
    };
    let mut kd = KdSetup {
        teacher_logits: &teacher_logits,
        lambda: distill.lambda,
        temp,
        scope,
        opts: distill.kd,
    };
    let (model, per_epoch, best) = fit(config, data, hyper, seed, &weights, Some(&mut kd))?;
    let temperature = match kd.temp {
        TempSetup::Adaptive(m) => Some(*m),
        TempSetup::Fixed(_) => None,
    };
    let metrics = finish_metrics(step, &model, data, per_epoch, best, Some(&mis), started)?;
    Ok(StepOutput {
        model,
        weights,
        metrics,
        temperature,
    })
}

/// Constant-temperature KD with uniform weights and no boosting.
pub fn fixed_kd_step(
    teacher: &GnnModel,
    config: &ModelConfig,
    data: &Dataset,
    tau: f64,
    lambda: f64,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<StepOutput> {
    if !(tau > 0.0) {
        return Err(BgnnError::Config(format!("fixed tau {tau} must be positive")));
    }
    let weights = init_weights(data.split(SplitKind::Train).len())?;
    train_bgnn_step(teacher, config, data, &weights, &DistillConfig::fixed(tau, lambda), hyper, seed, 1)
}

/// Teacher trained supervised with seed `s`, student distilled at constant
/// `tau`, for every seed.
pub fn run_fixed_kd_baseline(
    teacher: &ModelConfig,
    student: &ModelConfig,
    data: &Dataset,
    tau: f64,
    lambda: f64,
    hyper: &TrainHyper,
    seeds: &[u64],
) -> Result<Vec<TrainMetrics>> {
    seeds
        .iter()
        .map(|&s| {
            let (t, _) = train_supervised(teacher, data, hyper, s)?;
            Ok(fixed_kd_step(&t, student, data, tau, lambda, hyper, step_seed(s, 1))?.metrics)
        })
        .collect()
}

/// Ordered models (teachers first, final student last) plus settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub models: Vec<ModelConfig>,
    pub hyper: TrainHyper,
    pub distill: DistillConfig,
    pub seed: u64,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(BgnnError::Config("a plan needs at least one model".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        self.hyper.validate()?;
        self.distill.validate()
    }

    /// `gat>gcn`-style label.
    pub fn label(&self) -> String {
        self.models
            .iter()
            .map(|m| m.arch.to_string())
            .collect::<Vec<_>>()
            .join(">")
    }
}

#[derive(Clone, Debug)]
pub struct SequentialRun {
    /// One model per step; the last is the final student.
    pub models: Vec<GnnModel>,
    pub metrics: Vec<TrainMetrics>,
    pub weights: SampleWeights,
}

impl SequentialRun {
    pub fn final_model(&self) -> &GnnModel {
        self.models.last().expect("plans have at least one model")
    }
}

/// Step 0 trains supervised; step `i` distills from step `i − 1`.
pub fn run_sequential(plan: &TrainPlan, data: &Dataset) -> Result<SequentialRun> {
    plan.validate()?;
    let (first, m0) = train_supervised(&plan.models[0], data, &plan.hyper, plan.seed)?;
    let mut weights = init_weights(data.split(SplitKind::Train).len())?;
    let mut models = vec![first];
    let mut metrics = vec![m0];
    for (i, cfg) in plan.models.iter().enumerate().skip(1) {
        let teacher = models.last().expect("non-empty");
        let out = train_bgnn_step(
            teacher,
            cfg,
            data,
            &weights,
            &plan.distill,
            &plan.hyper,
            step_seed(plan.seed, i),
            i,
        )?;
        log::info!(
            "step {i} ({}): val {:.4} test {:.4}",
            cfg.arch,
            out.metrics.val_acc,
            out.metrics.test_acc
        );
        weights = out.weights;
        models.push(out.model);
        metrics.push(out.metrics);
    }
    Ok(SequentialRun {
        models,
        metrics,
        weights,
    })
}
