//! Training loops: embedding pretraining, classifier training through a
//! random trunk, the end-to-end baseline, evaluation and model selection
//! at the best validation epoch.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GraphDataset, GraphTargets, NodeDataset};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Split};
use crate::matrix::DenseMatrix;
use crate::metrics::{self, MetricKind};
use crate::model::{EmbeddingKind, Inputs, Model, ModelConfig, Phase, Prepared, Targets};
use crate::params::{AdamState, Gradients, ParamId, ParamSet};
use crate::rng::{Domain, SeedStream};

/// Source of wall-clock readings for the history.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
}

/// A clock that always reads zero, keeping histories reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub metric: MetricKind,
    pub records: Vec<EpochRecord>,
}

/// Metrics at the selected epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: MetricKind,
    /// Epoch whose parameters were kept (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub history: History,
    pub report: Report,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Pretraining of `c_pre ∘ f_pre`; its report is the
    /// pretrained-embedding baseline.
    pub pretrain: Option<PhaseResult>,
    pub main: PhaseResult,
}

/// A pretrained embedding to plug into a new model.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbedding {
    pub kind: EmbeddingKind,
    pub params: ParamSet,
}

impl PretrainedEmbedding {
    /// Extracts `φ` from a trained model.
    pub fn from_model(model: &Model) -> Result<Self> {
        let kind = model.config.embedding.clone();
        if !kind.needs_pretraining() {
            return Err(Error::Config(format!("`{}` embeddings are not pretrained", kind)));
        }
        let mut params = ParamSet::new();
        for id in model.embedding_params() {
            params.add(model.params.name(id), model.params.get(id).clone());
        }
        Ok(Self { kind, params })
    }
}

/// Builds the model, pretrains or loads its embedding as configured, then
/// runs the main phase.
pub fn fit(
    config: &ModelConfig,
    data: &Dataset,
    pretrained: Option<&PretrainedEmbedding>,
    clock: &mut dyn Clock,
) -> Result<TrainOutcome> {
    data.validate()?;
    if config.task != data.task() {
        return Err(Error::Config(format!(
            "config task `{}` does not match dataset task `{}`",
            config.task,
            data.task()
        )));
    }
    let mut model = Model::new(config.clone(), data.feature_dim(), data.out_dim())?;
    let mut pretrain = None;
    match (&config.embedding, pretrained) {
        (EmbeddingKind::Pretrained(path), None) => {
            return Err(Error::Config(format!("pretrained embedding `{}` was not supplied", path)));
        }
        (EmbeddingKind::Pretrained(_), Some(p)) => model.load_embedding(&p.kind, &p.params)?,
        (kind, _) if kind.needs_pretraining() && !config.end_to_end() => {
            pretrain = Some(pretrain_embedding(&mut model, data, clock)?);
        }
        _ => {}
    }
    let main = train_main(&mut model, data, clock)?;
    Ok(TrainOutcome { model, pretrain, main })
}

/// Trains `c_pre ∘ f_pre` on the downstream task. The head is kept in the
/// model only for the pretrained-embedding baseline.
pub fn pretrain_embedding(model: &mut Model, data: &Dataset, clock: &mut dyn Clock) -> Result<PhaseResult> {
    let epochs = model.config.epochs_pre;
    let lr = model.config.lr_pre;
    run_phase(model, data, Phase::Pretrain, epochs, lr, clock)
}

/// Classifier training through the random trunk with the embedding
/// frozen (or learnable, per config).
pub fn train_rap(model: &mut Model, data: &Dataset, clock: &mut dyn Clock) -> Result<PhaseResult> {
    if model.config.end_to_end() {
        return Err(Error::Config("train_rap needs a random or identity weight mode".into()));
    }
    train_main(model, data, clock)
}

/// Full backpropagation through embedding, learned trunk and classifier.
pub fn train_end_to_end(model: &mut Model, data: &Dataset, clock: &mut dyn Clock) -> Result<PhaseResult> {
    if !model.config.end_to_end() {
        return Err(Error::Config("end-to-end training needs the learned weight mode".into()));
    }
    train_main(model, data, clock)
}

fn train_main(model: &mut Model, data: &Dataset, clock: &mut dyn Clock) -> Result<PhaseResult> {
    let epochs = model.config.epochs;
    let lr = model.config.lr;
    run_phase(model, data, Phase::Main, epochs, lr, clock)
}

/// Metric of the evaluation-mode model on `split`.
pub fn evaluate(model: &mut Model, data: &Dataset, split: Split) -> Result<f64> {
    let metric = model.config.metric();
    match data {
        Dataset::Node(d) => {
            let rows = node_rows(d, split)?;
            let prep = Prepared::node(&d.graph, model.config.backbone);
            let out = model.predict(&prep.inputs())?;
            score(metric, &out, &rows, Labels::Class(&d.graph.labels))
        }
        Dataset::Graphs(d) => {
            let idx = d.indices(split);
            if idx.is_empty() {
                return Err(Error::Invalid(format!("split {:?} is empty", split)));
            }
            let set = GraphSplit::new(d, &idx, model)?;
            let out = model.predict(&set.prep.inputs())?;
            set.score(metric, &out)
        }
    }
}

enum Labels<'a> {
    Class(&'a [usize]),
    Value(&'a [f64]),
}

fn score(metric: MetricKind, out: &DenseMatrix, rows: &[usize], labels: Labels<'_>) -> Result<f64> {
    match (metric, labels) {
        (MetricKind::Accuracy, Labels::Class(l)) => metrics::accuracy(out, rows, l),
        (MetricKind::RocAuc, Labels::Class(l)) => {
            let scores = metrics::binary_scores(out, rows)?;
            let pos: Vec<bool> = rows.iter().map(|&r| l[r] == 1).collect();
            metrics::roc_auc(&scores, &pos)
        }
        (MetricKind::Rmse, Labels::Value(t)) => {
            let pred: Vec<f64> = (0..out.rows()).map(|r| out.get(r, 0)).collect();
            metrics::rmse(&pred, t, rows)
        }
        (m, _) => Err(Error::Config(format!("metric `{}` does not fit this task", m))),
    }
}

fn node_rows(d: &NodeDataset, split: Split) -> Result<Vec<usize>> {
    let masks = d
        .graph
        .masks
        .as_ref()
        .ok_or_else(|| Error::Invalid("node dataset has no split masks".into()))?;
    let rows = masks.indices(split);
    if rows.is_empty() {
        return Err(Error::Invalid(format!("split {:?} is empty", split)));
    }
    Ok(rows)
}

/// A fixed set of graphs batched once, with targets reindexed to rows.
struct GraphSplit {
    prep: Prepared,
    class: Vec<usize>,
    value: Vec<f64>,
    rows: Vec<usize>,
}

impl GraphSplit {
    fn new(d: &GraphDataset, idx: &[usize], model: &Model) -> Result<Self> {
        let graphs: Vec<_> = idx.iter().map(|&i| &d.graphs[i]).collect();
        let batch = batch_graphs(&graphs)?;
        let prep = Prepared::batch(&batch.graph, model.config.backbone, batch.assignment, batch.sizes);
        let (class, value) = match &d.targets {
            GraphTargets::Class(t) => (idx.iter().map(|&i| t[i]).collect(), Vec::new()),
            GraphTargets::Value(t) => (Vec::new(), idx.iter().map(|&i| t[i]).collect()),
        };
        Ok(Self { prep, class, value, rows: (0..idx.len()).collect() })
    }

    fn targets(&self) -> Targets {
        if self.value.is_empty() {
            Targets::Class(self.class.iter().copied().enumerate().collect())
        } else {
            Targets::Value(self.value.iter().copied().enumerate().collect())
        }
    }

    fn score(&self, metric: MetricKind, out: &DenseMatrix) -> Result<f64> {
        if self.value.is_empty() {
            score(metric, out, &self.rows, Labels::Class(&self.class))
        } else {
            score(metric, out, &self.rows, Labels::Value(&self.value))
        }
    }
}

fn predict_phase(model: &mut Model, inp: &Inputs<'_>, phase: Phase) -> Result<DenseMatrix> {
    match phase {
        Phase::Pretrain => model.predict_pretrain(inp),
        Phase::Main => model.predict(inp),
    }
}

fn keep_trainable(grads: Gradients, trainable: &BTreeSet<ParamId>) -> Result<Gradients> {
    if let Some(stray) = grads.keys().find(|id| !trainable.contains(id)) {
        return Err(Error::Invalid(format!("gradient reached frozen parameter {:?}", stray)));
    }
    Ok(grads)
}

fn diverged(epoch: usize, what: &str) -> Error {
    Error::Diverged { epoch, reason: format!("non-finite {}", what) }
}

/// Per-epoch evaluation and best-epoch bookkeeping shared by both tasks.
struct Selector {
    metric: MetricKind,
    records: Vec<EpochRecord>,
    best: Option<(usize, f64)>,
    snapshot: Vec<(ParamId, DenseMatrix)>,
    patience: Option<usize>,
}

impl Selector {
    /// Records an epoch; returns `true` when training should stop.
    fn record(&mut self, rec: EpochRecord, model: &Model, trainable: &[ParamId]) -> bool {
        let key = rec.val_metric.unwrap_or(if self.metric.higher_is_better() {
            -rec.train_loss
        } else {
            rec.train_loss
        });
        let improved = match self.best {
            None => true,
            Some((_, b)) => self.metric.better(key, b),
        };
        let epoch = rec.epoch;
        self.records.push(rec);
        if improved {
            self.best = Some((epoch, key));
            self.snapshot = trainable.iter().map(|&id| (id, model.params.get(id).clone())).collect();
            return false;
        }
        match (self.patience, self.best) {
            (Some(p), Some((b, _))) => epoch - b >= p,
            _ => false,
        }
    }

    fn finish(self, model: &mut Model) -> PhaseResult {
        for (id, v) in self.snapshot {
            *model.params.get_mut(id) = v;
        }
        let best = self.best.map(|(e, _)| e);
        let at = best.and_then(|e| self.records.iter().find(|r| r.epoch == e));
        let report = Report {
            metric: self.metric,
            best_epoch: best,
            train: at.map(|r| r.train_metric),
            val: at.and_then(|r| r.val_metric),
            test: at.and_then(|r| r.test_metric),
        };
        PhaseResult { history: History { metric: self.metric, records: self.records }, report }
    }
}

fn run_phase(
    model: &mut Model,
    data: &Dataset,
    phase: Phase,
    epochs: usize,
    lr: f64,
    clock: &mut dyn Clock,
) -> Result<PhaseResult> {
    data.validate()?;
    let trainable = model.trainable(phase);
    let trainable_set: BTreeSet<ParamId> = trainable.iter().copied().collect();
    let mut adam = AdamState::new(lr);
    let mut sel = Selector {
        metric: model.config.metric(),
        records: Vec::with_capacity(epochs),
        best: None,
        snapshot: Vec::new(),
        patience: model.config.patience,
    };
    let start = clock.now_ms();
    match data {
        Dataset::Node(d) => {
            let prep = Prepared::node(&d.graph, model.config.backbone);
            let train_rows = node_rows(d, Split::Train)?;
            let val_rows = node_rows(d, Split::Val).ok();
            let test_rows = node_rows(d, Split::Test).ok();
            let targets = Targets::Class(train_rows.iter().map(|&r| (r, d.graph.labels[r])).collect());
            // A frozen embedding gives the same trunk input every epoch.
            let cache = if phase == Phase::Main && model.embedding_is_static() {
                Some(model.embed(&prep.inputs(), false)?)
            } else {
                None
            };
            let mut inp = prep.inputs();
            inp.h0 = cache.as_ref();
            for epoch in 0..epochs {
                model.begin_epoch(epoch as u64);
                let (loss, grads) = model.loss_and_grads(&inp, &targets, phase, true).map_err(|e| match e {
                    Error::NonFinite(what) => diverged(epoch, what),
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, "training loss"));
                }
                adam.step(&mut model.params, &keep_trainable(grads, &trainable_set)?)?;
                let out = predict_phase(model, &inp, phase).map_err(|e| match e {
                    Error::NonFinite(what) => diverged(epoch, what),
                    other => other,
                })?;
                let labels = || Labels::Class(&d.graph.labels);
                let metric = sel.metric;
                let rec = EpochRecord {
                    epoch,
                    train_loss: loss,
                    train_metric: score(metric, &out, &train_rows, labels())?,
                    val_metric: val_rows.as_ref().map(|r| score(metric, &out, r, labels())).transpose()?,
                    test_metric: test_rows.as_ref().map(|r| score(metric, &out, r, labels())).transpose()?,
                    wallclock_ms: clock.now_ms() - start,
                };
                if sel.record(rec, model, &trainable) {
                    break;
                }
            }
        }
        Dataset::Graphs(d) => {
            let train_idx = d.indices(Split::Train);
            let train_eval = GraphSplit::new(d, &train_idx, model)?;
            let val = non_empty(d.indices(Split::Val)).map(|i| GraphSplit::new(d, &i, model)).transpose()?;
            let test = non_empty(d.indices(Split::Test)).map(|i| GraphSplit::new(d, &i, model)).transpose()?;
            let shuffle = SeedStream::new(model.config.seed);
            for epoch in 0..epochs {
                model.begin_epoch(epoch as u64);
                let mut order = train_idx.clone();
                shuffle.substream(Domain::Shuffle, epoch as u64, 0, 0).shuffle(&mut order);
                let mut total = 0.0;
                for chunk in order.chunks(model.config.batch_size) {
                    let batch = GraphSplit::new(d, chunk, model)?;
                    let (loss, grads) = model
                        .loss_and_grads(&batch.prep.inputs(), &batch.targets(), phase, true)
                        .map_err(|e| match e {
                            Error::NonFinite(what) => diverged(epoch, what),
                            other => other,
                        })?;
                    if !loss.is_finite() {
                        return Err(diverged(epoch, "training loss"));
                    }
                    total += loss * chunk.len() as f64;
                    adam.step(&mut model.params, &keep_trainable(grads, &trainable_set)?)?;
                }
                let metric = sel.metric;
                let mut eval = |set: &GraphSplit| -> Result<f64> {
                    let out = predict_phase(model, &set.prep.inputs(), phase).map_err(|e| match e {
                        Error::NonFinite(what) => diverged(epoch, what),
                        other => other,
                    })?;
                    set.score(metric, &out)
                };
                let rec = EpochRecord {
                    epoch,
                    train_loss: total / train_idx.len() as f64,
                    train_metric: eval(&train_eval)?,
                    val_metric: val.as_ref().map(&mut eval).transpose()?,
                    test_metric: test.as_ref().map(&mut eval).transpose()?,
                    wallclock_ms: clock.now_ms() - start,
                };
                if sel.record(rec, model, &trainable) {
                    break;
                }
            }
        }
    }
    Ok(sel.finish(model))
}

fn non_empty(v: Vec<usize>) -> Option<Vec<usize>> {
    (!v.is_empty()).then_some(v)
}
