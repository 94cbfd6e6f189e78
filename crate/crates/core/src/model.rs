//! Full network: node embedding, propagation trunk and classifier, plus
//! the configuration that selects each part.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dropout::DropoutMask;
use crate::error::{shape_err, Error, Result};
use crate::graph::{pool_rows, ReadoutKind, SparseGraph, SparseOperator};
use crate::math;
use crate::matrix::DenseMatrix;
use crate::metrics::MetricKind;
use crate::params::{glorot_uniform, Gradients, ParamId, ParamSet};
use crate::propagation::{Backbone, SamplingPolicy, Trunk, TrunkConfig, WeightMode};
use crate::rng::{Domain, SeedStream};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskKind {
    NodeClass,
    GraphClass,
    GraphRegress,
}

impl TaskKind {
    pub fn is_graph_level(&self) -> bool {
        !matches!(self, TaskKind::NodeClass)
    }

    pub fn default_metric(&self) -> MetricKind {
        match self {
            TaskKind::GraphRegress => MetricKind::Rmse,
            _ => MetricKind::Accuracy,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::NodeClass => "node-class",
            TaskKind::GraphClass => "graph-class",
            TaskKind::GraphRegress => "graph-regress",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-class" => Ok(Self::NodeClass),
            "graph-class" => Ok(Self::GraphClass),
            "graph-regress" => Ok(Self::GraphRegress),
            other => Err(Error::Config(format!("unknown task kind `{}`", other))),
        }
    }
}

impl TryFrom<String> for TaskKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskKind> for String {
    fn from(v: TaskKind) -> String {
        String::from(v.name())
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How node features become width-`d` trunk inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EmbeddingKind {
    /// `K`-layer MLP, pretrained then frozen.
    Mlp(usize),
    /// One message-passing layer, pretrained then frozen.
    Gnn1,
    /// Raw features; needs `c == d`.
    Identity,
    /// Random linear projection drawn once.
    FixedRandom,
    /// Random linear projection redrawn every forward pass.
    Random,
    /// `K`-layer MLP trained jointly with the classifier, gradients passing
    /// through the random trunk.
    Learnable(usize),
    /// A pretrained embedding read from an artifact file.
    Pretrained(String),
}

impl EmbeddingKind {
    /// Whether this embedding is trained in a separate first phase.
    pub fn needs_pretraining(&self) -> bool {
        matches!(self, EmbeddingKind::Mlp(_) | EmbeddingKind::Gnn1)
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = |k: &str| -> Result<usize> {
            match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(Error::Config(format!("embedding depth `{}` must be a positive integer", k))),
            }
        };
        match s {
            "mlp" => Ok(Self::Mlp(1)),
            "gnn1" => Ok(Self::Gnn1),
            "identity" => Ok(Self::Identity),
            "fixed-random" => Ok(Self::FixedRandom),
            "random" => Ok(Self::Random),
            "learnable" => Ok(Self::Learnable(1)),
            other => {
                if let Some(k) = other.strip_prefix("mlp:") {
                    Ok(Self::Mlp(layers(k)?))
                } else if let Some(k) = other.strip_prefix("learnable:") {
                    Ok(Self::Learnable(layers(k)?))
                } else if let Some(p) = other.strip_prefix("pretrained:") {
                    if p.is_empty() {
                        return Err(Error::Config("pretrained embedding needs a path".into()));
                    }
                    Ok(Self::Pretrained(p.into()))
                } else {
                    Err(Error::Config(format!("unknown embedding kind `{}`", other)))
                }
            }
        }
    }
}

impl TryFrom<String> for EmbeddingKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EmbeddingKind> for String {
    fn from(v: EmbeddingKind) -> String {
        v.to_string()
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingKind::Mlp(k) => write!(f, "mlp:{}", k),
            EmbeddingKind::Gnn1 => f.write_str("gnn1"),
            EmbeddingKind::Identity => f.write_str("identity"),
            EmbeddingKind::FixedRandom => f.write_str("fixed-random"),
            EmbeddingKind::Random => f.write_str("random"),
            EmbeddingKind::Learnable(k) => write!(f, "learnable:{}", k),
            EmbeddingKind::Pretrained(p) => write!(f, "pretrained:{}", p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden: usize,
    pub mode: WeightMode,
    pub policy: SamplingPolicy,
    pub embedding: EmbeddingKind,
    pub classifier_layers: usize,
    pub dropout: f64,
    /// Apply dropout inside the propagation trunk as well.
    pub trunk_dropout: bool,
    pub lr_pre: f64,
    pub lr: f64,
    pub epochs_pre: usize,
    pub epochs: usize,
    pub seed: u64,
    pub readout: ReadoutKind,
    /// Graphs per optimizer step for graph-level tasks.
    pub batch_size: usize,
    pub gin_depth: usize,
    /// Forward passes averaged per prediction.
    pub inference_draws: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Overrides the task's default metric.
    pub metric: Option<MetricKind>,
    /// Standardize each classifier input column to zero mean and unit
    /// variance over the rows of the current forward pass.
    pub classifier_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::NodeClass,
            backbone: Backbone::Gcn,
            layers: 4,
            hidden: 64,
            mode: WeightMode::OnTheFlyDiagonal,
            policy: SamplingPolicy::PerForward,
            embedding: EmbeddingKind::Mlp(1),
            classifier_layers: 1,
            dropout: 0.3,
            trunk_dropout: true,
            lr_pre: 0.005,
            lr: 0.005,
            epochs_pre: 200,
            epochs: 200,
            seed: 0,
            readout: ReadoutKind::Mean,
            batch_size: 32,
            gin_depth: 1,
            inference_draws: 1,
            patience: None,
            metric: None,
            classifier_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn metric(&self) -> MetricKind {
        self.metric.unwrap_or_else(|| self.task.default_metric())
    }

    pub fn trunk_config(&self) -> TrunkConfig {
        TrunkConfig {
            backbone: self.backbone,
            layers: self.layers,
            width: self.hidden,
            mode: self.mode,
            policy: self.policy,
            dropout: if self.trunk_dropout { self.dropout } else { 0.0 },
            gin_depth: self.gin_depth,
            activation: true,
        }
    }

    /// Whether the main phase backpropagates through the trunk.
    pub fn end_to_end(&self) -> bool {
        self.mode == WeightMode::Learned
    }

    /// Checks everything that does not depend on data.
    pub fn validate(&self) -> Result<()> {
        self.trunk_config().validate()?;
        if self.classifier_layers < 1 {
            return Err(Error::Config("classifier needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, lr) in [("lr", self.lr), ("lr-pre", self.lr_pre)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{} must be positive, got {}", name, lr)));
            }
        }
        if self.inference_draws < 1 {
            return Err(Error::Config("inference draws must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.task == TaskKind::GraphRegress && self.metric() != MetricKind::Rmse {
            return Err(Error::Config("graph regression is scored by rmse".into()));
        }
        if self.task != TaskKind::GraphRegress && self.metric() == MetricKind::Rmse {
            return Err(Error::Config("rmse applies only to regression".into()));
        }
        if self.end_to_end()
            && matches!(self.embedding, EmbeddingKind::Pretrained(_) | EmbeddingKind::Learnable(_))
        {
            return Err(Error::Config(format!(
                "embedding `{}` is for random trunks; learned trunks train their embedding jointly",
                self.embedding
            )));
        }
        Ok(())
    }

    /// Checks the config against the input width `c`.
    pub fn validate_for(&self, c: usize) -> Result<()> {
        self.validate()?;
        if self.embedding == EmbeddingKind::Identity && c != self.hidden {
            return Err(Error::Config(format!(
                "identity embedding needs feature width == hidden width, got {} != {}",
                c, self.hidden
            )));
        }
        Ok(())
    }
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

fn leaf<'g>(tape: &mut Tape<'g>, params: &'g ParamSet, id: ParamId, track: bool) -> Var {
    if track {
        tape.param(id, params.get(id))
    } else {
        tape.constant_ref(params.get(id))
    }
}

impl Dense {
    fn new(params: &mut ParamSet, seed: SeedStream, name: &str, index: u64, fan_in: usize, fan_out: usize) -> Self {
        let mut s = seed.stream(Domain::Init, index);
        let w = params.add(format!("{}.w", name), glorot_uniform(&mut s, fan_in, fan_out));
        let b = params.add(format!("{}.b", name), DenseMatrix::zeros(1, fan_out));
        Self { w, b }
    }

    fn apply(&self, params: &ParamSet, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(params.get(self.w))?.add_row_broadcast(params.get(self.b))
    }

    fn record<'g>(&self, tape: &mut Tape<'g>, params: &'g ParamSet, x: Var, track: bool) -> Result<Var> {
        let w = leaf(tape, params, self.w, track);
        let b = leaf(tape, params, self.b, track);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Debug, Clone)]
enum EmbedNet {
    Mlp(Vec<Dense>),
    Gnn1(Dense),
    Identity,
    FixedRandom(DenseMatrix),
    Random { c: usize, d: usize },
}

/// Graph structure and features for one forward pass.
#[derive(Debug, Clone)]
pub struct Inputs<'a> {
    pub features: &'a DenseMatrix,
    /// Operator of the trunk's backbone.
    pub prop: &'a SparseOperator,
    /// Operator of the single-layer GNN embedding (self plus neighbors).
    pub embed_op: &'a SparseOperator,
    /// Node-to-graph assignment and graph sizes for graph-level tasks.
    pub pool: Option<(&'a [usize], &'a [usize])>,
    /// Precomputed frozen embedding output, reused across epochs.
    pub h0: Option<&'a DenseMatrix>,
}

/// Owned operators for a graph, borrowed by [`Inputs`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: DenseMatrix,
    pub prop: SparseOperator,
    pub embed_op: SparseOperator,
    pub assignment: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
}

impl Prepared {
    pub fn node(g: &SparseGraph, backbone: Backbone) -> Self {
        Self::build(g, backbone, None, None)
    }

    pub fn batch(g: &SparseGraph, backbone: Backbone, assignment: Vec<usize>, sizes: Vec<usize>) -> Self {
        Self::build(g, backbone, Some(assignment), Some(sizes))
    }

    fn build(g: &SparseGraph, backbone: Backbone, assignment: Option<Vec<usize>>, sizes: Option<Vec<usize>>) -> Self {
        let prop = backbone.operator(g);
        let embed_op = match backbone {
            Backbone::Gcn => prop.plus_identity(),
            Backbone::Gin => prop.clone(),
        };
        Self { features: g.features.clone(), prop, embed_op, assignment, sizes }
    }

    pub fn inputs(&self) -> Inputs<'_> {
        Inputs {
            features: &self.features,
            prop: &self.prop,
            embed_op: &self.embed_op,
            pool: match (&self.assignment, &self.sizes) {
                (Some(a), Some(s)) => Some((a.as_slice(), s.as_slice())),
                _ => None,
            },
            h0: None,
        }
    }
}

/// Supervision for one loss evaluation: row of the output and its target.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Class(Vec<(usize, usize)>),
    Value(Vec<(usize, f64)>),
}

/// Which part of the network a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Embedding plus a linear head, trunk bypassed.
    Pretrain,
    /// Classifier (and embedding/trunk when the config makes them trainable).
    Main,
}

/// The three-part network with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    seed: SeedStream,
    in_dim: usize,
    out_dim: usize,
    embed: EmbedNet,
    pre_head: Option<Dense>,
    trunk: Trunk,
    classifier: Vec<Dense>,
    epoch: u64,
    step: u64,
    embed_draws: u64,
}

const TAG_EMBED: u64 = 0;
const TAG_CLASSIFIER: u64 = 1000;

impl Model {
    /// Builds a model for `in_dim` input features and `out_dim` outputs.
    /// Pretrained embeddings are loaded afterwards with
    /// [`Model::load_embedding`].
    pub fn new(config: ModelConfig, in_dim: usize, out_dim: usize) -> Result<Self> {
        config.validate_for(in_dim)?;
        if out_dim < 1 {
            return Err(Error::Config("model needs at least one output".into()));
        }
        let seed = SeedStream::new(config.seed);
        let d = config.hidden;
        let mut params = ParamSet::new();
        let mut next = 0u64;
        let mut init = |params: &mut ParamSet, name: &str, i: usize, o: usize| {
            next += 1;
            Dense::new(params, seed, name, next, i, o)
        };
        let embed = match &config.embedding {
            EmbeddingKind::Mlp(k) | EmbeddingKind::Learnable(k) => EmbedNet::Mlp(
                (0..*k)
                    .map(|l| init(&mut params, &format!("embed.{}", l), if l == 0 { in_dim } else { d }, d))
                    .collect(),
            ),
            EmbeddingKind::Gnn1 => EmbedNet::Gnn1(init(&mut params, "embed.0", in_dim, d)),
            // Shape is fixed once the artifact is loaded; until then an MLP
            // placeholder of depth 1.
            EmbeddingKind::Pretrained(_) => EmbedNet::Mlp(alloc::vec![init(&mut params, "embed.0", in_dim, d)]),
            EmbeddingKind::Identity => EmbedNet::Identity,
            EmbeddingKind::FixedRandom => {
                let mut s = seed.stream(Domain::Embedding, u64::MAX);
                EmbedNet::FixedRandom(glorot_uniform(&mut s, in_dim, d))
            }
            EmbeddingKind::Random => EmbedNet::Random { c: in_dim, d },
        };
        let pre_head = config
            .embedding
            .needs_pretraining()
            .then(|| init(&mut params, "pre_head", d, out_dim));
        let trunk = Trunk::new(config.trunk_config(), seed, &mut params)?;
        let classifier = (0..config.classifier_layers)
            .map(|l| {
                let o = if l + 1 == config.classifier_layers { out_dim } else { d };
                init(&mut params, &format!("classifier.{}", l), d, o)
            })
            .collect();
        Ok(Self {
            config,
            params,
            seed,
            in_dim,
            out_dim,
            embed,
            pre_head,
            trunk,
            classifier,
            epoch: 0,
            step: 0,
            embed_draws: 0,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Trunk {
        &mut self.trunk
    }

    /// Starts epoch `e` for the trunk's draws and every dropout stream.
    pub fn begin_epoch(&mut self, e: u64) {
        self.epoch = e;
        self.step = 0;
        self.trunk.begin_epoch(e);
    }

    /// Parameters of the embedding `φ`.
    pub fn embedding_params(&self) -> Vec<ParamId> {
        match &self.embed {
            EmbedNet::Mlp(layers) => layers.iter().flat_map(Dense::ids).collect(),
            EmbedNet::Gnn1(layer) => layer.ids().to_vec(),
            _ => Vec::new(),
        }
    }

    /// Architecture of the embedding in use; for a loaded embedding this is
    /// the kind it was loaded as.
    pub fn embedding_kind(&self) -> EmbeddingKind {
        match (&self.config.embedding, &self.embed) {
            (EmbeddingKind::Pretrained(_), EmbedNet::Mlp(layers)) => EmbeddingKind::Mlp(layers.len()),
            (EmbeddingKind::Pretrained(_), EmbedNet::Gnn1(_)) => EmbeddingKind::Gnn1,
            (kind, _) => kind.clone(),
        }
    }

    /// Parameters of the classifier `θ`.
    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier.iter().flat_map(Dense::ids).collect()
    }

    pub fn pretrain_head_params(&self) -> Vec<ParamId> {
        self.pre_head.iter().flat_map(Dense::ids).collect()
    }

    pub fn trunk_params(&self) -> Vec<ParamId> {
        self.trunk.learned_params().collect()
    }

    /// Parameters updated by a step in `phase`.
    pub fn trainable(&self, phase: Phase) -> Vec<ParamId> {
        match phase {
            Phase::Pretrain => {
                let mut ids = self.embedding_params();
                ids.extend(self.pretrain_head_params());
                ids
            }
            Phase::Main => {
                let mut ids = Vec::new();
                if self.embedding_trained_in_main() {
                    ids.extend(self.embedding_params());
                }
                ids.extend(self.trunk_params());
                ids.extend(self.classifier_params());
                ids
            }
        }
    }

    fn embedding_trained_in_main(&self) -> bool {
        matches!(self.config.embedding, EmbeddingKind::Learnable(_))
            || (self.config.end_to_end() && !self.embedding_params().is_empty())
    }

    /// Whether the embedding output is fixed once training starts, so it
    /// can be computed once and reused.
    pub fn embedding_is_static(&self) -> bool {
        !self.embedding_trained_in_main() && !matches!(self.embed, EmbedNet::Random { .. })
    }

    /// Copies embedding tensors (`embed.*`) from `source`, replacing the
    /// embedding architecture with the one they describe.
    pub fn load_embedding(&mut self, kind: &EmbeddingKind, source: &ParamSet) -> Result<()> {
        let d = self.config.hidden;
        let mut copy = |name: &str, rows: usize, cols: usize| -> Result<ParamId> {
            let id = source
                .find(name)
                .ok_or_else(|| Error::Config(format!("artifact lacks tensor `{}`", name)))?;
            let v = source.get(id);
            if v.shape() != (rows, cols) {
                return Err(shape_err!(
                    "tensor `{}` is {}x{}, expected {}x{}",
                    name,
                    v.rows(),
                    v.cols(),
                    rows,
                    cols
                ));
            }
            Ok(match self.params.find(name) {
                Some(own) if self.params.get(own).shape() == (rows, cols) => {
                    *self.params.get_mut(own) = v.clone();
                    own
                }
                _ => self.params.add(name, v.clone()),
            })
        };
        let embed = match kind {
            EmbeddingKind::Mlp(k) => {
                let mut layers = Vec::with_capacity(*k);
                for l in 0..*k {
                    let i = if l == 0 { self.in_dim } else { d };
                    let w = copy(&format!("embed.{}.w", l), i, d)?;
                    let b = copy(&format!("embed.{}.b", l), 1, d)?;
                    layers.push(Dense { w, b });
                }
                EmbedNet::Mlp(layers)
            }
            EmbeddingKind::Gnn1 => {
                let w = copy("embed.0.w", self.in_dim, d)?;
                let b = copy("embed.0.b", 1, d)?;
                EmbedNet::Gnn1(Dense { w, b })
            }
            other => {
                return Err(Error::Config(format!("`{}` embeddings are not loadable", other)));
            }
        };
        self.embed = embed;
        Ok(())
    }

    fn dropout_mask(&self, tag: u64, rows: usize, cols: usize) -> Option<DropoutMask> {
        (self.config.dropout > 0.0).then(|| {
            let mut s = self.seed.substream(Domain::Dropout, self.epoch, self.step, tag);
            DropoutMask::sample(&mut s, rows, cols, self.config.dropout)
        })
    }

    fn random_projection(&mut self, c: usize, d: usize) -> DenseMatrix {
        let mut s = self.seed.substream(Domain::Embedding, self.epoch, self.embed_draws, 0);
        self.embed_draws += 1;
        glorot_uniform(&mut s, c, d)
    }

    /// Embedding output without gradient tracking.
    pub fn embed(&mut self, inp: &Inputs<'_>, train: bool) -> Result<DenseMatrix> {
        let params = core::mem::take(&mut self.params);
        let out = self.embed_with(&params, inp, train);
        self.params = params;
        out
    }

    fn embed_with(&mut self, params: &ParamSet, inp: &Inputs<'_>, train: bool) -> Result<DenseMatrix> {
        if inp.features.cols() != self.in_dim {
            return Err(shape_err!(
                "model expects {} input features, got {}",
                self.in_dim,
                inp.features.cols()
            ));
        }
        let h = match &self.embed {
            EmbedNet::Mlp(layers) => {
                let mut h = Cow::Borrowed(inp.features);
                for (l, layer) in layers.iter().enumerate() {
                    let mut z = layer.apply(params, &h)?.relu();
                    if train {
                        if let Some(m) = self.dropout_mask(TAG_EMBED + l as u64, z.rows(), z.cols()) {
                            m.apply_in_place(&mut z)?;
                        }
                    }
                    h = Cow::Owned(z);
                }
                h.into_owned()
            }
            EmbedNet::Gnn1(layer) => {
                let mut z = layer.apply(params, &inp.embed_op.spmm(inp.features)?)?.relu();
                if train {
                    if let Some(m) = self.dropout_mask(TAG_EMBED, z.rows(), z.cols()) {
                        m.apply_in_place(&mut z)?;
                    }
                }
                z
            }
            EmbedNet::Identity => inp.features.clone(),
            EmbedNet::FixedRandom(r) => inp.features.matmul(r)?,
            &EmbedNet::Random { c, d } => {
                let r = self.random_projection(c, d);
                inp.features.matmul(&r)?
            }
        };
        h.ensure_finite("embedding")
    }

    fn embed_tape<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        params: &'g ParamSet,
        inp: &Inputs<'g>,
        track: bool,
        train: bool,
    ) -> Result<Var> {
        match &self.embed {
            EmbedNet::Mlp(layers) => {
                let mut h = tape.constant_ref(inp.features);
                for (l, layer) in layers.iter().enumerate() {
                    let z = layer.record(tape, params, h, track)?;
                    h = tape.relu(z);
                    if train {
                        let (r, c) = tape.value(h).shape();
                        if let Some(m) = self.dropout_mask(TAG_EMBED + l as u64, r, c) {
                            h = tape.dropout(h, m)?;
                        }
                    }
                }
                Ok(h)
            }
            EmbedNet::Gnn1(layer) => {
                let x = tape.constant_ref(inp.features);
                let agg = tape.spmm(inp.embed_op, x)?;
                let z = layer.record(tape, params, agg, track)?;
                let mut h = tape.relu(z);
                if train {
                    let (r, c) = tape.value(h).shape();
                    if let Some(m) = self.dropout_mask(TAG_EMBED, r, c) {
                        h = tape.dropout(h, m)?;
                    }
                }
                Ok(h)
            }
            _ => {
                let h = self.embed_with(params, inp, train)?;
                Ok(tape.constant(h))
            }
        }
    }

    fn pool(&self, h: &DenseMatrix, inp: &Inputs<'_>) -> Result<Option<DenseMatrix>> {
        match inp.pool {
            Some((assignment, sizes)) => Ok(Some(pool_rows(assignment, sizes, h, self.config.readout)?)),
            None => Ok(None),
        }
    }

    fn classify(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        let mut h = Cow::Borrowed(h);
        if self.config.classifier_norm {
            h = Cow::Owned(h.standardize_columns().0);
        }
        let last = self.classifier.len() - 1;
        for (l, layer) in self.classifier.iter().enumerate() {
            let z = layer.apply(&self.params, &h)?;
            h = Cow::Owned(if l == last { z } else { z.relu() });
        }
        h.into_owned().ensure_finite("classifier output")
    }

    fn classify_tape<'g>(
        &self,
        tape: &mut Tape<'g>,
        params: &'g ParamSet,
        mut h: Var,
        train: bool,
    ) -> Result<Var> {
        if self.config.classifier_norm {
            h = tape.standardize(h);
        }
        let last = self.classifier.len() - 1;
        for (l, layer) in self.classifier.iter().enumerate() {
            h = layer.record(tape, params, h, true)?;
            if l != last {
                h = tape.relu(h);
                if train {
                    let (r, c) = tape.value(h).shape();
                    if let Some(m) = self.dropout_mask(TAG_CLASSIFIER + l as u64, r, c) {
                        h = tape.dropout(h, m)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Trunk input: the cached embedding when supplied, else computed.
    fn trunk_input<'a>(&mut self, params: &ParamSet, inp: &Inputs<'a>, train: bool) -> Result<Cow<'a, DenseMatrix>> {
        match inp.h0 {
            Some(h0) => Ok(Cow::Borrowed(h0)),
            None => self.embed_with(params, inp, train).map(Cow::Owned),
        }
    }

    /// Evaluation-mode outputs (dropout off, trunk weights drawn as in
    /// training), averaged over `inference_draws` forward passes. Rows are
    /// nodes, or graphs when `inp.pool` is set.
    pub fn predict(&mut self, inp: &Inputs<'_>) -> Result<DenseMatrix> {
        let draws = self.config.inference_draws;
        let mut acc: Option<DenseMatrix> = None;
        for _ in 0..draws {
            let out = self.forward_once(inp)?;
            match acc.as_mut() {
                Some(a) => a.axpy(1.0, &out)?,
                None => acc = Some(out),
            }
        }
        let acc = acc.expect("at least one draw");
        Ok(if draws == 1 { acc } else { acc.scale(1.0 / draws as f64) })
    }

    fn forward_once(&mut self, inp: &Inputs<'_>) -> Result<DenseMatrix> {
        let params = core::mem::take(&mut self.params);
        let h0 = self.trunk_input(&params, inp, false);
        self.params = params;
        let h0 = h0?;
        let Model { trunk, params, .. } = self;
        let h = trunk.forward(&h0, inp.prop, params, false, false)?.output;
        let h = match self.pool(&h, inp)? {
            Some(p) => p,
            None => h,
        };
        self.classify(&h)
    }

    /// Evaluation-mode outputs of the pretraining network `c_pre ∘ f_pre`.
    pub fn predict_pretrain(&mut self, inp: &Inputs<'_>) -> Result<DenseMatrix> {
        let head = self
            .pre_head
            .ok_or_else(|| Error::Config("this embedding has no pretraining head".into()))?;
        let h = self.embed(inp, false)?;
        let h = match self.pool(&h, inp)? {
            Some(p) => p,
            None => h,
        };
        head.apply(&self.params, &h)?.ensure_finite("pretraining output")
    }

    /// Output of every trunk layer for the evaluation-mode forward pass.
    pub fn layer_outputs(&mut self, inp: &Inputs<'_>) -> Result<Vec<DenseMatrix>> {
        let params = core::mem::take(&mut self.params);
        let h0 = self.trunk_input(&params, inp, false);
        self.params = params;
        let h0 = h0?;
        let Model { trunk, params, .. } = self;
        let out = trunk.forward(&h0, inp.prop, params, false, true)?;
        Ok(out.layers.unwrap_or_default())
    }

    /// Loss on `targets` and gradients for the parameters `phase` trains.
    /// Advances the dropout and trunk counters.
    pub fn loss_and_grads(
        &mut self,
        inp: &Inputs<'_>,
        targets: &Targets,
        phase: Phase,
        train: bool,
    ) -> Result<(f64, Gradients)> {
        let params = core::mem::take(&mut self.params);
        let result = self.loss_with(&params, inp, targets, phase, train);
        self.params = params;
        self.step += 1;
        result
    }

    fn loss_with<'g>(
        &mut self,
        params: &'g ParamSet,
        inp: &Inputs<'g>,
        targets: &Targets,
        phase: Phase,
        train: bool,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let out = match phase {
            Phase::Pretrain => {
                let head = self
                    .pre_head
                    .ok_or_else(|| Error::Config("this embedding has no pretraining head".into()))?;
                let h = self.embed_tape(&mut tape, params, inp, true, train)?;
                let h = self.pool_tape(&mut tape, h, inp)?;
                head.record(&mut tape, params, h, true)?
            }
            Phase::Main => {
                let through_trunk = self.embedding_trained_in_main() || self.config.end_to_end();
                let h = if through_trunk {
                    let track = self.embedding_trained_in_main();
                    let h0 = match inp.h0 {
                        Some(h0) if !track => tape.constant_ref(h0),
                        _ => self.embed_tape(&mut tape, params, inp, track, train)?,
                    };
                    self.trunk.forward_tape(&mut tape, h0, inp.prop, params, train)?
                } else {
                    let h0 = self.trunk_input(params, inp, false)?;
                    let out = self.trunk.forward(&h0, inp.prop, params, train, false)?;
                    tape.constant(out.output)
                };
                let h = self.pool_tape(&mut tape, h, inp)?;
                self.classify_tape(&mut tape, params, h, train)?
            }
        };
        let loss = match targets {
            Targets::Class(t) => tape.cross_entropy(out, t.clone())?,
            Targets::Value(t) => tape.mse(out, t.clone())?,
        };
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    }

    fn pool_tape<'g>(&self, tape: &mut Tape<'g>, h: Var, inp: &Inputs<'g>) -> Result<Var> {
        match inp.pool {
            Some((assignment, sizes)) => tape.readout(h, assignment, sizes, self.config.readout),
            None => Ok(h),
        }
    }

    /// Scalar count of `ids`.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        self.params.count(ids)
    }
}

/// Squared-norm-free sanity: true when every parameter is finite.
pub fn params_finite(params: &ParamSet) -> bool {
    params.iter().all(|(_, _, v)| v.is_finite())
}

/// `sqrt(Σ g²)` over all gradients, for divergence reporting.
pub fn gradient_norm(grads: &Gradients) -> f64 {
    math::sqrt(grads.values().flat_map(|g| g.data()).map(|v| v * v).sum())
}
