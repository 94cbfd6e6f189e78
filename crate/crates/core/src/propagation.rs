//! Message-passing layers whose channel-mixing weights come from a
//! [`WeightMode`]: learned, identity, fixed random, or sampled afresh from
//! `Uniform[0, 1]` at every forward pass. Diagonal weights are applied as
//! column scaling.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dropout::DropoutMask;
use crate::error::{shape_err, Error, Result};
use crate::graph::{aggregate_sum_neighbors, sym_normalize, SparseGraph, SparseOperator};
use crate::matrix::DenseMatrix;
use crate::params::{glorot_uniform, ParamId, ParamSet};
use crate::rng::{Domain, SeedStream, Stream};
use crate::tape::{MixWeight, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Backbone {
    /// `h + ReLU(Ã h W)`.
    Gcn,
    /// `ReLU((h_v + Σ_{u∈N(v)} h_u) W)`, i.e. GIN with ε = 0.
    Gin,
}

impl Backbone {
    /// The sparse operator this backbone aggregates with.
    pub fn operator(&self, g: &SparseGraph) -> SparseOperator {
        match self {
            Backbone::Gcn => sym_normalize(g),
            Backbone::Gin => SparseOperator::adjacency_with_self(g),
        }
    }

    pub fn residual(&self) -> bool {
        matches!(self, Backbone::Gcn)
    }
}

impl TryFrom<String> for Backbone {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Backbone> for String {
    fn from(v: Backbone) -> String {
        v.to_string()
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "gin" => Ok(Self::Gin),
            other => Err(Error::Config(format!("unknown backbone `{}`", other))),
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Gcn => "gcn",
            Backbone::Gin => "gin",
        })
    }
}

/// Where the trunk's layer weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightMode {
    /// Trainable `d × d` matrices (end-to-end baseline).
    Learned,
    Identity,
    /// Full `[0,1]^{d×d}` matrices drawn once at construction.
    FixedFull,
    /// Diagonal `[0,1]^d` weights drawn once at construction.
    FixedDiagonal,
    /// Full matrices drawn per the sampling policy.
    OnTheFlyFull,
    /// Diagonal weights drawn per the sampling policy.
    OnTheFlyDiagonal,
}

impl WeightMode {
    pub const ALL: [WeightMode; 6] = [
        WeightMode::Learned,
        WeightMode::Identity,
        WeightMode::FixedFull,
        WeightMode::FixedDiagonal,
        WeightMode::OnTheFlyFull,
        WeightMode::OnTheFlyDiagonal,
    ];

    pub fn is_diagonal(&self) -> bool {
        matches!(self, WeightMode::FixedDiagonal | WeightMode::OnTheFlyDiagonal)
    }

    pub fn is_on_the_fly(&self) -> bool {
        matches!(self, WeightMode::OnTheFlyFull | WeightMode::OnTheFlyDiagonal)
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, WeightMode::FixedFull | WeightMode::FixedDiagonal)
    }

    /// Stable short name used on the command line and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::Learned => "learned",
            WeightMode::Identity => "identity",
            WeightMode::FixedFull => "fixed-full",
            WeightMode::FixedDiagonal => "fixed-diag",
            WeightMode::OnTheFlyFull => "otf-full",
            WeightMode::OnTheFlyDiagonal => "otf-diag",
        }
    }
}

impl TryFrom<String> for WeightMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WeightMode> for String {
    fn from(v: WeightMode) -> String {
        v.to_string()
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s {
                "rap" | "rap-diagonal" | "rap-diag" => Some(WeightMode::OnTheFlyDiagonal),
                "random-full" => Some(WeightMode::OnTheFlyFull),
                "fixed-diagonal" => Some(WeightMode::FixedDiagonal),
                "end-to-end" | "e2e" => Some(WeightMode::Learned),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown weight mode `{}`", s)))
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// When on-the-fly weights are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingPolicy {
    PerForward,
    PerEpoch,
    /// Always the draw addressed by this seed.
    Fixed(u64),
}

impl TryFrom<String> for SamplingPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SamplingPolicy> for String {
    fn from(v: SamplingPolicy) -> String {
        v.to_string()
    }
}

impl FromStr for SamplingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-forward" => Ok(Self::PerForward),
            "per-epoch" => Ok(Self::PerEpoch),
            "fixed" => Ok(Self::Fixed(0)),
            other => match other.strip_prefix("fixed:") {
                Some(seed) => seed
                    .parse()
                    .map(Self::Fixed)
                    .map_err(|_| Error::Config(format!("bad fixed-policy seed `{}`", seed))),
                None => Err(Error::Config(format!("unknown sampling policy `{}`", other))),
            },
        }
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingPolicy::PerForward => f.write_str("per-forward"),
            SamplingPolicy::PerEpoch => f.write_str("per-epoch"),
            SamplingPolicy::Fixed(s) => write!(f, "fixed:{}", s),
        }
    }
}

/// One channel-mixing weight of a layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights<'a> {
    Diagonal(Vec<f64>),
    Full(Cow<'a, DenseMatrix>),
    Identity,
}

impl LayerWeights<'_> {
    /// Applies `h · w`.
    pub fn mix(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            LayerWeights::Diagonal(a) => h.scale_columns(a),
            LayerWeights::Full(w) => h.matmul(w),
            LayerWeights::Identity => Ok(h.clone()),
        }
    }

    /// [`LayerWeights::mix`] reusing `h`'s buffer where the weight allows.
    pub fn mix_owned(&self, mut h: DenseMatrix) -> Result<DenseMatrix> {
        match self {
            LayerWeights::Diagonal(a) => {
                h.scale_columns_in_place(a)?;
                Ok(h)
            }
            LayerWeights::Full(w) => h.matmul(w),
            LayerWeights::Identity => Ok(h),
        }
    }

    /// Dense `d × d` form.
    pub fn densify(&self, d: usize) -> DenseMatrix {
        match self {
            LayerWeights::Diagonal(a) => DenseMatrix::from_diagonal(a),
            LayerWeights::Full(w) => w.as_ref().clone(),
            LayerWeights::Identity => DenseMatrix::identity(d),
        }
    }

    pub fn into_owned(self) -> LayerWeights<'static> {
        match self {
            LayerWeights::Diagonal(a) => LayerWeights::Diagonal(a),
            LayerWeights::Full(w) => LayerWeights::Full(Cow::Owned(w.into_owned())),
            LayerWeights::Identity => LayerWeights::Identity,
        }
    }

    /// Number of stored scalars.
    pub fn stored_values(&self) -> usize {
        match self {
            LayerWeights::Diagonal(a) => a.len(),
            LayerWeights::Full(w) => w.len(),
            LayerWeights::Identity => 0,
        }
    }

    fn check_width(&self, d: usize) -> Result<()> {
        let ok = match self {
            LayerWeights::Diagonal(a) => a.len() == d,
            LayerWeights::Full(w) => w.rows() == d,
            LayerWeights::Identity => true,
        };
        if ok {
            Ok(())
        } else {
            Err(shape_err!("layer weights do not match width {}", d))
        }
    }

    fn to_mix(&self) -> MixWeight {
        match self {
            LayerWeights::Diagonal(a) => MixWeight::Diagonal(a.clone()),
            LayerWeights::Full(w) => MixWeight::Dense(w.as_ref().clone()),
            LayerWeights::Identity => MixWeight::Identity,
        }
    }
}

/// `α ∈ [0, 1)^d` with i.i.d. uniform entries.
pub fn sample_diagonal(stream: &mut Stream, d: usize) -> Vec<f64> {
    (0..d).map(|_| stream.uniform()).collect()
}

/// `W ∈ [0, 1)^{d×d}` with i.i.d. uniform entries.
pub fn sample_full(stream: &mut Stream, d: usize) -> DenseMatrix {
    DenseMatrix::from_fn(d, d, |_, _| stream.uniform())
}

/// One GCN layer with residual: `h + ReLU(Ã h w)`.
pub fn gcn_layer(h: &DenseMatrix, adj: &SparseOperator, w: &LayerWeights<'_>) -> Result<DenseMatrix> {
    w.check_width(h.cols())?;
    let mut z = w.mix(&adj.spmm(h)?)?.relu();
    z.axpy(1.0, h)?;
    Ok(z)
}

/// One GIN layer with ε = 0: `ReLU((h_v + Σ_{u∈N(v)} h_u) w)`. Several
/// weights form an MLP with ReLU after each.
pub fn gin_layer(h: &DenseMatrix, g: &SparseGraph, w: &[LayerWeights<'_>]) -> Result<DenseMatrix> {
    let mut z = aggregate_sum_neighbors(g, h)?;
    z.axpy(1.0, h)?;
    for wk in w {
        wk.check_width(z.cols())?;
        z = wk.mix(&z)?.relu();
    }
    Ok(z)
}

/// Shared body of both backbones with an explicit sparse operator.
pub fn propagate_layer(
    h: &DenseMatrix,
    op: &SparseOperator,
    weights: &[LayerWeights<'_>],
    residual: bool,
    activation: bool,
    dropout: Option<&DropoutMask>,
) -> Result<DenseMatrix> {
    let mut z = op.spmm(h)?;
    for w in weights {
        w.check_width(z.cols())?;
        z = w.mix_owned(z)?;
        if activation {
            z.relu_in_place();
        }
    }
    if let Some(mask) = dropout {
        mask.apply_in_place(&mut z)?;
    }
    if residual {
        z.axpy(1.0, h)?;
    }
    z.ensure_finite("propagation layer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub width: usize,
    pub mode: WeightMode,
    pub policy: SamplingPolicy,
    /// Dropout rate applied after each layer's activation in training.
    pub dropout: f64,
    /// Weights per GIN layer (1, or 2 for the MLP variant). GCN uses 1.
    pub gin_depth: usize,
    /// With `false` the trunk is linear (no ReLU); used for rank probes.
    pub activation: bool,
}

impl TrunkConfig {
    pub fn new(backbone: Backbone, layers: usize, width: usize, mode: WeightMode) -> Self {
        Self {
            backbone,
            layers,
            width,
            mode,
            policy: SamplingPolicy::PerForward,
            dropout: 0.0,
            gin_depth: 1,
            activation: true,
        }
    }

    pub fn weights_per_layer(&self) -> usize {
        match self.backbone {
            Backbone::Gcn => 1,
            Backbone::Gin => self.gin_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("trunk needs at least one layer".into()));
        }
        if self.width < 1 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.backbone == Backbone::Gin && !(1..=2).contains(&self.gin_depth) {
            return Err(Error::Config("GIN layers take one or two weights".into()));
        }
        Ok(())
    }
}

/// Result of one trunk forward pass.
#[derive(Debug, Clone)]
pub struct TrunkOutput<'a> {
    pub output: DenseMatrix,
    /// `h^(0), …, h^(L)` when recording was requested.
    pub layers: Option<Vec<DenseMatrix>>,
    /// Weights used by each layer.
    pub weights: Vec<Vec<LayerWeights<'a>>>,
}

/// Stack of `L` propagation layers together with its weight source.
#[derive(Debug, Clone)]
pub struct Trunk {
    config: TrunkConfig,
    seed: SeedStream,
    fixed: Option<Vec<Vec<LayerWeights<'static>>>>,
    learned: Vec<Vec<ParamId>>,
    epoch: u64,
    forward: u64,
    constant_draw: Option<f64>,
}

/// Fixed weights are drawn from this address, outside any epoch range.
const CONSTRUCTION: u64 = u64::MAX;

impl Trunk {
    /// Builds the trunk, drawing fixed weights or registering learned ones
    /// in `params` as the mode requires.
    pub fn new(config: TrunkConfig, seed: SeedStream, params: &mut ParamSet) -> Result<Self> {
        config.validate()?;
        let per = config.weights_per_layer();
        let d = config.width;
        let mut fixed = None;
        let mut learned = Vec::new();
        match config.mode {
            WeightMode::FixedFull | WeightMode::FixedDiagonal => {
                let mut all = Vec::with_capacity(config.layers);
                for l in 0..config.layers {
                    let mut layer = Vec::with_capacity(per);
                    for k in 0..per {
                        let mut s = seed.substream(Domain::TrunkWeights, CONSTRUCTION, CONSTRUCTION, (l * per + k) as u64);
                        layer.push(if config.mode == WeightMode::FixedDiagonal {
                            LayerWeights::Diagonal(sample_diagonal(&mut s, d))
                        } else {
                            LayerWeights::Full(Cow::Owned(sample_full(&mut s, d)))
                        });
                    }
                    all.push(layer);
                }
                fixed = Some(all);
            }
            WeightMode::Learned => {
                for l in 0..config.layers {
                    let mut layer = Vec::with_capacity(per);
                    for k in 0..per {
                        let mut s = seed.stream(Domain::Init, 1000 + (l * per + k) as u64);
                        let w = glorot_uniform(&mut s, d, d);
                        layer.push(params.add(format!("trunk.{}.{}", l, k), w));
                    }
                    learned.push(layer);
                }
            }
            _ => {}
        }
        Ok(Self { config, seed, fixed, learned, epoch: 0, forward: 0, constant_draw: None })
    }

    pub fn config(&self) -> &TrunkConfig {
        &self.config
    }

    /// Turns ReLU on or off (off gives the linear probe used in rank
    /// analysis).
    pub fn set_activation(&mut self, on: bool) {
        self.config.activation = on;
    }

    pub fn learned_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.learned.iter().flatten().copied()
    }

    /// Starts epoch `e`; per-epoch draws change only here.
    pub fn begin_epoch(&mut self, e: u64) {
        self.epoch = e;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn forward_count(&self) -> u64 {
        self.forward
    }

    /// Forces every on-the-fly draw to the constant `v` (test hook; `None`
    /// restores sampling).
    pub fn set_constant_draw(&mut self, v: Option<f64>) {
        self.constant_draw = v;
    }

    /// Fixed weights, when the mode stores any.
    pub fn fixed_weights(&self) -> Option<&[Vec<LayerWeights<'static>>]> {
        self.fixed.as_deref()
    }

    /// Scalars stored or drawn per forward pass for the layer weights.
    pub fn weight_values(&self) -> usize {
        let d = self.config.width;
        let per = self.config.weights_per_layer();
        let each = match self.config.mode {
            WeightMode::Identity => 0,
            WeightMode::FixedDiagonal | WeightMode::OnTheFlyDiagonal => d,
            WeightMode::Learned | WeightMode::FixedFull | WeightMode::OnTheFlyFull => d * d,
        };
        self.config.layers * per * each
    }

    fn draw_address(&self) -> (SeedStream, u64, u64) {
        match self.config.policy {
            SamplingPolicy::PerForward => (self.seed, self.epoch, self.forward),
            SamplingPolicy::PerEpoch => (self.seed, self.epoch, 0),
            SamplingPolicy::Fixed(s) => (SeedStream::new(s), 0, 0),
        }
    }

    /// Weights for the next forward pass. Advances the forward counter.
    pub fn next_weights<'p>(&mut self, params: &'p ParamSet) -> Vec<Vec<LayerWeights<'p>>> {
        let (seed, epoch, forward) = self.draw_address();
        let per = self.config.weights_per_layer();
        let d = self.config.width;
        let out = (0..self.config.layers)
            .map(|l| {
                (0..per)
                    .map(|k| match self.config.mode {
                        WeightMode::Identity => LayerWeights::Identity,
                        WeightMode::Learned => {
                            LayerWeights::Full(Cow::Borrowed(params.get(self.learned[l][k])))
                        }
                        WeightMode::FixedFull | WeightMode::FixedDiagonal => {
                            self.fixed.as_ref().expect("fixed modes store weights")[l][k].clone()
                        }
                        WeightMode::OnTheFlyDiagonal => LayerWeights::Diagonal(match self.constant_draw {
                            Some(c) => vec![c; d],
                            None => {
                                let mut s = seed.substream(Domain::TrunkWeights, epoch, forward, (l * per + k) as u64);
                                sample_diagonal(&mut s, d)
                            }
                        }),
                        WeightMode::OnTheFlyFull => LayerWeights::Full(Cow::Owned(match self.constant_draw {
                            Some(c) => DenseMatrix::filled(d, d, c),
                            None => {
                                let mut s = seed.substream(Domain::TrunkWeights, epoch, forward, (l * per + k) as u64);
                                sample_full(&mut s, d)
                            }
                        })),
                    })
                    .collect()
            })
            .collect();
        self.forward += 1;
        out
    }

    fn dropout_masks(&self, forward: u64, rows: usize, train: bool) -> Option<Vec<DropoutMask>> {
        if !train || self.config.dropout == 0.0 {
            return None;
        }
        Some(
            (0..self.config.layers)
                .map(|l| {
                    let mut s = self.seed.substream(Domain::TrunkDropout, self.epoch, forward, l as u64);
                    DropoutMask::sample(&mut s, rows, self.config.width, self.config.dropout)
                })
                .collect(),
        )
    }

    /// Runs all layers on `h0` using the backbone operator `op`. `train`
    /// enables dropout only; weights are drawn in either case.
    pub fn forward<'p>(
        &mut self,
        h0: &DenseMatrix,
        op: &SparseOperator,
        params: &'p ParamSet,
        train: bool,
        record: bool,
    ) -> Result<TrunkOutput<'p>> {
        let forward_id = self.forward;
        let weights = self.next_weights(params);
        self.run(h0, op, weights, forward_id, train, record)
    }

    /// Runs the layers with explicitly supplied weights.
    pub fn forward_with_weights<'p>(
        &self,
        h0: &DenseMatrix,
        op: &SparseOperator,
        weights: Vec<Vec<LayerWeights<'p>>>,
        record: bool,
    ) -> Result<TrunkOutput<'p>> {
        self.run(h0, op, weights, self.forward, false, record)
    }

    fn run<'p>(
        &self,
        h0: &DenseMatrix,
        op: &SparseOperator,
        weights: Vec<Vec<LayerWeights<'p>>>,
        forward_id: u64,
        train: bool,
        record: bool,
    ) -> Result<TrunkOutput<'p>> {
        if h0.cols() != self.config.width {
            return Err(shape_err!(
                "trunk of width {} fed {} input channels",
                self.config.width,
                h0.cols()
            ));
        }
        if op.dim() != h0.rows() {
            return Err(shape_err!("operator over {} nodes fed {} rows", op.dim(), h0.rows()));
        }
        let masks = self.dropout_masks(forward_id, h0.rows(), train);
        let residual = self.config.backbone.residual();
        let mut layers = record.then(|| vec![h0.clone()]);
        let mut h = Cow::Borrowed(h0);
        for (l, w) in weights.iter().enumerate() {
            let mask = masks.as_ref().map(|m| &m[l]);
            let next = propagate_layer(&h, op, w, residual, self.config.activation, mask)?;
            if let Some(rec) = layers.as_mut() {
                rec.push(next.clone());
            }
            h = Cow::Owned(next);
        }
        Ok(TrunkOutput { output: h.into_owned(), layers, weights })
    }

    /// Records the trunk on `tape` so gradients flow to its input (and to
    /// learned weights). Draws weights exactly like [`Trunk::forward`].
    pub fn forward_tape<'g>(
        &mut self,
        tape: &mut Tape<'g>,
        h0: Var,
        op: &'g SparseOperator,
        params: &'g ParamSet,
        train: bool,
    ) -> Result<Var> {
        if !self.config.activation {
            return Err(Error::Config("linear trunks are forward-only".into()));
        }
        let rows = tape.value(h0).rows();
        if tape.value(h0).cols() != self.config.width {
            return Err(shape_err!(
                "trunk of width {} fed {} input channels",
                self.config.width,
                tape.value(h0).cols()
            ));
        }
        let forward_id = self.forward;
        let weights = self.next_weights(params);
        let masks = self.dropout_masks(forward_id, rows, train);
        let residual = self.config.backbone.residual();
        let mut h = h0;
        for (l, layer) in weights.iter().enumerate() {
            let mix = layer
                .iter()
                .enumerate()
                .map(|(k, w)| match self.config.mode {
                    WeightMode::Learned => {
                        let id = self.learned[l][k];
                        MixWeight::Var(tape.param(id, params.get(id)))
                    }
                    _ => w.to_mix(),
                })
                .collect();
            h = tape.propagate(h, op, mix, residual, masks.as_ref().map(|m| &m[l]))?;
        }
        Ok(h)
    }
}
