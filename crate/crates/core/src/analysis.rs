//! Feature-collapse instrumentation: per-layer rank and variance,
//! empirical means of weight draws, and the diagonal share of weight
//! matrices.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;
use crate::model::{Inputs, Model};
use crate::propagation::{sample_diagonal, sample_full, LayerWeights, SamplingPolicy, WeightMode};
use crate::rng::{Domain, SeedStream};
use crate::svd::{numerical_rank, TolPolicy};

/// Rank and mean column variance of `h^(0), …, h^(L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub ranks: Vec<usize>,
    pub variances: Vec<f64>,
}

impl RankProfile {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Profiles a sequence of layer outputs.
pub fn profile_layers(layers: &[DenseMatrix], tol: TolPolicy) -> Result<RankProfile> {
    let mut ranks = Vec::with_capacity(layers.len());
    let mut variances = Vec::with_capacity(layers.len());
    for h in layers {
        if !h.is_finite() {
            return Err(Error::NonFinite("layer activations"));
        }
        ranks.push(numerical_rank(h, tol)?);
        variances.push(h.mean_column_variance());
    }
    Ok(RankProfile { ranks, variances })
}

/// Runs one evaluation-mode forward pass and profiles every trunk layer.
/// With `linear`, ReLU is switched off for this pass.
pub fn rank_profile(model: &mut Model, inp: &Inputs<'_>, linear: bool, tol: TolPolicy) -> Result<RankProfile> {
    let saved = model.trunk().config().activation;
    model.trunk_mut().set_activation(!linear);
    let layers = model.layer_outputs(inp);
    model.trunk_mut().set_activation(saved);
    profile_layers(&layers?, tol)
}

/// Iterates the channel-mixing rule `h ← h·w`, returning every iterate
/// including the input.
pub fn channel_mixing(h: &DenseMatrix, w: &DenseMatrix, steps: usize) -> Result<Vec<DenseMatrix>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(h.clone());
    for _ in 0..steps {
        let next = out.last().expect("non-empty").matmul(w)?;
        out.push(next);
    }
    Ok(out)
}

/// Which weight family an expectation check samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrawKind {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    /// Entrywise mean of the draws as a `d × d` matrix.
    pub mean: DenseMatrix,
    /// `max |mean − target|` where the target is `0.5·1` or `0.5·I`.
    pub max_deviation: f64,
    /// Largest off-diagonal magnitude of the mean.
    pub max_off_diagonal: f64,
}

/// Mean of `k` independent `d × d` full draws.
pub fn mean_full_draws(k: usize, d: usize, seed: u64) -> DenseMatrix {
    let root = SeedStream::new(seed);
    let mut acc = DenseMatrix::zeros(d, d);
    for i in 0..k {
        let w = sample_full(&mut root.stream(Domain::Analysis, i as u64), d);
        acc.axpy(1.0, &w).expect("same shape");
    }
    acc.scale(1.0 / k.max(1) as f64)
}

/// Empirical mean of `k` draws and its distance from the expectation.
pub fn expectation_check(kind: DrawKind, k: usize, d: usize, seed: u64) -> Result<ExpectationReport> {
    if k == 0 {
        return Err(Error::Config("expectation check needs at least one draw".into()));
    }
    let mean = match kind {
        DrawKind::Full => mean_full_draws(k, d, seed),
        DrawKind::Diagonal => {
            let root = SeedStream::new(seed);
            let mut acc = alloc::vec![0.0; d];
            for i in 0..k {
                let a = sample_diagonal(&mut root.stream(Domain::Analysis, i as u64), d);
                for (s, v) in acc.iter_mut().zip(a) {
                    *s += v;
                }
            }
            let acc: Vec<f64> = acc.into_iter().map(|s| s / k as f64).collect();
            DenseMatrix::from_diagonal(&acc)
        }
    };
    let mut max_deviation: f64 = 0.0;
    let mut max_off_diagonal: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = mean.get(i, j);
            let target = if kind == DrawKind::Full || i == j { 0.5 } else { 0.0 };
            max_deviation = max_deviation.max(math::abs(v - target));
            if i != j {
                max_off_diagonal = max_off_diagonal.max(math::abs(v));
            }
        }
    }
    Ok(ExpectationReport { mean, max_deviation, max_off_diagonal })
}

/// `Σ|diag| / Σ|all|` of a square matrix (0 for the zero matrix).
pub fn diagonal_mass(w: &DenseMatrix) -> f64 {
    let total: f64 = w.data().iter().map(|v| math::abs(*v)).sum();
    if total == 0.0 {
        return 0.0;
    }
    let diag: f64 = (0..w.rows().min(w.cols())).map(|i| math::abs(w.get(i, i))).sum();
    diag / total
}

/// Dense `d × d` weight of trunk layer `layer` (first weight of the
/// layer). On-the-fly modes need a pinned sampling policy.
pub fn layer_weight_matrix(model: &Model, layer: usize) -> Result<DenseMatrix> {
    let cfg = model.trunk().config();
    if layer >= cfg.layers {
        return Err(Error::Config(alloc::format!("layer {} outside a {}-layer trunk", layer, cfg.layers)));
    }
    if cfg.mode.is_on_the_fly() && !matches!(cfg.policy, SamplingPolicy::Fixed(_)) {
        return Err(Error::Config(
            "on-the-fly weights are not reproducible without the fixed sampling policy".into(),
        ));
    }
    let d = cfg.width;
    let mut trunk = model.trunk().clone();
    let weights = match cfg.mode {
        WeightMode::Identity => return Ok(DenseMatrix::identity(d)),
        _ => trunk.next_weights(&model.params),
    };
    Ok(match &weights[layer][0] {
        LayerWeights::Diagonal(a) => DenseMatrix::from_diagonal(a),
        LayerWeights::Full(w) => w.as_ref().clone(),
        LayerWeights::Identity => DenseMatrix::identity(d),
    })
}
