//! Evaluation protocols: repeated runs over seeds on a fixed split, and
//! k-fold cross-validation for graph-level datasets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GraphDataset, GraphTargets};
use crate::datasets::make_folds;
use crate::error::{Error, Result};
use crate::graph::Split;
use crate::metrics::{mean_std, MetricKind};
use crate::model::ModelConfig;
use crate::train::{fit, Clock, PretrainedEmbedding, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Protocol {
    /// One run with the configured seed.
    Single,
    /// Fixed split, five seeds.
    Planetoid,
    /// Ten-fold cross-validation on graph datasets.
    TuCv,
}

impl Protocol {
    pub const PLANETOID_SEEDS: usize = 5;
    pub const CV_FOLDS: usize = 10;

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Single => "single",
            Protocol::Planetoid => "planetoid",
            Protocol::TuCv => "tu-cv",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "planetoid" => Ok(Self::Planetoid),
            "tu-cv" => Ok(Self::TuCv),
            other => Err(Error::Config(format!("unknown protocol `{}`", other))),
        }
    }
}

impl TryFrom<String> for Protocol {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Protocol> for String {
    fn from(v: Protocol) -> String {
        String::from(v.name())
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One replicate of a multi-seed protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: Report,
    /// Pretrained-embedding baseline of the same run, when pretraining ran.
    pub pretrain: Option<Report>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub metric: MetricKind,
    pub runs: Vec<SeedRun>,
    pub test_mean: f64,
    pub test_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub pretrain_test_mean: Option<f64>,
    pub pretrain_test_std: Option<f64>,
}

/// `base, base+1, …` as used for seed replicates.
pub fn replicate_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Aggregates finished runs (in seed order).
pub fn summarize(metric: MetricKind, mut runs: Vec<SeedRun>) -> SeedSummary {
    runs.sort_by_key(|r| r.seed);
    let test: Vec<f64> = runs.iter().filter_map(|r| r.report.test).collect();
    let val: Vec<f64> = runs.iter().filter_map(|r| r.report.val).collect();
    let pre: Vec<f64> = runs.iter().filter_map(|r| r.pretrain.as_ref().and_then(|p| p.test)).collect();
    let (test_mean, test_std) = mean_std(&test);
    let (val_mean, val_std) = mean_std(&val);
    let (pm, ps) = mean_std(&pre);
    let has_pre = !pre.is_empty();
    SeedSummary {
        metric,
        runs,
        test_mean,
        test_std,
        val_mean,
        val_std,
        pretrain_test_mean: has_pre.then_some(pm),
        pretrain_test_std: has_pre.then_some(ps),
    }
}

/// Runs `fit` once per seed on the dataset's fixed split.
pub fn run_seeds(
    config: &ModelConfig,
    data: &Dataset,
    seeds: &[u64],
    pretrained: Option<&PretrainedEmbedding>,
    clock: &mut dyn Clock,
) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds to run".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = ModelConfig { seed, ..config.clone() };
        let out = fit(&cfg, data, pretrained, clock)?;
        runs.push(SeedRun { seed, report: out.main.report, pretrain: out.pretrain.map(|p| p.report) });
    }
    Ok(summarize(config.metric(), runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: MetricKind,
    pub folds: usize,
    pub stratified: bool,
    /// Validation metric per epoch, one curve per fold.
    pub curves: Vec<Vec<f64>>,
    pub mean_curve: Vec<f64>,
    /// Epoch maximizing (or, for rmse, minimizing) the mean curve.
    pub best_epoch: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean curve, its best epoch, and the fold spread at that epoch.
pub fn select_epoch(metric: MetricKind, curves: &[Vec<f64>]) -> Result<(Vec<f64>, usize, f64, f64)> {
    let len = curves.first().map_or(0, Vec::len);
    if len == 0 || curves.iter().any(|c| c.len() != len) {
        return Err(Error::Invalid("validation curves are empty or of unequal length".into()));
    }
    let mean_curve: Vec<f64> = (0..len)
        .map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / curves.len() as f64)
        .collect();
    let mut best = 0;
    for e in 1..len {
        if metric.better(mean_curve[e], mean_curve[best]) {
            best = e;
        }
    }
    let at: Vec<f64> = curves.iter().map(|c| c[best]).collect();
    let (mean, std) = mean_std(&at);
    Ok((mean_curve, best, mean, std))
}

/// k-fold cross-validation; each fold serves once as the validation set.
pub fn cross_validate(
    config: &ModelConfig,
    data: &GraphDataset,
    k: usize,
    seed: u64,
    clock: &mut dyn Clock,
) -> Result<CvReport> {
    if config.patience.is_some() {
        return Err(Error::Config("cross-validation compares full curves; disable patience".into()));
    }
    let strata: Vec<usize> = match &data.targets {
        GraphTargets::Class(t) => t.clone(),
        GraphTargets::Value(v) => alloc::vec![0; v.len()],
    };
    let folds = make_folds(&strata, k, seed)?;
    let mut curves = Vec::with_capacity(k);
    for fold in 0..k {
        let splits = folds
            .fold_of
            .iter()
            .map(|&f| Some(if f == fold { Split::Val } else { Split::Train }))
            .collect();
        let fold_data = Dataset::Graphs(GraphDataset { splits, ..data.clone() });
        let out = fit(config, &fold_data, None, clock)?;
        let curve: Option<Vec<f64>> = out.main.history.records.iter().map(|r| r.val_metric).collect();
        curves.push(curve.ok_or_else(|| Error::Invalid("fold produced no validation metrics".into()))?);
    }
    let metric = config.metric();
    let (mean_curve, best_epoch, mean, std) = select_epoch(metric, &curves)?;
    Ok(CvReport { metric, folds: k, stratified: folds.stratified, curves, mean_curve, best_epoch, mean, std })
}
