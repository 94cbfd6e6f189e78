//! Per-epoch wall-clock timing of training and inference steps.
//!
//! Every cell runs on the same graph, seed and thread. Each sample times a
//! batch of consecutive epochs; the batch grows until a sample spans at
//! least [`MIN_TICKS`] timer ticks. Reported times are medians of the
//! per-epoch sample values.

use std::fmt::Write as _;
use std::hint::black_box;
use std::io::Write;
use std::time::{Duration, Instant};

use rapgnn_core::data::NodeDataset;
use rapgnn_core::graph::Split;
use rapgnn_core::memory::{memory_model, MemoryEstimate, ProblemSize};
use rapgnn_core::model::{Model, ModelConfig, Phase, Prepared, Targets};
use rapgnn_core::params::AdamState;
use rapgnn_core::propagation::{Backbone, WeightMode};
use rapgnn_core::Result;
use serde::{Deserialize, Serialize};

pub const MIN_TICKS: u32 = 20;
pub const MIN_REPS: usize = 5;
pub const MIN_WARMUP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCell {
    pub mode: WeightMode,
    pub backbone: Backbone,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Settings shared by every cell; mode, backbone and depth are
    /// overridden per cell.
    pub base: ModelConfig,
    pub warmup: usize,
    pub reps: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { base: ModelConfig::default(), warmup: MIN_WARMUP, reps: MIN_REPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub cpu: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
    pub timer_resolution_ns: f64,
}

impl Fingerprint {
    pub fn detect(threads: usize) -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu,
            threads,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            timer_resolution_ns: timer_resolution().as_nanos() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: WeightMode,
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden: usize,
    pub nodes: usize,
    pub edges: usize,
    pub train_ms_per_epoch: f64,
    pub infer_ms_per_epoch: f64,
    /// Epochs timed together in one sample.
    pub train_batch: usize,
    pub infer_batch: usize,
    pub memory: MemoryEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fingerprint: Fingerprint,
    /// Median cost of one empty timed sample, in milliseconds.
    pub overhead_ms: f64,
    pub rows: Vec<BenchRow>,
}

/// Smallest positive difference between consecutive clock readings.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median per-call milliseconds of `f`, with the call batch grown until a
/// sample covers `MIN_TICKS` timer ticks.
pub fn time_median<F: FnMut() -> Result<()>>(
    mut f: F,
    warmup: usize,
    reps: usize,
    tick: Duration,
) -> Result<(f64, usize)> {
    for _ in 0..warmup {
        f()?;
    }
    let floor = tick * MIN_TICKS;
    let mut batch = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..batch {
            f()?;
        }
        if t.elapsed() >= floor {
            break;
        }
        batch *= 2;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        for _ in 0..batch {
            f()?;
        }
        samples.push(t.elapsed().as_secs_f64() * 1e3 / batch as f64);
    }
    Ok((median(&mut samples), batch))
}

/// Cost of timing an empty body the way cells are timed.
pub fn harness_overhead(reps: usize) -> f64 {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        black_box(());
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    median(&mut samples)
}

/// Model config of `cell` on top of the shared settings.
pub fn cell_config(base: &ModelConfig, cell: &BenchCell) -> ModelConfig {
    ModelConfig { mode: cell.mode, backbone: cell.backbone, layers: cell.layers, ..base.clone() }
}

/// Times one main-phase training step and one inference pass per epoch
/// for every cell.
pub fn time_epochs(grid: &[BenchCell], data: &NodeDataset, opts: &BenchOptions) -> Result<BenchReport> {
    if grid.is_empty() {
        return Err(rapgnn_core::Error::Config("benchmark grid is empty".into()));
    }
    if opts.reps < MIN_REPS || opts.warmup < MIN_WARMUP {
        return Err(rapgnn_core::Error::Config(format!(
            "benchmarks need at least {} repetitions after {} warm-up epochs",
            MIN_REPS, MIN_WARMUP
        )));
    }
    let fingerprint = Fingerprint::detect(1);
    let tick = Duration::from_nanos(fingerprint.timer_resolution_ns as u64);
    let g = &data.graph;
    let rows: Vec<usize> = g.masks.as_ref().map(|m| m.indices(Split::Train)).unwrap_or_default();
    let targets = Targets::Class(rows.iter().map(|&r| (r, g.labels[r])).collect());
    let size = ProblemSize {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        features: g.feature_dim(),
        outputs: data.num_classes,
    };
    let mut out = Vec::with_capacity(grid.len());
    for cell in grid {
        let cfg = cell_config(&opts.base, cell);
        let mut model = Model::new(cfg.clone(), g.feature_dim(), data.num_classes)?;
        let prep = Prepared::node(g, cfg.backbone);
        let cache = if model.embedding_is_static() { Some(model.embed(&prep.inputs(), false)?) } else { None };
        let mut inp = prep.inputs();
        inp.h0 = cache.as_ref();
        let mut adam = AdamState::new(cfg.lr);
        let mut epoch = 0u64;
        let (train_ms, train_batch) = time_median(
            || {
                model.begin_epoch(epoch);
                epoch += 1;
                let (_, grads) = model.loss_and_grads(&inp, &targets, Phase::Main, true)?;
                adam.step(&mut model.params, &grads)
            },
            opts.warmup,
            opts.reps,
            tick,
        )?;
        let (infer_ms, infer_batch) = time_median(
            || {
                black_box(model.predict(&inp)?);
                Ok(())
            },
            opts.warmup,
            opts.reps,
            tick,
        )?;
        out.push(BenchRow {
            mode: cell.mode,
            backbone: cell.backbone,
            layers: cell.layers,
            hidden: cfg.hidden,
            nodes: size.nodes,
            edges: size.edges,
            train_ms_per_epoch: train_ms,
            infer_ms_per_epoch: infer_ms,
            train_batch,
            infer_batch,
            memory: memory_model(&cfg, size),
        });
    }
    let overhead_ms = harness_overhead(opts.reps.max(101));
    Ok(BenchReport { fingerprint, overhead_ms, rows: out })
}

impl BenchReport {
    /// Row of `mode` on `backbone` at depth `layers`.
    pub fn row(&self, mode: WeightMode, backbone: Backbone, layers: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode && r.backbone == backbone && r.layers == layers)
    }

    /// CSV with the fingerprint as leading `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let f = &self.fingerprint;
        writeln!(out, "# cpu: {}", f.cpu)?;
        writeln!(out, "# threads: {}", f.threads)?;
        writeln!(out, "# os: {} {}", f.os, f.arch)?;
        writeln!(out, "# timer_resolution_ns: {}", f.timer_resolution_ns)?;
        writeln!(out, "# harness_overhead_ms: {}", self.overhead_ms)?;
        writeln!(out, "# times are CPU wall-clock medians; memory columns are analytic float counts")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "backbone",
            "layers",
            "hidden",
            "nodes",
            "edges",
            "train_ms_per_epoch",
            "infer_ms_per_epoch",
            "param_count",
            "trainable_params",
            "activation_floats",
            "gradient_floats",
            "model_bytes_estimate",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.mode.to_string(),
                r.backbone.to_string(),
                r.layers.to_string(),
                r.hidden.to_string(),
                r.nodes.to_string(),
                r.edges.to_string(),
                format!("{:.4}", r.train_ms_per_epoch),
                format!("{:.4}", r.infer_ms_per_epoch),
                r.memory.param_count.to_string(),
                r.memory.trainable_params.to_string(),
                (r.memory.activation_floats + r.memory.embedding_activation_floats).to_string(),
                r.memory.gradient_floats.to_string(),
                r.memory.model_bytes_estimate.to_string(),
            ])?;
        }
        w.flush()
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<4} {:>4} {:>5} {:>12} {:>12} {:>12} {:>14}",
            "mode", "gnn", "L", "d", "train ms", "infer ms", "params", "model bytes"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<4} {:>4} {:>5} {:>12.3} {:>12.3} {:>12} {:>14}",
                r.mode.to_string(),
                r.backbone.to_string(),
                r.layers,
                r.hidden,
                r.train_ms_per_epoch,
                r.infer_ms_per_epoch,
                r.memory.param_count,
                r.memory.model_bytes_estimate
            );
        }
        s
    }
}
