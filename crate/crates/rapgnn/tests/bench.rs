use std::sync::Mutex;
use std::time::Duration;

use rapgnn::bench::{harness_overhead, median, time_epochs, time_median, timer_resolution, BenchCell, BenchOptions, MIN_TICKS};
use rapgnn_core::datasets::{sbm_node_dataset, SbmSpec};
use rapgnn_core::data::NodeDataset;
use rapgnn_core::memory::{memory_model, ProblemSize};
use rapgnn_core::model::ModelConfig;
use rapgnn_core::propagation::{Backbone, WeightMode};

/// Timing tests must not share the CPU with each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn graph(nodes: usize) -> NodeDataset {
    let spec = SbmSpec::balanced(4, nodes / 4, 16.0 / nodes as f64, 2.0 / nodes as f64, 32, 9);
    sbm_node_dataset(&spec, 10, 40, 40).unwrap()
}

fn options(hidden: usize) -> BenchOptions {
    BenchOptions { base: ModelConfig { hidden, ..ModelConfig::default() }, warmup: 2, reps: 7 }
}

fn cells(modes: &[WeightMode], depths: &[usize]) -> Vec<BenchCell> {
    depths
        .iter()
        .flat_map(|&layers| modes.iter().map(move |&mode| BenchCell { mode, backbone: Backbone::Gcn, layers }))
        .collect()
}

#[test]
fn median_examples() {
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&mut []).is_nan());
}

#[test]
fn identical_runs_agree_within_twenty_percent() {
    let _g = lock();
    let data = graph(2000);
    let grid = cells(&[WeightMode::OnTheFlyDiagonal, WeightMode::Learned], &[4]);
    let opts = BenchOptions { reps: 15, ..options(64) };
    // priming run; the first timings after a heavy process are slow
    time_epochs(&grid, &data, &opts).unwrap();
    let a = time_epochs(&grid, &data, &opts).unwrap();
    let b = time_epochs(&grid, &data, &opts).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        for (p, q) in [(x.train_ms_per_epoch, y.train_ms_per_epoch), (x.infer_ms_per_epoch, y.infer_ms_per_epoch)] {
            let rel = (p - q).abs() / p.min(q);
            assert!(rel <= 0.2, "{}: {:.3} vs {:.3} ms", x.mode, p, q);
        }
        assert_eq!(x.memory, y.memory);
    }
}

#[test]
fn harness_overhead_is_below_one_percent_of_the_smallest_cell() {
    let _g = lock();
    let data = graph(400);
    let grid = cells(&[WeightMode::OnTheFlyDiagonal, WeightMode::Identity], &[1, 2]);
    let report = time_epochs(&grid, &data, &options(16)).unwrap();
    let smallest = report.rows.iter().flat_map(|r| [r.train_ms_per_epoch, r.infer_ms_per_epoch]).fold(f64::INFINITY, f64::min);
    assert!(report.overhead_ms < 0.01 * smallest, "overhead {} ms vs smallest cell {} ms", report.overhead_ms, smallest);
    assert!(harness_overhead(101) >= 0.0);
}

#[test]
fn short_bodies_are_batched_up_to_the_tick_floor() {
    let _g = lock();
    let tick = timer_resolution();
    assert!(tick > Duration::ZERO);
    let mut calls = 0usize;
    let (ms, batch) = time_median(
        || {
            calls += 1;
            std::hint::black_box(calls);
            Ok(())
        },
        2,
        5,
        tick,
    )
    .unwrap();
    assert!(batch > 1, "a trivial body should need batching");
    assert!(batch as f64 * ms * 1e6 >= 0.5 * MIN_TICKS as f64 * tick.as_nanos() as f64);
    assert!(calls >= 2 + 5 * batch);
}

#[test]
fn bad_options_are_rejected() {
    let _g = lock();
    let data = graph(200);
    let grid = cells(&[WeightMode::OnTheFlyDiagonal], &[1]);
    assert!(time_epochs(&[], &data, &options(8)).is_err());
    assert!(time_epochs(&grid, &data, &BenchOptions { reps: 2, ..options(8) }).is_err());
    assert!(time_epochs(&grid, &data, &BenchOptions { warmup: 0, ..options(8) }).is_err());
}

/// Per-layer cost from a straight-line fit of time against depth.
fn slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn learned_trunk_cost_grows_faster_with_depth() {
    let _g = lock();
    let data = graph(2000);
    let depths = [2, 4, 8, 16];
    let grid = cells(&[WeightMode::OnTheFlyDiagonal, WeightMode::Learned], &depths);
    let report = time_epochs(&grid, &data, &options(64)).unwrap();
    let series = |mode| -> Vec<(usize, f64)> {
        depths.iter().map(|&l| (l, report.row(mode, Backbone::Gcn, l).unwrap().train_ms_per_epoch)).collect()
    };
    let (rap, e2e) = (series(WeightMode::OnTheFlyDiagonal), series(WeightMode::Learned));
    print!("{}", report.table());
    assert!(slope(&e2e) > 2.0 * slope(&rap), "per-layer ms: learned {:.3}, otf-diag {:.3}", slope(&e2e), slope(&rap));
    for (a, b) in rap.iter().zip(&e2e) {
        assert!(a.1 < b.1, "L={}: otf-diag {:.3} ms, learned {:.3} ms", a.0, a.1, b.1);
    }
}

#[test]
fn memory_columns_come_from_the_model() {
    let _g = lock();
    let data = graph(400);
    let grid = cells(&[WeightMode::OnTheFlyDiagonal, WeightMode::Learned], &[3]);
    let opts = options(16);
    let report = time_epochs(&grid, &data, &opts).unwrap();
    let g = &data.graph;
    let size = ProblemSize { nodes: g.num_nodes(), edges: g.num_edges(), features: g.feature_dim(), outputs: data.num_classes };
    for (cell, row) in grid.iter().zip(&report.rows) {
        let cfg = ModelConfig { mode: cell.mode, layers: 3, ..opts.base.clone() };
        assert_eq!(row.memory, memory_model(&cfg, size));
    }
}
