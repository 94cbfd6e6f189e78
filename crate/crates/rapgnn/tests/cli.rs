use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rapgnn::bundle::{load_bundle, MANIFEST};
use rapgnn::cli::{EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cora-mini")
}

fn rapgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rapgnn")).args(args).env_remove("RAP_THREADS").output().unwrap()
}

fn code(out: &Output) -> u8 {
    out.status.code().expect("exited normally") as u8
}

fn ok(args: &[&str]) -> Output {
    let out = rapgnn(args);
    assert_eq!(code(&out), EXIT_OK, "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: &[&str] = &["--layers", "2", "--hidden", "16", "--epochs", "15", "--epochs-pre", "15"];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn train_writes_summary_with_metric_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&fixture()), "--out", s(&out), "--mode", "rap-diagonal", "--backbone", "gcn", "--layers", "8", "--epochs", "30", "--epochs-pre", "30"]);
    for f in ["manifest.json", "model.bin", "history.csv", "pretrain_history.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{} missing", f);
    }
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["metric"], "accuracy");
    let acc = summary["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["experiment"], "train");
    assert_eq!(manifest["config"]["mode"], "otf-diag");
    assert_eq!(manifest["config"]["layers"], 8);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,train_accuracy,val_accuracy,test_accuracy,wallclock_ms");
    assert_eq!(history.lines().count(), 31);
    assert!(history.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn record_time_fills_the_wallclock_column() {
    let dir = tempfile::tempdir().unwrap();
    train(&fixture(), dir.path(), &["--record-time"]);
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let last: f64 = history.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(last > 0.0);
}

#[test]
fn identity_embedding_with_mismatched_width_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rapgnn(&["train", "--data", s(&fixture()), "--out", s(dir.path()), "--mode", "rap-diagonal", "--embedding", "identity", "--hidden", "32"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&out.stderr).contains("identity embedding needs feature width == hidden width"));
}

#[test]
fn corrupt_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir(&src).unwrap();
    for entry in fs::read_dir(fixture()).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), src.join(entry.file_name())).unwrap();
    }
    fs::write(src.join(MANIFEST), "{\"task\": \"node-class\", \"n\": ").unwrap();
    assert_eq!(code(&rapgnn(&["ingest", s(&src), s(&dir.path().join("dst"))])), EXIT_USAGE);
    assert_eq!(code(&rapgnn(&["train", "--data", s(&src), "--out", s(&dir.path().join("t"))])), EXIT_USAGE);
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = rapgnn(&["train", "--data", s(&fixture()), "--out", s(dir.path()), "--lr", "1e300", "--lr-pre", "1e300", "--epochs", "5", "--epochs-pre", "5"]);
    assert_eq!(code(&out), EXIT_NUMERICAL, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let fx = fixture();
    let f = s(&fx);
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--data", d, "--out", d, "--mode", "sideways"],
        vec!["train", "--out", d],
        vec!["train", "--data", f, "--out", d, "--seeds", "0"],
        vec!["train", "--data", f, "--out", d, "--cv", "3"],
        vec!["train", "--data", f, "--out", d, "--embedding", "pretrained:/nonexistent.bin"],
        vec!["bench", "--threads", "2", "--out", d],
        vec!["rank", "--model", "/nonexistent.bin", "--data", f, "--out", d, "--tol", "sloppy"],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(code(&rapgnn(&args)), EXIT_USAGE, "{:?}", args);
    }
}

#[test]
fn ingest_round_trips_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let dst = dir.path().join("cora");
    ok(&["ingest", s(&fixture()), s(&dst)]);
    assert_eq!(load_bundle(&dst).unwrap().dataset, load_bundle(&fixture()).unwrap().dataset);
    // ingesting the normalized form again is byte-stable
    let again = dir.path().join("again");
    ok(&["ingest", s(&dst), s(&again)]);
    for f in ["manifest.json", "edges.tsv", "features.tsv", "labels.tsv", "splits.tsv"] {
        assert_eq!(fs::read(dst.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{}", f);
    }
}

/// Every file of a run except the manifest, whose output path differs.
fn run_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        train(&fixture(), out, &["--seeds", "3", "--parallel-seeds", "2"]);
        ok(&["eval", "--model", s(&out.join("seed-0/model.bin")), "--data", s(&fixture()), "--out", s(&out.join("eval"))]);
    }
    let (fa, fb) = (run_files(&a), run_files(&b));
    assert!(fa.len() >= 14, "{:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(fa, fb);
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["config_digest"], mb["config_digest"]);
    assert_eq!(ma["seeds"], serde_json::json!([0, 1, 2]));
}

#[test]
fn multi_seed_summary_aggregates_seed_runs() {
    let dir = tempfile::tempdir().unwrap();
    train(&fixture(), dir.path(), &["--seeds", "3", "--seed", "10"]);
    let summary = json(&dir.path().join("summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    let tests: Vec<f64> = runs.iter().map(|r| r["report"]["test"].as_f64().unwrap()).collect();
    let mean = tests.iter().sum::<f64>() / 3.0;
    assert!((summary["accuracy"].as_f64().unwrap() - mean).abs() < 1e-12);
    for seed in 10..13 {
        let one = json(&dir.path().join(format!("seed-{}/summary.json", seed)));
        assert_eq!(one["accuracy"].as_f64().unwrap(), tests[seed - 10]);
    }
}

#[test]
fn eval_reproduces_the_training_summary_with_fixed_weights() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&fixture(), &run, &["--policy", "fixed:3"]);
    let summary = json(&run.join("summary.json"));
    for (split, key) in [("test", "test"), ("val", "val"), ("train", "train")] {
        let out = dir.path().join(split);
        ok(&["eval", "--model", s(&run.join("model.bin")), "--data", s(&fixture()), "--split", split, "--out", s(&out)]);
        let e = json(&out.join("eval.json"));
        assert_eq!(e["accuracy"], summary[key], "{}", split);
    }
}

#[test]
fn eval_rejects_an_incompatible_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&fixture(), &run, &[]);
    let other = dir.path().join("other");
    ok(&["generate", "sbm", "--features", "8", "--out", s(&other)]);
    let out = rapgnn(&["eval", "--model", s(&run.join("model.bin")), "--data", s(&other), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&out), EXIT_USAGE);
    let out = rapgnn(&["rank", "--model", s(&run.join("model.bin")), "--data", s(&other), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), EXIT_USAGE);
}

#[test]
fn pretrained_embedding_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    let fx = fixture();
    let mut args = vec!["pretrain", "--data", s(&fx), "--out", s(&pre)];
    args.extend_from_slice(QUICK);
    ok(&args);
    assert!(json(&pre.join("summary.json"))["accuracy"].is_number());
    let emb = format!("pretrained:{}", s(&pre.join("embedding.bin")));
    let run = dir.path().join("run");
    train(&fixture(), &run, &["--embedding", &emb]);
    assert!(!run.join("pretrain_history.csv").exists());
    let summary = json(&run.join("summary.json"));
    assert!(summary["pretrain"].is_null());
    // the saved model stands alone
    ok(&["eval", "--model", s(&run.join("model.bin")), "--data", s(&fixture()), "--out", s(&dir.path().join("e"))]);
    // pretraining needs an embedding that is pretrained
    let out = rapgnn(&["pretrain", "--data", s(&fixture()), "--out", s(&pre), "--embedding", "fixed-random"]);
    assert_eq!(code(&out), EXIT_USAGE);
}

#[test]
fn rank_profile_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&fixture()), "--out", s(&run), "--layers", "6", "--hidden", "16", "--epochs", "5", "--epochs-pre", "5", "--policy", "fixed:2"]);
    let out = dir.path().join("rank");
    ok(&["rank", "--model", s(&run.join("model.bin")), "--data", s(&fixture()), "--out", s(&out), "--weights-layer", "1"]);
    let tsv = fs::read_to_string(out.join("rank.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(tsv.lines().next().unwrap(), "layer\trank\tmean_variance");
    assert_eq!(rows.len(), 7);
    for (l, r) in rows.iter().enumerate() {
        assert_eq!(r[0], l.to_string());
        let rank: usize = r[1].parse().unwrap();
        assert!((1..=16).contains(&rank));
        assert!(r[2].parse::<f64>().unwrap() >= 0.0);
    }
    let w = fs::read_to_string(out.join("weights_layer1.tsv")).unwrap();
    let w: Vec<Vec<f64>> = w.lines().map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!((w.len(), w[0].len()), (16, 16));
    for (i, row) in w.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!(i == j || *v == 0.0, "off-diagonal entry in a diagonal draw");
        }
    }
    let linear = dir.path().join("linear");
    ok(&["rank", "--model", s(&run.join("model.bin")), "--data", s(&fixture()), "--out", s(&linear), "--linear", "--tol", "rel:1e-9"]);
    let ranks: Vec<usize> = fs::read_to_string(linear.join("rank.tsv")).unwrap().lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(ranks.windows(2).all(|w| w[1] >= w[0]), "{:?}", ranks);
}

#[test]
fn cross_validation_reports_the_best_mean_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("graphs");
    ok(&["generate", "graphs", "--count", "40", "--out", s(&data)]);
    let out = dir.path().join("cv");
    ok(&["train", "--data", s(&data), "--out", s(&out), "--cv", "4", "--layers", "2", "--hidden", "8", "--epochs", "12", "--epochs-pre", "12"]);
    let report = json(&out.join("cv.json"));
    let curves = fs::read_to_string(out.join("cv_curves.csv")).unwrap();
    let mean: Vec<f64> = curves.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(mean.len(), 12);
    let best = (0..mean.len()).fold(0, |b, e| if mean[e] > mean[b] { e } else { b });
    assert_eq!(report["best_epoch"].as_u64().unwrap() as usize, best);
    assert_eq!(report["folds"], 4);
}

#[test]
fn bench_writes_csv_with_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench", "--nodes", "300", "--depths", "2,4", "--width", "16", "--modes", "otf-diag,learned", "--out", s(dir.path())]);
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("# cpu: "));
    assert!(csv.contains("# threads: 1"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("mode,backbone,layers,hidden"));
    assert_eq!(rows.len(), 5);
    let report = json(&dir.path().join("bench.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
}
