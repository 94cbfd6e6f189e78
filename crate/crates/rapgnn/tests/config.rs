use clap::Parser;
use rapgnn::config::{read_config_file, ConfigError, ModelFlags};
use rapgnn_core::model::{EmbeddingKind, ModelConfig};
use rapgnn_core::propagation::{Backbone, SamplingPolicy, WeightMode};

#[derive(Parser)]
struct Args {
    #[command(flatten)]
    flags: ModelFlags,
}

fn flags(args: &[&str]) -> ModelFlags {
    Args::try_parse_from(std::iter::once("test").chain(args.iter().copied())).unwrap().flags
}

#[test]
fn defaults_apply_without_file_or_flags() {
    let cfg = flags(&[]).resolve().unwrap();
    assert_eq!(cfg, ModelConfig::default());
    assert_eq!((cfg.hidden, cfg.layers, cfg.dropout, cfg.lr), (64, 4, 0.3, 0.005));
}

#[test]
fn flags_override_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    std::fs::write(&path, "hidden = 32\nlayers = 6\nmode = \"fixed-diag\"\ndropout = 0.1\n").unwrap();
    let p = path.to_str().unwrap();

    let from_file = flags(&["--config", p]).resolve().unwrap();
    assert_eq!((from_file.hidden, from_file.layers, from_file.dropout), (32, 6, 0.1));
    assert_eq!(from_file.mode, WeightMode::FixedDiagonal);
    assert_eq!(from_file.lr, ModelConfig::default().lr);

    let both = flags(&["--config", p, "--layers", "8", "--mode", "rap-diagonal", "--policy", "fixed:4"]).resolve().unwrap();
    assert_eq!((both.hidden, both.layers, both.dropout), (32, 8, 0.1));
    assert_eq!(both.mode, WeightMode::OnTheFlyDiagonal);
    assert_eq!(both.policy, SamplingPolicy::Fixed(4));
}

#[test]
fn every_documented_flag_parses() {
    let cfg = flags(&[
        "--backbone", "gin", "--mode", "otf-full", "--policy", "per-epoch", "--layers", "3", "--hidden", "16",
        "--dropout", "0.5", "--lr", "0.01", "--lr-pre", "0.02", "--epochs", "7", "--epochs-pre", "9", "--seed", "5",
        "--embedding", "learnable:2", "--no-classifier-norm",
    ])
    .resolve()
    .unwrap();
    assert_eq!(cfg.backbone, Backbone::Gin);
    assert_eq!(cfg.mode, WeightMode::OnTheFlyFull);
    assert_eq!(cfg.policy, SamplingPolicy::PerEpoch);
    assert_eq!((cfg.layers, cfg.hidden, cfg.epochs, cfg.epochs_pre, cfg.seed), (3, 16, 7, 9, 5));
    assert_eq!((cfg.dropout, cfg.lr, cfg.lr_pre), (0.5, 0.01, 0.02));
    assert_eq!(cfg.embedding, EmbeddingKind::Learnable(2));
    assert!(!cfg.classifier_norm);
    for e in ["mlp:2", "gnn1", "identity", "fixed-random", "random", "learnable", "pretrained:x.bin"] {
        assert!(flags(&["--embedding", e]).embedding.is_some(), "{}", e);
    }
}

#[test]
fn bad_values_are_usage_errors() {
    for args in [&["--mode", "bogus"][..], &["--layers", "-1"], &["--embedding", "mlp:0"], &["--policy", "sometimes"]] {
        assert!(Args::try_parse_from(std::iter::once("test").chain(args.iter().copied())).is_err(), "{:?}", args);
    }
}

#[test]
fn config_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_config_file(&dir.path().join("none.toml")), Err(ConfigError::Io { .. })));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "hiden = 3\n").unwrap();
    assert!(matches!(read_config_file(&bad), Err(ConfigError::Parse { .. })));
}
