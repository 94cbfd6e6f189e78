//! Model configuration from defaults, a TOML file and command-line flags,
//! in increasing order of precedence.

use std::path::Path;

use clap::Args;
use rapgnn_core::graph::ReadoutKind;
use rapgnn_core::metrics::MetricKind;
use rapgnn_core::model::{EmbeddingKind, ModelConfig, TaskKind};
use rapgnn_core::propagation::{Backbone, SamplingPolicy, WeightMode};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

/// Reads a TOML file whose keys are [`ModelConfig`] fields; missing keys
/// keep their defaults.
pub fn read_config_file(path: &Path) -> Result<ModelConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.display().to_string(), msg: e.to_string() })
}

/// Model flags; every one is optional so that unset flags fall through to
/// the config file and then the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// TOML file with model settings.
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub task: Option<TaskKind>,
    /// gcn | gin
    #[arg(long)]
    pub backbone: Option<Backbone>,
    /// learned | identity | fixed-full | fixed-diag | otf-full | otf-diag
    #[arg(long)]
    pub mode: Option<WeightMode>,
    /// per-forward | per-epoch | fixed[:SEED]
    #[arg(long)]
    pub policy: Option<SamplingPolicy>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "lr-pre")]
    pub lr_pre: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "epochs-pre")]
    pub epochs_pre: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mlp:K | gnn1 | identity | fixed-random | random | learnable[:K] | pretrained:PATH
    #[arg(long)]
    pub embedding: Option<EmbeddingKind>,
    #[arg(long = "classifier-layers")]
    pub classifier_layers: Option<usize>,
    /// sum | mean
    #[arg(long)]
    pub readout: Option<ReadoutKind>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "gin-depth")]
    pub gin_depth: Option<usize>,
    #[arg(long = "inference-draws")]
    pub inference_draws: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// accuracy | roc_auc | rmse
    #[arg(long)]
    pub metric: Option<MetricKind>,
    /// Feed raw trunk outputs to the classifier.
    #[arg(long = "no-classifier-norm")]
    pub no_classifier_norm: bool,
    /// Keep dropout out of the propagation trunk.
    #[arg(long = "no-trunk-dropout")]
    pub no_trunk_dropout: bool,
}

impl ModelFlags {
    /// Defaults, overlaid by the config file, overlaid by set flags.
    pub fn resolve(&self) -> Result<ModelConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => read_config_file(path)?,
            None => ModelConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut ModelConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        set!(
            task,
            backbone,
            mode,
            policy,
            layers,
            hidden,
            dropout,
            lr,
            lr_pre,
            epochs,
            epochs_pre,
            seed,
            embedding,
            classifier_layers,
            readout,
            batch_size,
            gin_depth,
            inference_draws
        );
        if self.patience.is_some() {
            cfg.patience = self.patience;
        }
        if self.metric.is_some() {
            cfg.metric = self.metric;
        }
        if self.no_classifier_norm {
            cfg.classifier_norm = false;
        }
        if self.no_trunk_dropout {
            cfg.trunk_dropout = false;
        }
    }
}
