//! Closed-form float counts for one full-batch training step.

use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingKind, ModelConfig};
use crate::propagation::WeightMode;

/// Sizes of the problem a step runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub nodes: usize,
    /// Directed edge count (stored CSR entries).
    pub edges: usize,
    pub features: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub embedding_params: usize,
    /// Values stored or drawn for the trunk weights.
    pub trunk_params: usize,
    pub classifier_params: usize,
    /// Every stored parameter, including the pretraining head.
    pub param_count: usize,
    /// Parameters the main phase updates.
    pub trainable_params: usize,
    pub gradient_floats: usize,
    /// Adam's two moment buffers.
    pub optimizer_floats: usize,
    /// Trunk and classifier activations kept for the backward pass.
    pub activation_floats: usize,
    /// Embedding activations kept for the backward pass.
    pub embedding_activation_floats: usize,
    /// Peak floats allocated during one step of this implementation:
    /// every tape buffer, dropout and activity masks, forward double
    /// buffers and backward temporaries, plus gradients.
    pub step_peak_floats: usize,
    /// Features and sparse operator values.
    pub data_floats: usize,
    pub total_floats: usize,
    pub model_bytes_estimate: usize,
}

/// Counts for one main-phase training step of `config` on `size`.
pub fn memory_model(config: &ModelConfig, size: ProblemSize) -> MemoryEstimate {
    let d = config.hidden;
    let c = size.features;
    let k = size.outputs;
    let n = size.nodes;
    let l = config.layers;
    let per_layer = match config.backbone {
        crate::propagation::Backbone::Gcn => 1,
        crate::propagation::Backbone::Gin => config.gin_depth,
    };
    let (embedding_params, embed_depth) = match config.embedding {
        EmbeddingKind::Mlp(depth) | EmbeddingKind::Learnable(depth) => (c * d + d + (depth - 1) * (d * d + d), depth),
        EmbeddingKind::Gnn1 => (c * d + d, 1),
        _ => (0, 0),
    };
    let trunk_params = l * per_layer
        * match config.mode {
            WeightMode::Identity => 0,
            WeightMode::FixedDiagonal | WeightMode::OnTheFlyDiagonal => d,
            WeightMode::Learned | WeightMode::FixedFull | WeightMode::OnTheFlyFull => d * d,
        };
    let cls = config.classifier_layers;
    let classifier_params = (cls - 1) * (d * d + d) + d * k + k;
    let pre_head = if config.embedding.needs_pretraining() { d * k + k } else { 0 };
    let param_count = embedding_params + trunk_params + classifier_params + pre_head;

    let learned = config.mode == WeightMode::Learned;
    let learnable_embedding = matches!(config.embedding, EmbeddingKind::Learnable(_));
    let embedding_trained = learnable_embedding || (learned && embedding_params > 0);
    let trainable_params = classifier_params
        + if learned { trunk_params } else { 0 }
        + if embedding_trained { embedding_params } else { 0 };
    let through_trunk = learned || learnable_embedding;
    let activation_floats = n * d * (cls + if through_trunk { l } else { 0 });
    let embedding_activation_floats = if embedding_trained { n * d * embed_depth } else { 0 };
    let data_floats = n * c + size.edges;
    let step_peak_floats = step_peak(config, size, through_trunk, embedding_trained, embed_depth) + trainable_params;
    let total_floats = param_count + 2 * trainable_params + step_peak_floats + data_floats;
    MemoryEstimate {
        embedding_params,
        trunk_params,
        classifier_params,
        param_count,
        trainable_params,
        gradient_floats: trainable_params,
        optimizer_floats: 2 * trainable_params,
        activation_floats,
        embedding_activation_floats,
        step_peak_floats,
        data_floats,
        total_floats,
        model_bytes_estimate: 8 * total_floats,
    }
}

/// Fresh `n × d` buffers alive while the fused propagate op runs its
/// backward pass: incoming gradient, masked gradient, recomputed `Ã·h`
/// and the gradient mixed back through the weight.
const PROPAGATE_BACKWARD_BUFFERS: usize = 4;

/// Bit masks are stored as one `u64` word per 64 entries.
fn mask_words(entries: usize) -> usize {
    entries.div_ceil(64)
}

/// Activation peak of one main-phase step, excluding gradients.
fn step_peak(
    config: &ModelConfig,
    size: ProblemSize,
    through_trunk: bool,
    embedding_trained: bool,
    embed_depth: usize,
) -> usize {
    let nd = size.nodes * config.hidden;
    let nk = size.nodes * size.outputs;
    let l = config.layers;
    let drop = config.dropout > 0.0;
    let dropout_layer = if drop { nd + mask_words(nd) } else { 0 };
    let full = matches!(config.mode, WeightMode::FixedFull | WeightMode::OnTheFlyFull | WeightMode::Learned);
    let per_layer = match config.backbone {
        crate::propagation::Backbone::Gcn => 1,
        crate::propagation::Backbone::Gin => config.gin_depth,
    };
    let trunk_masks = if drop && config.trunk_dropout { l * mask_words(nd) } else { 0 };
    // Classifier input after standardization, hidden layers (product,
    // bias, ReLU, dropout) with one backward gradient each (two with
    // dropout), logits with their bias and the two logit gradients.
    let norm = if config.classifier_norm { nd } else { 0 };
    let hidden = (config.classifier_layers - 1) * (3 * nd + dropout_layer + if drop { 2 * nd } else { nd });
    let head = norm + hidden + 4 * nk;
    if through_trunk {
        let embed = if embedding_trained { embed_depth * (3 * nd + dropout_layer) } else { 0 };
        let trunk = l * (nd + mask_words(nd));
        let backward = (PROPAGATE_BACKWARD_BUFFERS + per_layer - 1) * nd;
        embed + trunk + head + backward
    } else {
        // The trunk runs outside the tape: previous output, aggregation and,
        // for full weights, the product, alongside the drawn weights.
        let buffers = if l >= 2 { 2 } else { 1 } + usize::from(full);
        let drawn = if full { l * per_layer * config.hidden * config.hidden } else { 0 };
        let trunk = buffers * nd + drawn + trunk_masks;
        trunk.max(nd + head)
    }
}
