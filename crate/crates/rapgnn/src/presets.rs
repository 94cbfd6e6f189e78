//! Named synthetic datasets.

use rapgnn_core::data::NodeDataset;
use rapgnn_core::datasets::{sbm_node_dataset, SbmSpec};
use rapgnn_core::Result;

/// Seven communities of a citation-graph size: 2000 nodes, about 4000
/// undirected edges, 64 noisy features, 20 training nodes per class.
pub fn sbm_2000_spec(seed: u64) -> SbmSpec {
    let mut sizes = vec![286; 6];
    sizes.push(284);
    SbmSpec { sizes, p_in: 0.014, p_out: 0.00058, feature_dim: 64, mean_scale: 0.3, sigma: 1.0, seed }
}

pub fn sbm_2000(seed: u64) -> Result<NodeDataset> {
    sbm_node_dataset(&sbm_2000_spec(seed), 20, 500, 1000)
}

/// Three communities with about 20000 nodes and 90000 directed edges,
/// 500 features.
pub fn pubmed_scale_spec(seed: u64) -> SbmSpec {
    SbmSpec {
        sizes: vec![6573, 6572, 6572],
        p_in: 0.0006,
        p_out: 0.00004,
        feature_dim: 500,
        mean_scale: 0.3,
        sigma: 1.0,
        seed,
    }
}

pub fn pubmed_scale(seed: u64) -> Result<NodeDataset> {
    sbm_node_dataset(&pubmed_scale_spec(seed), 20, 500, 1000)
}
