//! In-memory learning problems: one graph with labelled nodes, or a set of
//! graphs with one target each.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Split, SparseGraph};
use crate::model::TaskKind;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphTargets {
    Class(Vec<usize>),
    Value(Vec<f64>),
}

impl GraphTargets {
    pub fn len(&self) -> usize {
        match self {
            GraphTargets::Class(v) => v.len(),
            GraphTargets::Value(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Node classification on a single graph; labels and masks live on the
/// graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub graph: SparseGraph,
    pub num_classes: usize,
}

/// Many graphs, each with a target and a split.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub graphs: Vec<SparseGraph>,
    pub targets: GraphTargets,
    /// Split of each graph; `None` leaves the graph out entirely.
    pub splits: Vec<Option<Split>>,
    /// Class count, or 0 for regression.
    pub num_classes: usize,
}

impl GraphDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.graphs.len()).filter(|&i| self.splits[i] == Some(split)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Node(NodeDataset),
    Graphs(GraphDataset),
}

impl Dataset {
    pub fn task(&self) -> TaskKind {
        match self {
            Dataset::Node(_) => TaskKind::NodeClass,
            Dataset::Graphs(g) => match g.targets {
                GraphTargets::Class(_) => TaskKind::GraphClass,
                GraphTargets::Value(_) => TaskKind::GraphRegress,
            },
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Node(d) => d.graph.feature_dim(),
            Dataset::Graphs(d) => d.graphs.first().map_or(0, SparseGraph::feature_dim),
        }
    }

    /// Width of the model output.
    pub fn out_dim(&self) -> usize {
        match self {
            Dataset::Node(d) => d.num_classes,
            Dataset::Graphs(d) => match d.targets {
                GraphTargets::Class(_) => d.num_classes,
                GraphTargets::Value(_) => 1,
            },
        }
    }

    /// Number of items carrying `split`.
    pub fn split_len(&self, split: Split) -> usize {
        match self {
            Dataset::Node(d) => d.graph.masks.as_ref().map_or(0, |m| m.indices(split).len()),
            Dataset::Graphs(d) => d.indices(split).len(),
        }
    }

    /// Structural checks shared by every training entry point.
    pub fn validate(&self) -> Result<()> {
        match self {
            Dataset::Node(d) => {
                let n = d.graph.num_nodes();
                if d.graph.labels.len() != n {
                    return Err(Error::Invalid(format!("{} labels for {} nodes", d.graph.labels.len(), n)));
                }
                if let Some(&bad) = d.graph.labels.iter().find(|&&l| l >= d.num_classes) {
                    return Err(Error::Invalid(format!("label {} outside {} classes", bad, d.num_classes)));
                }
                if d.graph.masks.is_none() {
                    return Err(Error::Invalid("node dataset has no split masks".into()));
                }
            }
            Dataset::Graphs(d) => {
                if d.graphs.is_empty() {
                    return Err(Error::Invalid("graph dataset is empty".into()));
                }
                if d.targets.len() != d.graphs.len() || d.splits.len() != d.graphs.len() {
                    return Err(Error::Invalid(format!(
                        "{} graphs with {} targets and {} split entries",
                        d.graphs.len(),
                        d.targets.len(),
                        d.splits.len()
                    )));
                }
                let c = d.graphs[0].feature_dim();
                if d.graphs.iter().any(|g| g.feature_dim() != c) {
                    return Err(Error::Invalid("graphs differ in feature width".into()));
                }
                if let GraphTargets::Class(t) = &d.targets {
                    if let Some(&bad) = t.iter().find(|&&l| l >= d.num_classes) {
                        return Err(Error::Invalid(format!("label {} outside {} classes", bad, d.num_classes)));
                    }
                }
            }
        }
        if self.split_len(Split::Train) == 0 {
            return Err(Error::Invalid("training split is empty".into()));
        }
        Ok(())
    }
}
