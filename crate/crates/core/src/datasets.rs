//! Synthetic data: stochastic block models, split and fold construction,
//! and small graph-level classification sets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{GraphDataset, GraphTargets, NodeDataset};
use crate::error::{Error, Result};
use crate::graph::{Masks, Split, SparseGraph};
use crate::math;
use crate::matrix::DenseMatrix;
use crate::rng::{Domain, SeedStream, Stream};

/// Stochastic block model with Gaussian block features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Scale of the per-block mean vectors (entries `mean_scale · N(0,1)`).
    pub mean_scale: f64,
    /// Shared per-entry noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl SbmSpec {
    /// `k` equal blocks of `size` nodes.
    pub fn balanced(k: usize, size: usize, p_in: f64, p_out: f64, feature_dim: usize, seed: u64) -> Self {
        Self { sizes: vec![size; k], p_in, p_out, feature_dim, mean_scale: 1.0, sigma: 1.0, seed }
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{} = {} is not a probability", name, p)));
            }
        }
        if self.p_in < self.p_out {
            return Err(Error::Config(format!(
                "p_in ({}) below p_out ({}) gives no community structure",
                self.p_in, self.p_out
            )));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("every block needs at least one node".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.mean_scale >= 0.0) {
            return Err(Error::Config("feature scales must be non-negative".into()));
        }
        Ok(())
    }

    /// Expected number of undirected edges.
    pub fn expected_edges(&self) -> f64 {
        let mut within = 0.0;
        for &s in &self.sizes {
            within += (s * (s - 1) / 2) as f64;
        }
        let n = self.num_nodes();
        let all = (n * (n - 1) / 2) as f64;
        self.p_in * within + self.p_out * (all - within)
    }
}

/// Visits `j ∈ [lo, hi)` each with probability `p`, skipping geometrically.
fn bernoulli_range(s: &mut Stream, lo: usize, hi: usize, p: f64, mut f: impl FnMut(usize)) {
    if p <= 0.0 || lo >= hi {
        return;
    }
    if p >= 1.0 {
        (lo..hi).for_each(f);
        return;
    }
    let log_q = math::ln(1.0 - p);
    let mut j = lo;
    loop {
        // 1 - U lies in (0, 1], so the logarithm is finite.
        let skip = math::floor(math::ln(1.0 - s.uniform()) / log_q);
        if skip >= (hi - j) as f64 {
            return;
        }
        j += skip as usize;
        f(j);
        j += 1;
        if j >= hi {
            return;
        }
    }
}

/// Undirected simple SBM graph with block labels and Gaussian features.
pub fn generate_sbm(spec: &SbmSpec) -> Result<SparseGraph> {
    spec.validate()?;
    let n = spec.num_nodes();
    let seed = SeedStream::new(spec.seed);
    let labels: Vec<usize> = spec.sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
    let mut starts = vec![0];
    for s in &spec.sizes {
        starts.push(starts.last().unwrap() + s);
    }
    let mut edges = Vec::new();
    for (i, &bi) in labels.iter().enumerate() {
        let mut s = seed.stream(Domain::Data, i as u64);
        for (b, w) in starts.windows(2).enumerate() {
            let lo = w[0].max(i + 1);
            let p = if b == bi { spec.p_in } else { spec.p_out };
            bernoulli_range(&mut s, lo, w[1], p, |j| edges.push((i, j)));
        }
    }
    let mut ms = seed.stream(Domain::Data, u64::MAX);
    let means = DenseMatrix::from_fn(spec.sizes.len(), spec.feature_dim, |_, _| spec.mean_scale * ms.normal());
    let mut fs = seed.stream(Domain::Data, u64::MAX - 1);
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |i, j| means.get(labels[i], j) + spec.sigma * fs.normal());
    let (g, _) = SparseGraph::from_edges(n, &edges, features, true)?;
    g.with_labels(labels)
}

/// Planetoid-style masks: `per_class` training nodes of every class, then
/// `val` and `test` nodes from the remainder, all chosen at random.
pub fn planetoid_split(labels: &[usize], num_classes: usize, per_class: usize, val: usize, test: usize, seed: u64) -> Result<Masks> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    SeedStream::new(seed).stream(Domain::Shuffle, 0).shuffle(&mut order);
    let mut masks = Masks::empty(n);
    let mut taken = vec![0usize; num_classes];
    let mut rest = Vec::with_capacity(n);
    for &v in &order {
        let c = labels[v];
        if c >= num_classes {
            return Err(Error::Invalid(format!("label {} outside {} classes", c, num_classes)));
        }
        if taken[c] < per_class {
            taken[c] += 1;
            masks.train[v] = true;
        } else {
            rest.push(v);
        }
    }
    if let Some(c) = taken.iter().position(|&t| t < per_class) {
        return Err(Error::Invalid(format!("class {} has fewer than {} nodes", c, per_class)));
    }
    if rest.len() < val + test {
        return Err(Error::Invalid(format!(
            "{} nodes left for {} validation and {} test nodes",
            rest.len(),
            val,
            test
        )));
    }
    for &v in &rest[..val] {
        masks.val[v] = true;
    }
    for &v in &rest[val..val + test] {
        masks.test[v] = true;
    }
    Ok(masks)
}

/// Node dataset from an SBM with a Planetoid-style split.
pub fn sbm_node_dataset(spec: &SbmSpec, per_class: usize, val: usize, test: usize) -> Result<NodeDataset> {
    let g = generate_sbm(spec)?;
    let k = spec.sizes.len();
    let masks = planetoid_split(&g.labels, k, per_class, val, test, spec.seed)?;
    Ok(NodeDataset { graph: g.with_masks(masks)?, num_classes: k })
}

/// Fold of every item for `k`-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub k: usize,
    pub fold_of: Vec<usize>,
    /// `false` when some class had fewer than `k` members and the folds
    /// were drawn without regard to labels.
    pub stratified: bool,
}

impl Folds {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }
}

/// Stratified folds: members of each class are shuffled and dealt round
/// robin, continuing the deal across classes so fold sizes differ by at
/// most one.
pub fn make_folds(labels: &[usize], k: usize, seed: u64) -> Result<Folds> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Config("cross-validation needs at least two folds".into()));
    }
    if n < k {
        return Err(Error::Invalid(format!("{} items cannot fill {} folds", n, k)));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= k);
    let groups = if stratified { by_class } else { vec![(0..n).collect()] };
    let mut fold_of = vec![0; n];
    let mut next = 0;
    for (ci, mut members) in groups.into_iter().enumerate() {
        SeedStream::new(seed).stream(Domain::Folds, ci as u64).shuffle(&mut members);
        for v in members {
            fold_of[v] = next % k;
            next += 1;
        }
    }
    Ok(Folds { k, fold_of, stratified })
}

/// Graph-level dataset of Erdős–Rényi graphs in two density classes.
/// Class 0 graphs have edge probability `0.15`, class 1 graphs `0.45`.
/// Features are a constant channel plus normalized degree and noise.
/// With `regress`, the target is the edge density instead.
pub fn synthetic_graph_set(count: usize, feature_dim: usize, regress: bool, seed: u64) -> Result<GraphDataset> {
    if feature_dim < 2 {
        return Err(Error::Config("synthetic graphs need at least two feature channels".into()));
    }
    let root = SeedStream::new(seed);
    let mut graphs = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for gi in 0..count {
        let mut s = root.stream(Domain::Data, gi as u64);
        let class = gi % 2;
        let n = 8 + s.below(9);
        let p = if class == 0 { 0.15 } else { 0.45 };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if s.bernoulli(p) {
                    edges.push((i, j));
                }
            }
        }
        let mut deg = vec![0usize; n];
        for &(i, j) in &edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        let features = DenseMatrix::from_fn(n, feature_dim, |i, j| match j {
            0 => 1.0,
            1 => deg[i] as f64 / n as f64,
            _ => 0.1 * s.normal(),
        });
        values.push(2.0 * edges.len() as f64 / (n * (n - 1)) as f64);
        classes.push(class);
        graphs.push(SparseGraph::from_edges(n, &edges, features, true)?.0);
    }
    let mut splits = vec![None; count];
    let mut order: Vec<usize> = (0..count).collect();
    root.stream(Domain::Shuffle, 0).shuffle(&mut order);
    let n_train = count * 8 / 10;
    let n_val = count / 10;
    for (pos, &i) in order.iter().enumerate() {
        splits[i] = Some(if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    let (targets, num_classes) = if regress { (GraphTargets::Value(values), 0) } else { (GraphTargets::Class(classes), 2) };
    Ok(GraphDataset { graphs, targets, splits, num_classes })
}
