//! Compressed sparse row graphs, the symmetric normalized propagation
//! operator, batching of many small graphs and per-graph pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;

/// Train / validation / test membership per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

/// Which of the three node splits to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Self { train: vec![false; n], val: vec![false; n], test: vec![false; n] }
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Node ids belonging to `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.mask(split)
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let apply = |m: &[bool]| {
            let mut out = vec![false; m.len()];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = m[old];
            }
            out
        };
        Self { train: apply(&self.train), val: apply(&self.val), test: apply(&self.test) }
    }
}

/// Unweighted simple graph in CSR form with node features, optional node
/// labels and optional split masks.
///
/// Column indices are strictly increasing within each row and there are no
/// self-loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGraph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    pub features: DenseMatrix,
    /// One class id per node for node-level tasks; empty otherwise.
    pub labels: Vec<usize>,
    pub masks: Option<Masks>,
}

fn validate_csr(n: usize, row_ptr: &[usize], col_idx: &[usize]) -> Result<()> {
    if row_ptr.len() != n + 1 {
        return Err(Error::Structure(format!(
            "row_ptr has length {}, expected {}",
            row_ptr.len(),
            n + 1
        )));
    }
    if row_ptr[0] != 0 {
        return Err(Error::Structure("row_ptr[0] must be 0".into()));
    }
    if row_ptr[n] != col_idx.len() {
        return Err(Error::Structure(format!(
            "row_ptr[n] = {} but there are {} column entries",
            row_ptr[n],
            col_idx.len()
        )));
    }
    for r in 0..n {
        if row_ptr[r] > row_ptr[r + 1] {
            return Err(Error::Structure(format!("row_ptr decreases at row {}", r)));
        }
        let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
        for (k, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::Structure(format!(
                    "column {} out of range in row {} (n = {})",
                    c, r, n
                )));
            }
            if k > 0 && cols[k - 1] >= c {
                return Err(Error::Structure(format!(
                    "columns of row {} are not strictly increasing",
                    r
                )));
            }
        }
    }
    Ok(())
}

impl SparseGraph {
    pub fn new(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        features: DenseMatrix,
    ) -> Result<Self> {
        validate_csr(n, &row_ptr, &col_idx)?;
        for r in 0..n {
            if col_idx[row_ptr[r]..row_ptr[r + 1]].binary_search(&r).is_ok() {
                return Err(Error::Structure(format!("self-loop at node {}", r)));
            }
        }
        if features.rows() != n {
            return Err(shape_err!("{} feature rows for {} nodes", features.rows(), n));
        }
        Ok(Self { n, row_ptr, col_idx, features, labels: Vec::new(), masks: None })
    }

    /// Builds a graph from an edge list. With `undirected` every edge is
    /// added in both directions. Duplicate edges are collapsed; the number
    /// dropped is returned alongside the graph. Self-loops are rejected.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        undirected: bool,
    ) -> Result<(Self, usize)> {
        let mut pairs = Vec::with_capacity(edges.len() * if undirected { 2 } else { 1 });
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Structure(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    u, v, n
                )));
            }
            if u == v {
                return Err(Error::Structure(format!("self-loop at node {}", u)));
            }
            pairs.push((u, v));
            if undirected {
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        let dropped = before - pairs.len();
        let mut row_ptr = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            row_ptr[u + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = pairs.into_iter().map(|(_, v)| v).collect();
        Ok((Self::new(n, row_ptr, col_idx, features)?, dropped))
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(shape_err!("{} labels for {} nodes", labels.len(), self.n));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        if masks.train.len() != self.n || masks.val.len() != self.n || masks.test.len() != self.n {
            return Err(shape_err!("split masks do not cover {} nodes", self.n));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Number of directed edges (each undirected edge counts twice).
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.row_ptr[v + 1] - self.row_ptr[v]).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|u| {
            self.neighbors(u)
                .iter()
                .all(|&v| self.neighbors(v).binary_search(&u).is_ok())
        })
    }

    /// Undirected edge list `(u, v)` with `u < v`, for symmetric graphs.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Dense 0/1 adjacency.
    pub fn densify(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                a.set(u, v, 1.0);
            }
        }
        a
    }
}

/// Square sparse matrix in CSR form with explicit values. Used both for the
/// normalized adjacency and for plain neighbor-sum operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// `D^{-1/2} A D^{-1/2}` over the graph's own edges (no added self-loops).
pub type NormalizedAdjacency = SparseOperator;

impl SparseOperator {
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_csr(n, &row_ptr, &col_idx)?;
        if values.len() != col_idx.len() {
            return Err(shape_err!("{} values for {} entries", values.len(), col_idx.len()));
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    /// The `n × n` identity.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Unit-valued adjacency `A`.
    pub fn adjacency(g: &SparseGraph) -> Self {
        Self {
            n: g.n,
            row_ptr: g.row_ptr.clone(),
            col_idx: g.col_idx.clone(),
            values: vec![1.0; g.col_idx.len()],
        }
    }

    /// `A + I` with unit values: the self-plus-neighbors sum used by GIN.
    pub fn adjacency_with_self(g: &SparseGraph) -> Self {
        let mut row_ptr = Vec::with_capacity(g.n + 1);
        let mut col_idx = Vec::with_capacity(g.col_idx.len() + g.n);
        row_ptr.push(0);
        for v in 0..g.n {
            let nbrs = g.neighbors(v);
            let split = nbrs.partition_point(|&u| u < v);
            col_idx.extend_from_slice(&nbrs[..split]);
            col_idx.push(v);
            col_idx.extend_from_slice(&nbrs[split..]);
            row_ptr.push(col_idx.len());
        }
        let values = vec![1.0; col_idx.len()];
        Self { n: g.n, row_ptr, col_idx, values }
    }

    /// `self + I`, merging into an existing diagonal entry when present.
    pub fn plus_identity(&self) -> Self {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::with_capacity(self.col_idx.len() + self.n);
        let mut values = Vec::with_capacity(self.col_idx.len() + self.n);
        row_ptr.push(0);
        for v in 0..self.n {
            let range = self.row_ptr[v]..self.row_ptr[v + 1];
            let cols = &self.col_idx[range.clone()];
            let vals = &self.values[range];
            let split = cols.partition_point(|&u| u < v);
            col_idx.extend_from_slice(&cols[..split]);
            values.extend_from_slice(&vals[..split]);
            if cols.get(split) == Some(&v) {
                col_idx.push(v);
                values.push(vals[split] + 1.0);
                col_idx.extend_from_slice(&cols[split + 1..]);
                values.extend_from_slice(&vals[split + 1..]);
            } else {
                col_idx.push(v);
                values.push(1.0);
                col_idx.extend_from_slice(&cols[split..]);
                values.extend_from_slice(&vals[split..]);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n: self.n, row_ptr, col_idx, values }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn densify(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                a.set(r, self.col_idx[k], self.values[k]);
            }
        }
        a
    }

    /// `self · h`. Each output row accumulates its entries in ascending
    /// column order, so results are bitwise reproducible.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.rows() != self.n {
            return Err(shape_err!("spmm of {}x{} operator with {} rows", self.n, self.n, h.rows()));
        }
        let d = h.cols();
        let mut out = DenseMatrix::zeros(self.n, d);
        for r in 0..self.n {
            let acc = out.row_mut(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.values[k];
                for (o, x) in acc.iter_mut().zip(h.row(self.col_idx[k])) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · h`, scattering row contributions in row-major order.
    pub fn spmm_transpose(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.rows() != self.n {
            return Err(shape_err!(
                "transposed spmm of {}x{} operator with {} rows",
                self.n,
                self.n,
                h.rows()
            ));
        }
        let d = h.cols();
        let mut out = DenseMatrix::zeros(self.n, d);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.values[k];
                let c = self.col_idx[k];
                let src = h.row(r);
                for (o, x) in out.row_mut(c).iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }
}

/// Builds `D^{-1/2} A D^{-1/2}` with the CSR pattern of `g`. Isolated nodes
/// have empty rows.
pub fn sym_normalize(g: &SparseGraph) -> NormalizedAdjacency {
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / math::sqrt(d as f64) })
        .collect();
    let mut values = Vec::with_capacity(g.col_idx.len());
    for u in 0..g.n {
        for &v in g.neighbors(u) {
            values.push(inv_sqrt[u] * inv_sqrt[v]);
        }
    }
    SparseOperator {
        n: g.n,
        row_ptr: g.row_ptr.clone(),
        col_idx: g.col_idx.clone(),
        values,
    }
}

/// `spmm(adj, h)` as a free function.
pub fn spmm(adj: &SparseOperator, h: &DenseMatrix) -> Result<DenseMatrix> {
    adj.spmm(h)
}

/// Unnormalized neighbor sum `Σ_{u ∈ N(v)} h_u` for every node `v`.
pub fn aggregate_sum_neighbors(g: &SparseGraph, h: &DenseMatrix) -> Result<DenseMatrix> {
    if h.rows() != g.n {
        return Err(shape_err!("neighbor sum over {} nodes with {} rows", g.n, h.rows()));
    }
    let mut out = DenseMatrix::zeros(g.n, h.cols());
    for v in 0..g.n {
        let acc = out.row_mut(v);
        for &u in g.neighbors(v) {
            for (o, x) in acc.iter_mut().zip(h.row(u)) {
                *o += x;
            }
        }
    }
    Ok(out)
}

/// Disjoint union of several graphs with a node-to-graph assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub graph: SparseGraph,
    /// `assignment[v]` is the index of the graph node `v` came from.
    pub assignment: Vec<usize>,
    /// Node count per member graph.
    pub sizes: Vec<usize>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.sizes.len()
    }

    /// Row offset of each member graph within the batch.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len() + 1);
        let mut acc = 0;
        out.push(0);
        for s in &self.sizes {
            acc += s;
            out.push(acc);
        }
        out
    }
}

/// Stacks graphs into one block-diagonal graph.
pub fn batch_graphs(graphs: &[&SparseGraph]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Invalid("cannot batch an empty list of graphs".into()))?;
    let c = first.feature_dim();
    let total_n: usize = graphs.iter().map(|g| g.n).sum();
    let total_m: usize = graphs.iter().map(|g| g.num_edges()).sum();
    let mut row_ptr = Vec::with_capacity(total_n + 1);
    let mut col_idx = Vec::with_capacity(total_m);
    let mut features = Vec::with_capacity(total_n * c);
    let mut assignment = Vec::with_capacity(total_n);
    let mut sizes = Vec::with_capacity(graphs.len());
    row_ptr.push(0);
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != c {
            return Err(shape_err!(
                "graph {} has feature width {}, expected {}",
                gi,
                g.feature_dim(),
                c
            ));
        }
        for v in 0..g.n {
            col_idx.extend(g.neighbors(v).iter().map(|u| u + offset));
            row_ptr.push(col_idx.len());
            assignment.push(gi);
        }
        features.extend_from_slice(g.features.data());
        sizes.push(g.n);
        offset += g.n;
    }
    let features = DenseMatrix::new(total_n, c, features)?;
    let graph = SparseGraph { n: total_n, row_ptr, col_idx, features, labels: Vec::new(), masks: None };
    Ok(GraphBatch { graph, assignment, sizes })
}

/// Per-graph pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReadoutKind {
    Sum,
    Mean,
}

impl TryFrom<String> for ReadoutKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ReadoutKind> for String {
    fn from(v: ReadoutKind) -> String {
        String::from(match v {
            ReadoutKind::Sum => "sum",
            ReadoutKind::Mean => "mean",
        })
    }
}

impl FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Invalid(format!("unknown readout kind `{}`", other))),
        }
    }
}

/// Pools node rows of `h` into one row per graph of the batch.
pub fn readout(batch: &GraphBatch, h: &DenseMatrix, kind: ReadoutKind) -> Result<DenseMatrix> {
    pool_rows(&batch.assignment, &batch.sizes, h, kind)
}

pub(crate) fn pool_rows(
    assignment: &[usize],
    sizes: &[usize],
    h: &DenseMatrix,
    kind: ReadoutKind,
) -> Result<DenseMatrix> {
    if h.rows() != assignment.len() {
        return Err(shape_err!(
            "readout of {} rows over a batch of {} nodes",
            h.rows(),
            assignment.len()
        ));
    }
    let mut out = DenseMatrix::zeros(sizes.len(), h.cols());
    for (v, &g) in assignment.iter().enumerate() {
        for (o, x) in out.row_mut(g).iter_mut().zip(h.row(v)) {
            *o += x;
        }
    }
    if kind == ReadoutKind::Mean {
        for (g, &s) in sizes.iter().enumerate() {
            if s > 0 {
                let inv = 1.0 / s as f64;
                for o in out.row_mut(g) {
                    *o *= inv;
                }
            }
        }
    }
    Ok(out)
}

/// Relabels node `v` as `perm[v]`, carrying features, labels and masks along.
pub fn permute_graph(g: &SparseGraph, perm: &[usize]) -> Result<SparseGraph> {
    check_permutation(perm, g.n)?;
    let edges: Vec<(usize, usize)> = (0..g.n)
        .flat_map(|u| g.neighbors(u).iter().map(move |&v| (perm[u], perm[v])))
        .collect();
    let mut features = DenseMatrix::zeros(g.n, g.feature_dim());
    for (old, &new) in perm.iter().enumerate() {
        features.row_mut(new).copy_from_slice(g.features.row(old));
    }
    let (mut out, _) = SparseGraph::from_edges(g.n, &edges, features, false)?;
    if !g.labels.is_empty() {
        let mut labels = vec![0; g.n];
        for (old, &new) in perm.iter().enumerate() {
            labels[new] = g.labels[old];
        }
        out.labels = labels;
    }
    out.masks = g.masks.as_ref().map(|m| m.permuted(perm));
    Ok(out)
}

/// Applies `perm` to the rows of `h`: row `v` moves to `perm[v]`.
pub fn permute_rows(h: &DenseMatrix, perm: &[usize]) -> Result<DenseMatrix> {
    check_permutation(perm, h.rows())?;
    let mut out = DenseMatrix::zeros(h.rows(), h.cols());
    for (old, &new) in perm.iter().enumerate() {
        out.row_mut(new).copy_from_slice(h.row(old));
    }
    Ok(out)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Invalid(format!("permutation of length {} for {} nodes", perm.len(), n)));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Invalid(String::from("permutation is not a bijection")));
        }
        seen[p] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn graph(n: usize, edges: &[(usize, usize)], c: usize) -> SparseGraph {
        let feats = DenseMatrix::from_fn(n, c, |i, j| (i * c + j) as f64);
        SparseGraph::from_edges(n, edges, feats, true).unwrap().0
    }

    #[test]
    fn path_normalization_is_identity_on_edges() {
        let g = graph(2, &[(0, 1)], 1);
        let a = sym_normalize(&g).densify();
        assert_eq!(a, DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap());
    }

    #[test]
    fn triangle_entries_are_one_half() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)], 1);
        let a = sym_normalize(&g);
        // 1/sqrt(2) * 1/sqrt(2)
        for v in a.values() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert_eq!(a.nnz(), 6);
    }

    #[test]
    fn isolated_node_has_zero_row_and_column() {
        let g = graph(3, &[(0, 1)], 1);
        let a = sym_normalize(&g).densify();
        for k in 0..3 {
            assert_eq!(a.get(2, k), 0.0);
            assert_eq!(a.get(k, 2), 0.0);
        }
        assert!(a.is_finite());
    }

    #[test]
    fn normalization_keeps_pattern() {
        let g = graph(5, &[(0, 1), (1, 2), (3, 4), (0, 4)], 2);
        let a = sym_normalize(&g);
        assert_eq!(a.row_ptr(), g.row_ptr());
        assert_eq!(a.col_idx(), g.col_idx());
    }

    #[test]
    fn malformed_csr_is_a_structure_error() {
        let f = DenseMatrix::zeros(2, 1);
        let err = SparseGraph::new(2, vec![0, 2, 1], vec![1, 0], f.clone()).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        let err = SparseGraph::new(2, vec![0, 1, 2], vec![1, 5], f.clone()).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        let err = SparseGraph::new(2, vec![0, 1, 2], vec![0, 0], f).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn spmm_examples() {
        let eye = SparseOperator::identity(3);
        let h = DenseMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        assert_eq!(eye.spmm(&h).unwrap(), h);

        let g = graph(2, &[(0, 1)], 1);
        let a = sym_normalize(&g);
        let h = DenseMatrix::identity(2);
        assert_eq!(a.spmm(&h).unwrap(), DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap());
        assert!(matches!(a.spmm(&DenseMatrix::zeros(3, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn neighbor_sum_examples() {
        let g = graph(3, &[(0, 1)], 1);
        let h = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let s = aggregate_sum_neighbors(&g, &h).unwrap();
        assert_eq!(s.row(0), &[3.0, 4.0]);
        assert_eq!(s.row(1), &[1.0, 2.0]);
        assert_eq!(s.row(2), &[0.0, 0.0]);

        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)], 1);
        let s = aggregate_sum_neighbors(&k3, &DenseMatrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_eq!(s.get(i, j), expect);
            }
        }
    }

    #[test]
    fn self_plus_neighbors_operator() {
        let g = graph(3, &[(0, 2)], 1);
        let op = SparseOperator::adjacency_with_self(&g);
        let dense = op.densify();
        let expect = g.densify().add(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(dense, expect);
    }

    #[test]
    fn batching_two_paths() {
        let a = graph(2, &[(0, 1)], 2);
        let b = graph(2, &[(0, 1)], 2);
        let batch = batch_graphs(&[&a, &b]).unwrap();
        assert_eq!(batch.assignment, vec![0, 0, 1, 1]);
        assert_eq!(batch.graph.num_nodes(), 4);
        assert_eq!(batch.graph.neighbors(2), &[3]);
        assert_eq!(batch.offsets(), vec![0, 2, 4]);
    }

    #[test]
    fn batching_single_graph_is_identity() {
        let a = graph(4, &[(0, 1), (2, 3), (1, 3)], 3);
        let batch = batch_graphs(&[&a]).unwrap();
        assert_eq!(batch.graph, a);
        assert!(batch.assignment.iter().all(|&g| g == 0));
    }

    #[test]
    fn batching_errors() {
        assert!(matches!(batch_graphs(&[]), Err(Error::Invalid(_))));
        let a = graph(2, &[(0, 1)], 2);
        let b = graph(2, &[(0, 1)], 3);
        assert!(matches!(batch_graphs(&[&a, &b]), Err(Error::Shape(_))));
    }

    #[test]
    fn readout_sum_and_mean() {
        let a = graph(1, &[], 2);
        let b = graph(1, &[], 2);
        let batch = batch_graphs(&[&a, &b]).unwrap();
        let h = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(readout(&batch, &h, ReadoutKind::Sum).unwrap(), h);

        let c = graph(2, &[(0, 1)], 2);
        let batch = batch_graphs(&[&c]).unwrap();
        let h = DenseMatrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]).unwrap();
        assert_eq!(readout(&batch, &h, ReadoutKind::Sum).unwrap().row(0), &[2.0, 4.0]);
        assert_eq!(readout(&batch, &h, ReadoutKind::Mean).unwrap().row(0), &[1.0, 2.0]);
        assert!("max".parse::<ReadoutKind>().is_err());
    }

    #[test]
    fn identity_permutation_is_a_no_op() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)], 2).with_labels(vec![0, 1, 0, 1]).unwrap();
        let p = permute_graph(&g, &[0, 1, 2, 3]).unwrap();
        assert_eq!(p, g);
    }

    #[test]
    fn swapping_path_ends_keeps_structure() {
        let g = graph(3, &[(0, 1), (1, 2)], 1);
        let p = permute_graph(&g, &[2, 1, 0]).unwrap();
        assert_eq!(p.densify(), g.densify());
        assert_eq!(p.features.row(0), g.features.row(2));
    }

    #[test]
    fn non_bijective_permutation_rejected() {
        let g = graph(3, &[(0, 1)], 1);
        assert!(permute_graph(&g, &[0, 0, 1]).is_err());
        assert!(permute_graph(&g, &[0, 1]).is_err());
    }
}
