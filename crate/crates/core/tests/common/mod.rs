#![allow(dead_code)]

use rapgnn_core::graph::SparseGraph;
use rapgnn_core::matrix::DenseMatrix;
use rapgnn_core::params::Gradients;
use rapgnn_core::rng::{Domain, SeedStream, Stream};

pub fn stream(seed: u64) -> Stream {
    SeedStream::new(seed).stream(Domain::Analysis, 77)
}

pub fn normal_matrix(s: &mut Stream, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| s.normal())
}

/// Entries bounded away from zero so ReLU kinks are not crossed by a
/// finite-difference step.
pub fn kink_free(s: &mut Stream, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let v = s.uniform_range(0.1, 1.5);
        if s.bernoulli(0.5) { v } else { -v }
    })
}

/// Undirected Erdős–Rényi graph with Gaussian features.
pub fn random_graph(s: &mut Stream, n: usize, p: f64, c: usize) -> SparseGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if s.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    let x = normal_matrix(s, n, c);
    SparseGraph::from_edges(n, &edges, x, true).unwrap().0
}

pub fn dense_adjacency(g: &SparseGraph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (u, row) in a.iter_mut().enumerate() {
        for &v in g.neighbors(u) {
            row[v] = 1.0;
        }
    }
    a
}

/// Plain triple-loop product.
pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

pub fn from_nested(rows: &[Vec<f64>]) -> DenseMatrix {
    let r: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
    DenseMatrix::from_rows(&r).unwrap()
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
/// Gradient norms below this are compared in absolute terms; central
/// differences carry noise of about 1e-10.
pub const FD_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(a: &DenseMatrix, n: &DenseMatrix) -> f64 {
    let diff = a.sub(n).unwrap().frobenius_norm();
    let scale = a.frobenius_norm().max(n.frobenius_norm());
    diff / scale.max(FD_FLOOR)
}

/// Central differences of `loss` with respect to every entry of `inputs`.
pub fn numeric_gradients(inputs: &[DenseMatrix], loss: &dyn Fn(&[DenseMatrix]) -> f64) -> Vec<DenseMatrix> {
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = DenseMatrix::zeros(inputs[i].rows(), inputs[i].cols());
        for k in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            g.data_mut()[k] = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between tape gradients (keyed by input index)
/// and central differences; inputs without a tape gradient must have a
/// zero numeric gradient.
pub fn gradient_error(
    inputs: &[DenseMatrix],
    eval: &dyn Fn(&[DenseMatrix]) -> (f64, Gradients),
) -> f64 {
    let (_, grads) = eval(inputs);
    let numeric = numeric_gradients(inputs, &|x| eval(x).0);
    let mut worst: f64 = 0.0;
    for (i, n) in numeric.iter().enumerate() {
        let a = grads
            .get(&rapgnn_core::params::ParamId(i))
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(n.rows(), n.cols()));
        worst = worst.max(relative_error(&a, n));
    }
    worst
}

/// Every permutation of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Every simple undirected graph on `n` labelled nodes, as edge lists.
pub fn all_edge_sets(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    (0..1u64 << pairs.len())
        .map(|bits| pairs.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &e)| e).collect())
        .collect()
}

/// `P` with `P[perm[v]][v] = 1`, so `P·h` moves row `v` to `perm[v]`.
pub fn permutation_matrix(perm: &[usize]) -> DenseMatrix {
    let n = perm.len();
    let mut p = DenseMatrix::zeros(n, n);
    for (v, &to) in perm.iter().enumerate() {
        p.set(to, v, 1.0);
    }
    p
}
