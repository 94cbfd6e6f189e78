mod common;

use common::*;
use proptest::prelude::*;
use rapgnn_core::graph::{
    aggregate_sum_neighbors, batch_graphs, permute_graph, permute_rows, readout, spmm, sym_normalize, Masks,
    ReadoutKind, SparseGraph, SparseOperator,
};
use rapgnn_core::matrix::DenseMatrix;
use rapgnn_core::Error;

fn graph(n: usize, edges: &[(usize, usize)]) -> SparseGraph {
    SparseGraph::from_edges(n, edges, DenseMatrix::zeros(n, 1), true).unwrap().0
}

#[test]
fn path_normalization_is_identity_on_values() {
    let a = sym_normalize(&graph(2, &[(0, 1)]));
    assert_eq!(a.densify(), from_nested(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
}

#[test]
fn triangle_entries_are_one_half() {
    let a = sym_normalize(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
    // each node has degree 2: 1/sqrt(2) * 1/sqrt(2)
    let expected = 1.0 / 2f64.sqrt() * (1.0 / 2f64.sqrt());
    assert!(a.values().iter().all(|v| (v - expected).abs() < 1e-15));
    assert_eq!(a.nnz(), 6);
}

#[test]
fn isolated_node_has_zero_row_and_column() {
    let a = sym_normalize(&graph(3, &[(0, 1)])).densify();
    for i in 0..3 {
        assert_eq!(a.get(2, i), 0.0);
        assert_eq!(a.get(i, 2), 0.0);
    }
    assert!(a.is_finite());
}

#[test]
fn normalized_values_match_degree_formula() {
    let mut s = stream(3);
    for _ in 0..20 {
        let g = random_graph(&mut s, 12, 0.3, 1);
        let a = sym_normalize(&g);
        assert_eq!(a.row_ptr(), g.row_ptr());
        assert_eq!(a.col_idx(), g.col_idx());
        let deg = dense_adjacency(&g).iter().map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>();
        let dense = a.densify();
        for u in 0..12 {
            for v in 0..12 {
                let e = if g.neighbors(u).contains(&v) { 1.0 / (deg[u] * deg[v]).sqrt() } else { 0.0 };
                assert!((dense.get(u, v) - e).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn malformed_csr_is_a_structure_error() {
    let x = DenseMatrix::zeros(2, 1);
    assert!(matches!(SparseGraph::new(2, vec![0, 2, 1], vec![1, 0], x.clone()), Err(Error::Structure(_))));
    assert!(matches!(SparseGraph::new(2, vec![0, 1, 2], vec![1, 5], x.clone()), Err(Error::Structure(_))));
    assert!(matches!(SparseGraph::new(2, vec![1, 1, 2], vec![1, 0], x.clone()), Err(Error::Structure(_))));
    assert!(matches!(SparseGraph::new(2, vec![0, 1, 2], vec![0, 0], x), Err(Error::Structure(_))));
}

#[test]
fn spmm_examples() {
    let mut s = stream(4);
    let h = normal_matrix(&mut s, 5, 3);
    assert_eq!(SparseOperator::identity(5).spmm(&h).unwrap(), h);
    let a = sym_normalize(&graph(2, &[(0, 1)]));
    let out = spmm(&a, &DenseMatrix::identity(2)).unwrap();
    assert_eq!(out, from_nested(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
    assert!(matches!(a.spmm(&h), Err(Error::Shape(_))));
}

#[test]
fn spmm_matches_dense_oracle() {
    let mut s = stream(5);
    for _ in 0..20 {
        let g = random_graph(&mut s, 10, 0.35, 1);
        let a = sym_normalize(&g);
        let h = normal_matrix(&mut s, 10, 4);
        let fast = a.spmm(&h).unwrap();
        let slow = naive_matmul(&a.densify(), &h);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
    }
}

#[test]
fn neighbor_sum_examples() {
    let g = graph(3, &[(0, 1)]);
    let h = from_nested(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let out = aggregate_sum_neighbors(&g, &h).unwrap();
    assert_eq!(out.row(0), &[3.0, 4.0]);
    assert_eq!(out.row(1), &[1.0, 2.0]);
    assert_eq!(out.row(2), &[0.0, 0.0]);

    let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)]);
    let out = aggregate_sum_neighbors(&k3, &DenseMatrix::identity(3)).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(out.get(i, j), if i == j { 0.0 } else { 1.0 });
        }
    }
    assert!(matches!(aggregate_sum_neighbors(&k3, &DenseMatrix::zeros(2, 1)), Err(Error::Shape(_))));
}

#[test]
fn batching_examples() {
    let mut s = stream(6);
    let g = random_graph(&mut s, 4, 0.5, 2);
    let b = batch_graphs(&[&g]).unwrap();
    assert_eq!(b.graph.densify(), g.densify());
    assert_eq!(b.assignment, vec![0; 4]);

    let p = graph(2, &[(0, 1)]);
    let b = batch_graphs(&[&p, &p]).unwrap();
    assert_eq!(b.assignment, vec![0, 0, 1, 1]);
    assert_eq!(b.num_graphs(), 2);
    assert_eq!(b.graph.num_nodes(), 4);

    assert!(batch_graphs(&[]).is_err());
    let wide = SparseGraph::from_edges(2, &[(0, 1)], DenseMatrix::zeros(2, 3), true).unwrap().0;
    assert!(matches!(batch_graphs(&[&p, &wide]), Err(Error::Shape(_))));
}

#[test]
fn batch_spmm_equals_per_graph_spmm() {
    let mut s = stream(7);
    for _ in 0..10 {
        let graphs: Vec<SparseGraph> = (0..4).map(|i| random_graph(&mut s, 3 + i, 0.5, 2)).collect();
        let refs: Vec<&SparseGraph> = graphs.iter().collect();
        let batch = batch_graphs(&refs).unwrap();
        let h = normal_matrix(&mut s, batch.graph.num_nodes(), 3);
        let joint = sym_normalize(&batch.graph).spmm(&h).unwrap();
        let mut offset = 0;
        for g in &graphs {
            let rows: Vec<usize> = (offset..offset + g.num_nodes()).collect();
            let part = sym_normalize(g).spmm(&h.select_rows(&rows)).unwrap();
            assert!(part.max_abs_diff(&joint.select_rows(&rows)) < 1e-12);
            offset += g.num_nodes();
        }
    }
}

#[test]
fn readout_examples() {
    let singles: Vec<SparseGraph> = (0..3).map(|_| graph(1, &[])).collect();
    let refs: Vec<&SparseGraph> = singles.iter().collect();
    let b = batch_graphs(&refs).unwrap();
    let h = normal_matrix(&mut stream(8), 3, 2);
    assert_eq!(readout(&b, &h, ReadoutKind::Sum).unwrap(), h);
    assert_eq!(readout(&b, &h, ReadoutKind::Mean).unwrap(), h);

    let pair = graph(2, &[(0, 1)]);
    let b = batch_graphs(&[&pair]).unwrap();
    let h = from_nested(&[vec![1.5, -2.0], vec![1.5, -2.0]]);
    assert_eq!(readout(&b, &h, ReadoutKind::Sum).unwrap(), from_nested(&[vec![3.0, -4.0]]));
    assert!("max".parse::<ReadoutKind>().is_err());
}

#[test]
fn mean_readout_is_sum_over_size() {
    let mut s = stream(9);
    let graphs: Vec<SparseGraph> = (0..5).map(|i| random_graph(&mut s, 1 + i, 0.5, 1)).collect();
    let refs: Vec<&SparseGraph> = graphs.iter().collect();
    let b = batch_graphs(&refs).unwrap();
    let h = normal_matrix(&mut s, b.graph.num_nodes(), 3);
    let mean = readout(&b, &h, ReadoutKind::Mean).unwrap();
    for gi in 0..5 {
        for j in 0..3 {
            let members: Vec<f64> = (0..h.rows()).filter(|&v| b.assignment[v] == gi).map(|v| h.get(v, j)).collect();
            let oracle = members.iter().sum::<f64>() / members.len() as f64;
            assert!((mean.get(gi, j) - oracle).abs() < 1e-14);
        }
    }
}

#[test]
fn permutation_examples() {
    let mut s = stream(10);
    let g = random_graph(&mut s, 6, 0.4, 2);
    let same = permute_graph(&g, &[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(same.row_ptr(), g.row_ptr());
    assert_eq!(same.col_idx(), g.col_idx());
    assert_eq!(same.features, g.features);

    let path = graph(3, &[(0, 1), (1, 2)]);
    let swapped = permute_graph(&path, &[1, 0, 2]).unwrap();
    assert_eq!(swapped.undirected_edges(), vec![(0, 1), (0, 2)]);

    assert!(matches!(permute_graph(&g, &[0, 0, 1, 2, 3, 4]), Err(Error::Invalid(_))));
    assert!(matches!(permute_graph(&g, &[0, 1]), Err(Error::Invalid(_))));
}

#[test]
fn permutation_carries_labels_and_masks() {
    let mut s = stream(11);
    let g = random_graph(&mut s, 5, 0.5, 2)
        .with_labels(vec![0, 1, 2, 3, 4])
        .unwrap()
        .with_masks(Masks {
            train: vec![true, false, false, false, true],
            val: vec![false, true, false, false, false],
            test: vec![false, false, true, true, false],
        })
        .unwrap();
    let perm = [3, 0, 4, 1, 2];
    let p = permute_graph(&g, &perm).unwrap();
    for (v, &to) in perm.iter().enumerate() {
        assert_eq!(p.labels[to], g.labels[v]);
        assert_eq!(p.features.row(to), g.features.row(v));
        let (a, b) = (p.masks.as_ref().unwrap(), g.masks.as_ref().unwrap());
        assert_eq!((a.train[to], a.val[to], a.test[to]), (b.train[v], b.val[v], b.test[v]));
    }
}

#[test]
fn degree_sequence_is_permutation_invariant() {
    let mut s = stream(12);
    for _ in 0..20 {
        let g = random_graph(&mut s, 9, 0.3, 1);
        let mut perm: Vec<usize> = (0..9).collect();
        s.shuffle(&mut perm);
        let p = permute_graph(&g, &perm).unwrap();
        let (d, dp) = (g.degrees(), p.degrees());
        for v in 0..9 {
            assert_eq!(dp[perm[v]], d[v]);
        }
    }
}

/// `densify(permute(g)) == P·densify(g)·Pᵀ` for every graph and every
/// permutation on up to five nodes.
#[test]
fn permutation_consistency_exhaustive() {
    for n in 1..=5 {
        let perms = all_permutations(n);
        for edges in all_edge_sets(n) {
            let g = graph(n, &edges);
            let a = g.densify();
            for perm in &perms {
                let p = permutation_matrix(perm);
                let expected = naive_matmul(&naive_matmul(&p, &a), &p.transpose());
                assert_eq!(permute_graph(&g, perm).unwrap().densify(), expected);
            }
        }
    }
}

fn graph_and_perm(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<usize>)> {
    (1..=max_n).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        (
            Just(n),
            proptest::collection::vec(any::<bool>(), m)
                .prop_map(move |keep| pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| *e).collect()),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn permutation_consistency_up_to_eight_nodes((n, edges, perm) in graph_and_perm(8)) {
        let g = graph(n, &edges);
        let p = permutation_matrix(&perm);
        let expected = naive_matmul(&naive_matmul(&p, &g.densify()), &p.transpose());
        prop_assert_eq!(permute_graph(&g, &perm).unwrap().densify(), expected);
    }

    #[test]
    fn normalization_keeps_pattern_and_symmetry((n, edges, _) in graph_and_perm(10)) {
        let g = graph(n, &edges);
        let a = sym_normalize(&g);
        prop_assert_eq!(a.row_ptr(), g.row_ptr());
        prop_assert_eq!(a.col_idx(), g.col_idx());
        let d = a.densify();
        prop_assert!(d.max_abs_diff(&d.transpose()) == 0.0);
    }

    #[test]
    fn spmm_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut s = stream(seed);
        let g = random_graph(&mut s, 8, 0.4, 1);
        let op = sym_normalize(&g);
        let x = normal_matrix(&mut s, 8, 3);
        let y = normal_matrix(&mut s, 8, 3);
        let lhs = op.spmm(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
        let rhs = op.spmm(&x).unwrap().scale(a).add(&op.spmm(&y).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn permuted_rows_follow_permuted_operator((n, edges, perm) in graph_and_perm(8), seed in 0u64..1000) {
        let g = graph(n, &edges);
        let h = normal_matrix(&mut stream(seed), n, 2);
        let lhs = sym_normalize(&permute_graph(&g, &perm).unwrap()).spmm(&permute_rows(&h, &perm).unwrap()).unwrap();
        let rhs = permute_rows(&sym_normalize(&g).spmm(&h).unwrap(), &perm).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }
}

#[test]
fn symmetrization_and_dedup_on_construction() {
    let (g, dropped) = SparseGraph::from_edges(3, &[(0, 1), (1, 0), (1, 2)], DenseMatrix::zeros(3, 1), true).unwrap();
    assert_eq!(dropped, 2);
    assert_eq!(g.num_edges(), 4);
    assert!(g.is_symmetric());
    assert!(matches!(
        SparseGraph::from_edges(2, &[(0, 0)], DenseMatrix::zeros(2, 1), true),
        Err(Error::Structure(_))
    ));
    assert!(matches!(
        SparseGraph::from_edges(2, &[(0, 2)], DenseMatrix::zeros(2, 1), true),
        Err(Error::Structure(_))
    ));
}
