use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rapgnn::bundle::{load_bundle, save_bundle, BundleError, EDGES, FEATURES, LABELS, MANIFEST, SPLITS};
use rapgnn_core::data::Dataset;
use rapgnn_core::datasets::{sbm_node_dataset, synthetic_graph_set, SbmSpec};
use rapgnn_core::graph::Split;
use rapgnn_core::model::TaskKind;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cora-mini")
}

fn write_bundle(dir: &Path, manifest: &str, edges: &str, features: &str, labels: &str, splits: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(MANIFEST), manifest).unwrap();
    fs::write(dir.join(EDGES), edges).unwrap();
    fs::write(dir.join(FEATURES), features).unwrap();
    fs::write(dir.join(LABELS), labels).unwrap();
    fs::write(dir.join(SPLITS), splits).unwrap();
}

const TWO_NODES: &str = r#"{"task":"node-class","n":2,"m":1,"c":2,"num_classes":2,"undirected":true}"#;

#[test]
fn one_undirected_edge_is_stored_both_ways() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), TWO_NODES, "0\t1\n", "1.0\t0.0\n0.0\t1.0\n", "0\n1\n", "0\ttrain\n1\ttest\n");
    let b = load_bundle(dir.path()).unwrap();
    let Dataset::Node(d) = &b.dataset else { panic!("expected a node bundle") };
    assert_eq!(d.graph.num_edges(), 2);
    assert_eq!(d.graph.neighbors(0), &[1]);
    assert_eq!(d.graph.neighbors(1), &[0]);
    assert_eq!(b.duplicates, 0);
}

#[test]
fn reversed_duplicate_is_collapsed_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = TWO_NODES.replace("\"m\":1", "\"m\":2");
    write_bundle(dir.path(), &manifest, "0\t1\n1\t0\n", "1\t0\n0\t1\n", "0\n1\n", "0\ttrain\n1\ttest\n");
    let b = load_bundle(dir.path()).unwrap();
    let Dataset::Node(d) = &b.dataset else { panic!("expected a node bundle") };
    assert_eq!(d.graph.num_edges(), 2);
    // both directions of the repeated edge
    assert_eq!(b.duplicates, 2);
}

#[test]
fn feature_row_count_must_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = r#"{"task":"node-class","n":3,"m":0,"c":1,"num_classes":2,"undirected":true}"#;
    write_bundle(dir.path(), manifest, "", "1\n2\n3\n4\n", "0\n1\n0\n", "0\ttrain\n");
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::Mismatch(_))));
}

#[test]
fn malformed_inputs_are_rejected() {
    let good = ("0\t1\n", "1\t0\n0\t1\n", "0\n1\n", "0\ttrain\n1\ttest\n");
    let cases: Vec<(&str, String, &str, &str, &str, &str)> = vec![
        ("node out of range", TWO_NODES.into(), "0\t2\n", good.1, good.2, good.3),
        ("edge count", TWO_NODES.replace("\"m\":1", "\"m\":3"), good.0, good.1, good.2, good.3),
        ("feature width", TWO_NODES.into(), good.0, "1\t0\t5\n0\t1\t5\n", good.2, good.3),
        ("non-numeric feature", TWO_NODES.into(), good.0, "1\tx\n0\t1\n", good.2, good.3),
        ("label out of range", TWO_NODES.into(), good.0, good.1, "0\n2\n", good.3),
        ("unknown split", TWO_NODES.into(), good.0, good.1, good.2, "0\ttrain\n1\tholdout\n"),
        ("broken manifest", "{\"task\":".into(), good.0, good.1, good.2, good.3),
        ("unknown task", TWO_NODES.replace("node-class", "link-pred"), good.0, good.1, good.2, good.3),
    ];
    for (name, manifest, edges, features, labels, splits) in cases {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &manifest, edges, features, labels, splits);
        assert!(load_bundle(dir.path()).is_err(), "{} was accepted", name);
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_bundle(&dir.path().join("missing")), Err(BundleError::Io { .. })));
}

#[test]
fn cora_mini_fixture_is_valid() {
    let b = load_bundle(&fixture()).unwrap();
    assert_eq!(b.manifest.task, TaskKind::NodeClass);
    assert_eq!(b.manifest.num_classes, 7);
    assert!(b.manifest.n <= 300);
    let Dataset::Node(d) = &b.dataset else { panic!("expected a node bundle") };
    assert_eq!(d.graph.num_nodes(), 280);
    assert_eq!(d.graph.feature_dim(), 64);
    let masks = d.graph.masks.as_ref().unwrap();
    assert_eq!(masks.indices(Split::Train).len(), 70);
    assert_eq!(masks.indices(Split::Val).len(), 70);
    assert_eq!(masks.indices(Split::Test).len(), 140);
}

#[test]
fn fixture_round_trips_through_save() {
    let b = load_bundle(&fixture()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(dir.path(), &b.dataset).unwrap();
    let again = load_bundle(dir.path()).unwrap();
    assert_eq!(again.dataset, b.dataset);
    assert_eq!(again.manifest, b.manifest);
}

#[test]
fn graph_set_round_trips() {
    for regress in [false, true] {
        let data = Dataset::Graphs(synthetic_graph_set(12, 3, regress, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let m = save_bundle(dir.path(), &data).unwrap();
        assert_eq!(m.graphs, Some(12));
        assert_eq!(load_bundle(dir.path()).unwrap().dataset, data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_sbm_round_trips(k in 2usize..5, size in 5usize..30, p_in in 0.05f64..0.6, p_out in 0.0f64..0.05, seed in 0u64..1000) {
        let spec = SbmSpec::balanced(k, size, p_in, p_out, 3, seed);
        let data = Dataset::Node(sbm_node_dataset(&spec, 2, 3, 3).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &data).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(back.duplicates, 0);
        prop_assert_eq!(back.dataset, data);
    }
}
