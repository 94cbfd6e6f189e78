//! Graph text bundles: a directory of tab-separated files plus a JSON
//! manifest.
//!
//! ```text
//! manifest.json    task, n, m, c, num_classes, undirected, graphs
//! edges.tsv        u <TAB> v, one edge per line (m lines)
//! features.tsv     n rows of c floats
//! labels.tsv       one value per node, or per graph for multi-graph bundles
//! splits.tsv       id <TAB> train|val|test
//! graph_index.tsv  multi-graph bundles only: graph id of every node
//! ```
//!
//! Node ids are global and dense in `[0, n)`. In multi-graph bundles the
//! nodes of each graph are contiguous, edges stay inside one graph, and
//! split ids refer to graphs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rapgnn_core::data::{Dataset, GraphDataset, GraphTargets, NodeDataset};
use rapgnn_core::graph::{Masks, Split, SparseGraph};
use rapgnn_core::matrix::DenseMatrix;
use rapgnn_core::model::TaskKind;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const EDGES: &str = "edges.tsv";
pub const FEATURES: &str = "features.tsv";
pub const LABELS: &str = "labels.tsv";
pub const SPLITS: &str = "splits.tsv";
pub const GRAPH_INDEX: &str = "graph_index.tsv";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: &'static str, line: usize, msg: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("count mismatch: {0}")]
    Mismatch(String),
    #[error("id out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Graph(#[from] rapgnn_core::Error),
}

pub type Result<T, E = BundleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub task: TaskKind,
    /// Total node count.
    pub n: usize,
    /// Lines in `edges.tsv`.
    pub m: usize,
    pub c: usize,
    /// Class count; 0 for regression.
    pub num_classes: usize,
    pub undirected: bool,
    /// Graph count for multi-graph bundles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphs: Option<usize>,
}

/// A validated bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub dataset: Dataset,
    /// Directed edge entries collapsed as duplicates while loading.
    pub duplicates: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

/// Rows of a headerless TSV file as trimmed fields.
fn read_rows(dir: &Path, file: &'static str) -> Result<Vec<Vec<String>>> {
    let path = dir.join(file);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => BundleError::Io { path: path.clone(), source },
            other => BundleError::Parse { file, line: 0, msg: format!("{:?}", other) },
        })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| BundleError::Parse { file, line: i + 1, msg: e.to_string() })?;
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(file: &'static str, line: usize, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e: T::Err| BundleError::Parse { file, line, msg: format!("`{}`: {}", field, e) })
}

fn expect_cols(file: &'static str, line: usize, row: &[String], cols: usize) -> Result<()> {
    if row.len() != cols {
        return Err(BundleError::Parse { file, line, msg: format!("expected {} columns, found {}", cols, row.len()) });
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: BundleManifest = serde_json::from_str(&text).map_err(|e| BundleError::Manifest(e.to_string()))?;
    let multi = m.task.is_graph_level();
    if multi != m.graphs.is_some() {
        return Err(BundleError::Manifest(format!(
            "task `{}` {} a `graphs` count",
            m.task,
            if multi { "needs" } else { "does not take" }
        )));
    }
    if (m.task == TaskKind::GraphRegress) != (m.num_classes == 0) {
        return Err(BundleError::Manifest("num_classes must be 0 exactly for regression".into()));
    }
    Ok(m)
}

/// Reads and validates a bundle directory. Undirected bundles are
/// symmetrized; duplicate edges are collapsed and counted.
pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let manifest = read_manifest(dir)?;
    let n = manifest.n;

    let edge_rows = read_rows(dir, EDGES)?;
    if edge_rows.len() != manifest.m {
        return Err(BundleError::Mismatch(format!("manifest m = {} but {} has {} lines", manifest.m, EDGES, edge_rows.len())));
    }
    let mut edges = Vec::with_capacity(edge_rows.len());
    for (i, row) in edge_rows.iter().enumerate() {
        expect_cols(EDGES, i + 1, row, 2)?;
        let u: usize = parse(EDGES, i + 1, &row[0])?;
        let v: usize = parse(EDGES, i + 1, &row[1])?;
        if u >= n || v >= n {
            return Err(BundleError::OutOfRange(format!("{} line {}: edge ({}, {}) with n = {}", EDGES, i + 1, u, v, n)));
        }
        edges.push((u, v));
    }

    let feat_rows = read_rows(dir, FEATURES)?;
    if feat_rows.len() != n {
        return Err(BundleError::Mismatch(format!("manifest n = {} but {} has {} rows", n, FEATURES, feat_rows.len())));
    }
    let mut data = Vec::with_capacity(n * manifest.c);
    for (i, row) in feat_rows.iter().enumerate() {
        expect_cols(FEATURES, i + 1, row, manifest.c)?;
        for f in row {
            let x: f64 = parse(FEATURES, i + 1, f)?;
            if !x.is_finite() {
                return Err(BundleError::Parse { file: FEATURES, line: i + 1, msg: "non-finite feature".into() });
            }
            data.push(x);
        }
    }
    let features = DenseMatrix::from_vec(n, manifest.c, data)?;

    let items = manifest.graphs.unwrap_or(n);
    let label_rows = read_rows(dir, LABELS)?;
    if label_rows.len() != items {
        return Err(BundleError::Mismatch(format!("expected {} labels, {} has {}", items, LABELS, label_rows.len())));
    }
    for (i, row) in label_rows.iter().enumerate() {
        expect_cols(LABELS, i + 1, row, 1)?;
    }
    let class_labels = |rows: &[Vec<String>]| -> Result<Vec<usize>> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                let l: usize = parse(LABELS, i + 1, &r[0])?;
                if l >= manifest.num_classes {
                    return Err(BundleError::OutOfRange(format!(
                        "{} line {}: label {} with {} classes",
                        LABELS,
                        i + 1,
                        l,
                        manifest.num_classes
                    )));
                }
                Ok(l)
            })
            .collect()
    };

    let mut splits: Vec<Option<Split>> = vec![None; items];
    for (i, row) in read_rows(dir, SPLITS)?.iter().enumerate() {
        expect_cols(SPLITS, i + 1, row, 2)?;
        let id: usize = parse(SPLITS, i + 1, &row[0])?;
        if id >= items {
            return Err(BundleError::OutOfRange(format!("{} line {}: id {} with {} items", SPLITS, i + 1, id, items)));
        }
        let split = match row[1].as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => {
                return Err(BundleError::Parse { file: SPLITS, line: i + 1, msg: format!("unknown split `{}`", other) })
            }
        };
        if splits[id].replace(split).is_some() {
            return Err(BundleError::Parse { file: SPLITS, line: i + 1, msg: format!("id {} listed twice", id) });
        }
    }

    let (dataset, duplicates) = match manifest.graphs {
        None => {
            let (g, dup) = SparseGraph::from_edges(n, &edges, features, manifest.undirected)?;
            let mut masks = Masks::empty(n);
            for (v, s) in splits.iter().enumerate() {
                match s {
                    Some(Split::Train) => masks.train[v] = true,
                    Some(Split::Val) => masks.val[v] = true,
                    Some(Split::Test) => masks.test[v] = true,
                    None => {}
                }
            }
            let g = g.with_labels(class_labels(&label_rows)?)?.with_masks(masks)?;
            (Dataset::Node(NodeDataset { graph: g, num_classes: manifest.num_classes }), dup)
        }
        Some(count) => {
            let index_rows = read_rows(dir, GRAPH_INDEX)?;
            if index_rows.len() != n {
                return Err(BundleError::Mismatch(format!("{} has {} rows for {} nodes", GRAPH_INDEX, index_rows.len(), n)));
            }
            let mut graph_of = Vec::with_capacity(n);
            for (i, row) in index_rows.iter().enumerate() {
                expect_cols(GRAPH_INDEX, i + 1, row, 1)?;
                let gi: usize = parse(GRAPH_INDEX, i + 1, &row[0])?;
                if gi >= count {
                    return Err(BundleError::OutOfRange(format!("{} line {}: graph {} of {}", GRAPH_INDEX, i + 1, gi, count)));
                }
                if graph_of.last().is_some_and(|&p| gi < p) {
                    return Err(BundleError::Parse {
                        file: GRAPH_INDEX,
                        line: i + 1,
                        msg: "nodes of a graph must be contiguous".into(),
                    });
                }
                graph_of.push(gi);
            }
            let mut starts = vec![0usize; count + 1];
            for &gi in &graph_of {
                starts[gi + 1] += 1;
            }
            for g in 0..count {
                starts[g + 1] += starts[g];
            }
            let mut local: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count];
            for &(u, v) in &edges {
                let gu = graph_of[u];
                if graph_of[v] != gu {
                    return Err(BundleError::OutOfRange(format!("edge ({}, {}) joins graphs {} and {}", u, v, gu, graph_of[v])));
                }
                local[gu].push((u - starts[gu], v - starts[gu]));
            }
            let mut graphs = Vec::with_capacity(count);
            let mut dup = 0;
            for g in 0..count {
                let (lo, hi) = (starts[g], starts[g + 1]);
                if lo == hi {
                    return Err(BundleError::Mismatch(format!("graph {} has no nodes", g)));
                }
                let x = DenseMatrix::from_fn(hi - lo, manifest.c, |i, j| features.get(lo + i, j));
                let (sg, d) = SparseGraph::from_edges(hi - lo, &local[g], x, manifest.undirected)?;
                dup += d;
                graphs.push(sg);
            }
            let targets = match manifest.task {
                TaskKind::GraphRegress => GraphTargets::Value(
                    label_rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| parse::<f64>(LABELS, i + 1, &r[0]))
                        .collect::<Result<_>>()?,
                ),
                _ => GraphTargets::Class(class_labels(&label_rows)?),
            };
            let data = GraphDataset { graphs, targets, splits, num_classes: manifest.num_classes };
            (Dataset::Graphs(data), dup)
        }
    };
    dataset.validate()?;
    Ok(Bundle { manifest, dataset, duplicates })
}

struct Tsv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Tsv {
    fn create(dir: &Path, file: &str) -> Result<Self> {
        let path = dir.join(file);
        let out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        Ok(Self { path, out })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let line: Vec<String> = fields.into_iter().collect();
        writeln!(self.out, "{}", line.join("\t")).map_err(io_err(&self.path))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn edge_list(g: &SparseGraph) -> (Vec<(usize, usize)>, bool) {
    if g.is_symmetric() {
        (g.undirected_edges(), true)
    } else {
        (edge_list_directed(g), false)
    }
}

/// Writes `data` as a bundle into `dir`, creating it if needed. Floats use
/// the shortest representation that parses back to the same value.
pub fn save_bundle(dir: &Path, data: &Dataset) -> Result<BundleManifest> {
    data.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let graphs: Vec<&SparseGraph> = match data {
        Dataset::Node(d) => vec![&d.graph],
        Dataset::Graphs(d) => d.graphs.iter().collect(),
    };
    let lists: Vec<(Vec<(usize, usize)>, bool)> = graphs.iter().map(|g| edge_list(g)).collect();
    let undirected = lists.iter().all(|(_, u)| *u);
    let c = data.feature_dim();

    let mut edges = Tsv::create(dir, EDGES)?;
    let mut features = Tsv::create(dir, FEATURES)?;
    let mut m = 0;
    let mut offset = 0;
    for (g, (list, _)) in graphs.iter().zip(&lists) {
        let list = if undirected { list.clone() } else { edge_list_directed(g) };
        for (u, v) in list {
            edges.row([(u + offset).to_string(), (v + offset).to_string()])?;
            m += 1;
        }
        for i in 0..g.num_nodes() {
            features.row((0..c).map(|j| g.features.get(i, j).to_string()))?;
        }
        offset += g.num_nodes();
    }
    edges.finish()?;
    features.finish()?;

    let mut labels = Tsv::create(dir, LABELS)?;
    let mut splits = Tsv::create(dir, SPLITS)?;
    match data {
        Dataset::Node(d) => {
            for l in &d.graph.labels {
                labels.row([l.to_string()])?;
            }
            let masks = d.graph.masks.as_ref().expect("validated");
            for v in 0..d.graph.num_nodes() {
                for s in [Split::Train, Split::Val, Split::Test] {
                    if masks.mask(s)[v] {
                        splits.row([v.to_string(), split_name(s).to_string()])?;
                    }
                }
            }
        }
        Dataset::Graphs(d) => {
            match &d.targets {
                GraphTargets::Class(t) => t.iter().try_for_each(|l| labels.row([l.to_string()]))?,
                GraphTargets::Value(t) => t.iter().try_for_each(|l| labels.row([l.to_string()]))?,
            }
            for (i, s) in d.splits.iter().enumerate() {
                if let Some(s) = s {
                    splits.row([i.to_string(), split_name(*s).to_string()])?;
                }
            }
            let mut index = Tsv::create(dir, GRAPH_INDEX)?;
            for (gi, g) in d.graphs.iter().enumerate() {
                for _ in 0..g.num_nodes() {
                    index.row([gi.to_string()])?;
                }
            }
            index.finish()?;
        }
    }
    labels.finish()?;
    splits.finish()?;

    let (num_classes, count) = match data {
        Dataset::Node(d) => (d.num_classes, None),
        Dataset::Graphs(d) => (d.num_classes, Some(d.graphs.len())),
    };
    let manifest = BundleManifest { task: data.task(), n: offset, m, c, num_classes, undirected, graphs: count };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| BundleError::Manifest(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

fn edge_list_directed(g: &SparseGraph) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(g.num_edges());
    for u in 0..g.num_nodes() {
        out.extend(g.neighbors(u).iter().map(|&v| (u, v)));
    }
    out
}
