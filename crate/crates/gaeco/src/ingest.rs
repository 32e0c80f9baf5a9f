//! Dataset parsing: Planetoid-style `.content`/`.cites` citation files and a
//! generic edges/features/labels format, both into a [`DatasetBundle`].
//!
//! Raw node ids are arbitrary strings; dense integer ids are assigned in
//! first-seen `.content` order and the mapping is kept in the bundle.
//! Citation edges referencing unknown ids are dropped and counted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::{FeatureMatrix, Graph, GraphError, Partition};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line ({detail})")]
    MalformedLine {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path} is empty")]
    EmptyFile { path: String },
    #[error("duplicate node id '{id}' in {path}")]
    DuplicateNode { id: String, path: String },
    #[error("feature rows ({features}) and label rows ({labels}) disagree")]
    RowCountMismatch { features: usize, labels: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A parsed dataset: graph, features, ground truth, and naming.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub truth: Partition,
    pub k_truth: usize,
    pub name: String,
    /// Raw node id of each dense integer id.
    pub node_ids: Vec<String>,
}

/// Loader statistics, reported alongside the bundle.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct LoadStats {
    /// Directed edge lines in the raw file, before symmetrization/dedup.
    pub raw_edges: usize,
    /// Edges dropped because an endpoint id was unknown.
    pub dropped_edges: usize,
    /// Unique undirected edges after symmetrization (self-loops excluded).
    pub symmetrized_edges: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub add_self_loops: bool,
    pub row_normalize: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            add_self_loops: true,
            row_normalize: true,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, IngestError> {
    let reader = open(path)?;
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(lines)
}

/// Loads a Planetoid-style raw dataset: `.content` lines are
/// `<id> <f1> .. <ff> <class>` and `.cites` lines are `<cited> <citing>`,
/// whitespace separated.
pub fn load_content_cites(
    content_path: &Path,
    cites_path: &Path,
    name: &str,
    opts: IngestOptions,
) -> Result<(DatasetBundle, LoadStats), IngestError> {
    let content_name = content_path.display().to_string();
    let mut id_map: HashMap<String, usize> = HashMap::new();
    let mut node_ids = Vec::new();
    let mut class_map: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in read_lines(content_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match width {
            None => {
                if fields.len() < 3 {
                    return Err(IngestError::MalformedLine {
                        path: content_name.clone(),
                        line: lineno + 1,
                        detail: format!("expected at least 3 columns, got {}", fields.len()),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if fields.len() != w => {
                return Err(IngestError::MalformedLine {
                    path: content_name.clone(),
                    line: lineno + 1,
                    detail: format!("expected {w} columns, got {}", fields.len()),
                });
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if id_map.contains_key(&id) {
            return Err(IngestError::DuplicateNode {
                id,
                path: content_name.clone(),
            });
        }
        id_map.insert(id.clone(), node_ids.len());
        node_ids.push(id);

        let mut row = Vec::with_capacity(fields.len() - 2);
        for (col, field) in fields[1..fields.len() - 1].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IngestError::MalformedLine {
                path: content_name.clone(),
                line: lineno + 1,
                detail: format!("non-numeric feature in column {}", col + 2),
            })?;
            row.push(v);
        }
        feature_rows.push(row);

        let class = fields[fields.len() - 1].to_string();
        let next = class_map.len();
        let label = *class_map.entry(class).or_insert(next);
        labels.push(label);
    }
    if node_ids.is_empty() {
        return Err(IngestError::EmptyFile { path: content_name });
    }

    let cites_name = cites_path.display().to_string();
    let mut edges = Vec::new();
    let mut stats = LoadStats::default();
    for (lineno, line) in read_lines(cites_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(IngestError::MalformedLine {
                path: cites_name.clone(),
                line: lineno + 1,
                detail: format!("expected 2 columns, got {}", fields.len()),
            });
        }
        stats.raw_edges += 1;
        match (id_map.get(fields[0]), id_map.get(fields[1])) {
            (Some(&cited), Some(&citing)) => edges.push((cited, citing)),
            _ => stats.dropped_edges += 1,
        }
    }

    finish_bundle(node_ids, feature_rows, labels, edges, name, opts, stats)
}

/// Loads the generic on-disk format: `edges` is TSV `src\tdst`, `features`
/// CSV one row per node in id order, `labels` one integer per line.
/// `#`-prefixed lines are comments.
pub fn load_generic(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    name: &str,
    opts: IngestOptions,
) -> Result<(DatasetBundle, LoadStats), IngestError> {
    let features_name = features_path.display().to_string();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in read_lines(features_path)?.iter().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| IngestError::MalformedLine {
                path: features_name.clone(),
                line: lineno + 1,
                detail: format!("non-numeric feature in column {}", col + 1),
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if row.len() != w => {
                return Err(IngestError::MalformedLine {
                    path: features_name.clone(),
                    line: lineno + 1,
                    detail: format!("expected {w} columns, got {}", row.len()),
                });
            }
            _ => {}
        }
        feature_rows.push(row);
    }
    if feature_rows.is_empty() {
        return Err(IngestError::EmptyFile { path: features_name });
    }
    let n = feature_rows.len();

    let labels_name = labels_path.display().to_string();
    let mut labels = Vec::new();
    for (lineno, line) in read_lines(labels_path)?.iter().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let v: usize = line.trim().parse().map_err(|_| IngestError::MalformedLine {
            path: labels_name.clone(),
            line: lineno + 1,
            detail: "expected one non-negative integer per line".into(),
        })?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(IngestError::RowCountMismatch {
            features: n,
            labels: labels.len(),
        });
    }

    let edges_name = edges_path.display().to_string();
    let mut edges = Vec::new();
    let mut stats = LoadStats::default();
    for (lineno, line) in read_lines(edges_path)?.iter().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(IngestError::MalformedLine {
                path: edges_name.clone(),
                line: lineno + 1,
                detail: format!("expected 'src\\tdst', got {} fields", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<usize, IngestError> {
            s.trim().parse().map_err(|_| IngestError::MalformedLine {
                path: edges_name.clone(),
                line: lineno + 1,
                detail: "non-integer node id".into(),
            })
        };
        let (src, dst) = (parse(fields[0])?, parse(fields[1])?);
        stats.raw_edges += 1;
        if src < n && dst < n {
            edges.push((src, dst));
        } else {
            stats.dropped_edges += 1;
        }
    }

    let node_ids = (0..n).map(|i| i.to_string()).collect();
    finish_bundle(node_ids, feature_rows, labels, edges, name, opts, stats)
}

fn finish_bundle(
    node_ids: Vec<String>,
    feature_rows: Vec<Vec<f64>>,
    raw_labels: Vec<usize>,
    edges: Vec<(usize, usize)>,
    name: &str,
    opts: IngestOptions,
    mut stats: LoadStats,
) -> Result<(DatasetBundle, LoadStats), IngestError> {
    let n = node_ids.len();
    let f = feature_rows.first().map(|r| r.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(n * f);
    for row in &feature_rows {
        values.extend_from_slice(row);
    }
    let mut features = FeatureMatrix::new(n, f, values)?;
    if opts.row_normalize {
        features = features.row_normalized();
    }
    let graph = Graph::build(n, &edges, opts.add_self_loops)?;
    stats.symmetrized_edges = {
        let without_loops = Graph::build(n, &edges, false)?;
        without_loops.undirected_edge_count()
    };
    let truth = Partition::from_labels(raw_labels)?;
    let k_truth = truth.distinct_labels();
    Ok((
        DatasetBundle {
            graph,
            features,
            truth,
            k_truth,
            name: name.to_string(),
            node_ids,
        },
        stats,
    ))
}

/// Writes a bundle back out in the generic format (edges.tsv, features.csv,
/// labels.txt) so that [`load_generic`] round-trips it.
pub fn save_generic(bundle: &DatasetBundle, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let wrap = |path: &Path, source: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        source,
    };

    let edges_path = dir.join("edges.tsv");
    let mut w = BufWriter::new(File::create(&edges_path).map_err(|e| wrap(&edges_path, e))?);
    for (i, j) in bundle.graph.undirected_edges() {
        writeln!(w, "{i}\t{j}").map_err(|e| wrap(&edges_path, e))?;
    }
    // Policy-added self-loops are reconstructed on load; only genuine ones
    // are persisted.
    if !bundle.graph.has_self_loops() {
        for i in 0..bundle.graph.node_count() {
            if bundle.graph.has_edge(i, i) {
                writeln!(w, "{i}\t{i}").map_err(|e| wrap(&edges_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| wrap(&edges_path, e))?;

    let features_path = dir.join("features.csv");
    let mut w = BufWriter::new(File::create(&features_path).map_err(|e| wrap(&features_path, e))?);
    for i in 0..bundle.features.node_count() {
        let row: Vec<String> = bundle
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| wrap(&features_path, e))?;
    }
    w.flush().map_err(|e| wrap(&features_path, e))?;

    let labels_path = dir.join("labels.txt");
    let mut w = BufWriter::new(File::create(&labels_path).map_err(|e| wrap(&labels_path, e))?);
    for &l in bundle.truth.labels() {
        writeln!(w, "{l}").map_err(|e| wrap(&labels_path, e))?;
    }
    w.flush().map_err(|e| wrap(&labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn toy_content_cites() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "toy.content", "a 1 0 red\nb 0 1 blue\n");
        let cites = write(dir.path(), "toy.cites", "a b\n");
        let (bundle, stats) =
            load_content_cites(&content, &cites, "toy", IngestOptions::default()).unwrap();
        assert_eq!(bundle.graph.node_count(), 2);
        assert_eq!(bundle.features.feature_dim(), 2);
        assert_eq!(bundle.k_truth, 2);
        assert!(bundle.graph.has_edge(0, 1));
        assert!(bundle.graph.has_edge(1, 0));
        assert_eq!(stats.raw_edges, 1);
        assert_eq!(stats.symmetrized_edges, 1);
        assert_eq!(bundle.node_ids, vec!["a", "b"]);
    }

    #[test]
    fn unknown_cites_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "d.content", "a 1 red\nb 0 red\n");
        let cites = write(dir.path(), "d.cites", "a b\na missing\n");
        let (_, stats) = load_content_cites(&content, &cites, "d", IngestOptions::default()).unwrap();
        assert_eq!(stats.raw_edges, 2);
        assert_eq!(stats.dropped_edges, 1);
    }

    #[test]
    fn malformed_content_line() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "m.content", "a 1 0 red\nb 0 blue\n");
        let cites = write(dir.path(), "m.cites", "");
        let err = load_content_cites(&content, &cites, "m", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn duplicate_node_id() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "dup.content", "a 1 red\na 0 blue\n");
        let cites = write(dir.path(), "dup.cites", "");
        let err = load_content_cites(&content, &cites, "dup", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateNode { .. }));
    }

    #[test]
    fn empty_content_file() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "e.content", "");
        let cites = write(dir.path(), "e.cites", "");
        let err = load_content_cites(&content, &cites, "e", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyFile { .. }));
    }

    #[test]
    fn generic_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "edges.tsv", "0\t1\n1\t2\n2\t0\n");
        let features = write(dir.path(), "features.csv", "1.0,0.0\n0.0,1.0\n1.0,1.0\n");
        let labels = write(dir.path(), "labels.txt", "0\n0\n1\n");
        let (bundle, _) =
            load_generic(&edges, &features, &labels, "tri", IngestOptions::default()).unwrap();
        assert_eq!(bundle.graph.node_count(), 3);
        assert_eq!(bundle.features.feature_dim(), 2);
        assert_eq!(bundle.k_truth, 2);
    }

    #[test]
    fn generic_empty_edges_gives_isolated_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "edges.tsv", "# no edges\n");
        let features = write(dir.path(), "features.csv", "1\n2\n3\n4\n");
        let labels = write(dir.path(), "labels.txt", "0\n1\n0\n1\n");
        let (bundle, stats) =
            load_generic(&edges, &features, &labels, "iso", IngestOptions::default()).unwrap();
        assert_eq!(bundle.graph.node_count(), 4);
        assert_eq!(stats.raw_edges, 0);
        // self-loops only
        assert_eq!(bundle.graph.neighbors(2).unwrap(), &[2]);
    }

    #[test]
    fn generic_label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "edges.tsv", "");
        let features = write(dir.path(), "features.csv", "1\n2\n3\n");
        let labels = write(dir.path(), "labels.txt", "0\n1\n");
        let err =
            load_generic(&edges, &features, &labels, "bad", IngestOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::RowCountMismatch { features: 3, labels: 2 }
        ));
    }

    #[test]
    fn generic_non_numeric_feature() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "edges.tsv", "");
        let features = write(dir.path(), "features.csv", "1,x\n");
        let labels = write(dir.path(), "labels.txt", "0\n");
        let err =
            load_generic(&edges, &features, &labels, "bad", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { .. }));
    }

    #[test]
    fn generic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "edges.tsv", "0\t1\n1\t2\n");
        let features = write(dir.path(), "features.csv", "0.25,1.5\n-3.0,0.125\n7.0,0.0\n");
        let labels = write(dir.path(), "labels.txt", "0\n1\n1\n");
        let opts = IngestOptions {
            add_self_loops: true,
            row_normalize: false,
        };
        let (bundle, _) = load_generic(&edges, &features, &labels, "rt", opts).unwrap();
        let out = dir.path().join("saved");
        save_generic(&bundle, &out).unwrap();
        let (reloaded, _) = load_generic(
            &out.join("edges.tsv"),
            &out.join("features.csv"),
            &out.join("labels.txt"),
            "rt",
            opts,
        )
        .unwrap();
        assert_eq!(bundle.graph, reloaded.graph);
        assert_eq!(bundle.features, reloaded.features);
        assert_eq!(bundle.truth, reloaded.truth);
    }
}
