//! Shared helpers for integration tests: synthetic datasets and dataset
//! discovery for the real-data criteria.
#![allow(dead_code)] // each test binary uses a different subset

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gaeco::graph::{FeatureMatrix, Graph, Partition};
use gaeco::ingest::DatasetBundle;

/// Stochastic block model with block-indicator features plus uniform noise.
/// `block` nodes per community, intra-edge probability `p_in`, inter `p_out`.
pub fn sbm_bundle(
    block: usize,
    k: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    seed: u64,
) -> DatasetBundle {
    let n = block * k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i / block).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::build(n, &edges, true).expect("valid synthetic graph");

    let f = 4 * k;
    let mut values = vec![0.0; n * f];
    for i in 0..n {
        for c in 0..f {
            let indicator = if c / 4 == labels[i] { 1.0 } else { 0.0 };
            values[i * f + c] = indicator + rng.gen_range(0.0..noise.max(1e-9));
        }
    }
    let features = FeatureMatrix::new(n, f, values)
        .expect("finite synthetic features")
        .row_normalized();

    DatasetBundle {
        graph,
        features,
        truth: Partition::new(labels, k).expect("valid labels"),
        k_truth: k,
        name: format!("sbm-{k}x{block}"),
        node_ids: (0..n).map(|i| i.to_string()).collect(),
    }
}

/// Root directory for real datasets: `$GAECO_DATA` if set, else `./data`
/// relative to the workspace root.
pub fn data_root() -> PathBuf {
    match std::env::var("GAECO_DATA") {
        Ok(v) => PathBuf::from(v),
        Err(_) => {
            let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
            manifest
                .parent()
                .and_then(|p| p.parent())
                .map(|ws| ws.join("data"))
                .unwrap_or_else(|| PathBuf::from("data"))
        }
    }
}

/// Returns the `.content`/`.cites` pair for a Planetoid-style dataset, or a
/// diagnostic explaining exactly what to provide.
pub fn planetoid_paths(name: &str) -> Result<(PathBuf, PathBuf), String> {
    let root = data_root();
    let content = root.join(format!("{name}.content"));
    let cites = root.join(format!("{name}.cites"));
    if content.is_file() && cites.is_file() {
        Ok((content, cites))
    } else {
        Err(format!(
            "dataset '{name}' not found: expected {} and {}. Download the \
             Planetoid citation files and place them there, or point \
             GAECO_DATA at the directory that holds them.",
            content.display(),
            cites.display()
        ))
    }
}

/// Returns the generic-format file triple for a converted dataset
/// (`<root>/<name>/edges.tsv`, `features.csv`, `labels.txt`).
pub fn generic_paths(name: &str) -> Result<(PathBuf, PathBuf, PathBuf), String> {
    let dir = data_root().join(name);
    let edges = dir.join("edges.tsv");
    let features = dir.join("features.csv");
    let labels = dir.join("labels.txt");
    if edges.is_file() && features.is_file() && labels.is_file() {
        Ok((edges, features, labels))
    } else {
        Err(format!(
            "dataset '{name}' not found: expected edges.tsv, features.csv, \
             and labels.txt under {}. Convert the raw release to the generic \
             format (see README) or point GAECO_DATA elsewhere.",
            dir.display()
        ))
    }
}
