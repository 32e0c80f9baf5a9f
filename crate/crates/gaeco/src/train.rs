//! Full training loop: encode, decode, joint loss, centroid refresh, Adam
//! step — plus the no-clustering ablation, beta sweeps, reporting, and
//! artifact export.
//!
//! One run writes `report.json`, `losses.jsonl`, `embeddings.csv`,
//! `labels.csv`, and `checkpoint.bin` into its output directory. Identical
//! config + seed reproduce every artifact byte for byte (wall time excluded).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cluster::{self, Centroids, KmeansOptions};
use crate::gat::{self, DropoutSpec, EncoderConfig, EncoderParams, GatError};
use crate::graph::{GraphError, Partition};
use crate::ingest::DatasetBundle;
use crate::losses::{self, LossError, LossReport};
use crate::metrics::{self, MetricError};
use crate::optim::{Adam, OptimError};
use crate::tensor::{EdgeIndex, Matrix, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "dense reconstruction target ({n} nodes, {entries} entries) exceeds the \
         {cap}-entry cap; rerun with the sampled reconstruction mode"
    )]
    DenseCapExceeded { n: usize, entries: u64, cap: u64 },
    #[error("epochs ({epochs}) must be at least warmup_epochs ({warmup})")]
    WarmupExceedsEpochs { epochs: usize, warmup: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Cluster(#[from] crate::cluster::ClusterError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed labels file {path}: {detail}")]
    BadLabelsFile { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReconMode {
    Dense,
    Sampled { neg_per_pos: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    /// Cluster count; 0 means "use the dataset's ground-truth count".
    pub k: usize,
    pub epochs: usize,
    /// Epochs with the clustering weight forced to 0 at the start.
    pub warmup_epochs: usize,
    pub centroid_refresh_period: usize,
    pub lr: f64,
    pub dropout_input: f64,
    pub dropout_attention: f64,
    pub heads: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub recon_mode: ReconMode,
    pub dense_cap: u64,
    /// Whether the reconstruction target's diagonal is 1.
    pub target_diag_one: bool,
    pub pos_weight: Option<f64>,
    pub clip_norm: Option<f64>,
    /// Force the clustering weight to 0 for the whole run.
    pub ablation_no_clust: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            k: 0,
            epochs: 400,
            warmup_epochs: 50,
            centroid_refresh_period: 1,
            lr: 0.005,
            dropout_input: 0.4,
            dropout_attention: 0.2,
            heads: 8,
            hidden_dim: 256,
            embed_dim: 64,
            seed: 42,
            recon_mode: ReconMode::Dense,
            dense_cap: 50_000_000,
            target_diag_one: true,
            pos_weight: None,
            clip_norm: None,
            ablation_no_clust: false,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub nodes: usize,
    pub features: usize,
    pub communities: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub dataset: DatasetStats,
    pub epochs: Vec<LossReport>,
    pub final_nmi: f64,
    pub final_ari: f64,
    pub wall_secs: f64,
}

/// Everything a run produces, for callers that keep working in memory.
pub struct TrainOutcome {
    pub report: RunReport,
    pub embeddings: Matrix,
    pub labels: Partition,
    pub params: EncoderParams,
}

/// One independent RNG stream per consumer, all derived from the run seed,
/// so toggling one consumer does not perturb the others.
fn derive_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs the full loop on a loaded dataset. When `out_dir` is given, all
/// artifacts are written there and the final metrics are computed from the
/// exported labels file, so report and file cannot disagree.
pub fn train(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if cfg.epochs < cfg.warmup_epochs && cfg.epochs != 0 {
        return Err(TrainError::WarmupExceedsEpochs {
            epochs: cfg.epochs,
            warmup: cfg.warmup_epochs,
        });
    }
    let start = Instant::now();
    let k = if cfg.k == 0 { bundle.k_truth } else { cfg.k };
    let n = bundle.graph.node_count();

    let mut encoder_cfg = EncoderConfig::new(bundle.features.feature_dim());
    encoder_cfg.hidden_dim = cfg.hidden_dim;
    encoder_cfg.embed_dim = cfg.embed_dim;
    encoder_cfg.heads = cfg.heads;
    encoder_cfg.dropout_input = cfg.dropout_input;
    encoder_cfg.dropout_attention = cfg.dropout_attention;
    encoder_cfg.validate()?;

    let mut init_rng = derive_rng(cfg.seed, "init");
    let mut dropout_rng = derive_rng(cfg.seed, "dropout");
    let mut kmeans_rng = derive_rng(cfg.seed, "kmeans");
    let mut negsamp_rng = derive_rng(cfg.seed, "negsamp");

    let mut params = EncoderParams::init(&encoder_cfg, &mut init_rng)?;
    let mut adam = Adam::new(cfg.lr, &params.shapes());
    adam.clip_norm = cfg.clip_norm;
    let param_names = params.tensor_names();

    let edges = Arc::new(EdgeIndex::from_graph(&bundle.graph));
    let x = Matrix::from_vec(
        n,
        bundle.features.feature_dim(),
        bundle.features.values().to_vec(),
    );

    let dense_target: Option<Arc<Matrix>> = match cfg.recon_mode {
        ReconMode::Dense => {
            let data = bundle
                .graph
                .dense_adjacency(cfg.target_diag_one, cfg.dense_cap)
                .map_err(|e| match e {
                    GraphError::DenseCapExceeded { n, entries, cap } => {
                        TrainError::DenseCapExceeded { n, entries, cap }
                    }
                    other => TrainError::Graph(other),
                })?;
            Some(Arc::new(Matrix::from_vec(n, n, data)))
        }
        ReconMode::Sampled { .. } => None,
    };

    let mut losses_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("losses.jsonl");
            Some(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
        }
        None => None,
    };

    let kmeans_opts = KmeansOptions::default();
    let mut centroids: Option<Centroids> = None;
    let mut epoch_reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let mut spec = DropoutSpec {
            rng: &mut dropout_rng,
            input_p: cfg.dropout_input,
            attention_p: cfg.dropout_attention,
        };
        let handles = gat::encode(&mut tape, &params, &edges, &x, Some(&mut spec))?;

        let l_r = match cfg.recon_mode {
            ReconMode::Dense => {
                let a_hat = losses::decode(&mut tape, handles.z)?;
                losses::recon_loss(
                    &mut tape,
                    Arc::clone(dense_target.as_ref().expect("dense target built")),
                    a_hat,
                    cfg.pos_weight,
                )?
            }
            ReconMode::Sampled { neg_per_pos } => losses::sampled_recon_loss(
                &mut tape,
                &bundle.graph,
                handles.z,
                neg_per_pos,
                cfg.target_diag_one,
                &mut negsamp_rng,
            )?,
        };

        // Centroids: full clustering at epoch 0, warm-started refreshes on
        // the configured schedule once warmup has ended.
        let z_detached = tape.value(handles.z).clone();
        let refresh_due = epoch >= cfg.warmup_epochs
            && (epoch - cfg.warmup_epochs) % cfg.centroid_refresh_period.max(1) == 0;
        if centroids.is_none() || refresh_due {
            centroids = Some(cluster::refresh_centroids(
                &z_detached,
                k,
                centroids.as_ref(),
                &mut kmeans_rng,
                kmeans_opts,
            )?);
        }
        let l_c = losses::kmeans_loss(
            &mut tape,
            handles.z,
            centroids.as_ref().expect("centroids initialized"),
        )?;

        let warming_up = epoch < cfg.warmup_epochs;
        let effective_beta = if warming_up || cfg.ablation_no_clust {
            0.0
        } else {
            cfg.beta
        };
        let (total, mut report) = losses::total_loss(&mut tape, l_r, l_c, effective_beta)?;
        report.epoch = epoch;

        tape.backward(total)?;
        let grads: Vec<Matrix> = handles
            .param_ids
            .iter()
            .zip(params.shapes())
            .map(|(&id, (rows, cols))| match tape.grad(id) {
                Some(g) => g.clone(),
                None => Matrix::zeros(rows, cols),
            })
            .collect();
        let grad_refs: Vec<&Matrix> = grads.iter().collect();
        let name_refs: Vec<&str> = param_names.iter().map(|s| s.as_str()).collect();
        adam.step(&mut params.tensors_mut(), &grad_refs, &name_refs)?;

        if let Some(w) = losses_file.as_mut() {
            let line = serde_json::to_string(&report).expect("loss report serializes");
            writeln!(w, "{line}").map_err(|e| TrainError::Io {
                path: "losses.jsonl".into(),
                source: e,
            })?;
        }
        epoch_reports.push(report);
    }
    if let Some(mut w) = losses_file.take() {
        w.flush().map_err(|e| TrainError::Io {
            path: "losses.jsonl".into(),
            source: e,
        })?;
    }

    // Final clustering: eval-mode embeddings, full restarted k-means.
    let mut tape = Tape::new();
    let handles = gat::encode(&mut tape, &params, &edges, &x, None)?;
    let z_final = tape.value(handles.z).clone();
    let final_clustering = cluster::kmeans(&z_final, k, &mut kmeans_rng, kmeans_opts)?;
    let labels = final_clustering.assignment;

    let (final_nmi, final_ari) = match out_dir {
        Some(dir) => {
            export_embeddings(&z_final, &dir.join("embeddings.csv"))?;
            export_labels(&labels, &dir.join("labels.csv"))?;
            gat::save_checkpoint(&dir.join("checkpoint.bin"), &params)?;
            // Score from the exported file so report and artifact agree.
            let reread = read_labels_csv(&dir.join("labels.csv"))?;
            (
                metrics::nmi(&bundle.truth, &reread)?,
                metrics::ari(&bundle.truth, &reread)?,
            )
        }
        None => (
            metrics::nmi(&bundle.truth, &labels)?,
            metrics::ari(&bundle.truth, &labels)?,
        ),
    };

    let report = RunReport {
        config: cfg.clone(),
        dataset: DatasetStats {
            name: bundle.name.clone(),
            nodes: n,
            features: bundle.features.feature_dim(),
            communities: bundle.k_truth,
        },
        epochs: epoch_reports,
        final_nmi,
        final_ari,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&path, json).map_err(io_err(&path))?;
    }
    Ok(TrainOutcome {
        report,
        embeddings: z_final,
        labels,
        params,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// One full training run per beta value, shared seed. Results are written as
/// `sweep.csv` and `sweep.json` when an output directory is given.
pub fn beta_sweep(
    bundle: &DatasetBundle,
    base: &TrainConfig,
    betas: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>, TrainError> {
    let mut rows = Vec::with_capacity(betas.len());
    for (i, &beta) in betas.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.beta = beta;
        let run_dir = out_dir.map(|d| d.join(format!("beta_{i}")));
        let outcome = train(bundle, &cfg, run_dir.as_deref())?;
        rows.push(SweepRow {
            beta,
            nmi: outcome.report.final_nmi,
            ari: outcome.report.final_ari,
        });
    }
    if let Some(dir) = out_dir {
        let csv_path = dir.join("sweep.csv");
        let mut w = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
        writeln!(w, "beta,nmi,ari").map_err(io_err(&csv_path))?;
        for row in &rows {
            writeln!(w, "{},{},{}", row.beta, row.nmi, row.ari).map_err(io_err(&csv_path))?;
        }
        w.flush().map_err(io_err(&csv_path))?;
        let json_path = dir.join("sweep.json");
        std::fs::write(
            &json_path,
            serde_json::to_string_pretty(&rows).expect("rows serialize"),
        )
        .map_err(io_err(&json_path))?;
    }
    Ok(rows)
}

/// Writes `node_id,z_0,..,z_{d-1}` rows with enough digits to round-trip
/// f64 exactly.
pub fn export_embeddings(z: &Matrix, path: &Path) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header: Vec<String> = std::iter::once("node_id".to_string())
        .chain((0..z.cols).map(|j| format!("z_{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for i in 0..z.rows {
        let mut line = i.to_string();
        for v in z.row(i) {
            line.push(',');
            line.push_str(&format!("{v:.17e}"));
        }
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn export_labels(labels: &Partition, path: &Path) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "node_id,community").map_err(io_err(path))?;
    for (i, &l) in labels.labels().iter().enumerate() {
        writeln!(w, "{i},{l}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Parses a labels file: either the exported `node_id,community` CSV or a
/// plain one-integer-per-line file.
pub fn read_labels_csv(path: &Path) -> Result<Partition, TrainError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let field = match trimmed.split(',').collect::<Vec<_>>()[..] {
            [single] => single,
            [_, second] => second,
            _ => {
                return Err(TrainError::BadLabelsFile {
                    path: path.display().to_string(),
                    detail: format!("line {}: expected 1 or 2 fields", lineno + 1),
                })
            }
        };
        if lineno == 0 && field.parse::<usize>().is_err() {
            continue; // header
        }
        let label: usize = field.parse().map_err(|_| TrainError::BadLabelsFile {
            path: path.display().to_string(),
            detail: format!("line {}: '{field}' is not a community id", lineno + 1),
        })?;
        labels.push(label);
    }
    Partition::from_labels(labels).map_err(|e| TrainError::BadLabelsFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Parses an embeddings CSV written by [`export_embeddings`].
pub fn read_embeddings_csv(path: &Path) -> Result<Matrix, TrainError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if lineno == 0 {
            continue; // header
        }
        let values: Result<Vec<f64>, _> = line
            .split(',')
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect();
        rows.push(values.map_err(|_| TrainError::BadLabelsFile {
            path: path.display().to_string(),
            detail: format!("line {}: non-numeric embedding value", lineno + 1),
        })?);
    }
    Ok(Matrix::from_rows(&rows))
}
