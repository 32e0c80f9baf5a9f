//! Command-line entry point: train a model, sweep the clustering weight, or
//! score a predicted partition against ground truth.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gaeco::ingest::{self, DatasetBundle, IngestOptions};
use gaeco::train::{self, ReconMode, TrainConfig};

#[derive(Parser)]
#[command(name = "gaeco", version, about = "Community detection with a graph attention autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one dataset and write report, losses, embeddings, labels,
    /// and checkpoint into the output directory.
    Train(TrainArgs),
    /// Run one full training per clustering weight and tabulate NMI/ARI.
    Sweep(SweepArgs),
    /// Score a predicted labeling against ground truth (prints JSON).
    Score(ScoreArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset name; also selects the default clustering weight
    /// (10 for cora, 0.1 otherwise).
    #[arg(long)]
    dataset: String,
    /// Planetoid-style node file (one line per node: id, features, class).
    #[arg(long, requires = "cites", conflicts_with_all = ["edges", "features", "labels"])]
    content: Option<PathBuf>,
    /// Planetoid-style edge file (one `cited citing` pair per line).
    #[arg(long, requires = "content")]
    cites: Option<PathBuf>,
    /// Generic edge list (one `src<TAB>dst` pair per line).
    #[arg(long, requires_all = ["features", "labels"])]
    edges: Option<PathBuf>,
    /// Generic feature matrix (CSV, one row per node).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Generic labels file (one integer per line).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Keep raw feature rows instead of L1-normalizing them.
    #[arg(long)]
    no_row_normalize: bool,
    /// Do not add self-loops to the graph.
    #[arg(long)]
    no_self_loops: bool,
}

impl DatasetArgs {
    fn load(&self) -> Result<DatasetBundle, String> {
        let opts = IngestOptions {
            add_self_loops: !self.no_self_loops,
            row_normalize: !self.no_row_normalize,
        };
        let (bundle, stats) = match (&self.content, &self.edges) {
            (Some(content), None) => {
                let cites = self.cites.as_ref().expect("clap enforces --cites");
                ingest::load_content_cites(content, cites, &self.dataset, opts)
                    .map_err(|e| e.to_string())?
            }
            (None, Some(edges)) => {
                let features = self.features.as_ref().expect("clap enforces --features");
                let labels = self.labels.as_ref().expect("clap enforces --labels");
                ingest::load_generic(edges, features, labels, &self.dataset, opts)
                    .map_err(|e| e.to_string())?
            }
            _ => {
                return Err(
                    "provide either --content/--cites or --edges/--features/--labels".into(),
                )
            }
        };
        eprintln!(
            "loaded {}: {} nodes, {} features, {} communities ({} raw edges, {} dropped, {} after symmetrizing)",
            bundle.name,
            bundle.graph.node_count(),
            bundle.features.feature_dim(),
            bundle.k_truth,
            stats.raw_edges,
            stats.dropped_edges,
            stats.symmetrized_edges,
        );
        Ok(bundle)
    }

    fn default_beta(&self) -> f64 {
        if self.dataset.eq_ignore_ascii_case("cora") {
            10.0
        } else {
            0.1
        }
    }
}

#[derive(Args)]
struct TrainOptions {
    /// Clustering-loss weight; defaults to 10 for cora, 0.1 otherwise.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of communities; defaults to the ground-truth count.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Use sampled edge reconstruction instead of the dense target
    /// (required for graphs past the dense-entry cap).
    #[arg(long)]
    sampled: bool,
    /// Negatives sampled per positive edge in sampled mode.
    #[arg(long, default_value_t = 5)]
    neg_per_pos: usize,
    /// Disable the clustering term entirely (ablation).
    #[arg(long)]
    no_clust: bool,
}

impl TrainOptions {
    fn to_config(&self, dataset: &DatasetArgs) -> TrainConfig {
        TrainConfig {
            beta: self.beta.unwrap_or_else(|| dataset.default_beta()),
            k: self.k.unwrap_or(0),
            epochs: self.epochs,
            warmup_epochs: self.warmup,
            seed: self.seed,
            recon_mode: if self.sampled {
                ReconMode::Sampled {
                    neg_per_pos: self.neg_per_pos,
                }
            } else {
                ReconMode::Dense
            },
            ablation_no_clust: self.no_clust,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    options: TrainOptions,
    /// Output directory for report.json, losses.jsonl, embeddings.csv,
    /// labels.csv, and checkpoint.bin.
    #[arg(long, default_value = "gaeco_out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    options: TrainOptions,
    /// Comma-separated clustering weights to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<f64>,
    #[arg(long, default_value = "gaeco_sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Ground-truth labels (plain integers or `node_id,community` CSV).
    #[arg(long)]
    truth: PathBuf,
    /// Predicted labels in the same formats.
    #[arg(long)]
    pred: PathBuf,
}

fn init_threads() {
    if let Ok(v) = std::env::var("GAECO_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("rayon pool not yet initialized");
            }
            _ => eprintln!("ignoring invalid GAECO_THREADS value '{v}'"),
        }
    }
}

fn run_train(args: &TrainArgs) -> Result<(), String> {
    let bundle = args.dataset.load()?;
    let cfg = args.options.to_config(&args.dataset);
    let outcome = train::train(&bundle, &cfg, Some(&args.out)).map_err(|e| e.to_string())?;
    println!(
        "{}",
        serde_json::json!({
            "dataset": bundle.name,
            "beta": cfg.beta,
            "epochs": cfg.epochs,
            "nmi": outcome.report.final_nmi,
            "ari": outcome.report.final_ari,
            "wall_secs": outcome.report.wall_secs,
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<(), String> {
    let bundle = args.dataset.load()?;
    let cfg = args.options.to_config(&args.dataset);
    let rows =
        train::beta_sweep(&bundle, &cfg, &args.betas, Some(&args.out)).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
    Ok(())
}

fn run_score(args: &ScoreArgs) -> Result<(), String> {
    let truth = train::read_labels_csv(&args.truth).map_err(|e| e.to_string())?;
    let pred = train::read_labels_csv(&args.pred).map_err(|e| e.to_string())?;
    let nmi = gaeco::metrics::nmi(&truth, &pred).map_err(|e| e.to_string())?;
    let ari = gaeco::metrics::ari(&truth, &pred).map_err(|e| e.to_string())?;
    println!(
        "{}",
        serde_json::json!({
            "nmi": nmi,
            "ari": ari,
            "n": truth.len(),
            "k_truth": truth.distinct_labels(),
            "k_pred": pred.distinct_labels(),
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Score(args) => run_score(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
