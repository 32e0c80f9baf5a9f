//! Unsupervised community detection on attributed graphs.
//!
//! A two-layer multi-head graph-attention encoder maps node features to
//! embeddings, an inner-product decoder reconstructs the adjacency matrix,
//! and a k-means regularizer pulls embeddings toward cluster centroids.
//! Training minimizes `L = L_r + beta * L_c`; final communities come from
//! k-means on the learned embeddings, scored with NMI and ARI.

pub mod cluster;
pub mod gat;
pub mod graph;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod tensor;
pub mod train;

pub use cluster::{kmeans, Centroids, KmeansOptions, KmeansResult};
pub use gat::{EncoderConfig, EncoderParams};
pub use graph::{FeatureMatrix, Graph, Partition};
pub use ingest::{DatasetBundle, IngestOptions};
pub use metrics::{ari, nmi};
pub use tensor::{Matrix, Tape};
pub use train::{train, RunReport, TrainConfig};
