//! Datasets: IDX/CSV ingestion, synthetic blobs, feature embedding and
//! per-class K-means clustering.

pub mod blobs;
pub mod cluster;
pub mod csvio;
pub mod dataset;
pub mod embed;
pub mod idx;

pub use blobs::{make_blobs, make_mixture, BlobComponent};
pub use cluster::{cluster, kmeans, ClusterHierarchy, KMeans};
pub use csvio::{load_csv, read_assignments, write_assignments, write_csv};
pub use dataset::{LabeledBatch, LabeledDataset};
pub use embed::{embed, Extractor};
pub use idx::{load_idx, write_idx};
