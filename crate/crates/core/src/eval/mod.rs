//! Clustering evaluation: k-means and the elbow rule, Calinski-Harabasz
//! and Davies-Bouldin indices, PCA (baseline embedding and 2-D export),
//! and per-cluster cohort reports.

mod features;
mod io;
mod kmeans;
mod metrics;
mod pca;
mod report;

pub use features::{aggregate_multi_hot, pca_baseline};
pub use io::{
    assignments_tsv, cluster_labels, embeddings_csv, parse_embeddings_csv, plot_csv, read_assignments, read_embeddings,
    write_assignments, write_embeddings, wss_curve_csv,
};
pub use kmeans::{elbow_index, elbow_select, kmeans, kmeans_with, wss_curve, ClusteringResult, ElbowResult, KMeansOptions};
pub use metrics::{calinski_harabasz, davies_bouldin, purity};
pub use pca::{pca_fit, pca_fit_transform, Pca};
pub use report::{cohort_report, lower_median, ClusterReport, ClusterRow, REPORT_HEADER};
