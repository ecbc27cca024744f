//! Scoring predictions, per-gene significance, cross-validation and
//! spatial domain detection.

pub mod cluster;
pub mod loocv;
pub mod metrics;
pub mod stats;

pub use cluster::{ari, detect_domains, kmeans, pca, KMeans, Pca};
pub use loocv::{loocv, rescore_fold, run_fold, FoldOutcome, LoocvConfig, LoocvReport};
pub use metrics::{
    compute_metrics, heg_indices, mean_record, pearson, GeneScore, MetricsRecord, HEG_NUM,
};
pub use stats::{neg_log10_p, NEG_LOG10_P_CAP};
