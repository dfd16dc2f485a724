//! Clustering-quality metrics, an exact minimum-cover oracle for small
//! instances, and partitional/hierarchical baselines.

mod accuracy;
mod baselines;
mod metrics;
mod oracle;

pub use accuracy::accuracy_score;
pub use baselines::{hc_baseline, kmeans_baseline, Linkage, PairRanking, SeriesDistance};
pub use metrics::{f_measure, purity, rand_index, ConfusionCounts, LabeledClustering};
pub use oracle::{min_cover_graph, min_cover_oracle, MinCover, ORACLE_LIMIT};
