//! Inter-sample intensity inconsistency: distributions, 1-Wasserstein
//! distances, agglomerative clustering and the style library.

mod cluster;
mod distribution;
mod histogram;
mod library;

pub use cluster::{hierarchical_cluster, pairwise_distances, Dendrogram, DistanceMatrix, Linkage, Merge};
pub use distribution::{distribution_of, sample_distribution, wasserstein1, IntensityDistribution, LabelCondition};
pub use histogram::{label_conditioned_histograms, ConditionedHistograms};
pub use library::{build_style_library, SliceRef, StyleLibrary};
