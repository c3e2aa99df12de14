//! Synthetic data: label-correlated numeric features, importance-clustered
//! categorical features with Dirichlet major-category perturbation, and the
//! rendered toy tasks.

pub mod categorical;
pub mod cluster;
pub mod dataset;
pub mod importance;
pub mod numeric;
pub mod scene;
pub mod svqa;
pub mod tasks;

pub use categorical::{dirichlet, major_combinations, major_prior, perturb_feature, prior_from_majors, CategoricalDistribution};
pub use cluster::{cluster_features, kmeans, ClusteredFeatures, Element, ElementKind, FeaturePlan};
pub use dataset::{assemble_dataset, read_dataset, write_dataset, Annotation, DatasetConfig, Split, SyntheticDataset, ToyTask};
pub use importance::{extract_important, AttentionProvider, ImportanceProvider, ImportanceScores, OracleProvider};
pub use numeric::{gen_numeric, nearest_centroid, NumericData};
pub use svqa::SyntheticGenConfig;
