//! Spectral joint batch selection.
//!
//! Each training batch is turned into a cosine-similarity graph, the graph
//! Laplacian `L = D - S` is diagonalised, and the samples with the largest
//! magnitude in the Fiedler vector (the eigenvector of the second-smallest
//! eigenvalue) are kept. A JEST-style learnability selector and random /
//! keep-everything baselines share the same interface, and a small training
//! harness measures what each strategy costs and buys.
//!
//! | module | contents |
//! |--------|----------|
//! | [`spectral`] | cosine similarity, degrees, Laplacian, Jacobi eigensolver, Fiedler vector |
//! | [`selection`] | SALN, JEST, random and standard selectors |
//! | [`model`] | linear / MLP classifier, cross-entropy, SGD with momentum |
//! | [`data`] | synthetic blobs, feature files, splits, batching |
//! | [`experiment`] | training loop, strategy comparison, metric and weight exports |

pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod selection;
pub mod spectral;

pub use data::{BlobParams, Dataset, FeatureFormat, SplitSpec};
pub use error::{Error, ErrorKind, Result};
pub use experiment::{
    compare_strategies, run_experiment, ComparisonReport, DatasetSource, ExperimentRecord, Seeds,
    TrainingConfig,
};
pub use model::{Architecture, Classifier, OptimizerState};
pub use selection::{
    jest_select, random_select, saln_select, standard_select, JestState, SelectionConfig,
    SelectionResult, Strategy,
};
pub use spectral::{
    cosine_similarity_matrix, degree_vector, eig_sym, fiedler_vector, laplacian, FeatureBatch,
    SimilarityGraph, SpectralDecomposition,
};
