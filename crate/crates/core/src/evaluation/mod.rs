//! Quantitative assessment of generated chunks: STOI-like row correlations,
//! Gaussian embedding statistics (FID and per-sample log-density), rater
//! agreement, grade buckets and the logistic grade classifier.

mod embed;
mod features;
mod gaussian;
mod grades;
mod logistic;
mod scoring;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use embed::{Embed, Embedder, ExternalEmbeddings};
pub use features::{stoi_features, StoiFeatures};
pub use gaussian::{fid, fit_gaussian, gaussian_log_density, GaussianModel, COVARIANCE_EPS};
pub use grades::{grade_bucket, pearson, GradeBucket};
pub use logistic::{fit_linear_score, fit_logistic, LinearScore, LogisticModel, Standardizer, GRADIENT_TOLERANCE, MAX_ITERATIONS};
pub use scoring::{
    chunk_matrix, fit_reference, mean_grades, pair_features, pair_features_threaded, parse_annotations, rater_correlations,
    score_samples, score_samples_threaded,
    Annotation, Criterion, SampleScore, ScoreTable,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("covariance is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("covariance is singular")]
    Singular,
    #[error("zero variance")]
    ZeroVariance,
    #[error("value {0} out of range")]
    OutOfRange(f64),
    #[error("all labels belong to one class")]
    DegenerateLabels,
    #[error("embedder has not been trained")]
    Untrained,
    #[error("model has not been fitted")]
    Unfitted,
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
