//! Duality diagram similarity (DDS) between neural-network representations.
//!
//! A representation is a feature matrix over a fixed set of images. Two
//! representations are compared in three stages:
//!
//! 1. [`norms`]: reweight observations and feature dimensions (`D X Q`),
//!    e.g. z-scoring or batch/group/layer/instance normalization.
//! 2. [`metrics`]: turn each side into an `n × n` pairwise distance or
//!    kernel matrix.
//! 3. [`compare`]: optionally center both matrices and reduce them to one
//!    score (Pearson, Spearman or cosine).
//!
//! [`dds::dds`] runs the whole pipeline; [`dds::rsa`] and [`dds::cka`] are
//! fixed configurations of it. [`evalrank`] builds model-by-model affinity
//! matrices and checks their rankings against external transfer results.
//!
//! ```
//! use dds::{dds as similarity, DdsConfig, FeatureMatrix, Features};
//! use ndarray::array;
//!
//! let x: Features = FeatureMatrix::with_default_ids(array![
//!     [0.1, 1.0, 3.0], [2.0, 0.5, 1.0], [1.5, 2.5, 0.0], [3.0, 0.1, 2.2], [0.7, 0.9, 1.1]
//! ]).unwrap().into();
//! let s = similarity(&x, &x, &DdsConfig::default()).unwrap();
//! assert!((s.value - 1.0).abs() < 1e-10);
//! ```

pub mod cli;
pub mod compare;
pub mod config;
pub mod dds;
pub mod error;
pub mod evalrank;
pub mod features;
pub mod io;
pub mod metrics;
pub mod norms;
pub mod stats;

pub use crate::compare::{Centering, ComparisonSpec, ScoreKind, SimilarityScore};
pub use crate::dds::{cka, cka_direct, dds, rsa, CkaKernel, DdsConfig, Preset};
pub use crate::error::{DdsError, Result};
pub use crate::features::{FeatureMap, FeatureMatrix, Features};
pub use crate::metrics::{Bandwidth, DissimilarityMatrix, MetricKind, MetricSpec};
pub use crate::norms::{NormKind, NormalizationSpec};
