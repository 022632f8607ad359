//! The `(Q, D)` stage: feature and observation weighting applied before any
//! pairwise comparison.
//!
//! Every kind reduces to "standardize some set of values with population
//! statistics". What changes is the set:
//!
//! | kind         | statistics pooled over            | input          |
//! |--------------|-----------------------------------|----------------|
//! | center       | each column (mean only)           | matrix or map  |
//! | zscore       | each column                       | matrix or map  |
//! | batchnorm    | each channel, over `(n, h, w)`    | map            |
//! | groupnorm    | each (image, channel group)       | map            |
//! | layernorm    | each image, all channels          | map            |
//! | instancenorm | each (image, channel)             | map            |
//!
//! Feature maps are flattened to `n × (c·h·w)` for identity, center and zscore.
//! Results always come back as an `n × d` [`FeatureMatrix`] with rows and ids
//! in input order.

use std::fmt;

use ndarray::{s, ArrayViewMut, Axis, Dimension};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DdsError, Result};
use crate::features::{FeatureMap, FeatureMatrix, Features};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_GROUP_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Identity,
    Center,
    Zscore,
    Batchnorm,
    Instancenorm,
    Layernorm,
    Groupnorm,
}

impl NormKind {
    pub const ALL: [NormKind; 7] = [
        NormKind::Identity,
        NormKind::Center,
        NormKind::Zscore,
        NormKind::Batchnorm,
        NormKind::Instancenorm,
        NormKind::Layernorm,
        NormKind::Groupnorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Identity => "identity",
            NormKind::Center => "center",
            NormKind::Zscore => "zscore",
            NormKind::Batchnorm => "batchnorm",
            NormKind::Instancenorm => "instancenorm",
            NormKind::Layernorm => "layernorm",
            NormKind::Groupnorm => "groupnorm",
        }
    }

    /// Whether the kind needs the `c × h × w` structure of a feature map.
    pub fn needs_feature_map(self) -> bool {
        matches!(
            self,
            NormKind::Batchnorm | NormKind::Instancenorm | NormKind::Layernorm | NormKind::Groupnorm
        )
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Declarative `(Q, D)` choice.
///
/// `group_size` is the number of channels per group, so `group_size = c`
/// pools all channels (layer norm) and `group_size = 1` pools one channel
/// (instance norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    pub kind: NormKind,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl NormalizationSpec {
    pub fn new(kind: NormKind) -> Self {
        Self {
            kind,
            group_size: DEFAULT_GROUP_SIZE,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn groupnorm(group_size: usize) -> Self {
        Self {
            group_size,
            ..Self::new(NormKind::Groupnorm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DdsError::config(format!(
                "epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        if self.kind == NormKind::Groupnorm && self.group_size == 0 {
            return Err(DdsError::config("group_size must be positive"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        match self.kind {
            NormKind::Groupnorm => format!("groupnorm(g={},eps={:e})", self.group_size, self.epsilon),
            NormKind::Identity | NormKind::Center => self.kind.name().to_string(),
            k => format!("{}(eps={:e})", k.name(), self.epsilon),
        }
    }
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::new(NormKind::Identity)
    }
}

/// Applies the normalization and returns the `n × d'` transformed features.
pub fn apply_normalization(x: &Features, spec: &NormalizationSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    if x.n_images() < 2 {
        return Err(DdsError::validation("need at least 2 images"));
    }
    match (spec.kind, x) {
        (NormKind::Identity, _) => Ok(x.to_matrix()),
        (NormKind::Center, _) => Ok(normalize_columns(&x.to_matrix(), None)),
        (NormKind::Zscore, _) => Ok(normalize_columns(&x.to_matrix(), Some(spec.epsilon))),
        (kind, Features::Matrix(m)) => Err(DdsError::config(format!(
            "{kind} needs a 4-D feature map, got a {}x{} matrix",
            m.n_images(),
            m.dim()
        ))),
        (NormKind::Batchnorm, Features::Map(m)) => Ok(batchnorm(m, spec.epsilon)),
        (NormKind::Layernorm, Features::Map(m)) => {
            let c = m.data().dim().1;
            group_normalize(m, c, spec.epsilon)
        }
        (NormKind::Instancenorm, Features::Map(m)) => group_normalize(m, 1, spec.epsilon),
        (NormKind::Groupnorm, Features::Map(m)) => group_normalize(m, spec.group_size, spec.epsilon),
    }
}

/// Subtracts the mean and, when `epsilon` is given, divides by the population
/// standard deviation. Values whose std falls below `epsilon` become zeros.
/// Reductions run sequentially in ascending logical index order.
fn standardize<D: Dimension>(mut values: ArrayViewMut<'_, f64, D>, epsilon: Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    match epsilon {
        None => values.mapv_inplace(|v| v - mean),
        Some(eps) => {
            let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < eps {
                values.fill(0.0);
            } else {
                values.mapv_inplace(|v| (v - mean) / std);
            }
        }
    }
}

fn normalize_columns(x: &FeatureMatrix, epsilon: Option<f64>) -> FeatureMatrix {
    let mut out = x.data().to_owned();
    out.axis_iter_mut(Axis(1))
        .into_par_iter()
        .for_each(|col| standardize(col, epsilon));
    FeatureMatrix::from_parts_unchecked(out, x.image_ids().to_vec(), x.source().to_string())
}

fn batchnorm(x: &FeatureMap, epsilon: f64) -> FeatureMatrix {
    let mut out = x.data().to_owned();
    out.axis_iter_mut(Axis(1))
        .into_par_iter()
        .for_each(|channel| standardize(channel, Some(epsilon)));
    FeatureMap::from_parts_unchecked(out, x.image_ids().to_vec(), x.source().to_string()).flatten()
}

fn group_normalize(x: &FeatureMap, group_size: usize, epsilon: f64) -> Result<FeatureMatrix> {
    let c = x.data().dim().1;
    if group_size == 0 || !c.is_multiple_of(group_size) {
        return Err(DdsError::config(format!(
            "group_size {group_size} does not divide channel count {c}"
        )));
    }
    let mut out = x.data().to_owned();
    out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut image| {
        for start in (0..c).step_by(group_size) {
            standardize(image.slice_mut(s![start..start + group_size, .., ..]), Some(epsilon));
        }
    });
    Ok(FeatureMap::from_parts_unchecked(out, x.image_ids().to_vec(), x.source().to_string()).flatten())
}
