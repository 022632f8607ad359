//! Pairwise distance and kernel functions (`f`) and the `n × n` matrices they
//! produce.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DdsError, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    PearsonDist,
    Euclidean,
    CosineDist,
    LinearKernel,
    LaplacianKernel,
    RbfKernel,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::LinearKernel,
        MetricKind::LaplacianKernel,
        MetricKind::RbfKernel,
        MetricKind::PearsonDist,
        MetricKind::Euclidean,
        MetricKind::CosineDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::PearsonDist => "pearson_dist",
            MetricKind::Euclidean => "euclidean",
            MetricKind::CosineDist => "cosine_dist",
            MetricKind::LinearKernel => "linear_kernel",
            MetricKind::LaplacianKernel => "laplacian_kernel",
            MetricKind::RbfKernel => "rbf_kernel",
        }
    }

    pub fn is_kernel(self) -> bool {
        matches!(
            self,
            MetricKind::LinearKernel | MetricKind::LaplacianKernel | MetricKind::RbfKernel
        )
    }

    pub fn uses_bandwidth(self) -> bool {
        matches!(self, MetricKind::LaplacianKernel | MetricKind::RbfKernel)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the Laplacian/RBF bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    Median,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            bandwidth: Bandwidth::Median,
        }
    }

    pub fn with_gamma(kind: MetricKind, gamma: f64) -> Self {
        Self {
            kind,
            bandwidth: Bandwidth::Explicit(gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Explicit(g) = self.bandwidth {
            if !(g > 0.0 && g.is_finite()) {
                return Err(DdsError::config(format!(
                    "bandwidth must be positive and finite, got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        if !self.kind.uses_bandwidth() {
            return self.kind.name().to_string();
        }
        match self.bandwidth {
            Bandwidth::Median => format!("{}(gamma=median)", self.kind),
            Bandwidth::Explicit(g) => format!("{}(gamma={g:e})", self.kind),
        }
    }

    /// The bandwidth to use on `xhat`; `1.0` (unused) for kinds without one.
    pub fn resolve_gamma(&self, xhat: &FeatureMatrix) -> Result<f64> {
        self.validate()?;
        if !self.kind.uses_bandwidth() {
            return Ok(1.0);
        }
        match self.bandwidth {
            Bandwidth::Explicit(g) => Ok(g),
            Bandwidth::Median => median_bandwidth(xhat, self.kind),
        }
    }
}

/// Symmetric `n × n` matrix of pairwise `f` values (or a centered version of one).
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub data: Array2<f64>,
    pub kind: MetricKind,
    pub image_ids: Vec<String>,
}

impl DissimilarityMatrix {
    pub fn new(data: Array2<f64>, kind: MetricKind, image_ids: Vec<String>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(DdsError::validation(format!(
                "dissimilarity matrix must be square, got {r}x{c}"
            )));
        }
        if image_ids.len() != r {
            return Err(DdsError::validation(format!(
                "{} ids for a {r}x{r} matrix",
                image_ids.len()
            )));
        }
        Ok(Self { data, kind, image_ids })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub(crate) fn with_data(&self, data: Array2<f64>) -> Self {
        Self {
            data,
            kind: self.kind,
            image_ids: self.image_ids.clone(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn squared_l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Sum of squared deviations from the mean.
fn centered_ss(a: &[f64]) -> f64 {
    let m = mean(a);
    a.iter().map(|v| (v - m) * (v - m)).sum()
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(DdsError::numeric("pearson distance on a zero-variance vector"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// One Table-1 style evaluation of `f(xi, xj)`. `gamma` is only read by the
/// Laplacian and RBF kernels.
pub fn scalar_f(xi: &[f64], xj: &[f64], kind: MetricKind, gamma: f64) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(DdsError::validation(format!(
            "vector lengths differ: {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    if xi.is_empty() {
        return Err(DdsError::validation("vectors must be non-empty"));
    }
    let value = match kind {
        MetricKind::PearsonDist => 1.0 - pearson(xi, xj)?,
        MetricKind::Euclidean => {
            let sq = dot(xi, xi) + dot(xj, xj) - 2.0 * dot(xi, xj);
            sq.max(0.0).sqrt()
        }
        MetricKind::CosineDist => {
            let (nii, njj) = (dot(xi, xi), dot(xj, xj));
            if nii == 0.0 || njj == 0.0 {
                return Err(DdsError::numeric("cosine distance on a zero vector"));
            }
            1.0 - (dot(xi, xj) / (nii * njj).sqrt()).clamp(-1.0, 1.0)
        }
        MetricKind::LinearKernel => dot(xi, xj),
        MetricKind::LaplacianKernel => (-gamma * l1_distance(xi, xj)).exp(),
        MetricKind::RbfKernel => (-gamma * squared_l2_distance(xi, xj)).exp(),
    };
    Ok(value)
}

fn rows(x: &FeatureMatrix) -> Vec<&[f64]> {
    x.data()
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("feature matrices are standard layout"))
        .collect()
}

fn standard(x: &FeatureMatrix) -> std::borrow::Cow<'_, FeatureMatrix> {
    if x.data().is_standard_layout() {
        std::borrow::Cow::Borrowed(x)
    } else {
        std::borrow::Cow::Owned(FeatureMatrix::from_parts_unchecked(
            x.data().as_standard_layout().into_owned(),
            x.image_ids().to_vec(),
            x.source().to_string(),
        ))
    }
}

/// Builds `M(i, j) = f(row_i, row_j)`.
///
/// The bandwidth is resolved from `xhat` before any entry is computed. Only
/// the upper triangle (diagonal included) is evaluated; the lower triangle
/// is mirrored so the result is exactly symmetric.
pub fn pairwise_matrix(xhat: &FeatureMatrix, spec: &MetricSpec) -> Result<DissimilarityMatrix> {
    let xhat = standard(xhat);
    let gamma = spec.resolve_gamma(&xhat)?;
    let rows = rows(&xhat);
    let ids = xhat.image_ids();

    match spec.kind {
        MetricKind::PearsonDist => {
            for (row, id) in rows.iter().zip(ids) {
                if centered_ss(row) == 0.0 {
                    return Err(DdsError::numeric(format!(
                        "pearson distance undefined: image {id:?} has zero variance across features"
                    )));
                }
            }
        }
        MetricKind::CosineDist => {
            for (row, id) in rows.iter().zip(ids) {
                if dot(row, row) == 0.0 {
                    return Err(DdsError::numeric(format!(
                        "cosine distance undefined: image {id:?} has an all-zero feature vector"
                    )));
                }
            }
        }
        _ => {}
    }

    let n = rows.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| scalar_f(rows[i], rows[j], spec.kind, gamma))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut data = Array2::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            data[[i, j]] = v;
            data[[j, i]] = v;
        }
    }
    DissimilarityMatrix::new(data, spec.kind, ids.to_vec())
}

/// Median-heuristic bandwidth.
///
/// Laplacian: `1 / median(L1)`. RBF: `1 / (2 · median(squared L2))`. The
/// median runs over the `n(n−1)/2` distinct pairs; for an even count the
/// lower-middle element is taken.
pub fn median_bandwidth(xhat: &FeatureMatrix, kind: MetricKind) -> Result<f64> {
    let dist: fn(&[f64], &[f64]) -> f64 = match kind {
        MetricKind::LaplacianKernel => l1_distance,
        MetricKind::RbfKernel => squared_l2_distance,
        other => {
            return Err(DdsError::config(format!("{other} has no bandwidth")));
        }
    };
    let xhat = standard(xhat);
    let rows = rows(&xhat);
    let n = rows.len();
    if n < 2 {
        return Err(DdsError::validation("median heuristic needs at least 2 images"));
    }
    let mut pairs: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (i + 1..n).map(move |j| dist(rows[i], rows[j]))
        })
        .collect();
    pairs.sort_by(f64::total_cmp);
    let median = pairs[(pairs.len() - 1) / 2];
    if median <= 0.0 {
        return Err(DdsError::numeric(format!(
            "median pairwise distance is zero; cannot set {kind} bandwidth"
        )));
    }
    Ok(match kind {
        MetricKind::LaplacianKernel => 1.0 / median,
        _ => 1.0 / (2.0 * median),
    })
}
