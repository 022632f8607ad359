//! The `g` stage: optional centering of each pairwise matrix followed by a
//! single correlation-type score.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DdsError, Result};
use crate::features::check_aligned;
use crate::metrics::DissimilarityMatrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    None,
    /// U-centering; zero diagonal, unbiased distance-covariance form.
    Unbiased,
    /// `H M H` with `H = I − 11ᵀ/n`.
    Double,
}

impl Centering {
    pub fn name(self) -> &'static str {
        match self {
            Centering::None => "none",
            Centering::Unbiased => "unbiased",
            Centering::Double => "double",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Pearson over all off-diagonal entries.
    PearsonFull,
    /// Spearman over the strict upper triangle.
    SpearmanUpper,
    /// Cosine similarity over every entry.
    CosineFull,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::PearsonFull, ScoreKind::SpearmanUpper, ScoreKind::CosineFull];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::PearsonFull => "pearson_full",
            ScoreKind::SpearmanUpper => "spearman_upper",
            ScoreKind::CosineFull => "cosine_full",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub centering: Centering,
    pub score: ScoreKind,
}

impl ComparisonSpec {
    pub fn new(centering: Centering, score: ScoreKind) -> Self {
        Self { centering, score }
    }

    pub fn digest(&self) -> String {
        format!("{}+{}", self.centering.name(), self.score.name())
    }
}

/// A final similarity value plus the pipeline that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub config_digest: String,
}

fn row_col_sums(a: &Array2<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let rows: Vec<f64> = a.rows().into_iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = a.columns().into_iter().map(|c| c.iter().sum()).collect();
    let total = rows.iter().sum();
    (rows, cols, total)
}

/// Unbiased (U-)centering.
///
/// `Ã_ij = A_ij − r_i/(n−2) − c_j/(n−2) + T/((n−1)(n−2))` off the diagonal,
/// `Ã_ii = 0`, where `r`, `c`, `T` are row, column and grand sums of `A`.
pub fn u_center(m: &DissimilarityMatrix) -> Result<DissimilarityMatrix> {
    let n = m.n();
    if n < 4 {
        return Err(DdsError::validation(format!(
            "unbiased centering needs n >= 4, got {n}"
        )));
    }
    let (rows, cols, total) = row_col_sums(&m.data);
    let nf = n as f64;
    let grand = total / ((nf - 1.0) * (nf - 2.0));
    let out = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            m.data[[i, j]] - (rows[i] / (nf - 2.0) + cols[j] / (nf - 2.0)) + grand
        }
    });
    Ok(m.with_data(out))
}

/// `H M H`: subtracts row and column means and adds back the grand mean.
pub fn double_center(m: &DissimilarityMatrix) -> Result<DissimilarityMatrix> {
    let n = m.n();
    if n < 2 {
        return Err(DdsError::validation("double centering needs n >= 2"));
    }
    let (rows, cols, total) = row_col_sums(&m.data);
    let nf = n as f64;
    let grand = total / (nf * nf);
    let out = Array2::from_shape_fn((n, n), |(i, j)| m.data[[i, j]] - (rows[i] / nf + cols[j] / nf) + grand);
    Ok(m.with_data(out))
}

pub fn apply_centering(m: &DissimilarityMatrix, centering: Centering) -> Result<DissimilarityMatrix> {
    match centering {
        Centering::None => Ok(m.clone()),
        Centering::Unbiased => u_center(m),
        Centering::Double => double_center(m),
    }
}

fn off_diagonal(a: &Array2<f64>) -> Vec<f64> {
    a.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, &v)| v).collect()
}

pub(crate) fn strict_upper(a: &Array2<f64>) -> Vec<f64> {
    a.indexed_iter().filter(|((i, j), _)| i < j).map(|(_, &v)| v).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|y| y * y).sum();
    if aa == 0.0 || bb == 0.0 {
        return Err(DdsError::numeric("cosine score of an all-zero matrix"));
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Scores two (already centered) matrices over the same images.
pub fn score(mx: &DissimilarityMatrix, my: &DissimilarityMatrix, spec: &ComparisonSpec) -> Result<SimilarityScore> {
    check_aligned(
        &mx.image_ids,
        &my.image_ids,
        "dissimilarity matrices cover different images",
    )?;
    if mx.n() < 2 {
        return Err(DdsError::validation("scoring needs at least 2 images"));
    }
    let value = match spec.score {
        ScoreKind::PearsonFull => stats::pearson(&off_diagonal(&mx.data), &off_diagonal(&my.data)),
        ScoreKind::SpearmanUpper => {
            if mx.n() < 3 {
                return Err(DdsError::validation("spearman_upper needs n >= 3"));
            }
            stats::spearman(&strict_upper(&mx.data), &strict_upper(&my.data))
        }
        ScoreKind::CosineFull => cosine(
            mx.data.as_slice().expect("owned standard layout"),
            my.data.as_slice().expect("owned standard layout"),
        ),
    }
    .map_err(|e| match e {
        DdsError::Numeric(msg) => DdsError::numeric(format!(
            "{} score: {msg} (constant matrix after centering?)",
            spec.score
        )),
        other => other,
    })?;
    Ok(SimilarityScore {
        value,
        config_digest: spec.digest(),
    })
}

/// Centers both matrices per `spec.centering` and scores them.
pub fn compare(mx: &DissimilarityMatrix, my: &DissimilarityMatrix, spec: &ComparisonSpec) -> Result<SimilarityScore> {
    score(
        &apply_centering(mx, spec.centering)?,
        &apply_centering(my, spec.centering)?,
        spec,
    )
}
