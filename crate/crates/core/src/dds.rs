//! The full similarity pipeline: normalize, build the pairwise matrix, center,
//! score. RSA and linear/RBF CKA fall out as fixed configurations.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::compare::{self, Centering, ComparisonSpec, ScoreKind, SimilarityScore};
use crate::error::{DdsError, Result};
use crate::features::{check_aligned, Features};
use crate::metrics::{self, DissimilarityMatrix, MetricKind, MetricSpec};
use crate::norms::{self, NormKind, NormalizationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdsConfig {
    pub normalization: NormalizationSpec,
    pub metric: MetricSpec,
    pub comparison: ComparisonSpec,
}

impl DdsConfig {
    pub fn new(normalization: NormalizationSpec, metric: MetricSpec, comparison: ComparisonSpec) -> Self {
        Self {
            normalization,
            metric,
            comparison,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        self.metric.validate()
    }

    /// Stable text identifying every knob of the pipeline.
    pub fn digest(&self) -> String {
        format!(
            "norm={};f={};g={}",
            self.normalization.digest(),
            self.metric.digest(),
            self.comparison.digest()
        )
    }
}

impl Default for DdsConfig {
    fn default() -> Self {
        Preset::DdsLaplacian.config()
    }
}

/// Named configurations shipped with the tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Column-centered features, `1 − ρ` RDMs, Spearman over the upper triangle.
    Rsa,
    CkaLinear,
    CkaRbf,
    /// z-scoring, Laplacian kernel, U-centering + Pearson.
    DdsLaplacian,
    /// z-scoring, cosine distance, U-centering + Pearson.
    DdsCosine,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Rsa,
        Preset::CkaLinear,
        Preset::CkaRbf,
        Preset::DdsLaplacian,
        Preset::DdsCosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Rsa => "rsa",
            Preset::CkaLinear => "cka_linear",
            Preset::CkaRbf => "cka_rbf",
            Preset::DdsLaplacian => "dds_laplacian",
            Preset::DdsCosine => "dds_cosine",
        }
    }

    pub fn config(self) -> DdsConfig {
        let pearson_u = ComparisonSpec::new(Centering::Unbiased, ScoreKind::PearsonFull);
        let cka_g = ComparisonSpec::new(Centering::Double, ScoreKind::CosineFull);
        match self {
            Preset::Rsa => DdsConfig::new(
                NormalizationSpec::new(NormKind::Center),
                MetricSpec::new(MetricKind::PearsonDist),
                ComparisonSpec::new(Centering::None, ScoreKind::SpearmanUpper),
            ),
            Preset::CkaLinear => DdsConfig::new(
                NormalizationSpec::new(NormKind::Identity),
                MetricSpec::new(MetricKind::LinearKernel),
                cka_g,
            ),
            Preset::CkaRbf => DdsConfig::new(
                NormalizationSpec::new(NormKind::Identity),
                MetricSpec::new(MetricKind::RbfKernel),
                cka_g,
            ),
            Preset::DdsLaplacian => DdsConfig::new(
                NormalizationSpec::new(NormKind::Zscore),
                MetricSpec::new(MetricKind::LaplacianKernel),
                pearson_u,
            ),
            Preset::DdsCosine => DdsConfig::new(
                NormalizationSpec::new(NormKind::Zscore),
                MetricSpec::new(MetricKind::CosineDist),
                pearson_u,
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = DdsError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| DdsError::config(format!("unknown preset {s:?}")))
    }
}

/// Runs one side of the pipeline up to (and including) centering.
///
/// The bandwidth, when the metric has one, comes from this side's own
/// normalized features.
pub fn prepare(x: &Features, cfg: &DdsConfig) -> Result<DissimilarityMatrix> {
    cfg.validate()?;
    let xhat = norms::apply_normalization(x, &cfg.normalization)?;
    let m = metrics::pairwise_matrix(&xhat, &cfg.metric)?;
    compare::apply_centering(&m, cfg.comparison.centering)
}

/// Scores two sides already run through [`prepare`] with the same config.
pub fn score_prepared(mx: &DissimilarityMatrix, my: &DissimilarityMatrix, cfg: &DdsConfig) -> Result<SimilarityScore> {
    let mut s = compare::score(mx, my, &cfg.comparison)?;
    s.config_digest = cfg.digest();
    Ok(s)
}

/// Similarity between two representations of the same images.
///
/// Feature dimensions may differ; image ids must match exactly, in order.
pub fn dds(x: &Features, y: &Features, cfg: &DdsConfig) -> Result<SimilarityScore> {
    check_aligned(x.image_ids(), y.image_ids(), "feature sets cover different images")?;
    cfg.validate()?;
    let (mx, my) = rayon::join(|| prepare(x, cfg), || prepare(y, cfg));
    score_prepared(&mx?, &my?, cfg)
}

pub fn rsa(x: &Features, y: &Features) -> Result<SimilarityScore> {
    dds(x, y, &Preset::Rsa.config())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkaKernel {
    Linear,
    Rbf,
}

pub fn cka(x: &Features, y: &Features, kernel: CkaKernel) -> Result<SimilarityScore> {
    let preset = match kernel {
        CkaKernel::Linear => Preset::CkaLinear,
        CkaKernel::Rbf => Preset::CkaRbf,
    };
    dds(x, y, &preset.config())
}

fn gram(x: &Features, kernel: CkaKernel) -> Result<Array2<f64>> {
    let m = x.to_matrix();
    let data = m.data();
    match kernel {
        CkaKernel::Linear => Ok(data.dot(&data.t())),
        CkaKernel::Rbf => {
            let gamma = metrics::median_bandwidth(&m, MetricKind::RbfKernel)?;
            let n = data.nrows();
            Ok(Array2::from_shape_fn((n, n), |(i, j)| {
                let sq: f64 = data.row(i).iter().zip(data.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                (-gamma * sq).exp()
            }))
        }
    }
}

fn trace(a: &Array2<f64>) -> f64 {
    a.diag().sum()
}

/// CKA from the trace formula `tr(KHLH) / √(tr(KHKH)·tr(LHLH))`, evaluated
/// with explicit matrix products. Serves as a reference for [`cka`].
pub fn cka_direct(x: &Features, y: &Features, kernel: CkaKernel) -> Result<f64> {
    check_aligned(x.image_ids(), y.image_ids(), "feature sets cover different images")?;
    let k = gram(x, kernel)?;
    let l = gram(y, kernel)?;
    let n = k.nrows();
    let h = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
    let kh = k.dot(&h);
    let lh = l.dot(&h);
    let kl = trace(&kh.dot(&lh));
    let kk = trace(&kh.dot(&kh));
    let ll = trace(&lh.dot(&lh));
    if kk <= 0.0 || ll <= 0.0 {
        return Err(DdsError::numeric("degenerate kernel matrix: centered kernel is zero"));
    }
    Ok(kl / (kk * ll).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use ndarray::array;

    fn fm(data: Array2<f64>) -> Features {
        FeatureMatrix::with_default_ids(data).unwrap().into()
    }

    #[test]
    fn presets_round_trip_names() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("bogus".parse::<Preset>().is_err());
    }

    #[test]
    fn digest_names_all_stages() {
        let d = Preset::DdsLaplacian.config().digest();
        assert_eq!(
            d,
            "norm=zscore(eps=1e-8);f=laplacian_kernel(gamma=median);g=unbiased+pearson_full"
        );
    }

    #[test]
    fn cka_direct_sign_flip_is_one() {
        let x = fm(array![[1.0], [2.0], [-0.5], [4.0]]);
        let y = fm(array![[-1.0], [-2.0], [0.5], [-4.0]]);
        let v = cka_direct(&x, &y, CkaKernel::Linear).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_direct_constant_is_error() {
        let x = fm(array![[2.0, 2.0], [2.0, 2.0], [2.0, 2.0], [2.0, 2.0]]);
        let y = fm(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [3.0, 1.0]]);
        for k in [CkaKernel::Linear, CkaKernel::Rbf] {
            assert!(matches!(cka_direct(&x, &y, k), Err(DdsError::Numeric(_))));
        }
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let x = fm(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [3.0, 1.0]]);
        let y: Features = FeatureMatrix::new(
            array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [3.0, 1.0]],
            vec!["img0".into(), "img1".into(), "img2".into(), "other".into()],
            "",
        )
        .unwrap()
        .into();
        let err = dds(&x, &y, &DdsConfig::default()).unwrap_err();
        match err {
            DdsError::Alignment {
                only_left, only_right, ..
            } => {
                assert_eq!(only_left, vec!["img3"]);
                assert_eq!(only_right, vec!["other"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
