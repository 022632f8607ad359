//! JSON run configuration and grid specifications for the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compare::{Centering, ComparisonSpec, ScoreKind};
use crate::dds::{DdsConfig, Preset};
use crate::error::{DdsError, Result};
use crate::metrics::{Bandwidth, MetricKind, MetricSpec};
use crate::norms::{NormKind, NormalizationSpec, DEFAULT_EPSILON, DEFAULT_GROUP_SIZE};

/// Declarative run settings. Unknown keys are rejected.
///
/// The pipeline starts from `preset` (default `dds_laplacian`); any of
/// `normalization`, `metric`, `comparison` given explicitly replace the
/// preset's stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub normalization: Option<NormalizationSpec>,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub comparison: Option<ComparisonSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub n_resamples: Option<usize>,
    #[serde(default)]
    pub exclude_self: Option<bool>,
    #[serde(default)]
    pub pr_k_max: Option<usize>,
    #[serde(default)]
    pub sweep_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| DdsError::config(format!("invalid config: {e}")))?;
        cfg.dds_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DdsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// The validated pipeline configuration.
    pub fn dds_config(&self) -> Result<DdsConfig> {
        let mut cfg = self.preset.unwrap_or(Preset::DdsLaplacian).config();
        if let Some(n) = self.normalization {
            cfg.normalization = n;
        }
        if let Some(m) = self.metric {
            cfg.metric = m;
        }
        if let Some(c) = self.comparison {
            cfg.comparison = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Normalizations × metrics to sweep with a shared comparison stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub normalizations: Vec<NormKind>,
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_grid_comparison")]
    pub comparison: ComparisonSpec,
    #[serde(default)]
    pub group_size: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

fn default_grid_comparison() -> ComparisonSpec {
    ComparisonSpec::new(Centering::Unbiased, ScoreKind::PearsonFull)
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GridSpec =
            serde_json::from_str(text).map_err(|e| DdsError::config(format!("invalid grid spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DdsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.normalizations.is_empty() || self.metrics.is_empty() {
            return Err(DdsError::config("grid needs at least one normalization and one metric"));
        }
        for (r, c) in self.cells() {
            self.config(r, c).validate()?;
        }
        Ok(())
    }

    /// All `(row, column)` positions in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.normalizations.len())
            .flat_map(|r| (0..self.metrics.len()).map(move |c| (r, c)))
            .collect()
    }

    pub fn config(&self, row: usize, col: usize) -> DdsConfig {
        let normalization = NormalizationSpec {
            kind: self.normalizations[row],
            group_size: self.group_size.unwrap_or(DEFAULT_GROUP_SIZE),
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
        };
        let metric = MetricSpec {
            kind: self.metrics[col],
            bandwidth: self.bandwidth,
        };
        DdsConfig::new(normalization, metric, self.comparison)
    }
}
