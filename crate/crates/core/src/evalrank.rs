//! Model-level analyses on top of [`dds`](crate::dds::dds): affinity matrices,
//! evaluation against transfer-performance groundtruth, bootstrap,
//! precision/recall@k, image-count sweeps and block selection.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dds::{self, DdsConfig};
use crate::error::{DdsError, Result};
use crate::features::{check_aligned, Features};
use crate::metrics::DissimilarityMatrix;
use crate::stats;

/// Size of the groundtruth reference set for precision/recall.
pub const PR_REFERENCE_SIZE: usize = 5;

/// Ordered `(model_id, features)` pairs over one shared image set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    entries: Vec<(String, Features)>,
}

impl ModelSet {
    pub fn new(entries: Vec<(String, Features)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(DdsError::validation("model set is empty"));
        }
        let mut seen = HashSet::new();
        for (id, _) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(DdsError::validation(format!("duplicate model id {id:?}")));
            }
        }
        let first = entries[0].1.image_ids();
        for (id, f) in &entries[1..] {
            check_aligned(first, f.image_ids(), &format!("model {id:?} vs {:?}", entries[0].0))?;
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn entries(&self) -> &[(String, Features)] {
        &self.entries
    }

    pub fn image_ids(&self) -> &[String] {
        self.entries[0].1.image_ids()
    }

    pub fn n_images(&self) -> usize {
        self.entries[0].1.n_images()
    }

    /// Restricts every model to the given image indices.
    pub fn select_images(&self, indices: &[usize]) -> ModelSet {
        ModelSet {
            entries: self
                .entries
                .iter()
                .map(|(id, f)| (id.clone(), f.select_images(indices)))
                .collect(),
        }
    }
}

/// `m_source × m_target` similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub data: Array2<f64>,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub config_digest: String,
}

impl AffinityMatrix {
    /// Column of scores for one target.
    pub fn column(&self, target: usize) -> Vec<f64> {
        self.data.column(target).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthKind {
    Winrate,
    Affinity,
}

/// External transfer performance: rows are sources, columns are targets.
/// Self-transfer cells may be NaN (unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: GroundTruthKind,
    pub data: Array2<f64>,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
}

impl GroundTruth {
    pub fn new(
        kind: GroundTruthKind,
        data: Array2<f64>,
        source_ids: Vec<String>,
        target_ids: Vec<String>,
    ) -> Result<Self> {
        if data.dim() != (source_ids.len(), target_ids.len()) {
            return Err(DdsError::validation(format!(
                "groundtruth is {:?} but has {} source and {} target ids",
                data.dim(),
                source_ids.len(),
                target_ids.len()
            )));
        }
        for ((i, j), v) in data.indexed_iter() {
            if !v.is_finite() && !(v.is_nan() && source_ids[i] == target_ids[j]) {
                return Err(DdsError::validation(format!(
                    "groundtruth cell ({}, {}) is not finite",
                    source_ids[i], target_ids[j]
                )));
            }
        }
        Ok(Self {
            kind,
            data,
            source_ids,
            target_ids,
        })
    }

    /// Groundtruth whose values are the given affinity matrix.
    pub fn from_affinity(aff: &AffinityMatrix) -> Self {
        Self {
            kind: GroundTruthKind::Affinity,
            data: aff.data.clone(),
            source_ids: aff.source_ids.clone(),
            target_ids: aff.target_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std: f64,
    pub n_resamples: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub resample_means: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub config_digest: String,
    pub exclude_self: bool,
    pub target_ids: Vec<String>,
    pub per_target_spearman: Vec<f64>,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_curve: Option<Vec<PrPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_sweep: Option<Vec<SweepPoint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub count: usize,
    pub mean_spearman: f64,
}

fn prepare_all(set: &ModelSet, cfg: &DdsConfig) -> Result<Vec<DissimilarityMatrix>> {
    set.entries
        .par_iter()
        .map(|(id, f)| dds::prepare(f, cfg).map_err(|e| e.context(format!("model {id:?}"))))
        .collect()
}

fn pair_score(
    mx: &DissimilarityMatrix,
    my: &DissimilarityMatrix,
    cfg: &DdsConfig,
    source: &str,
    target: &str,
) -> Result<f64> {
    dds::score_prepared(mx, my, cfg)
        .map(|s| s.value)
        .map_err(|e| e.context(format!("(source {source:?}, target {target:?})")))
}

/// `data[i][j] = dds(sources[i], targets[j])`.
///
/// Each model runs through normalization, pairwise matrix and centering once.
/// When both sets are the same, only the upper triangle (with the diagonal)
/// is scored and mirrored.
pub fn affinity_matrix(sources: &ModelSet, targets: &ModelSet, cfg: &DdsConfig) -> Result<AffinityMatrix> {
    if std::ptr::eq(sources, targets) || sources == targets {
        return affinity_square(sources, cfg);
    }
    affinity_matrix_full(sources, targets, cfg)
}

/// Scores every `(source, target)` pair without the symmetry shortcut.
pub fn affinity_matrix_full(sources: &ModelSet, targets: &ModelSet, cfg: &DdsConfig) -> Result<AffinityMatrix> {
    cfg.validate()?;
    check_aligned(
        sources.image_ids(),
        targets.image_ids(),
        "source and target models cover different images",
    )?;
    let (ps, pt) = rayon::join(|| prepare_all(sources, cfg), || prepare_all(targets, cfg));
    let (ps, pt) = (ps?, pt?);
    let (ms, mt) = (sources.len(), targets.len());
    let sids = sources.ids();
    let tids = targets.ids();
    let values: Vec<f64> = (0..ms * mt)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / mt, k % mt);
            pair_score(&ps[i], &pt[j], cfg, &sids[i], &tids[j])
        })
        .collect::<Result<_>>()?;
    Ok(AffinityMatrix {
        data: Array2::from_shape_vec((ms, mt), values).expect("sized above"),
        source_ids: sids,
        target_ids: tids,
        config_digest: cfg.digest(),
    })
}

fn affinity_square(set: &ModelSet, cfg: &DdsConfig) -> Result<AffinityMatrix> {
    cfg.validate()?;
    let prepared = prepare_all(set, cfg)?;
    let ids = set.ids();
    let m = set.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pair_score(&prepared[i], &prepared[j], cfg, &ids[i], &ids[j]))
        .collect::<Result<_>>()?;
    let mut data = Array2::zeros((m, m));
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        data[[i, j]] = v;
        data[[j, i]] = v;
    }
    Ok(AffinityMatrix {
        data,
        source_ids: ids.clone(),
        target_ids: ids,
        config_digest: cfg.digest(),
    })
}

/// Maps each id in `wanted` to its position in `have`, or reports the
/// symmetric difference.
fn align_ids(wanted: &[String], have: &[String], what: &str) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = have.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let a: HashSet<&String> = wanted.iter().collect();
    let b: HashSet<&String> = have.iter().collect();
    if a != b || wanted.len() != have.len() {
        let mut only_left: Vec<String> = a.difference(&b).map(|s| s.to_string()).collect();
        let mut only_right: Vec<String> = b.difference(&a).map(|s| s.to_string()).collect();
        only_left.sort();
        only_right.sort();
        return Err(DdsError::Alignment {
            context: format!("{what} ids differ between affinity (left) and groundtruth (right)"),
            only_left,
            only_right,
        });
    }
    Ok(wanted.iter().map(|id| pos[id.as_str()]).collect())
}

/// For one target column: candidate source indices, their affinities and
/// their groundtruth values.
struct Column {
    sources: Vec<usize>,
    aff: Vec<f64>,
    gt: Vec<f64>,
}

fn columns(aff: &AffinityMatrix, gt: &GroundTruth, exclude_self: bool) -> Result<Vec<Column>> {
    let src_map = align_ids(&aff.source_ids, &gt.source_ids, "source")?;
    let tgt_map = align_ids(&aff.target_ids, &gt.target_ids, "target")?;
    let mut out = Vec::with_capacity(aff.target_ids.len());
    for (j, target) in aff.target_ids.iter().enumerate() {
        let mut col = Column {
            sources: Vec::new(),
            aff: Vec::new(),
            gt: Vec::new(),
        };
        for (i, source) in aff.source_ids.iter().enumerate() {
            if exclude_self && source == target {
                continue;
            }
            let g = gt.data[[src_map[i], tgt_map[j]]];
            if !g.is_finite() {
                return Err(DdsError::validation(format!(
                    "groundtruth for (source {source:?}, target {target:?}) is missing; use exclude_self"
                )));
            }
            col.sources.push(i);
            col.aff.push(aff.data[[i, j]]);
            col.gt.push(g);
        }
        out.push(col);
    }
    Ok(out)
}

/// Spearman correlation between matching affinity and groundtruth columns.
pub fn eval_against_groundtruth(aff: &AffinityMatrix, gt: &GroundTruth, exclude_self: bool) -> Result<RankingReport> {
    let cols = columns(aff, gt, exclude_self)?;
    let per_target: Vec<f64> = cols
        .iter()
        .zip(&aff.target_ids)
        .map(|(c, target)| {
            if c.aff.len() < 2 {
                return Err(DdsError::validation(format!(
                    "target {target:?} has fewer than 2 candidate sources"
                )));
            }
            stats::spearman(&c.aff, &c.gt).map_err(|e| match e {
                DdsError::Numeric(_) => {
                    DdsError::numeric(format!("constant affinity or groundtruth column for target {target:?}"))
                }
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mean = per_target.iter().sum::<f64>() / per_target.len() as f64;
    Ok(RankingReport {
        config_digest: aff.config_digest.clone(),
        exclude_self,
        target_ids: aff.target_ids.clone(),
        per_target_spearman: per_target,
        mean,
        bootstrap: None,
        pr_curve: None,
        image_sweep: None,
    })
}

fn affinity_for(sources: &ModelSet, targets: &ModelSet, same: bool, cfg: &DdsConfig) -> Result<AffinityMatrix> {
    if same {
        affinity_square(sources, cfg)
    } else {
        affinity_matrix_full(sources, targets, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    pub n_resamples: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_resamples: 100,
            sample_size: 200,
            seed: 0,
        }
    }
}

/// Image indices for each resample, drawn uniformly with replacement.
///
/// The generator is ChaCha8 seeded through `seed_from_u64`; indices are
/// drawn resample by resample, position by position.
pub fn bootstrap_indices(n_images: usize, opts: &BootstrapOptions) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.n_resamples)
        .map(|_| (0..opts.sample_size).map(|_| rng.gen_range(0..n_images)).collect())
        .collect()
}

/// Full-data evaluation plus the bootstrap distribution of its mean.
pub fn bootstrap_eval(
    sources: &ModelSet,
    targets: &ModelSet,
    gt: &GroundTruth,
    cfg: &DdsConfig,
    opts: &BootstrapOptions,
    exclude_self: bool,
) -> Result<RankingReport> {
    let n = sources.n_images();
    if opts.sample_size > n {
        return Err(DdsError::validation(format!(
            "bootstrap sample size {} exceeds the {n} available images",
            opts.sample_size
        )));
    }
    if opts.n_resamples < 2 {
        return Err(DdsError::validation("bootstrap needs at least 2 resamples"));
    }
    if opts.sample_size < 2 {
        return Err(DdsError::validation("bootstrap sample size must be at least 2"));
    }
    let same = sources == targets;
    let mut report = eval_against_groundtruth(&affinity_for(sources, targets, same, cfg)?, gt, exclude_self)?;

    let draws = bootstrap_indices(n, opts);
    let means: Vec<f64> = draws
        .par_iter()
        .enumerate()
        .map(|(r, idx)| {
            let s = sources.select_images(idx);
            let t = if same { s.clone() } else { targets.select_images(idx) };
            let aff = affinity_for(&s, &t, same, cfg)?;
            eval_against_groundtruth(&aff, gt, exclude_self)
                .map(|rep| rep.mean)
                .map_err(|e| e.context(format!("bootstrap resample {r}")))
        })
        .collect::<Result<_>>()?;
    let (mean, std) = stats::mean_std(&means);
    report.bootstrap = Some(BootstrapSummary {
        mean,
        std,
        n_resamples: opts.n_resamples,
        sample_size: opts.sample_size,
        seed: opts.seed,
        resample_means: means,
    });
    Ok(report)
}

/// Indices sorted by descending value, ties by ascending id.
fn ranking(values: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}

/// Precision and recall of the top-k affinity picks against the top-5
/// groundtruth sources, for `k = 1..=k_max`.
///
/// With fewer than five candidates the reference set is all of them.
pub fn precision_recall_at_k(
    aff_column: &[f64],
    gt_column: &[f64],
    source_ids: &[String],
    k_max: usize,
) -> Result<Vec<PrPoint>> {
    let len = aff_column.len();
    if gt_column.len() != len || source_ids.len() != len {
        return Err(DdsError::validation(
            "affinity, groundtruth and id columns differ in length",
        ));
    }
    if k_max == 0 || k_max > len {
        return Err(DdsError::validation(format!("k_max must be in 1..={len}, got {k_max}")));
    }
    let reference: HashSet<usize> = ranking(gt_column, source_ids)
        .into_iter()
        .take(PR_REFERENCE_SIZE.min(len))
        .collect();
    let predicted = ranking(aff_column, source_ids);
    let mut hits = 0;
    let mut out = Vec::with_capacity(k_max);
    for (k, idx) in predicted.iter().take(k_max).enumerate() {
        if reference.contains(idx) {
            hits += 1;
        }
        out.push(PrPoint {
            k: k + 1,
            precision: hits as f64 / (k + 1) as f64,
            recall: hits as f64 / reference.len() as f64,
        });
    }
    Ok(out)
}

/// Precision/recall@k averaged over all targets. `k_max` defaults to the
/// smallest candidate count of any column.
pub fn mean_pr_curve(
    aff: &AffinityMatrix,
    gt: &GroundTruth,
    exclude_self: bool,
    k_max: Option<usize>,
) -> Result<Vec<PrPoint>> {
    let cols = columns(aff, gt, exclude_self)?;
    let min_len = cols.iter().map(|c| c.aff.len()).min().unwrap_or(0);
    let k_max = k_max.unwrap_or(min_len);
    let mut sum_p = vec![0.0; k_max];
    let mut sum_r = vec![0.0; k_max];
    for c in &cols {
        let ids: Vec<String> = c.sources.iter().map(|&i| aff.source_ids[i].clone()).collect();
        for (pt, (sp, sr)) in precision_recall_at_k(&c.aff, &c.gt, &ids, k_max)?
            .iter()
            .zip(sum_p.iter_mut().zip(sum_r.iter_mut()))
        {
            *sp += pt.precision;
            *sr += pt.recall;
        }
    }
    let m = cols.len() as f64;
    Ok((0..k_max)
        .map(|k| PrPoint {
            k: k + 1,
            precision: sum_p[k] / m,
            recall: sum_r[k] / m,
        })
        .collect())
}

/// Mean Spearman as a function of how many images are used.
///
/// For each count, images are subsampled without replacement from one
/// seeded generator and kept in ascending index order, so a count equal to
/// the full image set reproduces the full evaluation exactly.
pub fn image_count_sweep(
    sources: &ModelSet,
    targets: &ModelSet,
    gt: &GroundTruth,
    cfg: &DdsConfig,
    counts: &[usize],
    seed: u64,
    exclude_self: bool,
) -> Result<Vec<SweepPoint>> {
    let n = sources.n_images();
    if let Some(&bad) = counts.iter().find(|&&c| c > n || c < 2) {
        return Err(DdsError::validation(format!("image count {bad} outside 2..={n}")));
    }
    let same = sources == targets;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = counts
        .iter()
        .map(|&c| {
            let mut idx = index::sample(&mut rng, n, c).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    subsets
        .par_iter()
        .zip(counts.par_iter())
        .map(|(idx, &count)| {
            let s = sources.select_images(idx);
            let t = if same { s.clone() } else { targets.select_images(idx) };
            let aff = affinity_for(&s, &t, same, cfg)?;
            let rep = eval_against_groundtruth(&aff, gt, exclude_self)
                .map_err(|e| e.context(format!("image count {count}")))?;
            Ok(SweepPoint {
                count,
                mean_spearman: rep.mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection {
    pub affinity: AffinityMatrix,
    /// Per task, the index of the most similar block (shallowest on ties).
    pub best_block: Vec<usize>,
}

impl LayerSelection {
    pub fn best_block_ids(&self) -> Vec<&str> {
        self.best_block
            .iter()
            .map(|&b| self.affinity.source_ids[b].as_str())
            .collect()
    }
}

/// Block × task similarity and the best block per task. `blocks` must be
/// ordered shallow to deep.
pub fn layer_affinity(blocks: &ModelSet, tasks: &ModelSet, cfg: &DdsConfig) -> Result<LayerSelection> {
    let affinity = affinity_matrix(blocks, tasks, cfg)?;
    let best_block = affinity
        .data
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (i, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(LayerSelection { affinity, best_block })
}
