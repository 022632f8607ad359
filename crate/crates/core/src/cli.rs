//! Command-line surface: argument parsing and the six subcommands.
//!
//! Each `cmd_*` function is usable from Rust directly; [`run`] wires them to
//! parsed arguments and returns the text destined for stdout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{GridSpec, RunConfig};
use crate::dds::{self, DdsConfig, Preset};
use crate::error::{DdsError, Result};
use crate::evalrank::{self, BootstrapOptions, GroundTruth, LayerSelection, ModelSet, RankingReport};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "dds",
    version,
    about = "Duality diagram similarity between network representations"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named pipeline (rsa, cka_linear, cka_rbf, dds_laplacian, dds_cosine).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for report files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Drop the self-transfer entry from each groundtruth column (default true).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_self: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Similarity between two feature dumps.
    Compare { x: PathBuf, y: PathBuf },
    /// Rank every dump in a directory by similarity to a target dump.
    Rank { sources: PathBuf, target: PathBuf },
    /// Correlate the zoo's affinity matrix with groundtruth transfer performance.
    Eval {
        zoo: PathBuf,
        groundtruth: PathBuf,
        #[arg(long)]
        bootstrap: bool,
        #[arg(long)]
        pr: bool,
        /// Comma-separated image counts.
        #[arg(long, value_delimiter = ',')]
        sweep_images: Option<Vec<usize>>,
    },
    /// Mean correlation for every normalization × metric in a grid spec.
    Grid {
        zoo: PathBuf,
        groundtruth: PathBuf,
        grid_spec: PathBuf,
    },
    /// Block × task similarity and the best block per task.
    Layers { blocks: PathBuf, tasks: PathBuf },
    /// Mean correlation as a function of image count.
    Sweep {
        zoo: PathBuf,
        groundtruth: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
    },
}

/// Run settings after merging the config file with command-line flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dds: DdsConfig,
    pub seed: u64,
    pub sample_size: Option<usize>,
    pub n_resamples: usize,
    pub exclude_self: bool,
    pub pr_k_max: Option<usize>,
    pub sweep_counts: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            dds: cfg.dds_config()?,
            seed: cfg.seed.unwrap_or(0),
            sample_size: cfg.sample_size,
            n_resamples: cfg.n_resamples.unwrap_or(100),
            exclude_self: cfg.exclude_self.unwrap_or(true),
            pr_k_max: cfg.pr_k_max,
            sweep_counts: cfg.sweep_counts.clone(),
            out: cfg.out.clone(),
        })
    }

    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &global.preset {
            cfg.preset = Some(p.parse::<Preset>()?);
        }
        if global.seed.is_some() {
            cfg.seed = global.seed;
        }
        if global.out.is_some() {
            cfg.out = global.out.clone();
        }
        if global.exclude_self.is_some() {
            cfg.exclude_self = global.exclude_self;
        }
        Self::from_config(&cfg)
    }
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_config(&RunConfig::default()).expect("default config is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOutput {
    pub score: f64,
    pub config: String,
}

pub fn cmd_compare(x: &Path, y: &Path, cfg: &DdsConfig) -> Result<CompareOutput> {
    let fx = io::load_features(x)?;
    let fy = io::load_features(y)?;
    let s = dds::dds(&fx, &fy, cfg)?;
    Ok(CompareOutput {
        score: s.value,
        config: s.config_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub model_id: String,
    pub score: f64,
}

/// Scores every source in `dir` against `target`, best first (ties by id).
pub fn rank_models(sources: &ModelSet, target: &crate::features::Features, cfg: &DdsConfig) -> Result<Vec<RankRow>> {
    let targets = ModelSet::new(vec![("target".to_string(), target.clone())])?;
    let aff = evalrank::affinity_matrix_full(sources, &targets, cfg)?;
    let mut rows: Vec<(String, f64)> = aff.source_ids.iter().cloned().zip(aff.column(0)).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (model_id, score))| RankRow {
            rank: i + 1,
            model_id,
            score,
        })
        .collect())
}

pub fn cmd_rank(dir: &Path, target: &Path, cfg: &DdsConfig) -> Result<Vec<RankRow>> {
    let sources = io::load_model_dir(dir)?;
    let target = io::load_features(target)?;
    rank_models(&sources, &target, cfg)
}

pub fn render_rank_csv(rows: &[RankRow]) -> String {
    let mut out = String::from("rank,model_id,score\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.rank, r.model_id, r.score));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct EvalFlags {
    pub bootstrap: bool,
    pub pr: bool,
    pub sweep_images: Option<Vec<usize>>,
}

/// Evaluation of an in-memory zoo (sources = targets) against groundtruth.
pub fn eval_models(
    zoo: &ModelSet,
    gt: &GroundTruth,
    settings: &Settings,
    flags: &EvalFlags,
) -> Result<(RankingReport, evalrank::AffinityMatrix)> {
    let cfg = &settings.dds;
    let aff = evalrank::affinity_matrix(zoo, zoo, cfg)?;
    let mut report = if flags.bootstrap {
        let opts = BootstrapOptions {
            n_resamples: settings.n_resamples,
            sample_size: settings.sample_size.unwrap_or_else(|| zoo.n_images().min(200)),
            seed: settings.seed,
        };
        evalrank::bootstrap_eval(zoo, zoo, gt, cfg, &opts, settings.exclude_self)?
    } else {
        evalrank::eval_against_groundtruth(&aff, gt, settings.exclude_self)?
    };
    if flags.pr {
        report.pr_curve = Some(evalrank::mean_pr_curve(
            &aff,
            gt,
            settings.exclude_self,
            settings.pr_k_max,
        )?);
    }
    let counts = flags.sweep_images.as_ref().or(settings.sweep_counts.as_ref());
    if let Some(counts) = counts {
        report.image_sweep = Some(evalrank::image_count_sweep(
            zoo,
            zoo,
            gt,
            cfg,
            counts,
            settings.seed,
            settings.exclude_self,
        )?);
    }
    Ok((report, aff))
}

pub fn cmd_eval(
    zoo: &Path,
    groundtruth: &Path,
    settings: &Settings,
    flags: &EvalFlags,
) -> Result<(RankingReport, evalrank::AffinityMatrix)> {
    let zoo = io::load_model_dir(zoo)?;
    let gt = io::load_groundtruth(groundtruth)?;
    eval_models(&zoo, &gt, settings, flags)
}

pub fn render_affinity_csv(aff: &evalrank::AffinityMatrix) -> String {
    let mut out = String::from("source");
    for t in &aff.target_ids {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (i, s) in aff.source_ids.iter().enumerate() {
        out.push_str(s);
        for v in aff.data.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn render_per_target_csv(report: &RankingReport) -> String {
    let mut out = String::from("target,spearman\n");
    for (t, v) in report.target_ids.iter().zip(&report.per_target_spearman) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out.push_str(&format!("mean,{}\n", report.mean));
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("normalization");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(r);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn grid_models(zoo: &ModelSet, gt: &GroundTruth, grid: &GridSpec, exclude_self: bool) -> Result<GridResult> {
    grid.validate()?;
    let mut cells = vec![vec![0.0; grid.metrics.len()]; grid.normalizations.len()];
    for (r, c) in grid.cells() {
        let cfg = grid.config(r, c);
        let aff = evalrank::affinity_matrix(zoo, zoo, &cfg)?;
        cells[r][c] = evalrank::eval_against_groundtruth(&aff, gt, exclude_self)
            .map_err(|e| e.context(cfg.digest()))?
            .mean;
    }
    Ok(GridResult {
        rows: grid.normalizations.iter().map(|k| k.name().to_string()).collect(),
        columns: grid.metrics.iter().map(|k| k.name().to_string()).collect(),
        cells,
    })
}

pub fn cmd_grid(zoo: &Path, groundtruth: &Path, grid_spec: &Path, exclude_self: bool) -> Result<GridResult> {
    let grid = GridSpec::load(grid_spec)?;
    let zoo = io::load_model_dir(zoo)?;
    let gt = io::load_groundtruth(groundtruth)?;
    grid_models(&zoo, &gt, &grid, exclude_self)
}

pub fn cmd_layers(blocks: &Path, tasks: &Path, cfg: &DdsConfig) -> Result<LayerSelection> {
    let blocks = io::load_model_dir(blocks)?;
    let tasks = io::load_model_dir(tasks)?;
    evalrank::layer_affinity(&blocks, &tasks, cfg)
}

pub fn render_argmax_csv(sel: &LayerSelection) -> String {
    let mut out = String::from("task,best_block\n");
    for (t, b) in sel.affinity.target_ids.iter().zip(sel.best_block_ids()) {
        out.push_str(&format!("{t},{b}\n"));
    }
    out
}

pub fn render_sweep_csv(points: &[evalrank::SweepPoint]) -> String {
    let mut out = String::from("count,mean_spearman\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.count, p.mean_spearman));
    }
    out
}

fn render_pr_csv(points: &[evalrank::PrPoint]) -> String {
    let mut out = String::from("k,precision,recall\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.k, p.precision, p.recall));
    }
    out
}

fn write_outputs(dir: Option<&Path>, files: &[(&str, &str)]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|source| DdsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (name, text) in files {
        io::write_text(&dir.join(name), text)?;
    }
    Ok(())
}

/// Executes one parsed command line and returns its stdout text.
pub fn run(cli: &Cli) -> Result<String> {
    let settings = Settings::resolve(&cli.global)?;
    let out = settings.out.as_deref();
    match &cli.command {
        Command::Compare { x, y } => {
            let res = cmd_compare(x, y, &settings.dds)?;
            let mut text = serde_json::to_string(&res).expect("serializes");
            text.push('\n');
            write_outputs(out, &[("compare.json", &text)])?;
            Ok(text)
        }
        Command::Rank { sources, target } => {
            let text = render_rank_csv(&cmd_rank(sources, target, &settings.dds)?);
            write_outputs(out, &[("rank.csv", &text)])?;
            Ok(text)
        }
        Command::Eval {
            zoo,
            groundtruth,
            bootstrap,
            pr,
            sweep_images,
        } => {
            let flags = EvalFlags {
                bootstrap: *bootstrap,
                pr: *pr,
                sweep_images: sweep_images.clone(),
            };
            let (report, aff) = cmd_eval(zoo, groundtruth, &settings, &flags)?;
            let json = to_json(&report);
            let per_target = render_per_target_csv(&report);
            let affinity = render_affinity_csv(&aff);
            let mut files = vec![
                ("report.json", json.as_str()),
                ("per_target.csv", per_target.as_str()),
                ("affinity.csv", affinity.as_str()),
            ];
            let pr_text = report.pr_curve.as_deref().map(render_pr_csv);
            if let Some(t) = &pr_text {
                files.push(("pr.csv", t));
            }
            let sweep_text = report.image_sweep.as_deref().map(render_sweep_csv);
            if let Some(t) = &sweep_text {
                files.push(("sweep.csv", t));
            }
            write_outputs(out, &files)?;
            Ok(json)
        }
        Command::Grid {
            zoo,
            groundtruth,
            grid_spec,
        } => {
            let text = cmd_grid(zoo, groundtruth, grid_spec, settings.exclude_self)?.to_csv();
            write_outputs(out, &[("grid.csv", &text)])?;
            Ok(text)
        }
        Command::Layers { blocks, tasks } => {
            let sel = cmd_layers(blocks, tasks, &settings.dds)?;
            let table = render_affinity_csv(&sel.affinity).replacen("source", "block", 1);
            let argmax = render_argmax_csv(&sel);
            write_outputs(out, &[("layers.csv", &table), ("argmax.csv", &argmax)])?;
            Ok(format!("{table}\n{argmax}"))
        }
        Command::Sweep {
            zoo,
            groundtruth,
            counts,
        } => {
            let zoo = io::load_model_dir(zoo)?;
            let gt = io::load_groundtruth(groundtruth)?;
            let points = evalrank::image_count_sweep(
                &zoo,
                &zoo,
                &gt,
                &settings.dds,
                counts,
                settings.seed,
                settings.exclude_self,
            )?;
            let text = render_sweep_csv(&points);
            write_outputs(out, &[("sweep.csv", &text)])?;
            Ok(text)
        }
    }
}

/// Worker count from `DDS_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("DDS_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(DdsError::config(format!(
                "DDS_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}
