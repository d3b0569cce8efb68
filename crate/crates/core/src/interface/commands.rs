//! The operations behind each CLI subcommand.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml              effective configuration
//! manifest_initial.csv     shared initial labeled pool (round 0)
//! manifest_<strategy>.csv  queried frames, by the round they join the pool
//! metrics_<strategy>.csv   learning curve
//! checkpoints/<strategy>.json
//! run.lock
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::acquisition::{select, AcquisitionParams, SelectionInput, SelectionResult, Strategy};
use crate::alloop::{
    continue_run, initial_pool, split_by_sequence, LoopContext, Split, StrategyRun,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::synthetic::{generate_dataset, Frame};

use super::config::{DatasetSource, ExperimentConfig};
use super::dataset::{read_dataset, write_dataset, DatasetMeta, FrameFormat};
use super::records::read_records;
use super::report::{build_report, curves_from_rows, read_reference, Report};
use super::tables::{manifest_rows, read_manifest, read_metrics, write_manifest, write_metrics, ManifestRow, MetricsRow};
use super::RunLock;

pub const CONFIG_FILE: &str = "config.toml";
pub const INITIAL_MANIFEST: &str = "manifest_initial.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn manifest_file(s: Strategy) -> String {
    format!("manifest_{s}.csv")
}

pub fn metrics_file(s: Strategy) -> String {
    format!("metrics_{s}.csv")
}

pub fn checkpoint_file(s: Strategy) -> String {
    format!("{CHECKPOINT_DIR}/{s}.json")
}

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub format: FrameFormat,
}

/// Generates the configured synthetic dataset into `opts.out`. The same
/// configuration and seed always produce byte-identical files.
pub fn cmd_gen(cfg: &ExperimentConfig, opts: &GenOptions) -> Result<DatasetMeta> {
    let DatasetSource::Synthetic(scene) = &cfg.dataset else {
        return Err(Error::Config("`gen` needs a [dataset.synthetic] source".into()));
    };
    let mut scene = scene.clone();
    if let Some(seed) = opts.seed {
        scene.seed = seed;
    }
    let frames = generate_dataset(&scene)?;
    write_dataset(&opts.out, &frames, &scene.class_names(), Some(&scene), opts.format)
}

/// Frames and class count of a configuration's dataset.
pub fn load_frames(cfg: &ExperimentConfig) -> Result<(Vec<Frame>, usize)> {
    match &cfg.dataset {
        DatasetSource::Synthetic(scene) => Ok((generate_dataset(scene)?, scene.num_classes())),
        DatasetSource::Directory(dir) => {
            let (meta, frames) = read_dataset(dir)?;
            Ok((frames, meta.num_classes))
        }
        DatasetSource::Records(_) => Err(Error::Config(
            "a records source carries no point clouds; use it with `select` only".into(),
        )),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strategies: Option<Vec<String>>,
    pub resume: bool,
    /// Stop every strategy after this many rounds in total.
    pub stop_after_rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    /// Per strategy: completed rounds and whether the schedule is finished.
    pub strategies: Vec<(Strategy, usize, bool)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_outputs(dir: &Path, run: &StrategyRun, num_classes: usize) -> Result<()> {
    let ckpt = dir.join(checkpoint_file(run.strategy));
    write_atomic(&ckpt, &serde_json::to_vec(run)?)?;
    let rows: Vec<MetricsRow> = run.rows.iter().map(MetricsRow::from).collect();
    write_metrics(&dir.join(metrics_file(run.strategy)), &rows, num_classes)?;
    let manifest: Vec<ManifestRow> = run
        .selections
        .iter()
        .flat_map(|s| manifest_rows(s, s.round + 1))
        .collect();
    write_manifest(&dir.join(manifest_file(run.strategy)), &manifest)
}

fn effective_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &opts.strategies {
        cfg.strategies = s.clone();
    }
    if let Some(out) = &opts.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs (or resumes) every configured strategy and writes the run directory.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = effective_config(cfg, opts)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: set `out` or pass --out".into()))?;
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&out, e))?;
    let _lock = RunLock::acquire(&out)?;

    let config_path = out.join(CONFIG_FILE);
    let text = cfg.to_toml()?;
    if opts.resume {
        let stored = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let stored = ExperimentConfig::from_toml(&stored)?;
        if stored != cfg {
            return Err(Error::Config(format!(
                "{} differs from the current configuration; refusing to resume",
                config_path.display()
            )));
        }
    } else {
        if config_path.exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume or choose another --out",
                out.display()
            )));
        }
        write_atomic(&config_path, text.as_bytes())?;
    }

    let strategies = cfg.parsed_strategies()?;
    let overrides = cfg.parsed_overrides()?;
    let (frames, num_classes) = load_frames(&cfg)?;
    let split = split_by_sequence(&frames, &cfg.split, cfg.seed)?;
    let ctx = LoopContext::new(&frames, num_classes, &split, cfg.loop_config())?;
    let initial = initial_pool(&ctx.pool_ids, ctx.schedule.sizes[0], cfg.seed)?;
    let initial_rows: Vec<ManifestRow> = initial
        .iter()
        .enumerate()
        .map(|(i, &id)| ManifestRow {
            round: 0,
            rank: i + 1,
            frame_id: id,
            score: None,
        })
        .collect();
    write_manifest(&out.join(INITIAL_MANIFEST), &initial_rows)?;

    let mut summary = RunSummary {
        out: out.clone(),
        strategies: Vec::new(),
    };
    for s in strategies {
        let seed = overrides.get(&s).copied().unwrap_or(cfg.seed);
        let ckpt = out.join(checkpoint_file(s));
        let mut run = if opts.resume && ckpt.exists() {
            let bytes = fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            let run: StrategyRun = serde_json::from_slice(&bytes)?;
            if run.strategy != s || run.seed != seed {
                return Err(Error::Config(format!("{} belongs to another run", ckpt.display())));
            }
            log::info!("{s}: resuming after {} round(s)", run.rows.len());
            run
        } else {
            StrategyRun::start(&ctx, s, seed, &initial)?
        };
        write_outputs(&out, &run, num_classes)?;
        continue_run(&ctx, &mut run, opts.stop_after_rounds, &mut |r| {
            write_outputs(&out, r, num_classes)
        })?;
        summary
            .strategies
            .push((s, run.rows.len(), run.is_complete(&ctx.schedule)));
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub records: PathBuf,
    pub strategy: Strategy,
    pub budget: usize,
    /// Manifest of frames already labeled.
    pub labeled: Option<PathBuf>,
    pub seed: u64,
    pub acquisition: AcquisitionParams,
}

/// Selects frames from external inference records. Frames listed in the
/// labeled manifest leave the pool and supply the labeled embeddings and
/// the predicted class histogram. The result's round follows the highest
/// labeled round.
pub fn cmd_select(opts: &SelectOptions) -> Result<(SelectionResult, Vec<ManifestRow>)> {
    let set = read_records(&opts.records)?;
    let labeled_rows = match &opts.labeled {
        Some(p) => read_manifest(p)?,
        None => Vec::new(),
    };
    let labeled: BTreeSet<u64> = labeled_rows.iter().map(|r| r.frame_id).collect();
    let round = labeled_rows.iter().map(|r| r.round + 1).max().unwrap_or(0);
    let (done, pool): (Vec<_>, Vec<_>) = set.records.into_iter().partition(|r| labeled.contains(&r.frame_id));
    if pool.is_empty() {
        return Err(Error::NoCandidates { frames: 0 });
    }
    if opts.budget > pool.len() {
        return Err(Error::InvalidBudget(format!(
            "budget {} exceeds the {} unlabeled frames",
            opts.budget,
            pool.len()
        )));
    }
    let num_classes = set.num_classes.unwrap_or(1);
    let labeled_embeddings: Vec<Vec<f64>> = done.iter().map(|r| r.frame_embedding.clone()).collect();
    let mut labeled_hist = vec![0usize; num_classes];
    for r in &done {
        for (h, c) in labeled_hist.iter_mut().zip(r.predicted_histogram(num_classes)) {
            *h += c;
        }
    }
    let input = SelectionInput {
        records: &pool,
        labeled_embeddings: &labeled_embeddings,
        labeled_hist: &labeled_hist,
        num_classes,
    };
    let mut result = select(opts.strategy, &input, opts.budget, opts.seed, round, &opts.acquisition)?;
    result.strategy = opts.strategy;
    result.round = round;
    let rows = manifest_rows(&result, round);
    Ok((result, rows))
}

/// Evaluates a checkpoint's model on the configuration's test split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let run: StrategyRun = serde_json::from_slice(&bytes)?;
    let (frames, num_classes) = load_frames(cfg)?;
    if run.model.num_classes != num_classes {
        return Err(Error::Data(format!(
            "checkpoint has {} classes but the dataset has {num_classes}",
            run.model.num_classes
        )));
    }
    let Split { test, .. } = split_by_sequence(&frames, &cfg.split, cfg.seed)?;
    let by_id: BTreeMap<u64, &Frame> = frames.iter().map(|f| (f.frame_id, f)).collect();
    let test_frames: Vec<&Frame> = test.iter().filter_map(|id| by_id.get(id).copied()).collect();
    evaluate(&run.model, &test_frames, &cfg.proposal, &cfg.matching)
}

/// Builds the comparison report from metrics CSVs and an optional reference
/// CSV, writing `report.md` and `curves.svg` when `out` is given.
pub fn cmd_report(metrics: &[PathBuf], reference: Option<&Path>, out: Option<&Path>) -> Result<Report> {
    let mut rows = Vec::new();
    for p in metrics {
        rows.extend(read_metrics(p)?);
    }
    let reference = match reference {
        Some(p) => read_reference(p)?,
        None => Vec::new(),
    };
    let report = build_report(&curves_from_rows(rows), &reference)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let md = dir.join("report.md");
        fs::write(&md, &report.markdown).map_err(|e| Error::io(&md, e))?;
        let svg = dir.join("curves.svg");
        fs::write(&svg, &report.svg).map_err(|e| Error::io(&svg, e))?;
    }
    Ok(report)
}
