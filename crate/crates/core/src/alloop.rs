//! Episodic active-learning loop: pool bookkeeping, budget schedule,
//! simulated oracle, continuous training and per-round metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    mean_vector, random_select, select, AcquisitionParams, FrameScoreRecord, SelectionInput, SelectionResult,
    Strategy,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detections, MatchConfig};
use crate::surrogate::{
    infer_candidates, infer_stochastic_candidates, label_candidates, propose, train_samples, Candidate, ModelState,
    ProposalParams, TrainParams, TrainingSample, AUGMENTED_DIM, FEATURE_DIM,
};
use crate::synthetic::{box_class_histogram, derive_seed, Frame};

/// Labeled and unlabeled partitions of the training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled_ids: BTreeSet<u64>,
    pub unlabeled_ids: BTreeSet<u64>,
    pub initial_ids: Vec<u64>,
    /// Ids labeled by the oracle, one entry per labeling call, in rank order.
    pub query_history: Vec<Vec<u64>>,
    /// Completed rounds.
    pub round: usize,
}

impl PoolState {
    /// Starts a pool over `pool_ids` with `initial` already labeled.
    pub fn new(pool_ids: &[u64], initial: &[u64]) -> Result<Self> {
        let all: BTreeSet<u64> = pool_ids.iter().copied().collect();
        if all.len() != pool_ids.len() {
            return Err(Error::Pool("duplicate ids in the pool".into()));
        }
        let labeled: BTreeSet<u64> = initial.iter().copied().collect();
        if labeled.len() != initial.len() || !labeled.is_subset(&all) {
            return Err(Error::Pool("initial ids must be distinct members of the pool".into()));
        }
        let state = Self {
            unlabeled_ids: all.difference(&labeled).copied().collect(),
            labeled_ids: labeled,
            initial_ids: initial.to_vec(),
            query_history: Vec::new(),
            round: 0,
        };
        state.check_invariants(pool_ids.len())?;
        Ok(state)
    }

    pub fn size(&self) -> usize {
        self.labeled_ids.len() + self.unlabeled_ids.len()
    }

    /// Moves `ids` from the unlabeled to the labeled pool. Either every id is
    /// moved or, on error, none is.
    pub fn label(&mut self, ids: &[u64]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        let mut seen = BTreeSet::new();
        for id in ids {
            if !self.unlabeled_ids.contains(id) || !seen.insert(*id) {
                return Err(Error::Pool(format!("frame {id} is not in the unlabeled pool")));
            }
        }
        let total = self.size();
        for id in ids {
            self.unlabeled_ids.remove(id);
            self.labeled_ids.insert(*id);
        }
        self.query_history.push(ids.to_vec());
        self.check_invariants(total)
    }

    pub fn check_invariants(&self, total: usize) -> Result<()> {
        if !self.labeled_ids.is_disjoint(&self.unlabeled_ids) || self.size() != total {
            return Err(Error::Pool("labeled and unlabeled pools are not a partition".into()));
        }
        let mut queried = BTreeSet::new();
        for round in &self.query_history {
            for id in round {
                if !queried.insert(*id) {
                    return Err(Error::Pool(format!("frame {id} queried twice")));
                }
            }
        }
        let initial: BTreeSet<u64> = self.initial_ids.iter().copied().collect();
        let expected: BTreeSet<u64> = self.labeled_ids.difference(&initial).copied().collect();
        if queried != expected || !initial.is_subset(&self.labeled_ids) {
            return Err(Error::Pool("query history does not match the labeled pool".into()));
        }
        Ok(())
    }
}

/// Simulated annotator: labels `ids` with their ground truth and returns the
/// now-labeled frames.
pub fn oracle_label<'a>(state: &mut PoolState, ids: &[u64], frames: &HashMap<u64, &'a Frame>) -> Result<Vec<&'a Frame>> {
    let out = ids
        .iter()
        .map(|id| {
            frames
                .get(id)
                .copied()
                .ok_or_else(|| Error::Pool(format!("frame {id} is not in the dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    state.label(ids)?;
    Ok(out)
}

/// Cumulative labeled-pool sizes, one per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_count: usize,
    pub per_round_count: usize,
    pub final_budget_fraction: f64,
    pub sizes: Vec<usize>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// A schedule from explicit cumulative sizes.
    pub fn explicit(sizes: Vec<usize>, dataset_size: usize) -> Result<Self> {
        let first = *sizes
            .first()
            .ok_or_else(|| Error::Config("explicit schedule is empty".into()))?;
        if first == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("schedule sizes must start at >= 1 and strictly increase".into()));
        }
        let last = *sizes.last().expect("non-empty");
        if last > dataset_size {
            return Err(Error::Config(format!("schedule size {last} exceeds the pool of {dataset_size}")));
        }
        Ok(Self {
            initial_count: first,
            per_round_count: sizes.get(1).map_or(0, |s| s - first),
            final_budget_fraction: last as f64 / dataset_size as f64,
            sizes,
        })
    }
}

/// `initial, initial + step, …` while not above `⌊final_fraction · N⌋`.
pub fn make_schedule(
    dataset_size: usize,
    initial_count: usize,
    per_round_count: usize,
    final_fraction: f64,
) -> Result<Schedule> {
    if dataset_size == 0 || initial_count == 0 || per_round_count == 0 {
        return Err(Error::Config("schedule arguments must be positive".into()));
    }
    if !(final_fraction > 0.0 && final_fraction <= 1.0) {
        return Err(Error::Config(format!("final fraction {final_fraction} outside (0, 1]")));
    }
    let cap = (final_fraction * dataset_size as f64 + 1e-9).floor() as usize;
    if initial_count > cap {
        return Err(Error::Config(format!(
            "initial count {initial_count} exceeds the final budget of {cap} frames"
        )));
    }
    let sizes: Vec<usize> = (0..)
        .map(|k| initial_count + k * per_round_count)
        .take_while(|&s| s <= cap)
        .collect();
    Ok(Schedule {
        initial_count,
        per_round_count,
        final_budget_fraction: final_fraction,
        sizes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial_count: usize,
    pub per_round_count: usize,
    pub final_fraction: f64,
    /// Explicit cumulative sizes; overrides the three fields above.
    pub sizes: Option<Vec<usize>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            initial_count: 24,
            per_round_count: 24,
            final_fraction: 0.3,
            sizes: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, dataset_size: usize) -> Result<Schedule> {
        match &self.sizes {
            Some(sizes) => Schedule::explicit(sizes.clone(), dataset_size),
            None => make_schedule(dataset_size, self.initial_count, self.per_round_count, self.final_fraction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    #[default]
    FromScratch,
    FineTune,
    IncrementalReplay,
}

/// How the model is updated between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStrategy {
    pub kind: TrainKind,
    pub epochs_initial: usize,
    pub epochs_update: usize,
    /// Fraction of the older labeled frames replayed by `incremental_replay`.
    pub replay_fraction: f64,
}

impl Default for TrainStrategy {
    fn default() -> Self {
        Self {
            kind: TrainKind::FromScratch,
            epochs_initial: 50,
            epochs_update: 10,
            replay_fraction: 0.2,
        }
    }
}

impl TrainStrategy {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_initial == 0 || (self.kind != TrainKind::FromScratch && self.epochs_update == 0) {
            return Err(Error::Config("training epochs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return Err(Error::Config("replay_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Optimizer settings shared by every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub lr: f64,
    pub batch_size: usize,
    pub lr_decay: f64,
    pub l2: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        let t = TrainParams::default();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            lr_decay: t.lr_decay,
            l2: t.l2,
        }
    }
}

impl OptimizerParams {
    fn train_params(&self, epochs: usize, resume: bool) -> TrainParams {
        TrainParams {
            epochs,
            lr: self.lr,
            resume,
            batch_size: self.batch_size,
            lr_decay: self.lr_decay,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub schedule: ScheduleConfig,
    pub train: TrainStrategy,
    pub optimizer: OptimizerParams,
    pub acquisition: AcquisitionParams,
    pub matching: MatchConfig,
    pub proposal: ProposalParams,
}

/// Fractions of sequences assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { val: 0.1, test: 0.1 }
    }
}

/// Frame ids of each split, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Partitions frames by whole sequences. Sequences are shuffled with `seed`;
/// the first `⌊test·S⌋` (at least one) go to test, the next `⌊val·S⌋` to
/// validation and the rest to the training pool.
pub fn split_by_sequence(frames: &[Frame], cfg: &SplitConfig, seed: u64) -> Result<Split> {
    if cfg.val < 0.0 || cfg.test <= 0.0 || cfg.val + cfg.test >= 1.0 {
        return Err(Error::Config("split fractions must satisfy val >= 0, test > 0, val + test < 1".into()));
    }
    let mut seqs: Vec<u64> = frames
        .iter()
        .map(|f| f.sequence_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = seqs.len();
    let n_test = ((cfg.test * n as f64 + 1e-9).floor() as usize).max(1);
    let n_val = (cfg.val * n as f64 + 1e-9).floor() as usize;
    if n_test + n_val >= n {
        return Err(Error::Data(format!("{n} sequences are too few to split")));
    }
    seqs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5ab1])));
    let test: BTreeSet<u64> = seqs[..n_test].iter().copied().collect();
    let val: BTreeSet<u64> = seqs[n_test..n_test + n_val].iter().copied().collect();
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for f in frames {
        let bucket = if test.contains(&f.sequence_id) {
            &mut split.test
        } else if val.contains(&f.sequence_id) {
            &mut split.val
        } else {
            &mut split.train
        };
        bucket.push(f.frame_id);
    }
    for v in [&mut split.train, &mut split.val, &mut split.test] {
        v.sort_unstable();
    }
    Ok(split)
}

/// Dataset, split and cached proposals shared by every strategy of an
/// experiment. Proposals do not depend on the model, so they are computed
/// once per frame.
pub struct LoopContext<'a> {
    pub num_classes: usize,
    pub pool_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub config: LoopConfig,
    pub schedule: Schedule,
    frames: HashMap<u64, &'a Frame>,
    candidates: HashMap<u64, Vec<Candidate>>,
}

impl<'a> LoopContext<'a> {
    pub fn new(frames: &'a [Frame], num_classes: usize, split: &Split, config: LoopConfig) -> Result<Self> {
        config.train.validate()?;
        config.matching.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::Data("training pool and test split must be non-empty".into()));
        }
        let by_id: HashMap<u64, &Frame> = frames.iter().map(|f| (f.frame_id, f)).collect();
        if by_id.len() != frames.len() {
            return Err(Error::Data("duplicate frame ids in the dataset".into()));
        }
        let schedule = config.schedule.build(split.train.len())?;
        let needed: Vec<u64> = split.train.iter().chain(&split.test).copied().collect();
        let lookup = |id: &u64| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("split references unknown frame {id}")))
        };
        let needed_frames = needed.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let proposal = config.proposal;
        let candidates: HashMap<u64, Vec<Candidate>> = needed_frames
            .par_iter()
            .map(|f| (f.frame_id, propose(f, &proposal)))
            .collect();
        Ok(Self {
            num_classes,
            pool_ids: split.train.clone(),
            test_ids: split.test.clone(),
            config,
            schedule,
            frames: by_id,
            candidates,
        })
    }

    pub fn frame(&self, id: u64) -> &'a Frame {
        self.frames[&id]
    }

    pub fn frames(&self) -> &HashMap<u64, &'a Frame> {
        &self.frames
    }

    fn samples(&self, ids: &[u64]) -> Vec<TrainingSample> {
        ids.iter()
            .flat_map(|id| label_candidates(&self.candidates[id], &self.frame(*id).gt_boxes, self.num_classes))
            .collect()
    }

    fn score_records(&self, model: &ModelState, ids: &[u64], passes: Option<(usize, f64)>) -> Result<Vec<FrameScoreRecord>> {
        let grad_dim = model.num_outputs() * AUGMENTED_DIM;
        ids.par_iter()
            .map(|&id| {
                let frame = self.frame(id);
                let cands = &self.candidates[&id];
                let (dets, pass_probs) = match passes {
                    Some((n, rate)) => {
                        let (d, p): (Vec<_>, Vec<_>) =
                            infer_stochastic_candidates(model, id, cands, n, rate)?.into_iter().unzip();
                        (d, Some(p))
                    }
                    None => (infer_candidates(model, cands), None),
                };
                Ok(FrameScoreRecord::new(
                    id,
                    frame.sequence_id,
                    frame.index_in_sequence,
                    dets,
                    pass_probs,
                    FEATURE_DIM,
                    grad_dim,
                ))
            })
            .collect()
    }
}

/// Uniform sample of the initial labeled pool, sorted by id.
pub fn initial_pool(pool_ids: &[u64], count: usize, master_seed: u64) -> Result<Vec<u64>> {
    let mut ids = random_select(pool_ids, count, derive_seed(master_seed, &[0x1417]))?.selected;
    ids.sort_unstable();
    Ok(ids)
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: Strategy,
    pub round: usize,
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub map: f64,
    pub ap: Vec<Option<f64>>,
    /// Mini-batch updates performed in this round.
    pub train_steps: u64,
    /// Training examples visited in this round.
    pub candidate_visits: u64,
    /// Frames queried at the end of this round.
    pub selected_count: usize,
}

/// State of one strategy's run after some number of completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub pool: PoolState,
    pub model: ModelState,
    pub rows: Vec<CurveRow>,
    pub selections: Vec<SelectionResult>,
}

impl StrategyRun {
    pub fn start(ctx: &LoopContext<'_>, strategy: Strategy, seed: u64, initial: &[u64]) -> Result<Self> {
        Ok(Self {
            strategy,
            seed,
            pool: PoolState::new(&ctx.pool_ids, initial)?,
            model: ModelState::new(ctx.num_classes, derive_seed(seed, &[1])),
            rows: Vec::new(),
            selections: Vec::new(),
        })
    }

    pub fn is_complete(&self, schedule: &Schedule) -> bool {
        self.rows.len() >= schedule.len()
    }
}

/// One episode: train on the labeled pool, evaluate on the test split, and,
/// unless this is the last round, query `schedule[t+1] − schedule[t]` frames
/// and hand them to the oracle.
pub fn run_round(ctx: &LoopContext<'_>, run: &mut StrategyRun) -> Result<()> {
    let t = run.rows.len();
    let schedule = &ctx.schedule;
    if t >= schedule.len() {
        return Err(Error::InvalidBudget("the schedule is exhausted".into()));
    }
    let labeled: Vec<u64> = run.pool.labeled_ids.iter().copied().collect();
    if labeled.len() != schedule.sizes[t] {
        return Err(Error::Pool(format!(
            "round {t} expects {} labeled frames, found {}",
            schedule.sizes[t],
            labeled.len()
        )));
    }

    let ts = &ctx.config.train;
    let opt = &ctx.config.optimizer;
    let fresh = t == 0 || ts.kind == TrainKind::FromScratch || !run.model.trained;
    let (start, train_ids, params) = if fresh {
        (
            ModelState::new(ctx.num_classes, derive_seed(run.seed, &[1])),
            labeled.clone(),
            opt.train_params(ts.epochs_initial, false),
        )
    } else {
        let ids = match ts.kind {
            TrainKind::IncrementalReplay => replay_set(&run.pool, ts.replay_fraction, derive_seed(run.seed, &[3, t as u64])),
            _ => labeled.clone(),
        };
        (run.model.clone(), ids, opt.train_params(ts.epochs_update, true))
    };
    let samples = ctx.samples(&train_ids);
    if samples.is_empty() {
        return Err(Error::NoCandidates {
            frames: train_ids.len(),
        });
    }
    let outcome = train_samples(&start, &samples, &params)?;
    let model = outcome.model;

    let pairs: Vec<_> = ctx
        .test_ids
        .par_iter()
        .map(|id| (infer_candidates(&model, &ctx.candidates[id]), ctx.frame(*id).gt_boxes.clone()))
        .collect();
    let report = evaluate_detections(&pairs, ctx.num_classes, &ctx.config.matching)?;

    let mut selected_count = 0;
    if t + 1 < schedule.len() {
        let b = schedule.sizes[t + 1] - schedule.sizes[t];
        if b > run.pool.unlabeled_ids.len() {
            return Err(Error::InvalidBudget(format!(
                "round {t} needs {b} frames but only {} are unlabeled",
                run.pool.unlabeled_ids.len()
            )));
        }
        let unlabeled: Vec<u64> = run.pool.unlabeled_ids.iter().copied().collect();
        let sel_seed = derive_seed(run.seed, &[2, t as u64]);
        let mut result = if run.strategy == Strategy::Random {
            random_select(&unlabeled, b, sel_seed)?
        } else {
            let acq = &ctx.config.acquisition;
            let passes = run.strategy.needs_passes().then_some((acq.mc_passes, acq.mc_drop_rate));
            let records = ctx.score_records(&model, &unlabeled, passes)?;
            let labeled_embeddings: Vec<Vec<f64>> = if run.strategy == Strategy::Coreset {
                labeled
                    .par_iter()
                    .map(|id| {
                        let dets = infer_candidates(&model, &ctx.candidates[id]);
                        mean_vector(dets.iter().map(|d| d.embedding.as_slice()), FEATURE_DIM)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let labeled_hist = box_class_histogram(
                labeled.iter().flat_map(|id| ctx.frame(*id).gt_boxes.iter()),
                ctx.num_classes,
            );
            let input = SelectionInput {
                records: &records,
                labeled_embeddings: &labeled_embeddings,
                labeled_hist: &labeled_hist,
                num_classes: ctx.num_classes,
            };
            select(run.strategy, &input, b, sel_seed, t, acq)?
        };
        result.strategy = run.strategy;
        result.round = t;
        if result.selected.len() != b {
            return Err(Error::Selection(format!(
                "{} returned {} frames for a budget of {b}",
                run.strategy,
                result.selected.len()
            )));
        }
        oracle_label(&mut run.pool, &result.selected, &ctx.frames)?;
        selected_count = b;
        run.selections.push(result);
    }

    run.rows.push(CurveRow {
        strategy: run.strategy,
        round: t,
        labeled_count: labeled.len(),
        labeled_fraction: labeled.len() as f64 / ctx.pool_ids.len() as f64,
        map: report.map,
        ap: report.ap,
        train_steps: outcome.steps,
        candidate_visits: outcome.candidate_visits,
        selected_count,
    });
    run.model = model;
    run.pool.round = t + 1;
    Ok(())
}

// Last query batch plus a uniform `ρ` share of the older labeled frames.
fn replay_set(pool: &PoolState, fraction: f64, seed: u64) -> Vec<u64> {
    let recent: Vec<u64> = pool.query_history.last().cloned().unwrap_or_default();
    let recent_set: BTreeSet<u64> = recent.iter().copied().collect();
    let mut older: Vec<u64> = pool
        .labeled_ids
        .iter()
        .copied()
        .filter(|id| !recent_set.contains(id))
        .collect();
    let k = (fraction * older.len() as f64).round() as usize;
    let (replay, _) = older.partial_shuffle(&mut ChaCha8Rng::seed_from_u64(seed), k);
    let mut ids: Vec<u64> = recent.into_iter().chain(replay.iter().copied()).collect();
    ids.sort_unstable();
    ids
}

/// Runs the remaining rounds of `run`, calling `on_round` after each one.
/// Stops early after `stop_after` rounds in total when given.
pub fn continue_run(
    ctx: &LoopContext<'_>,
    run: &mut StrategyRun,
    stop_after: Option<usize>,
    on_round: &mut dyn FnMut(&StrategyRun) -> Result<()>,
) -> Result<()> {
    let limit = stop_after.unwrap_or(usize::MAX).min(ctx.schedule.len());
    while run.rows.len() < limit {
        run_round(ctx, run)?;
        run.pool.check_invariants(ctx.pool_ids.len())?;
        log::info!(
            "{} round {}: labeled {} mAP {:.4}",
            run.strategy,
            run.rows.len() - 1,
            run.rows.last().map_or(0, |r| r.labeled_count),
            run.rows.last().map_or(0.0, |r| r.map)
        );
        on_round(run)?;
    }
    Ok(())
}

/// Runs every strategy from the same initial pool. Each strategy uses its
/// override seed when present and the master seed otherwise.
pub fn run_experiment(
    ctx: &LoopContext<'_>,
    strategies: &[Strategy],
    master_seed: u64,
    seed_overrides: &BTreeMap<Strategy, u64>,
) -> Result<Vec<StrategyRun>> {
    if strategies.is_empty() {
        return Err(Error::Config("no strategies given".into()));
    }
    let initial = initial_pool(&ctx.pool_ids, ctx.schedule.sizes[0], master_seed)?;
    strategies
        .iter()
        .map(|&s| {
            let seed = seed_overrides.get(&s).copied().unwrap_or(master_seed);
            let mut run = StrategyRun::start(ctx, s, seed, &initial)?;
            continue_run(ctx, &mut run, None, &mut |_| Ok(()))?;
            Ok(run)
        })
        .collect()
}
