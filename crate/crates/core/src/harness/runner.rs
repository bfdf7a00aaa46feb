use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, Method};
use super::report::{max_loss_jump, run_dir, Candidate, FoldReport, FoldStatus, RunReport};
use crate::data::{generate_synthetic, load_dataset, make_folds, CvSplit, MeasurementDataset, NormalizationSpec};
use crate::models::{
    evaluate_mse, run_prosub, run_sardu, run_sardu_search, ArchSource, Checkpoint, CheckpointMeta, ModelKind,
    ProsubOptions, SarduOptions, SarduOutcome, StepResult, WarmStart,
};
use crate::nas::{GreedyTuner, SearchSpace};
use crate::nn::Matrix;
use crate::subsample::RemovalSet;
use crate::{Error, Result};

/// Environment variable sizing the worker pool.
pub const THREADS_ENV: &str = "PROSUB_THREADS";

/// Seeds tried per target by best-of-five.
pub const BEST_OF: usize = 5;

pub fn load_source(source: &DataSource) -> Result<MeasurementDataset> {
    match source {
        DataSource::Path(p) => load_dataset(p),
        DataSource::Synthetic(spec) => generate_synthetic(spec),
    }
}

/// Normalized train, validation and test samples of one fold.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub index: usize,
    pub split: CvSplit,
    pub train: Matrix,
    pub val: Matrix,
    pub test: Matrix,
    pub normalization: Option<NormalizationSpec>,
}

/// Splits by subject and fits normalization on the training subjects only.
/// A dataset that already carries normalization is used as is.
pub fn prepare_folds(dataset: &MeasurementDataset, config: &ExperimentConfig) -> Result<Vec<PreparedFold>> {
    make_folds(&dataset.subjects(), config.folds)?
        .into_iter()
        .enumerate()
        .map(|(index, split)| {
            let train = dataset.restrict_to(&split.train_subjects)?;
            let val = dataset.restrict_to(&split.validation_subjects)?;
            let test = dataset.restrict_to(&split.test_subjects)?;
            let (train, val, test, normalization) = match &dataset.normalization {
                Some(spec) => (train, val, test, Some(spec.clone())),
                None => {
                    let spec = NormalizationSpec::fit(&train, config.normalization_mode())?;
                    (spec.apply(&train)?, spec.apply(&val)?, spec.apply(&test)?, Some(spec))
                }
            };
            Ok(PreparedFold {
                index,
                split,
                train: train.samples,
                val: val.samples,
                test: test.samples,
                normalization,
            })
        })
        .collect()
}

/// Per-job seed so that folds, stages and roles draw independent streams.
fn derive_seed(seed: u64, fold: usize, stage: usize, role: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((fold as u64) << 40)
        .wrapping_add((stage as u64) << 20)
        .wrapping_add(role)
}

struct JobContext<'a> {
    config: &'a ExperimentConfig,
    space: SearchSpace,
    fold: &'a PreparedFold,
    seed: u64,
    measurement_ids: &'a [String],
    checkpoint_root: Option<PathBuf>,
}

impl JobContext<'_> {
    fn empty_report(&self, status: FoldStatus) -> FoldReport {
        FoldReport::empty(
            self.fold.index,
            self.fold.split.validation_subjects.clone(),
            self.fold.split.test_subjects.clone(),
            status,
        )
    }

    fn checkpoint_dir(&self, target: usize, sub: Option<String>) -> Option<PathBuf> {
        self.checkpoint_root.as_ref().map(|root| {
            let d = run_dir(root, self.seed, target).join(format!("fold{}", self.fold.index));
            match sub {
                Some(s) => d.join(s),
                None => d,
            }
        })
    }

    fn n(&self) -> usize {
        self.fold.train.cols()
    }
}

/// Runs every target of the schedule for one fold and seed.
fn run_job(ctx: &JobContext) -> Result<Vec<FoldReport>> {
    if ctx.config.method.is_prosub() {
        run_prosub_chain(ctx)
    } else {
        ctx.config
            .m_schedule
            .iter()
            .enumerate()
            .map(|(stage, &m)| run_baseline(ctx, stage, m))
            .collect()
    }
}

fn run_prosub_chain(ctx: &JobContext) -> Result<Vec<FoldReport>> {
    let config = ctx.config;
    let n = ctx.n();
    let mut reports = Vec::with_capacity(config.m_schedule.len());
    let mut warm: Option<WarmStart> = None;
    let mut broken = false;
    for (stage, &target) in config.m_schedule.iter().enumerate() {
        if broken {
            reports.push(ctx.empty_report(FoldStatus::Skipped));
            continue;
        }
        let started = Instant::now();
        let active = warm.as_ref().map_or(n, |w| w.mask.active_count());
        let attempt = config.stage_schedule(n, active, target, stage).and_then(|schedule| {
            let arch = match config.method {
                Method::Prosub => ArchSource::Search(GreedyTuner::new(
                    ctx.space.clone(),
                    derive_seed(ctx.seed, ctx.fold.index, stage, 1),
                    config.exploration,
                )?),
                _ => ArchSource::Fixed(ctx.space.default_arch.clone()),
            };
            let opts = ProsubOptions {
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                anneal: config.ablation.anneal,
                average_scores: config.ablation.average_scores,
                seed: derive_seed(ctx.seed, ctx.fold.index, stage, 0),
            };
            let out = run_prosub(&ctx.fold.train, &ctx.fold.val, &schedule, arch, warm.clone(), &opts)?;
            let test_mse = evaluate_mse(&out.model.reconstructor, out.mask.values(), out.scores.values(), &ctx.fold.test)?;
            Ok((schedule, out, test_mse))
        });
        let (schedule, out, test_mse) = match attempt {
            Ok(v) => v,
            Err(e) => {
                reports.push(ctx.empty_report(FoldStatus::Failed { reason: e.to_string() }));
                broken = true;
                continue;
            }
        };
        if let Some(dir) = ctx.checkpoint_dir(target, None) {
            Checkpoint {
                meta: CheckpointMeta {
                    kind: ModelKind::Prosub,
                    target,
                    measurement_ids: ctx.measurement_ids.to_vec(),
                    mask: out.mask.values().to_vec(),
                    score: out.scores.values().to_vec(),
                    selected: out.selected(),
                    arch: out.model.arch.clone(),
                    normalization: ctx.fold.normalization.clone(),
                    step: schedule.total_steps,
                    total_steps: schedule.total_steps,
                },
                scorer: out.model.scorer.clone(),
                reconstructor: out.model.reconstructor.clone(),
            }
            .save(&dir)?;
        }
        let train_curve = out.train_curve();
        let total_epochs = out.steps.len() * schedule.epochs
            + out.trials.iter().filter(|t| !t.is_ok()).count() * schedule.epochs;
        reports.push(FoldReport {
            selected: out.selected(),
            scores: out.scores.values().to_vec(),
            initial_val_loss: Some(out.initial_val_loss),
            val_mse: out.val_curve().last().copied(),
            test_mse: Some(test_mse),
            total_epochs,
            max_train_jump: max_loss_jump(&train_curve),
            trials: out.trials.clone(),
            steps: out.steps.clone(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            ..ctx.empty_report(FoldStatus::Ok)
        });
        warm = Some(WarmStart {
            model: out.model,
            mask: out.mask,
            scores: out.scores.values().to_vec(),
        });
    }
    Ok(reports)
}

fn sardu_step(out: &SarduOutcome) -> StepResult {
    StepResult {
        step: 1,
        arch: out.model.arch.clone(),
        removal: RemovalSet::empty(1),
        train_curve: out.train_curve.clone(),
        val_curve: out.val_curve.clone(),
        mask: out.mask(),
        scores: out.weights.clone(),
    }
}

fn save_sardu(ctx: &JobContext, out: &SarduOutcome, target: usize, sub: Option<String>) -> Result<()> {
    if let Some(dir) = ctx.checkpoint_dir(target, sub) {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::Sardu,
                target,
                measurement_ids: ctx.measurement_ids.to_vec(),
                mask: out.mask(),
                score: out.weights.clone(),
                selected: out.selected.clone(),
                arch: out.model.arch.clone(),
                normalization: ctx.fold.normalization.clone(),
                step: 1,
                total_steps: 1,
            },
            scorer: out.model.selector.clone(),
            reconstructor: out.model.reconstructor.clone(),
        }
        .save(&dir)?;
    }
    Ok(())
}

/// Index of the candidate with the lowest validation error; ties keep the first.
pub fn pick_best(candidates: &[Candidate]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| candidates[a].val_mse.total_cmp(&candidates[b].val_mse))
}

fn run_baseline(ctx: &JobContext, stage: usize, target: usize) -> Result<FoldReport> {
    let config = ctx.config;
    let started = Instant::now();
    let opts = |role: u64| SarduOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: derive_seed(ctx.seed, ctx.fold.index, stage, role),
    };
    let (train, val) = (&ctx.fold.train, &ctx.fold.val);
    let attempt: Result<(SarduOutcome, Vec<crate::nas::Trial>, Vec<Candidate>, usize)> = match config.method {
        Method::Sardu => run_sardu(train, val, target, &ctx.space.default_arch, &opts(0)).map(|o| (o, vec![], vec![], config.epochs)),
        Method::SarduNas => GreedyTuner::new(ctx.space.clone(), derive_seed(ctx.seed, ctx.fold.index, stage, 1), config.exploration)
            .and_then(|mut tuner| run_sardu_search(train, val, target, &mut tuner, config.nas_trials, &opts(0)))
            .map(|(o, trials)| (o, trials, vec![], config.nas_trials * config.epochs)),
        Method::SarduBof => (|| {
            let mut outcomes = Vec::with_capacity(BEST_OF);
            let mut candidates = Vec::with_capacity(BEST_OF);
            for i in 0..BEST_OF {
                let o = opts(10 + i as u64);
                let out = run_sardu(train, val, target, &ctx.space.default_arch, &o)?;
                save_sardu(ctx, &out, target, Some(format!("candidate{i}")))?;
                candidates.push(Candidate {
                    seed: o.seed,
                    val_mse: *out.val_curve.last().expect("epochs > 0"),
                    test_mse: out.evaluate(&ctx.fold.test)?,
                    selected: out.selected.clone(),
                });
                outcomes.push(out);
            }
            let best = pick_best(&candidates).expect("five candidates");
            Ok((outcomes.swap_remove(best), vec![], candidates, BEST_OF * config.epochs))
        })(),
        Method::Prosub | Method::ProsubNoNas => unreachable!("handled by the chain"),
    };
    let (out, trials, candidates, total_epochs) = match attempt {
        Ok(v) => v,
        Err(e @ (Error::Io { .. } | Error::Json(_))) => return Err(e),
        Err(e) => return Ok(ctx.empty_report(FoldStatus::Failed { reason: e.to_string() })),
    };
    save_sardu(ctx, &out, target, None)?;
    Ok(FoldReport {
        selected: out.selected.clone(),
        scores: out.weights.clone(),
        steps: vec![sardu_step(&out)],
        trials,
        initial_val_loss: None,
        val_mse: out.val_curve.last().copied(),
        test_mse: Some(out.evaluate(&ctx.fold.test)?),
        total_epochs,
        max_train_jump: max_loss_jump(&out.train_curve),
        candidates,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        ..ctx.empty_report(FoldStatus::Ok)
    })
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs the configured method over every seed and fold. Each target of the
/// schedule warm-starts from the previous one for the dual network; the
/// baselines train every target from scratch. Returns one report per seed and
/// target. Checkpoints go below `config.output_dir` when set.
pub fn run_sequential(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    let dataset = load_source(&config.data)?;
    run_on_dataset(config, &dataset)
}

pub fn run_on_dataset(config: &ExperimentConfig, dataset: &MeasurementDataset) -> Result<Vec<RunReport>> {
    config.validate(dataset.n_measurements())?;
    let folds = prepare_folds(dataset, config)?;
    let space = config.search_space()?;
    let jobs: Vec<(u64, &PreparedFold)> = config
        .seeds
        .iter()
        .flat_map(|&s| folds.iter().map(move |f| (s, f)))
        .collect();
    let run = |&(seed, fold): &(u64, &PreparedFold)| {
        run_job(&JobContext {
            config,
            space: space.clone(),
            fold,
            seed,
            measurement_ids: &dataset.measurement_ids,
            checkpoint_root: config.output_dir.clone(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<FoldReport>>> = pool.install(|| jobs.par_iter().map(run).collect());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    for (si, &seed) in config.seeds.iter().enumerate() {
        for (stage, &target) in config.m_schedule.iter().enumerate() {
            let fold_reports: Vec<FoldReport> = (0..folds.len())
                .map(|f| results[si * folds.len() + f][stage].clone())
                .collect();
            reports.push(RunReport {
                method: config.method,
                seed,
                target,
                n_measurements: dataset.n_measurements(),
                measurement_ids: dataset.measurement_ids.clone(),
                wall_clock_secs: fold_reports.iter().map(|f| f.wall_clock_secs).sum(),
                folds: fold_reports,
            });
        }
    }
    Ok(reports)
}

/// Hard-selection baseline trained with five seeds per target and fold,
/// keeping the model with the lowest validation error.
pub fn best_of_five(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    let config = ExperimentConfig {
        method: Method::SarduBof,
        ..config.clone()
    };
    run_sequential(&config)
}

/// Mean squared reconstruction error of a saved model on a dataset.
pub fn evaluate_checkpoint(dir: &Path, dataset: &MeasurementDataset) -> Result<f64> {
    let ckpt = Checkpoint::load(dir)?;
    if dataset.measurement_ids != ckpt.meta.measurement_ids {
        return Err(Error::shape(
            "evaluate measurement ids",
            ckpt.meta.measurement_ids.len(),
            dataset.measurement_ids.len(),
        ));
    }
    let samples = match &ckpt.meta.normalization {
        Some(spec) => spec.apply(dataset)?.samples,
        None => dataset.samples.clone(),
    };
    ckpt.evaluate(&samples)
}
