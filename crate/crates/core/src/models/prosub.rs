//! Outer recursive-feature-elimination loop around the dual network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dual::{evaluate_mse, train_epoch, DualModel, DualOptimizer, EpochLabel};
use crate::nas::{ArchSpec, GreedyTuner, Trial};
use crate::nn::Matrix;
use crate::subsample::{alpha, anneal_mask_with, select_removals, AnnealMode, Mask, RemovalSet, RfeSchedule, ScoreEma};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsubOptions {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub anneal: AnnealMode,
    /// `false` replaces the averaged score with the latest batch score.
    pub average_scores: bool,
    pub seed: u64,
}

impl Default for ProsubOptions {
    fn default() -> Self {
        Self {
            batch_size: 1500,
            learning_rate: 1e-3,
            anneal: AnnealMode::Progressive,
            average_scores: true,
            seed: 0,
        }
    }
}

/// Where each step's architecture comes from.
#[derive(Debug, Clone)]
pub enum ArchSource {
    Fixed(ArchSpec),
    Search(GreedyTuner),
}

/// State carried from a converged run at a larger target.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub model: DualModel,
    pub mask: Mask,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub arch: ArchSpec,
    pub removal: RemovalSet,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// Mask after the step's last epoch.
    pub mask: Vec<f64>,
    /// Averaged score after the step.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProsubOutcome {
    pub mask: Mask,
    pub scores: ScoreEma,
    pub model: DualModel,
    pub steps: Vec<StepResult>,
    pub trials: Vec<Trial>,
    /// Validation loss of the starting model, mask and score before training.
    pub initial_val_loss: f64,
}

impl ProsubOutcome {
    pub fn selected(&self) -> Vec<usize> {
        self.mask.active_indices()
    }

    pub fn train_curve(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.train_curve.iter().copied()).collect()
    }

    pub fn val_curve(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.val_curve.iter().copied()).collect()
    }
}

struct StepRun {
    model: DualModel,
    optimizer: DualOptimizer,
    scores: ScoreEma,
    mask: Mask,
    train_curve: Vec<f64>,
    val_curve: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_step(
    mut model: DualModel,
    mut optimizer: DualOptimizer,
    prior: &ScoreEma,
    base: &Mask,
    removal: &RemovalSet,
    t: usize,
    train: &Matrix,
    val: &Matrix,
    schedule: &RfeSchedule,
    opts: &ProsubOptions,
    rng: &mut ChaCha8Rng,
) -> Result<StepRun> {
    let a = if opts.average_scores {
        alpha(t, schedule.total_steps)?
    } else {
        1.0
    };
    let mut scores = prior.clone();
    let mut mask = base.clone();
    let mut train_curve = Vec::with_capacity(schedule.epochs);
    let mut val_curve = Vec::with_capacity(schedule.epochs);
    for epoch in 1..=schedule.epochs {
        mask = anneal_mask_with(base, removal, epoch, schedule.anneal_window, opts.anneal);
        let out = train_epoch(
            &mut model,
            &mut optimizer,
            train,
            mask.values(),
            prior.values(),
            a,
            opts.batch_size,
            EpochLabel { step: t, epoch },
            rng,
        )?;
        scores = if opts.average_scores {
            prior.update(&out.last_scores, t)?
        } else {
            prior.replace(&out.last_scores, t)?
        };
        let val_loss = evaluate_mse(&model.reconstructor, mask.values(), scores.values(), val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step: t,
                epoch,
                loss: val_loss,
            });
        }
        train_curve.push(out.loss);
        val_curve.push(val_loss);
    }
    Ok(StepRun {
        model,
        optimizer,
        scores,
        mask,
        train_curve,
        val_curve,
    })
}

fn is_training_failure(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::NonFiniteGradient { .. })
}

/// Runs one full schedule, from scratch or warm-started.
///
/// Removal sets are chosen at the start of each step from the previous step's
/// averaged score. With [`ArchSource::Search`], every step is a trial; a new
/// architecture proposal restarts the networks from a fresh initialization,
/// while an unchanged proposal keeps training the current ones. A trial that
/// diverges is recorded as failed and the step is retried from the last good
/// networks.
pub fn run_prosub(
    train: &Matrix,
    val: &Matrix,
    schedule: &RfeSchedule,
    arch: ArchSource,
    warm: Option<WarmStart>,
    opts: &ProsubOptions,
) -> Result<ProsubOutcome> {
    let n = schedule.n_measurements;
    if train.cols() != n || val.cols() != n {
        return Err(Error::shape("run_prosub data", n, format!("{} / {}", train.cols(), val.cols())));
    }
    if opts.batch_size == 0 || !(opts.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (fixed, mut tuner) = match arch {
        ArchSource::Fixed(a) => (Some(a), None),
        ArchSource::Search(t) => (None, Some(t)),
    };
    let (mut model, mut mask, mut scores) = match warm {
        Some(w) => {
            if w.mask.len() != n || w.model.n_measurements() != n {
                return Err(Error::shape("warm start", n, w.mask.len()));
            }
            if w.mask.active_count() != schedule.active_at_start {
                return Err(Error::InvalidSchedule(format!(
                    "warm mask has {} active measurements, schedule expects {}",
                    w.mask.active_count(),
                    schedule.active_at_start
                )));
            }
            let scores = ScoreEma::restart(w.scores, schedule.total_steps)?;
            (w.model, w.mask, scores)
        }
        None => {
            if schedule.active_at_start != n {
                return Err(Error::InvalidSchedule(format!(
                    "cold start needs all {n} measurements active, schedule has {}",
                    schedule.active_at_start
                )));
            }
            let first = match (fixed, tuner.as_mut()) {
                (Some(a), _) => a,
                (None, Some(t)) => t.propose_next(),
                (None, None) => unreachable!("one source is always set"),
            };
            (DualModel::new(n, &first, &mut rng)?, Mask::ones(n), ScoreEma::new(n, schedule.total_steps))
        }
    };
    let initial_val_loss = evaluate_mse(&model.reconstructor, mask.values(), scores.values(), val)?;
    let mut optimizer = DualOptimizer::new(&model, opts.learning_rate);
    let mut steps = Vec::with_capacity(schedule.total_steps);
    let mut trials = Vec::new();

    for t in 1..=schedule.total_steps {
        let count = schedule.removals_at(t);
        let removal = if count > 0 {
            select_removals(&scores, &mask, count)?
        } else {
            RemovalSet::empty(t)
        };
        let run = match run_step(
            model.clone(),
            optimizer.clone(),
            &scores,
            &mask,
            &removal,
            t,
            train,
            val,
            schedule,
            opts,
            &mut rng,
        ) {
            Ok(run) => run,
            Err(e) if is_training_failure(&e) && tuner.is_some() => {
                let failed = Trial::failed(model.arch.clone(), t, Vec::new(), Vec::new());
                trials.push(failed.clone());
                tuner.as_mut().expect("checked").record_trial(failed);
                run_step(
                    model.clone(),
                    optimizer.clone(),
                    &scores,
                    &mask,
                    &removal,
                    t,
                    train,
                    val,
                    schedule,
                    opts,
                    &mut rng,
                )?
            }
            Err(e) => return Err(e),
        };
        let trial = Trial::completed(run.model.arch.clone(), t, run.train_curve.clone(), run.val_curve.clone());
        steps.push(StepResult {
            step: t,
            arch: run.model.arch.clone(),
            removal,
            train_curve: run.train_curve,
            val_curve: run.val_curve,
            mask: run.mask.values().to_vec(),
            scores: run.scores.values().to_vec(),
        });
        model = run.model;
        optimizer = run.optimizer;
        mask = run.mask;
        scores = run.scores;
        if let Some(tuner) = tuner.as_mut() {
            trials.push(trial.clone());
            tuner.record_trial(trial);
            if t < schedule.total_steps {
                let next = tuner.propose_next();
                if next != model.arch {
                    model = DualModel::new(n, &next, &mut rng)?;
                    optimizer = DualOptimizer::new(&model, opts.learning_rate);
                }
            }
        }
    }
    Ok(ProsubOutcome {
        mask,
        scores,
        model,
        steps,
        trials,
        initial_val_loss,
    })
}
