//! Hard-selection baseline: a selector network picks exactly `M` measurements
//! per batch and a reconstructor predicts the full vector from them.
//!
//! Per batch, `w = mean_rows(2 * sigmoid(selector(x)))`; the `N - M` smallest
//! entries of `w` are clamped to zero, and the reconstructor sees `x * w`.
//! The clamp is piecewise constant, so gradients reach the selector only
//! through the kept entries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dual::evaluate_mse;
use crate::nas::{ArchSpec, GreedyTuner, Trial};
use crate::nn::{adam_step, l2_loss, l2_loss_grad, Activation, AdamState, Gradients, Matrix, Mlp};
use crate::{Error, Result};

/// Keeps the `keep` largest weights, zeroing the rest. Ties keep the lower
/// index. Returns the clamped weights and the kept indices in ascending order.
pub fn clamp_smallest(weights: &[f64], keep: usize) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    let mut clamped = vec![0.0; weights.len()];
    for &i in &kept {
        clamped[i] = weights[i];
    }
    (clamped, kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarduModel {
    pub selector: Mlp,
    pub reconstructor: Mlp,
    pub arch: ArchSpec,
    pub target: usize,
}

impl SarduModel {
    pub fn new<R: Rng + ?Sized>(n_measurements: usize, target: usize, arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        if target == 0 || target >= n_measurements {
            return Err(Error::InvalidConfig(format!(
                "selection size {target} must be in 1..{n_measurements}"
            )));
        }
        let selector = Mlp::he_normal(
            n_measurements,
            &arch.scorer_hidden(),
            n_measurements,
            Activation::Relu,
            Activation::ScaledSigmoid2,
            arch.dropout,
            rng,
        )?;
        let reconstructor = Mlp::he_normal(
            n_measurements,
            &arch.reconstructor_hidden(),
            n_measurements,
            Activation::Relu,
            Activation::Linear,
            arch.dropout,
            rng,
        )?;
        Ok(Self {
            selector,
            reconstructor,
            arch: arch.clone(),
            target,
        })
    }

    pub fn n_measurements(&self) -> usize {
        self.selector.input_dim()
    }
}

#[derive(Debug, Clone)]
pub struct SarduPass {
    pub loss: f64,
    /// Clamped batch weights.
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub selector_grads: Gradients,
    pub reconstructor_grads: Gradients,
}

pub fn sardu_loss_and_gradients<R: Rng + ?Sized>(
    model: &SarduModel,
    batch: &Matrix,
    train_mode: bool,
    rng: &mut R,
) -> Result<SarduPass> {
    let (b, n) = batch.shape();
    if n != model.n_measurements() {
        return Err(Error::shape("sardu batch", model.n_measurements(), n));
    }
    let (per_sample, selector_tape) = model.selector.forward(batch, train_mode, rng)?;
    let (weights, selected) = clamp_smallest(&per_sample.column_means(), model.target);
    let input = batch.scale_columns(&weights)?;
    let (output, recon_tape) = model.reconstructor.forward(&input, train_mode, rng)?;
    let loss = l2_loss(&output, batch)?;
    let (reconstructor_grads, input_grad) = model
        .reconstructor
        .backward(&recon_tape, &l2_loss_grad(&output, batch)?)?;
    let mut weight_grad = vec![0.0; n];
    for i in 0..b {
        for &j in &selected {
            weight_grad[j] += input_grad.get(i, j) * batch.get(i, j);
        }
    }
    let out_grad = Matrix::from_fn(b, n, |_, j| weight_grad[j] / b as f64);
    let (selector_grads, _) = model.selector.backward(&selector_tape, &out_grad)?;
    Ok(SarduPass {
        loss,
        weights,
        selected,
        selector_grads,
        reconstructor_grads,
    })
}

/// Eval-mode selection and reconstruction error on `batch`.
pub fn sardu_forward(model: &SarduModel, batch: &Matrix) -> Result<(f64, Vec<usize>)> {
    let weights = model.selector.predict(batch)?.column_means();
    let (clamped, selected) = clamp_smallest(&weights, model.target);
    let output = model.reconstructor.predict(&batch.scale_columns(&clamped)?)?;
    Ok((l2_loss(&output, batch)?, selected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarduOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SarduOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1500,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SarduOutcome {
    pub model: SarduModel,
    /// Clamped weights from the last training batch, used for evaluation.
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// Per epoch, how many batches changed the selected set.
    pub selection_changes: Vec<usize>,
}

impl SarduOutcome {
    /// Binary mask of the selected measurements.
    pub fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.weights.len()];
        self.selected.iter().for_each(|&i| m[i] = 1.0);
        m
    }

    pub fn evaluate(&self, data: &Matrix) -> Result<f64> {
        evaluate_mse(&self.model.reconstructor, &self.mask(), &self.weights, data)
    }
}

/// Trains one selector/reconstructor pair for a fixed selection size.
pub fn run_sardu(train: &Matrix, val: &Matrix, target: usize, arch: &ArchSpec, opts: &SarduOptions) -> Result<SarduOutcome> {
    let n = train.cols();
    if val.cols() != n {
        return Err(Error::shape("run_sardu validation", n, val.cols()));
    }
    if opts.epochs == 0 || opts.batch_size == 0 || !(opts.learning_rate > 0.0) || train.rows() == 0 {
        return Err(Error::InvalidConfig(
            "epochs, batch size, learning rate and training rows must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = SarduModel::new(n, target, arch, &mut rng)?;
    let mut selector_state = AdamState::new(&model.selector, opts.learning_rate);
    let mut recon_state = AdamState::new(&model.reconstructor, opts.learning_rate);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let (mut weights, mut selected) = (vec![0.0; n], Vec::new());
    let mut train_curve = Vec::with_capacity(opts.epochs);
    let mut val_curve = Vec::with_capacity(opts.epochs);
    let mut selection_changes = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        let mut changes = 0;
        for rows in order.chunks(opts.batch_size) {
            let batch = train.select_rows(rows);
            let pass = sardu_loss_and_gradients(&model, &batch, true, &mut rng)?;
            if !pass.loss.is_finite() {
                return Err(Error::Diverged {
                    step: 1,
                    epoch,
                    loss: pass.loss,
                });
            }
            adam_step(&mut model.selector, &pass.selector_grads, &mut selector_state)?;
            adam_step(&mut model.reconstructor, &pass.reconstructor_grads, &mut recon_state)?;
            if !selected.is_empty() && pass.selected != selected {
                changes += 1;
            }
            losses.push(pass.loss);
            weights = pass.weights;
            selected = pass.selected;
        }
        let mut mask = vec![0.0; n];
        selected.iter().for_each(|&i| mask[i] = 1.0);
        let val_loss = evaluate_mse(&model.reconstructor, &mask, &weights, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step: 1,
                epoch,
                loss: val_loss,
            });
        }
        train_curve.push(losses.iter().sum::<f64>() / losses.len() as f64);
        val_curve.push(val_loss);
        selection_changes.push(changes);
    }
    Ok(SarduOutcome {
        model,
        weights,
        selected,
        train_curve,
        val_curve,
        selection_changes,
    })
}

/// Searches architectures for one selection size, training each trial from
/// scratch. Returns the best outcome and every trial.
pub fn run_sardu_search(
    train: &Matrix,
    val: &Matrix,
    target: usize,
    tuner: &mut GreedyTuner,
    n_trials: usize,
    opts: &SarduOptions,
) -> Result<(SarduOutcome, Vec<Trial>)> {
    let mut best: Option<SarduOutcome> = None;
    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let arch = tuner.propose_next();
        let trial_opts = SarduOptions {
            seed: opts.seed.wrapping_add(i as u64),
            ..opts.clone()
        };
        let trial = match run_sardu(train, val, target, &arch, &trial_opts) {
            Ok(out) => {
                let trial = Trial::completed(arch, i + 1, out.train_curve.clone(), out.val_curve.clone());
                let improves = trial.is_ok()
                    && tuner
                        .best_trial()
                        .map_or(true, |b| trial.objective < b.objective);
                if improves {
                    best = Some(out);
                }
                trial
            }
            Err(Error::Diverged { .. } | Error::NonFiniteGradient { .. }) => Trial::failed(arch, i + 1, Vec::new(), Vec::new()),
            Err(e) => return Err(e),
        };
        trials.push(trial.clone());
        tuner.record_trial(trial);
    }
    best.map(|b| (b, trials)).ok_or(Error::NoResult)
}
