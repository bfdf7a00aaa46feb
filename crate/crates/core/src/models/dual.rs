//! Scoring network `S` and reconstruction network `R` trained in unison.
//!
//! Per batch `x` (rows are samples):
//!
//! ```text
//! s      = mean_rows(S(x))                   per-measurement score in (0, 2)
//! s_bar  = alpha * s + (1 - alpha) * prior   averaged score
//! x_hat  = R(x * mask * s_bar)               channelwise products
//! L      = mean((x_hat - x)^2)
//! ```

use rand::seq::SliceRandom;
use rand::Rng;

use crate::nas::ArchSpec;
use crate::nn::{adam_step, l2_loss, l2_loss_grad, Activation, AdamState, Gradients, Matrix, Mlp};
use crate::{Error, Result};

/// Rows evaluated per chunk when scoring a whole dataset.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub scorer: Mlp,
    pub reconstructor: Mlp,
    pub arch: ArchSpec,
}

impl DualModel {
    /// He-initialized pair for `n_measurements` channels. Hidden layers use relu;
    /// the scorer ends in `2 * sigmoid`, the reconstructor is linear.
    pub fn new<R: Rng + ?Sized>(n_measurements: usize, arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        let scorer = Mlp::he_normal(
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
        Self::from_parts(scorer, reconstructor, arch.clone())
    }

    pub fn from_parts(scorer: Mlp, reconstructor: Mlp, arch: ArchSpec) -> Result<Self> {
        let n = scorer.input_dim();
        let dims = [scorer.output_dim(), reconstructor.input_dim(), reconstructor.output_dim()];
        if dims.iter().any(|&d| d != n) {
            return Err(Error::shape("DualModel", format!("all dims {n}"), format!("{dims:?}")));
        }
        Ok(Self {
            scorer,
            reconstructor,
            arch,
        })
    }

    pub fn n_measurements(&self) -> usize {
        self.scorer.input_dim()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.scorer.parameters();
        p.extend(self.reconstructor.parameters());
        p
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let split = self.scorer.parameter_count();
        if values.len() != split + self.reconstructor.parameter_count() {
            return Err(Error::shape(
                "DualModel::set_parameters",
                split + self.reconstructor.parameter_count(),
                values.len(),
            ));
        }
        self.scorer.set_parameters(&values[..split])?;
        self.reconstructor.set_parameters(&values[split..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualOptimizer {
    pub scorer: AdamState,
    pub reconstructor: AdamState,
}

impl DualOptimizer {
    pub fn new(model: &DualModel, lr: f64) -> Self {
        Self {
            scorer: AdamState::new(&model.scorer, lr),
            reconstructor: AdamState::new(&model.reconstructor, lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualGradients {
    pub scorer: Gradients,
    pub reconstructor: Gradients,
}

impl DualGradients {
    /// Flattened in [`DualModel::parameters`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut g = self.scorer.flatten();
        g.extend(self.reconstructor.flatten());
        g
    }
}

fn check_width(model: &DualModel, batch: &Matrix, mask: &[f64], prior: &[f64]) -> Result<()> {
    let n = model.n_measurements();
    if batch.cols() != n {
        return Err(Error::shape("batch columns", n, batch.cols()));
    }
    if mask.len() != n {
        return Err(Error::shape("mask length", n, mask.len()));
    }
    if prior.len() != n {
        return Err(Error::shape("score length", n, prior.len()));
    }
    Ok(())
}

/// Per-measurement score for a batch: the scorer's per-sample outputs averaged
/// over rows (eval mode).
pub fn score_batch(model: &DualModel, batch: &Matrix) -> Result<Vec<f64>> {
    if batch.cols() != model.n_measurements() {
        return Err(Error::shape("score_batch", model.n_measurements(), batch.cols()));
    }
    Ok(model.scorer.predict(batch)?.column_means())
}

/// Forward and backward pass of one batch through the full pipeline.
#[derive(Debug, Clone)]
pub struct PipelinePass {
    pub loss: f64,
    /// Batch score `s` before averaging.
    pub scores: Vec<f64>,
    /// Averaged score `s_bar` used to weight the reconstructor input.
    pub blended: Vec<f64>,
    pub grads: DualGradients,
}

pub fn loss_and_gradients<R: Rng + ?Sized>(
    model: &DualModel,
    batch: &Matrix,
    mask: &[f64],
    prior: &[f64],
    alpha: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<PipelinePass> {
    check_width(model, batch, mask, prior)?;
    let (b, n) = batch.shape();
    let (per_sample, scorer_tape) = model.scorer.forward(batch, train_mode, rng)?;
    let scores = per_sample.column_means();
    let blended: Vec<f64> = scores
        .iter()
        .zip(prior)
        .map(|(s, p)| alpha * s + (1.0 - alpha) * p)
        .collect();
    let weights: Vec<f64> = mask.iter().zip(&blended).map(|(m, s)| m * s).collect();
    let input = batch.scale_columns(&weights)?;
    let (output, recon_tape) = model.reconstructor.forward(&input, train_mode, rng)?;
    let loss = l2_loss(&output, batch)?;

    let (recon_grads, input_grad) = model
        .reconstructor
        .backward(&recon_tape, &l2_loss_grad(&output, batch)?)?;
    // d L / d s_bar_j = m_j * sum_i dZ_ij x_ij, then through the blend and the row mean.
    let mut blended_grad = vec![0.0; n];
    for i in 0..b {
        for ((g, dz), x) in blended_grad.iter_mut().zip(input_grad.row(i)).zip(batch.row(i)) {
            *g += dz * x;
        }
    }
    let per_sample_grad: Vec<f64> = blended_grad
        .iter()
        .zip(mask)
        .map(|(g, m)| alpha * g * m / b as f64)
        .collect();
    let scorer_out_grad = Matrix::from_fn(b, n, |_, j| per_sample_grad[j]);
    let (scorer_grads, _) = model.scorer.backward(&scorer_tape, &scorer_out_grad)?;

    Ok(PipelinePass {
        loss,
        scores,
        blended,
        grads: DualGradients {
            scorer: scorer_grads,
            reconstructor: recon_grads,
        },
    })
}

/// Eval-mode pipeline loss; the scalar whose gradient [`loss_and_gradients`] returns.
pub fn pipeline_loss(model: &DualModel, batch: &Matrix, mask: &[f64], prior: &[f64], alpha: f64) -> Result<f64> {
    check_width(model, batch, mask, prior)?;
    let scores = model.scorer.predict(batch)?.column_means();
    let weights: Vec<f64> = mask
        .iter()
        .zip(scores.iter().zip(prior))
        .map(|(m, (s, p))| m * (alpha * s + (1.0 - alpha) * p))
        .collect();
    let output = model.reconstructor.predict(&batch.scale_columns(&weights)?)?;
    l2_loss(&output, batch)
}

/// Reconstruction error `mean((R(x * mask * score) - x)^2)` in eval mode.
pub fn evaluate_mse(reconstructor: &Mlp, mask: &[f64], score: &[f64], data: &Matrix) -> Result<f64> {
    let n = data.cols();
    if mask.len() != n || score.len() != n {
        return Err(Error::shape(
            "evaluate_mse",
            n,
            format!("mask {} / score {}", mask.len(), score.len()),
        ));
    }
    if reconstructor.input_dim() != n || reconstructor.output_dim() != n {
        return Err(Error::shape(
            "evaluate_mse reconstructor",
            n,
            format!("{} -> {}", reconstructor.input_dim(), reconstructor.output_dim()),
        ));
    }
    let weights: Vec<f64> = mask.iter().zip(score).map(|(m, s)| m * s).collect();
    if data.rows() <= EVAL_CHUNK {
        let output = reconstructor.predict(&data.scale_columns(&weights)?)?;
        return l2_loss(&output, data);
    }
    let mut total = 0.0;
    let rows: Vec<usize> = (0..data.rows()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let part = data.select_rows(chunk);
        let output = reconstructor.predict(&part.scale_columns(&weights)?)?;
        total += l2_loss(&output, &part)? * chunk.len() as f64;
    }
    Ok(total / data.rows() as f64)
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    /// Mean of the per-batch training losses.
    pub loss: f64,
    /// Batch score `s` of the final batch; refreshes the step's averaged score.
    pub last_scores: Vec<f64>,
}

/// Labels attached to divergence errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpochLabel {
    pub step: usize,
    pub epoch: usize,
}

/// One pass over `data` in shuffled batches with one Adam step per batch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut DualModel,
    optimizer: &mut DualOptimizer,
    data: &Matrix,
    mask: &[f64],
    prior: &[f64],
    alpha: f64,
    batch_size: usize,
    label: EpochLabel,
    rng: &mut R,
) -> Result<EpochOutcome> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if data.rows() == 0 {
        return Err(Error::InvalidShape("empty training data".into()));
    }
    let mut order: Vec<usize> = (0..data.rows()).collect();
    order.shuffle(rng);
    let mut losses = Vec::with_capacity(order.len().div_ceil(batch_size));
    let mut last_scores = Vec::new();
    for rows in order.chunks(batch_size) {
        let batch = data.select_rows(rows);
        let pass = loss_and_gradients(model, &batch, mask, prior, alpha, true, rng)?;
        if !pass.loss.is_finite() {
            return Err(Error::Diverged {
                step: label.step,
                epoch: label.epoch,
                loss: pass.loss,
            });
        }
        adam_step(&mut model.scorer, &pass.grads.scorer, &mut optimizer.scorer)?;
        adam_step(&mut model.reconstructor, &pass.grads.reconstructor, &mut optimizer.reconstructor)?;
        losses.push(pass.loss);
        last_scores = pass.scores;
    }
    Ok(EpochOutcome {
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        last_scores,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::DenseLayer;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_model(n: usize, seed: u64) -> DualModel {
        DualModel::new(n, &ArchSpec::uniform(1, 6, 0.0), &mut rng(seed)).unwrap()
    }

    /// Scorer emits exactly 1.0 everywhere; reconstructor is the identity.
    fn identity_model(n: usize) -> DualModel {
        let scorer = Mlp::new(vec![DenseLayer::new(Matrix::zeros(n, n), vec![0.0; n], Activation::ScaledSigmoid2, 0.0).unwrap()])
            .unwrap();
        let reconstructor =
            Mlp::new(vec![DenseLayer::new(Matrix::identity(n), vec![0.0; n], Activation::Linear, 0.0).unwrap()]).unwrap();
        DualModel::from_parts(scorer, reconstructor, ArchSpec::uniform(1, n, 0.0)).unwrap()
    }

    fn data(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Matrix::from_fn(rows, cols, |_, _| r.random_range(0.1..1.0))
    }

    #[test]
    fn scores_are_bounded_and_neutral_at_zero_logits() {
        let x = data(7, 4, 1);
        assert_eq!(score_batch(&identity_model(4), &x).unwrap(), vec![1.0; 4]);
        let s = score_batch(&small_model(4, 2), &x).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 2.0));
        assert!(score_batch(&small_model(4, 2), &data(2, 3, 0)).is_err());
    }

    #[test]
    fn score_is_row_mean_of_per_sample_scores() {
        // One input, one output: logits chosen so 2*sigmoid gives 0.4 and 0.8.
        let logit = |y: f64| -((2.0 / y) - 1.0).ln();
        let scorer = Mlp::new(vec![DenseLayer::new(
            Matrix::new(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Activation::ScaledSigmoid2,
            0.0,
        )
        .unwrap()])
        .unwrap();
        let recon = Mlp::new(vec![DenseLayer::new(Matrix::identity(1), vec![0.0], Activation::Linear, 0.0).unwrap()]).unwrap();
        let model = DualModel::from_parts(scorer, recon, ArchSpec::uniform(1, 1, 0.0)).unwrap();
        let batch = Matrix::new(2, 1, vec![logit(0.4), logit(0.8)]).unwrap();
        let s = score_batch(&model, &batch).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identity_pipeline_has_zero_loss() {
        let mut model = identity_model(3);
        let mut opt = DualOptimizer::new(&model, 1e-3);
        let x = data(10, 3, 3);
        let first = train_epoch(&mut model, &mut opt, &x, &[1.0; 3], &[0.0; 3], 1.0, 4, EpochLabel::default(), &mut rng(0))
            .unwrap();
        assert_eq!(first.loss, 0.0);
    }

    #[test]
    fn zero_mask_loss_is_mean_square_of_targets() {
        let model = small_model(4, 5);
        let x = data(12, 4, 6);
        let recon_bias_free_output = model.reconstructor.predict(&Matrix::zeros(12, 4)).unwrap();
        let mut expected = 0.0;
        for i in 0..12 {
            for j in 0..4 {
                expected += (recon_bias_free_output.get(i, j) - x.get(i, j)).powi(2);
            }
        }
        expected /= 48.0;
        // Fresh biases are zero, so the reconstructor maps zeros to zeros.
        assert!(recon_bias_free_output.as_slice().iter().all(|&v| v == 0.0));
        let oracle = x.as_slice().iter().map(|v| v * v).sum::<f64>() / 48.0;
        assert!((expected - oracle).abs() < 1e-15);
        let loss = pipeline_loss(&model, &x, &[0.0; 4], &[0.5; 4], 0.5).unwrap();
        assert!((loss - oracle).abs() < 1e-15);
        assert_eq!(evaluate_mse(&model.reconstructor, &[0.0; 4], &[1.0; 4], &x).unwrap(), loss);
    }

    #[test]
    fn evaluate_matches_l2_loss_on_same_tensors() {
        let model = small_model(5, 7);
        let x = data(9, 5, 8);
        let mask = [1.0, 0.0, 0.5, 1.0, 1.0];
        let score = [0.3, 1.2, 0.9, 1.9, 0.01];
        let w: Vec<f64> = mask.iter().zip(&score).map(|(m, s)| m * s).collect();
        let direct = l2_loss(&model.reconstructor.predict(&x.scale_columns(&w).unwrap()).unwrap(), &x).unwrap();
        assert_eq!(evaluate_mse(&model.reconstructor, &mask, &score, &x).unwrap(), direct);
        assert!(evaluate_mse(&model.reconstructor, &mask[..4], &score, &x).is_err());
    }

    #[test]
    fn masked_out_channel_values_do_not_matter_for_reconstruction_input() {
        let model = small_model(4, 9);
        let x = data(6, 4, 10);
        let mask = [1.0, 0.0, 1.0, 1.0];
        let score = [0.7, 1.1, 0.4, 1.3];
        let mut permuted = x.clone();
        for i in 0..6 {
            permuted.set(i, 1, x.get(5 - i, 1));
        }
        let w: Vec<f64> = mask.iter().zip(&score).map(|(m, s)| m * s).collect();
        let a = model.reconstructor.predict(&x.scale_columns(&w).unwrap()).unwrap();
        let b = model.reconstructor.predict(&permuted.scale_columns(&w).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_the_eval_loss_value() {
        let model = small_model(4, 11);
        let x = data(5, 4, 12);
        let pass = loss_and_gradients(&model, &x, &[1.0, 0.5, 1.0, 0.0], &[0.2, 0.4, 0.6, 0.8], 0.75, false, &mut rng(0))
            .unwrap();
        let loss = pipeline_loss(&model, &x, &[1.0, 0.5, 1.0, 0.0], &[0.2, 0.4, 0.6, 0.8], 0.75).unwrap();
        assert_eq!(pass.loss, loss);
    }

    #[test]
    fn scorer_receives_no_gradient_when_alpha_is_zero() {
        let model = small_model(3, 13);
        let x = data(4, 3, 14);
        let pass = loss_and_gradients(&model, &x, &[1.0; 3], &[1.0; 3], 0.0, false, &mut rng(0)).unwrap();
        assert!(pass.grads.scorer.flatten().iter().all(|&g| g == 0.0));
        assert!(pass.grads.reconstructor.flatten().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut model = small_model(4, 15);
            let mut opt = DualOptimizer::new(&model, 1e-3);
            let x = data(30, 4, 16);
            let mut r = rng(17);
            (0..3)
                .map(|e| {
                    train_epoch(&mut model, &mut opt, &x, &[1.0; 4], &[0.0; 4], 1.0, 8, EpochLabel { step: 1, epoch: e }, &mut r)
                        .unwrap()
                        .loss
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
