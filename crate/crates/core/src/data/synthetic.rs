//! Desk-scale stand-in for an oversampled acquisition.
//!
//! Latent `l` of a sample is a two-compartment decay
//! `S0 (f e^{-tau_l r1} + (1-f) e^{-tau_l r2})` at `tau_l = (l + 1) / k`,
//! where `S0`, `f`, `r1`, `r2` are drawn per sample, so the latents are one
//! tissue seen at `k` sampling points. Every measurement is a fixed linear combination of the
//! latents plus Gaussian noise. The first `k` measurements are the pure latents,
//! so that subset reconstructs everything exactly when there is no noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MeasurementDataset;
use crate::nn::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyPlan {
    /// Measurement `j` is `gain_j` times latent `j mod k`; `gain_j = 1` for `j < k`.
    Duplicates,
    /// Measurement `j >= k` is a random convex combination of all latents.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_measurements: usize,
    pub latent_dim: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_plan")]
    pub plan: RedundancyPlan,
    #[serde(default = "default_subjects")]
    pub n_subjects: usize,
    /// Range of the per-compartment decay rates.
    #[serde(default = "default_rates")]
    pub rate_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

fn default_plan() -> RedundancyPlan {
    RedundancyPlan::Duplicates
}

fn default_subjects() -> usize {
    5
}

fn default_rates() -> [f64; 2] {
    [0.5, 5.0]
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, n_measurements: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n_measurements,
            latent_dim,
            noise_std: 0.0,
            plan: default_plan(),
            n_subjects: default_subjects(),
            rate_range: default_rates(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_measurements < 2 {
            return bad(format!("need N >= 2, got {}", self.n_measurements));
        }
        if self.latent_dim == 0 || self.latent_dim > self.n_measurements {
            return bad(format!("latent dim {} must be in 1..=N", self.latent_dim));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be finite and >= 0", self.noise_std));
        }
        if self.n_subjects == 0 || self.n_subjects > self.n_samples {
            return bad(format!("{} subjects for {} samples", self.n_subjects, self.n_samples));
        }
        let [lo, hi] = self.rate_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("rate range {:?} must satisfy 0 < lo <= hi", self.rate_range));
        }
        Ok(())
    }

    /// Measurements that reconstruct all others exactly without noise.
    pub fn designated_subset(&self) -> Vec<usize> {
        (0..self.latent_dim).collect()
    }

    /// `k x N` mixing matrix from latents to measurements.
    pub fn mixing_matrix(&self) -> Matrix {
        let k = self.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d69_7869_6e67);
        let mut mixing = Matrix::zeros(k, self.n_measurements);
        for j in 0..self.n_measurements {
            if j < k {
                mixing.set(j, j, 1.0);
                continue;
            }
            match self.plan {
                RedundancyPlan::Duplicates => mixing.set(j % k, j, rng.random_range(0.5..1.5)),
                RedundancyPlan::Mixture => {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let total: f64 = w.iter().sum();
                    for (l, wl) in w.iter().enumerate() {
                        mixing.set(l, j, wl / total);
                    }
                }
            }
        }
        mixing
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MeasurementDataset> {
    spec.validate()?;
    let k = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.rate_range;
    let mut latents = Matrix::zeros(spec.n_samples, k);
    let rate = |rng: &mut ChaCha8Rng| if lo < hi { rng.random_range(lo..hi) } else { lo };
    for i in 0..spec.n_samples {
        let s0 = rng.random_range(0.8..1.2);
        let f = rng.random_range(0.2..0.8);
        let (r1, r2) = (rate(&mut rng), rate(&mut rng));
        for l in 0..k {
            let tau = (l + 1) as f64 / k as f64;
            latents.set(i, l, s0 * (f * (-tau * r1).exp() + (1.0 - f) * (-tau * r2).exp()));
        }
    }
    let mut samples = latents.matmul(&spec.mixing_matrix())?;
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        samples.as_mut_slice().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let subject_ids = (0..spec.n_samples)
        .map(|i| format!("sub{}", i * spec.n_subjects / spec.n_samples))
        .collect();
    let measurement_ids = (0..spec.n_measurements).map(|j| format!("m{j}")).collect();
    MeasurementDataset::new(samples, measurement_ids, subject_ids)
}
