//! Max-99% normalization, either over all values or per measurement column.

use serde::{Deserialize, Serialize};

use super::MeasurementDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    GlobalMax99,
    PerMeasurementMax99,
}

/// Frozen divisors: one for global mode, one per measurement otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    pub divisors: Vec<f64>,
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
/// `percent` must be an integer in `1..=100`.
pub fn nearest_rank_percentile(values: &[f64], percent: usize) -> Option<f64> {
    if values.is_empty() || percent == 0 || percent > 100 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (percent * sorted.len()).div_ceil(100);
    Some(sorted[rank.max(1) - 1])
}

impl NormalizationSpec {
    /// Fits divisors on `train`; nothing else is read.
    pub fn fit(train: &MeasurementDataset, mode: NormalizationMode) -> Result<Self> {
        let divisors = match mode {
            NormalizationMode::GlobalMax99 => {
                vec![nearest_rank_percentile(train.samples.as_slice(), 99).expect("dataset is non-empty")]
            }
            NormalizationMode::PerMeasurementMax99 => (0..train.n_measurements())
                .map(|j| {
                    let column: Vec<f64> = (0..train.n_samples()).map(|i| train.samples.get(i, j)).collect();
                    nearest_rank_percentile(&column, 99).expect("dataset is non-empty")
                })
                .collect(),
        };
        if let Some(j) = divisors.iter().position(|&d| d <= 0.0) {
            return Err(Error::ZeroDivisor(j));
        }
        Ok(Self { mode, divisors })
    }

    pub fn divisor(&self, measurement: usize) -> f64 {
        match self.mode {
            NormalizationMode::GlobalMax99 => self.divisors[0],
            NormalizationMode::PerMeasurementMax99 => self.divisors[measurement],
        }
    }

    /// Divides by the frozen divisors. Applying the same spec to an already
    /// normalized dataset is a no-op.
    pub fn apply(&self, dataset: &MeasurementDataset) -> Result<MeasurementDataset> {
        match &dataset.normalization {
            Some(existing) if existing == self => return Ok(dataset.clone()),
            Some(_) => return Err(Error::AlreadyNormalized),
            None => {}
        }
        if self.mode == NormalizationMode::PerMeasurementMax99 && self.divisors.len() != dataset.n_measurements() {
            return Err(Error::shape(
                "normalization divisors",
                dataset.n_measurements(),
                self.divisors.len(),
            ));
        }
        let mut out = dataset.clone();
        let m = out.n_measurements();
        for i in 0..out.n_samples() {
            let row = out.samples.row_mut(i);
            for (j, v) in row.iter_mut().enumerate().take(m) {
                *v /= self.divisor(j);
            }
        }
        out.normalization = Some(self.clone());
        Ok(out)
    }

    /// Undoes [`NormalizationSpec::apply`] for a single row.
    pub fn denormalize_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= self.divisor(j);
        }
    }
}

/// Fits on `dataset` itself and applies.
pub fn normalize(dataset: &MeasurementDataset, mode: NormalizationMode) -> Result<(MeasurementDataset, NormalizationSpec)> {
    let spec = NormalizationSpec::fit(dataset, mode)?;
    Ok((spec.apply(dataset)?, spec))
}
