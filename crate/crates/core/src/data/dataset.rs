use serde::{Deserialize, Serialize};

use super::NormalizationSpec;
use crate::nn::Matrix;
use crate::{Error, Result};

/// `n x N` samples-by-measurements matrix with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDataset {
    pub samples: Matrix,
    pub measurement_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    pub normalization: Option<NormalizationSpec>,
}

impl MeasurementDataset {
    pub fn new(samples: Matrix, measurement_ids: Vec<String>, subject_ids: Vec<String>) -> Result<Self> {
        let (n, m) = samples.shape();
        if n == 0 {
            return Err(Error::InvalidShape("dataset needs at least one sample".into()));
        }
        if m < 2 {
            return Err(Error::InvalidShape("dataset needs at least two measurements".into()));
        }
        if measurement_ids.len() != m {
            return Err(Error::shape("measurement ids", m, measurement_ids.len()));
        }
        if subject_ids.len() != n {
            return Err(Error::shape("subject ids", n, subject_ids.len()));
        }
        if subject_ids.iter().any(String::is_empty) {
            return Err(Error::InvalidConfig("empty subject label".into()));
        }
        if let Some(index) = samples.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "dataset".into(),
                index,
            });
        }
        Ok(Self {
            samples,
            measurement_ids,
            subject_ids,
            normalization: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn n_measurements(&self) -> usize {
        self.samples.cols()
    }

    /// Distinct subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.subject_ids {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }

    /// Rows belonging to any of `subjects`, in original order.
    pub fn restrict_to(&self, subjects: &[String]) -> Result<MeasurementDataset> {
        let rows: Vec<usize> = (0..self.n_samples())
            .filter(|&i| subjects.contains(&self.subject_ids[i]))
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidConfig(format!("no samples for subjects {subjects:?}")));
        }
        Ok(MeasurementDataset {
            samples: self.samples.select_rows(&rows),
            measurement_ids: self.measurement_ids.clone(),
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            normalization: self.normalization.clone(),
        })
    }
}
