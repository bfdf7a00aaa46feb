//! Checkpoint directory: two network files plus a JSON manifest.
//!
//! ```text
//! <dir>/scorer.mlp          scorer (or selector) weights
//! <dir>/reconstructor.mlp   reconstructor weights
//! <dir>/checkpoint.json     mask, score, normalization, schedule position
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationSpec;
use crate::nas::ArchSpec;
use crate::nn::checkpoint::{load_mlp, save_mlp};
use crate::nn::{Matrix, Mlp};
use crate::{Error, Result};

use super::dual::evaluate_mse;

pub const SCORER_FILE: &str = "scorer.mlp";
pub const RECONSTRUCTOR_FILE: &str = "reconstructor.mlp";
pub const MANIFEST_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Prosub,
    Sardu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub target: usize,
    pub measurement_ids: Vec<String>,
    pub mask: Vec<f64>,
    pub score: Vec<f64>,
    pub selected: Vec<usize>,
    pub arch: ArchSpec,
    pub normalization: Option<NormalizationSpec>,
    /// Step reached within the schedule that produced this model.
    pub step: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub scorer: Mlp,
    pub reconstructor: Mlp,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mlp(&self.scorer, &dir.join(SCORER_FILE))?;
        save_mlp(&self.reconstructor, &dir.join(RECONSTRUCTOR_FILE))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&self.meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes)?;
        let scorer = load_mlp(&dir.join(SCORER_FILE))?;
        let reconstructor = load_mlp(&dir.join(RECONSTRUCTOR_FILE))?;
        let n = meta.mask.len();
        if meta.score.len() != n || reconstructor.input_dim() != n || reconstructor.output_dim() != n {
            return Err(Error::MalformedCheckpoint(format!(
                "{}: mask, score and reconstructor disagree on width {n}",
                dir.display()
            )));
        }
        Ok(Self {
            meta,
            scorer,
            reconstructor,
        })
    }

    /// Reconstruction error on already normalized samples.
    pub fn evaluate(&self, samples: &Matrix) -> Result<f64> {
        evaluate_mse(&self.reconstructor, &self.meta.mask, &self.meta.score, samples)
    }
}
