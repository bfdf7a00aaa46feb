use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{NormalizationMode, SyntheticSpec};
use crate::nas::{SearchSpace, DEFAULT_UNIT_CHOICES, SARDU_DROPOUT_CHOICES};
use crate::subsample::{AnnealMode, RfeSchedule, ScheduleKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Prosub,
    ProsubNoNas,
    Sardu,
    SarduBof,
    SarduNas,
}

impl Method {
    pub fn is_prosub(self) -> bool {
        matches!(self, Method::Prosub | Method::ProsubNoNas)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Prosub => "prosub",
            Method::ProsubNoNas => "prosub-no-nas",
            Method::Sardu => "sardu",
            Method::SarduBof => "sardu-bof",
            Method::SarduNas => "sardu-nas",
        }
    }

    /// Scores are scale sensitive per channel for the dual network; the
    /// baseline keeps one global divisor.
    pub fn default_normalization(self) -> NormalizationMode {
        if self.is_prosub() {
            NormalizationMode::PerMeasurementMax99
        } else {
            NormalizationMode::GlobalMax99
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "prosub" => Ok(Method::Prosub),
            "prosub-no-nas" => Ok(Method::ProsubNoNas),
            "sardu" => Ok(Method::Sardu),
            "sardu-bof" => Ok(Method::SarduBof),
            "sardu-nas" => Ok(Method::SarduNas),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Switches for the subsampling ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub anneal: AnnealMode,
    pub average_scores: bool,
    /// Remove everything at the last step (`T_1 = T`).
    pub single_shot: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            anneal: AnnealMode::Progressive,
            average_scores: true,
            single_shot: false,
        }
    }
}

fn default_first_stage() -> (usize, usize) {
    (4, 8)
}
fn default_later_stages() -> (usize, usize) {
    (1, 5)
}
fn default_epochs() -> usize {
    200
}
fn default_anneal_window() -> usize {
    20
}
fn default_batch() -> usize {
    1500
}
fn default_lr() -> f64 {
    1e-3
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_folds() -> usize {
    1
}
fn default_units() -> Vec<usize> {
    DEFAULT_UNIT_CHOICES.to_vec()
}
fn default_exploration() -> f64 {
    crate::nas::GreedyTuner::DEFAULT_EXPLORATION
}
fn default_nas_trials() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub method: Method,
    /// Strictly descending selection sizes.
    pub m_schedule: Vec<usize>,
    /// `(T_1, T)` of the first target.
    #[serde(default = "default_first_stage")]
    pub first_stage: (usize, usize),
    /// `(T_1, T)` of each warm-started later target.
    #[serde(default = "default_later_stages")]
    pub later_stages: (usize, usize),
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_anneal_window")]
    pub anneal_window: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_units")]
    pub unit_choices: Vec<usize>,
    #[serde(default = "default_exploration")]
    pub exploration: f64,
    /// Architectures tried per target by the searched baseline.
    #[serde(default = "default_nas_trials")]
    pub nas_trials: usize,
    #[serde(default)]
    pub ablation: Ablation,
    /// Overrides the method's default normalization.
    #[serde(default)]
    pub normalization: Option<NormalizationMode>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with every default filled in.
    pub fn new(data: DataSource, method: Method, m_schedule: Vec<usize>) -> Self {
        Self {
            data,
            method,
            m_schedule,
            first_stage: default_first_stage(),
            later_stages: default_later_stages(),
            epochs: default_epochs(),
            anneal_window: default_anneal_window(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seeds: default_seeds(),
            folds: default_folds(),
            unit_choices: default_units(),
            exploration: default_exploration(),
            nas_trials: default_nas_trials(),
            ablation: Ablation::default(),
            normalization: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate_static()?;
        Ok(config)
    }

    pub fn normalization_mode(&self) -> NormalizationMode {
        self.normalization.unwrap_or(self.method.default_normalization())
    }

    /// Search space for the configured method and unit choices.
    pub fn search_space(&self) -> Result<SearchSpace> {
        let dropouts = match self.method {
            Method::Sardu | Method::SarduBof | Method::SarduNas => SARDU_DROPOUT_CHOICES.to_vec(),
            Method::Prosub | Method::ProsubNoNas => vec![0.0],
        };
        SearchSpace::with_units(self.unit_choices.clone(), dropouts)
    }

    /// Checks that do not need the dataset.
    pub fn validate_static(&self) -> Result<()> {
        if self.m_schedule.is_empty() {
            return Err(Error::InvalidConfig("empty M schedule".into()));
        }
        if self.m_schedule.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "M schedule {:?} must be strictly descending",
                self.m_schedule
            )));
        }
        if self.m_schedule.contains(&0) {
            return Err(Error::InvalidConfig("targets must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds configured".into()));
        }
        if self.folds == 0 {
            return Err(Error::InvalidConfig("need at least one fold".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
        }
        if self.anneal_window == 0 || 2 * self.anneal_window >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "annealing window {} must be in 1..E/2 for E = {}",
                self.anneal_window, self.epochs
            )));
        }
        if self.method == Method::SarduNas && self.nas_trials == 0 {
            return Err(Error::InvalidConfig("searched baseline needs at least one trial".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::InvalidConfig(format!("exploration {} not in [0, 1]", self.exploration)));
        }
        self.search_space()?;
        Ok(())
    }

    /// Full validation against the dataset width.
    pub fn validate(&self, n_measurements: usize) -> Result<()> {
        self.validate_static()?;
        if self.m_schedule[0] >= n_measurements {
            return Err(Error::InvalidConfig(format!(
                "target {} must be below N = {n_measurements}",
                self.m_schedule[0]
            )));
        }
        if self.method.is_prosub() {
            let mut active = n_measurements;
            for (stage, &target) in self.m_schedule.iter().enumerate() {
                self.stage_schedule(n_measurements, active, target, stage)
                    .map_err(|e| Error::InvalidConfig(format!("target {target}: {e}")))?;
                active = target;
            }
        }
        Ok(())
    }

    /// Removal schedule for stage `stage` of the target chain, which starts
    /// from `active` measurements.
    pub fn stage_schedule(&self, n: usize, active: usize, target: usize, stage: usize) -> Result<RfeSchedule> {
        let (split, total) = if stage == 0 {
            self.first_stage
        } else {
            self.later_stages
        };
        let (split, kind) = if self.ablation.single_shot {
            (total, ScheduleKind::SingleShot)
        } else if stage == 0 {
            (split, ScheduleKind::Standard)
        } else {
            (split, ScheduleKind::WarmStart)
        };
        RfeSchedule::new(n, active, target, (split, total), self.epochs, self.anneal_window, kind)
    }
}
