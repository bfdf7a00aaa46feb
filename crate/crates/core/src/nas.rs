//! Greedy architecture search over layer counts, unit widths and dropout.
//!
//! The tuner keeps every trial it is told about, tracks the best successful one
//! and proposes the next architecture by nudging a single hyperparameter of
//! the best architecture to a neighbouring value. With probability
//! `exploration_prob` it instead resamples one hyperparameter uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_UNIT_CHOICES: [usize; 5] = [128, 256, 512, 1024, 2048];
pub const LAYER_CHOICES: [usize; 3] = [1, 2, 3];
pub const SARDU_DROPOUT_CHOICES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

/// Architecture of both networks. Hidden layer `i` uses `units[min(i, 1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub scorer_layers: usize,
    pub reconstructor_layers: usize,
    pub scorer_units: [usize; 2],
    pub reconstructor_units: [usize; 2],
    pub dropout: f64,
}

impl ArchSpec {
    /// Same hidden layout for both networks.
    pub fn uniform(layers: usize, units: usize, dropout: f64) -> Self {
        Self {
            scorer_layers: layers,
            reconstructor_layers: layers,
            scorer_units: [units; 2],
            reconstructor_units: [units; 2],
            dropout,
        }
    }

    pub fn scorer_hidden(&self) -> Vec<usize> {
        hidden(self.scorer_layers, self.scorer_units)
    }

    pub fn reconstructor_hidden(&self) -> Vec<usize> {
        hidden(self.reconstructor_layers, self.reconstructor_units)
    }
}

fn hidden(layers: usize, units: [usize; 2]) -> Vec<usize> {
    (0..layers).map(|i| units[i.min(1)]).collect()
}

/// Discrete choice sets the tuner searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layer_choices: Vec<usize>,
    pub unit_choices: Vec<usize>,
    pub dropout_choices: Vec<f64>,
    pub default_arch: ArchSpec,
}

impl SearchSpace {
    /// Layers in {1,2,3}, units in {128,...,2048}, dropout fixed at 0.
    pub fn prosub() -> Self {
        Self::with_units(DEFAULT_UNIT_CHOICES.to_vec(), vec![0.0]).expect("static space is valid")
    }

    /// As [`SearchSpace::prosub`] but dropout searched in {0,...,0.4}.
    pub fn sardu_nas() -> Self {
        Self::with_units(DEFAULT_UNIT_CHOICES.to_vec(), SARDU_DROPOUT_CHOICES.to_vec()).expect("static space is valid")
    }

    /// Space over custom unit and dropout choices. The cold-start default has
    /// two hidden layers per network at the second-largest unit choice and the
    /// dropout closest to 0.2 when dropout is searched, 0 otherwise.
    pub fn with_units(mut unit_choices: Vec<usize>, mut dropout_choices: Vec<f64>) -> Result<Self> {
        unit_choices.sort_unstable();
        unit_choices.dedup();
        dropout_choices.sort_by(f64::total_cmp);
        dropout_choices.dedup();
        if unit_choices.is_empty() || unit_choices[0] == 0 {
            return Err(Error::InvalidConfig("unit choices must be non-empty and positive".into()));
        }
        if dropout_choices.is_empty() || dropout_choices.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::InvalidConfig("dropout choices must be non-empty and in [0, 1)".into()));
        }
        let units = unit_choices[unit_choices.len().saturating_sub(2)];
        let dropout = if dropout_choices.len() == 1 {
            dropout_choices[0]
        } else {
            *dropout_choices
                .iter()
                .min_by(|a, b| (*a - 0.2).abs().total_cmp(&(*b - 0.2).abs()))
                .expect("non-empty")
        };
        Ok(Self {
            layer_choices: LAYER_CHOICES.to_vec(),
            unit_choices,
            dropout_choices,
            default_arch: ArchSpec::uniform(2, units, dropout),
        })
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        let layers_ok = self.layer_choices.contains(&arch.scorer_layers)
            && self.layer_choices.contains(&arch.reconstructor_layers);
        let units_ok = arch
            .scorer_units
            .iter()
            .chain(&arch.reconstructor_units)
            .all(|u| self.unit_choices.contains(u));
        let dropout_ok = self.dropout_choices.contains(&arch.dropout);
        if layers_ok && units_ok && dropout_ok {
            Ok(())
        } else {
            Err(Error::OutOfSpace(format!("{arch:?}")))
        }
    }

    /// Number of choices per searchable field, in [`Field`] order.
    fn field_sizes(&self) -> [usize; 7] {
        let (l, u, d) = (
            self.layer_choices.len(),
            self.unit_choices.len(),
            self.dropout_choices.len(),
        );
        [l, l, u, u, u, u, d]
    }
}

/// Searchable fields of an [`ArchSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    ScorerLayers,
    ReconstructorLayers,
    ScorerUnits(usize),
    ReconstructorUnits(usize),
    Dropout,
}

const FIELDS: [Field; 7] = [
    Field::ScorerLayers,
    Field::ReconstructorLayers,
    Field::ScorerUnits(0),
    Field::ScorerUnits(1),
    Field::ReconstructorUnits(0),
    Field::ReconstructorUnits(1),
    Field::Dropout,
];

impl Field {
    /// Position of the field's current value in its choice set.
    fn position(self, space: &SearchSpace, arch: &ArchSpec) -> usize {
        let find = |set: &[usize], v: usize| set.iter().position(|&x| x == v).expect("validated arch");
        match self {
            Field::ScorerLayers => find(&space.layer_choices, arch.scorer_layers),
            Field::ReconstructorLayers => find(&space.layer_choices, arch.reconstructor_layers),
            Field::ScorerUnits(i) => find(&space.unit_choices, arch.scorer_units[i]),
            Field::ReconstructorUnits(i) => find(&space.unit_choices, arch.reconstructor_units[i]),
            Field::Dropout => space
                .dropout_choices
                .iter()
                .position(|&d| d == arch.dropout)
                .expect("validated arch"),
        }
    }

    fn set(self, space: &SearchSpace, arch: &mut ArchSpec, position: usize) {
        match self {
            Field::ScorerLayers => arch.scorer_layers = space.layer_choices[position],
            Field::ReconstructorLayers => arch.reconstructor_layers = space.layer_choices[position],
            Field::ScorerUnits(i) => arch.scorer_units[i] = space.unit_choices[position],
            Field::ReconstructorUnits(i) => arch.reconstructor_units[i] = space.unit_choices[position],
            Field::Dropout => arch.dropout = space.dropout_choices[position],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One architecture trained for one step, with its cached loss curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub arch: ArchSpec,
    pub step: usize,
    #[serde(with = "curve_non_finite_as_null")]
    pub train_curve: Vec<f64>,
    #[serde(with = "curve_non_finite_as_null")]
    pub val_curve: Vec<f64>,
    /// Minimum validation loss; `+inf` for failed trials (serialized as null).
    #[serde(with = "non_finite_as_null")]
    pub objective: f64,
    pub status: TrialStatus,
}

impl Trial {
    /// A finished trial. Empty or non-finite validation curves mark it failed.
    pub fn completed(arch: ArchSpec, step: usize, train_curve: Vec<f64>, val_curve: Vec<f64>) -> Self {
        let finite = !val_curve.is_empty() && val_curve.iter().chain(&train_curve).all(|v| v.is_finite());
        if finite {
            let objective = val_curve.iter().copied().fold(f64::INFINITY, f64::min);
            Self {
                arch,
                step,
                train_curve,
                val_curve,
                objective,
                status: TrialStatus::Ok,
            }
        } else {
            Self::failed(arch, step, train_curve, val_curve)
        }
    }

    pub fn failed(arch: ArchSpec, step: usize, train_curve: Vec<f64>, val_curve: Vec<f64>) -> Self {
        Self {
            arch,
            step,
            train_curve,
            val_curve,
            objective: f64::INFINITY,
            status: TrialStatus::Failed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

mod non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Curves of diverged trials may hold NaN, which JSON cannot carry.
mod curve_non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mapped: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        mapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct GreedyTuner {
    space: SearchSpace,
    history: Vec<Trial>,
    best: Option<usize>,
    rng: ChaCha8Rng,
    exploration_prob: f64,
}

impl GreedyTuner {
    pub const DEFAULT_EXPLORATION: f64 = 0.25;

    pub fn new(space: SearchSpace, seed: u64, exploration_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&exploration_prob) {
            return Err(Error::InvalidConfig(format!(
                "exploration probability {exploration_prob} not in [0, 1]"
            )));
        }
        space.validate(&space.default_arch)?;
        Ok(Self {
            space,
            history: Vec::new(),
            best: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            exploration_prob,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn history(&self) -> &[Trial] {
        &self.history
    }

    /// Next architecture to train. Always inside the search space.
    pub fn propose_next(&mut self) -> ArchSpec {
        let Some(best) = self.best.map(|i| self.history[i].arch.clone()) else {
            return self.space.default_arch.clone();
        };
        if self.space.validate(&best).is_err() {
            // A warm-started architecture from outside the space.
            return self.space.default_arch.clone();
        }
        let sizes = self.space.field_sizes();
        let mutable: Vec<usize> = (0..FIELDS.len()).filter(|&f| sizes[f] > 1).collect();
        if mutable.is_empty() {
            return best;
        }
        let mut arch = best;
        let explore = self.rng.random::<f64>() < self.exploration_prob;
        let f = mutable[self.rng.random_range(0..mutable.len())];
        let field = FIELDS[f];
        let position = field.position(&self.space, &arch);
        let next = if explore {
            self.rng.random_range(0..sizes[f])
        } else if position == 0 {
            1
        } else if position + 1 == sizes[f] || self.rng.random::<bool>() {
            position - 1
        } else {
            position + 1
        };
        field.set(&self.space, &mut arch, next);
        arch
    }

    /// Appends a trial; it becomes best only if it succeeded with a strictly
    /// lower objective.
    pub fn record_trial(&mut self, trial: Trial) {
        let improves = trial.is_ok()
            && self
                .best
                .is_none_or(|b| trial.objective < self.history[b].objective);
        self.history.push(trial);
        if improves {
            self.best = Some(self.history.len() - 1);
        }
    }

    pub fn best_trial(&self) -> Result<&Trial> {
        self.best.map(|i| &self.history[i]).ok_or(Error::NoResult)
    }

    pub fn best_arch(&self) -> Result<&ArchSpec> {
        Ok(&self.best_trial()?.arch)
    }

    /// Best objective after each recorded trial (`+inf` until the first success).
    pub fn best_objective_series(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|t| {
                if t.is_ok() && t.objective < best {
                    best = t.objective;
                }
                best
            })
            .collect()
    }

    /// Trial history as JSON lines.
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for trial in &self.history {
            out.push_str(&serde_json::to_string(trial)?);
            out.push('\n');
        }
        Ok(out)
    }
}
