//! Mask lifecycle for recursive feature elimination.
//!
//! A run has `T` outer steps. Steps before the split step `T_1` only learn
//! scores; from `T_1` on, each step picks the `D_t` active measurements with the
//! lowest averaged score and ramps their mask entries from 1 to 0 over the
//! annealing window `E_d` (epochs `E_d ..= 2 E_d`).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Moving-average coefficient `(T - t) / (T - 1)`.
pub fn alpha(t: usize, total_steps: usize) -> Result<f64> {
    if total_steps < 2 {
        return Err(Error::InvalidSchedule(format!("alpha needs T >= 2, got {total_steps}")));
    }
    if t == 0 || t > total_steps {
        return Err(Error::InvalidSchedule(format!("step {t} outside 1..={total_steps}")));
    }
    Ok((total_steps - t) as f64 / (total_steps - 1) as f64)
}

/// Channel mask with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    values: Vec<f64>,
}

impl Mask {
    pub fn ones(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(format!("mask entry {i} = {} outside [0, 1]", values[i])));
        }
        Ok(Self { values })
    }

    /// Binary mask keeping exactly `keep`.
    pub fn from_selection(n: usize, keep: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; n];
        for &i in keep {
            if i >= n {
                return Err(Error::InvalidConfig(format!("index {i} out of range for {n} measurements")));
            }
            values[i] = 1.0;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries exactly equal to 1.
    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn zero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.values[i] == 1.0
    }

    /// Indices with mask value 1, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.is_active(i)).collect()
    }
}

/// Exponentially averaged per-measurement score `s̄_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEma {
    values: Vec<f64>,
    step: usize,
    total_steps: usize,
}

impl ScoreEma {
    /// `s̄_0 = 0`.
    pub fn new(n: usize, total_steps: usize) -> Self {
        Self {
            values: vec![0.0; n],
            step: 0,
            total_steps,
        }
    }

    /// Carries scores into a new schedule, restarting the step counter.
    pub fn restart(values: Vec<f64>, total_steps: usize) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "score".into(),
                index,
            });
        }
        Ok(Self {
            values,
            step: 0,
            total_steps,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// `alpha * s + (1 - alpha) * self`, without advancing the step.
    pub fn blend(&self, scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if scores.len() != self.values.len() {
            return Err(Error::shape("ScoreEma::blend", self.values.len(), scores.len()));
        }
        Ok(scores
            .iter()
            .zip(&self.values)
            .map(|(s, prior)| alpha * s + (1.0 - alpha) * prior)
            .collect())
    }

    /// Blends `scores` in at step `t`, which must follow the current step.
    pub fn update(&self, scores: &[f64], t: usize) -> Result<ScoreEma> {
        if t != self.step + 1 {
            return Err(Error::InvalidSchedule(format!(
                "score update at step {t} does not follow step {}",
                self.step
            )));
        }
        let a = alpha(t, self.total_steps)?;
        Ok(ScoreEma {
            values: self.blend(scores, a)?,
            step: t,
            total_steps: self.total_steps,
        })
    }

    /// Replaces the scores outright (the no-averaging ablation).
    pub fn replace(&self, scores: &[f64], t: usize) -> Result<ScoreEma> {
        if scores.len() != self.values.len() {
            return Err(Error::shape("ScoreEma::replace", self.values.len(), scores.len()));
        }
        if t != self.step + 1 || t > self.total_steps {
            return Err(Error::InvalidSchedule(format!("score replace at step {t} after {}", self.step)));
        }
        Ok(ScoreEma {
            values: scores.to_vec(),
            step: t,
            total_steps: self.total_steps,
        })
    }
}

/// Per-step removal counts: zero before `split_step`, then `(active - target)`
/// spread evenly over steps `split_step..=total_steps`, remainder to the
/// earliest steps.
pub fn removal_counts(active: usize, target: usize, total_steps: usize, split_step: usize) -> Result<Vec<usize>> {
    if target >= active {
        return Err(Error::InvalidSchedule(format!(
            "target {target} must be below the {active} active measurements"
        )));
    }
    if split_step == 0 || split_step > total_steps {
        return Err(Error::InvalidSchedule(format!(
            "split step {split_step} outside 1..={total_steps}"
        )));
    }
    let removing = active - target;
    let steps = total_steps - split_step + 1;
    let (base, remainder) = (removing / steps, removing % steps);
    Ok((1..=total_steps)
        .map(|t| {
            if t < split_step {
                0
            } else if t - split_step < remainder {
                base + 1
            } else {
                base
            }
        })
        .collect())
}

/// How the split step is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `1 < T_1 < T`.
    #[default]
    Standard,
    /// Continuation from a converged model: `1 <= T_1 < T`.
    WarmStart,
    /// Ablation removing everything at the last step: `T_1 == T`.
    SingleShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeSchedule {
    pub n_measurements: usize,
    /// Active measurements when the schedule starts.
    pub active_at_start: usize,
    pub target: usize,
    pub total_steps: usize,
    pub split_step: usize,
    pub removal_counts: Vec<usize>,
    pub epochs: usize,
    pub anneal_window: usize,
    pub kind: ScheduleKind,
}

impl RfeSchedule {
    pub fn new(
        n_measurements: usize,
        active_at_start: usize,
        target: usize,
        (split_step, total_steps): (usize, usize),
        epochs: usize,
        anneal_window: usize,
        kind: ScheduleKind,
    ) -> Result<Self> {
        if active_at_start > n_measurements {
            return Err(Error::InvalidSchedule(format!(
                "{active_at_start} active of {n_measurements} measurements"
            )));
        }
        if total_steps < 2 {
            return Err(Error::InvalidSchedule(format!("need T >= 2, got {total_steps}")));
        }
        let split_ok = match kind {
            ScheduleKind::Standard => 1 < split_step && split_step < total_steps,
            ScheduleKind::WarmStart => 1 <= split_step && split_step < total_steps,
            ScheduleKind::SingleShot => split_step == total_steps,
        };
        if !split_ok {
            return Err(Error::InvalidSchedule(format!(
                "split step {split_step} with T = {total_steps} not admissible for {kind:?}"
            )));
        }
        if anneal_window == 0 || 2 * anneal_window >= epochs {
            return Err(Error::InvalidSchedule(format!(
                "annealing window {anneal_window} must be in 1..E/2 for E = {epochs}"
            )));
        }
        let removal_counts = removal_counts(active_at_start, target, total_steps, split_step)?;
        Ok(Self {
            n_measurements,
            active_at_start,
            target,
            total_steps,
            split_step,
            removal_counts,
            epochs,
            anneal_window,
            kind,
        })
    }

    /// `D_t` for a 1-based step.
    pub fn removals_at(&self, t: usize) -> usize {
        self.removal_counts[t - 1]
    }
}

/// Measurements removed at one step, in selection order (lowest score first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalSet {
    pub step: usize,
    pub indices: Vec<usize>,
}

impl RemovalSet {
    pub fn empty(step: usize) -> Self {
        Self {
            step,
            indices: Vec::new(),
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
}

/// The `count` active measurements with the smallest scores. Ties go to the
/// lower index.
pub fn select_removals(scores: &ScoreEma, mask: &Mask, count: usize) -> Result<RemovalSet> {
    if scores.values().len() != mask.len() {
        return Err(Error::shape("select_removals", mask.len(), scores.values().len()));
    }
    let mut candidates = mask.active_indices();
    if count > candidates.len() {
        return Err(Error::InvalidSchedule(format!(
            "cannot remove {count} of {} active measurements",
            candidates.len()
        )));
    }
    let s = scores.values();
    candidates.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    candidates.truncate(count);
    Ok(RemovalSet {
        step: scores.step() + 1,
        indices: candidates,
    })
}

/// How removed measurements leave the mask during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    /// Linear ramp over `E_d` epochs.
    #[default]
    Progressive,
    /// Same trigger, no `1 / E_d` divisor: the entry drops to 0 one epoch after `E_d`.
    Instant,
}

/// Mask amount subtracted from removed entries at epoch `e` (1-based).
pub fn anneal_amount(epoch: usize, window: usize, mode: AnnealMode) -> f64 {
    if epoch < window {
        return 0.0;
    }
    let over = (epoch - window) as f64;
    match mode {
        AnnealMode::Progressive => over / window as f64,
        AnnealMode::Instant => over,
    }
}

/// Mask for epoch `e`: removed entries become `max(base - ramp, 0)`, all others
/// keep their base value.
pub fn anneal_mask(base: &Mask, removal: &RemovalSet, epoch: usize, window: usize) -> Mask {
    anneal_mask_with(base, removal, epoch, window, AnnealMode::Progressive)
}

pub fn anneal_mask_with(base: &Mask, removal: &RemovalSet, epoch: usize, window: usize, mode: AnnealMode) -> Mask {
    let amount = anneal_amount(epoch, window, mode);
    let mut values = base.values.clone();
    for &i in &removal.indices {
        values[i] = (values[i] - amount).max(0.0);
    }
    Mask { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ema_with(values: Vec<f64>, step: usize, total: usize) -> ScoreEma {
        ScoreEma {
            values,
            step,
            total_steps: total,
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(1, 8).unwrap(), 1.0);
        assert_eq!(alpha(8, 8).unwrap(), 0.0);
        assert_eq!(alpha(4, 8).unwrap(), 4.0 / 7.0);
        assert!(alpha(1, 1).is_err());
        assert!(alpha(0, 5).is_err());
        assert!(alpha(6, 5).is_err());
    }

    #[test]
    fn ema_examples() {
        let s1 = vec![0.3, 1.7, 0.9];
        let first = ScoreEma::new(3, 5).update(&s1, 1).unwrap();
        assert_eq!(first.values(), &s1[..]);

        let prior = ema_with(vec![0.4, 0.2, 1.1], 4, 5);
        let last = prior.update(&[1.9, 0.1, 0.5], 5).unwrap();
        assert_eq!(last.values(), prior.values());

        let mid = ema_with(vec![0.2], 1, 3).update(&[1.0], 2).unwrap();
        assert!((mid.values()[0] - 0.6).abs() < 1e-15);

        assert!(first.update(&[1.0, 1.0], 2).is_err());
        assert!(first.update(&s1, 3).is_err());
    }

    #[test]
    fn removal_count_examples() {
        assert_eq!(
            removal_counts(1344, 500, 8, 4).unwrap(),
            vec![0, 0, 0, 169, 169, 169, 169, 168]
        );
        assert_eq!(removal_counts(10, 9, 4, 4).unwrap(), vec![0, 0, 0, 1]);
        assert_eq!(removal_counts(8, 3, 6, 2).unwrap(), vec![0, 1, 1, 1, 1, 1]);
        assert!(removal_counts(10, 10, 4, 2).is_err());
        assert!(removal_counts(10, 3, 4, 5).is_err());
    }

    #[test]
    fn schedule_admissibility() {
        assert!(RfeSchedule::new(8, 8, 3, (2, 6), 60, 10, ScheduleKind::Standard).is_ok());
        assert!(RfeSchedule::new(8, 8, 3, (2, 2), 60, 10, ScheduleKind::Standard).is_err());
        assert!(RfeSchedule::new(8, 8, 3, (1, 6), 60, 10, ScheduleKind::Standard).is_err());
        assert!(RfeSchedule::new(8, 5, 3, (1, 5), 60, 10, ScheduleKind::WarmStart).is_ok());
        assert!(RfeSchedule::new(8, 8, 3, (6, 6), 60, 10, ScheduleKind::SingleShot).is_ok());
        assert!(RfeSchedule::new(8, 8, 3, (2, 6), 60, 30, ScheduleKind::Standard).is_err());
        let single = RfeSchedule::new(8, 8, 3, (6, 6), 60, 10, ScheduleKind::SingleShot).unwrap();
        assert_eq!(single.removal_counts, vec![0, 0, 0, 0, 0, 5]);
    }

    #[test]
    fn selection_examples() {
        let scores = ema_with(vec![0.9, 0.1, 0.5, 0.4], 1, 4);
        let all = Mask::ones(4);
        let mut picked = select_removals(&scores, &all, 2).unwrap().indices;
        picked.sort();
        assert_eq!(picked, vec![1, 3]);

        let partial = Mask::from_values(vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(select_removals(&scores, &partial, 2).unwrap().indices, vec![3, 2]);

        let flat = ema_with(vec![0.5; 4], 1, 4);
        assert_eq!(select_removals(&flat, &all, 2).unwrap().indices, vec![0, 1]);

        assert!(select_removals(&scores, &partial, 4).is_err());
    }

    #[test]
    fn tie_break_matches_exhaustive_checker() {
        // Every 4-length score vector over {0, 1} and every count: the selection
        // must be the lexicographically smallest (score, index) subset.
        for bits in 0u32..16 {
            let s: Vec<f64> = (0..4).map(|i| f64::from((bits >> i) & 1)).collect();
            let scores = ema_with(s.clone(), 1, 3);
            for count in 0..=4 {
                let got = select_removals(&scores, &Mask::ones(4), count).unwrap().indices;
                let mut keyed: Vec<(u32, usize)> = (0..4).map(|i| ((bits >> i) & 1, i)).collect();
                keyed.sort();
                let expected: Vec<usize> = keyed.iter().take(count).map(|&(_, i)| i).collect();
                assert_eq!(got, expected, "scores {s:?} count {count}");
            }
        }
    }

    #[test]
    fn anneal_examples() {
        let removal = RemovalSet { step: 1, indices: vec![0] };
        let base = Mask::ones(2);
        assert_eq!(anneal_mask(&base, &removal, 10, 20).values(), &[1.0, 1.0]);
        assert_eq!(anneal_mask(&base, &removal, 30, 20).values(), &[0.5, 1.0]);
        assert_eq!(anneal_mask(&base, &removal, 200, 20).values(), &[0.0, 1.0]);
        assert_eq!(anneal_mask(&base, &removal, 40, 20).values(), &[0.0, 1.0]);
        assert_eq!(anneal_mask(&base, &removal, 20, 20).values(), &[1.0, 1.0]);

        let instant = |e| anneal_mask_with(&base, &removal, e, 20, AnnealMode::Instant).values()[0];
        assert_eq!((instant(19), instant(20), instant(21)), (1.0, 1.0, 0.0));
    }
}
