//! Machine-readable run reports: JSON per run, CSV loss traces, selected indices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::stats::{mean, std_dev, wilcoxon_signed_rank, WilcoxonResult, MIN_PAIRS};
use crate::models::StepResult;
use crate::nas::Trial;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FoldStatus {
    Ok,
    Failed { reason: String },
    /// An earlier target failed, so the warm-start chain is broken.
    Skipped,
}

/// One of the seeds tried by best-of-five.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub seed: u64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub validation_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub status: FoldStatus,
    pub selected: Vec<usize>,
    /// Final per-measurement score (averaged score, or clamped selection weights).
    pub scores: Vec<f64>,
    /// Per-step masks, scores and loss curves.
    pub steps: Vec<StepResult>,
    pub trials: Vec<Trial>,
    pub initial_val_loss: Option<f64>,
    pub val_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub total_epochs: usize,
    pub max_train_jump: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub wall_clock_secs: f64,
}

impl FoldReport {
    pub fn empty(fold: usize, validation_subjects: Vec<String>, test_subjects: Vec<String>, status: FoldStatus) -> Self {
        Self {
            fold,
            validation_subjects,
            test_subjects,
            status,
            selected: Vec::new(),
            scores: Vec::new(),
            steps: Vec::new(),
            trials: Vec::new(),
            initial_val_loss: None,
            val_mse: None,
            test_mse: None,
            total_epochs: 0,
            max_train_jump: None,
            candidates: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn train_curve(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.train_curve.iter().copied()).collect()
    }
}

/// Results for one method, seed and target across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub target: usize,
    pub n_measurements: usize,
    pub measurement_ids: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    fn mean_of(&self, f: impl Fn(&FoldReport) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self.folds.iter().filter_map(f).collect();
        (!values.is_empty()).then(|| mean(&values))
    }

    pub fn mean_val_mse(&self) -> Option<f64> {
        self.mean_of(|f| f.val_mse)
    }

    pub fn mean_test_mse(&self) -> Option<f64> {
        self.mean_of(|f| f.test_mse)
    }

    /// Copy with wall-clock fields zeroed, for comparing numerics.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        r.folds.iter_mut().for_each(|f| f.wall_clock_secs = 0.0);
        r
    }
}

/// Largest epoch-to-epoch increase of a loss curve; 0 for monotone curves.
pub fn max_loss_jump(curve: &[f64]) -> Option<f64> {
    if curve.len() < 2 {
        return None;
    }
    Some(curve.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max))
}

pub fn run_dir(root: &Path, seed: u64, target: usize) -> PathBuf {
    root.join(format!("seed{seed}")).join(format!("M{target}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes, per report, `seed<S>/M<M>/` with `report.json`, `selected.txt`
/// (one fold per line), `loss_fold<F>.csv` (per step and epoch),
/// `trials_fold<F>.jsonl` and `trial_loss_fold<F>.csv`, plus a top-level
/// `summary.csv`.
pub fn emit_reports(reports: &[RunReport], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut summary = String::from("method,seed,target,fold,status,val_mse,test_mse,total_epochs,max_train_jump\n");
    for report in reports {
        let out = run_dir(dir, report.seed, report.target);
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let path = out.join("report.json");
        write(&path, serde_json::to_vec_pretty(report)?)?;
        written.push(path);

        let mut selected = String::new();
        for fold in &report.folds {
            let ids: Vec<String> = fold.selected.iter().map(usize::to_string).collect();
            writeln!(selected, "{}", ids.join(" ")).expect("string write");
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let status = match fold.status {
                FoldStatus::Ok => "ok",
                FoldStatus::Failed { .. } => "failed",
                FoldStatus::Skipped => "skipped",
            };
            writeln!(
                summary,
                "{},{},{},{},{status},{},{},{},{}",
                report.method.name(),
                report.seed,
                report.target,
                fold.fold,
                opt(fold.val_mse),
                opt(fold.test_mse),
                fold.total_epochs,
                opt(fold.max_train_jump)
            )
            .expect("string write");

            let mut losses = String::from("step,epoch,train_loss,val_loss\n");
            for step in &fold.steps {
                for (e, (tr, va)) in step.train_curve.iter().zip(&step.val_curve).enumerate() {
                    writeln!(losses, "{},{},{tr},{va}", step.step, e + 1).expect("string write");
                }
            }
            let path = out.join(format!("loss_fold{}.csv", fold.fold));
            write(&path, losses)?;
            written.push(path);

            if !fold.trials.is_empty() {
                let mut jsonl = String::new();
                let mut trial_losses = String::from("trial,step,epoch,train_loss,val_loss\n");
                for (i, trial) in fold.trials.iter().enumerate() {
                    jsonl.push_str(&serde_json::to_string(trial)?);
                    jsonl.push('\n');
                    for (e, (tr, va)) in trial.train_curve.iter().zip(&trial.val_curve).enumerate() {
                        writeln!(trial_losses, "{i},{},{},{tr},{va}", trial.step, e + 1).expect("string write");
                    }
                }
                let path = out.join(format!("trials_fold{}.jsonl", fold.fold));
                write(&path, jsonl)?;
                written.push(path);
                let path = out.join(format!("trial_loss_fold{}.csv", fold.fold));
                write(&path, trial_losses)?;
                written.push(path);
            }
        }
        let path = out.join("selected.txt");
        write(&path, selected)?;
        written.push(path);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("summary.csv");
    write(&path, summary)?;
    written.push(path);
    Ok(written)
}

/// Reads every `seed*/M*/report.json` below `dir`, sorted by seed then target.
pub fn load_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        Ok(entries)
    };
    let mut reports = Vec::new();
    for seed_dir in read_dir(dir)? {
        if !seed_dir.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed")) {
            continue;
        }
        for run in read_dir(&seed_dir)? {
            let path = run.join("report.json");
            if path.is_file() {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                reports.push(serde_json::from_slice::<RunReport>(&bytes)?);
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::NoResult);
    }
    reports.sort_by_key(|r| (r.seed, std::cmp::Reverse(r.target)));
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub target: usize,
    pub pairs: usize,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    /// One-sided p-value for `a < b`; absent with too few pairs or all ties.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Test over all `(target, fold)` pairs.
    pub pooled: Option<WilcoxonResult>,
}

/// Test MSE per `(target, fold)`, averaged over seeds.
fn paired_test_mse(reports: &[RunReport]) -> BTreeMap<(usize, usize), f64> {
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in reports {
        for f in &r.folds {
            if let Some(mse) = f.test_mse {
                let e = sums.entry((r.target, f.fold)).or_default();
                e.0 += mse;
                e.1 += 1;
            }
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Pairs test MSE of two runs by target and fold and tests whether `a` is lower.
pub fn compare(a: &[RunReport], b: &[RunReport]) -> Result<Comparison> {
    let (pa, pb) = (paired_test_mse(a), paired_test_mse(b));
    let keys: Vec<(usize, usize)> = pa.keys().filter(|k| pb.contains_key(k)).copied().collect();
    if keys.is_empty() {
        return Err(Error::NoResult);
    }
    let mut targets: Vec<usize> = keys.iter().map(|k| k.0).collect();
    targets.dedup();
    targets.sort_unstable_by(|x, y| y.cmp(x));
    let test = |xa: &[f64], xb: &[f64]| -> Option<WilcoxonResult> {
        (xa.len() >= MIN_PAIRS).then(|| wilcoxon_signed_rank(xa, xb).ok()).flatten()
    };
    let mut rows = Vec::new();
    for target in targets {
        let ks: Vec<_> = keys.iter().filter(|k| k.0 == target).collect();
        let xa: Vec<f64> = ks.iter().map(|k| pa[k]).collect();
        let xb: Vec<f64> = ks.iter().map(|k| pb[k]).collect();
        rows.push(ComparisonRow {
            target,
            pairs: xa.len(),
            mean_a: mean(&xa),
            std_a: std_dev(&xa),
            mean_b: mean(&xb),
            std_b: std_dev(&xb),
            p_value: test(&xa, &xb).map(|r| r.p_value),
        });
    }
    let xa: Vec<f64> = keys.iter().map(|k| pa[k]).collect();
    let xb: Vec<f64> = keys.iter().map(|k| pb[k]).collect();
    Ok(Comparison {
        rows,
        pooled: test(&xa, &xb),
    })
}

impl Comparison {
    /// Plain-text summary table.
    pub fn render(&self, label_a: &str, label_b: &str) -> String {
        let mut out = format!("{:>6} {:>5} {:>22} {:>22} {:>10}\n", "M", "pairs", label_a, label_b, "p(a<b)");
        for r in &self.rows {
            let p = r.p_value.map_or("n/a".to_string(), |p| format!("{p:.4}"));
            writeln!(
                out,
                "{:>6} {:>5} {:>22} {:>22} {:>10}",
                r.target,
                r.pairs,
                format!("{:.6} ± {:.6}", r.mean_a, r.std_a),
                format!("{:.6} ± {:.6}", r.mean_b, r.std_b),
                p
            )
            .expect("string write");
        }
        match &self.pooled {
            Some(w) => writeln!(out, "pooled: n = {}, W+ = {}, p = {:.6}{}", w.n, w.w_plus, w.p_value, if w.exact { " (exact)" } else { "" }),
            None => writeln!(out, "pooled: not enough non-tied pairs"),
        }
        .expect("string write");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(seed: u64, target: usize, test: &[f64]) -> RunReport {
        RunReport {
            method: Method::Sardu,
            seed,
            target,
            n_measurements: 8,
            measurement_ids: (0..8).map(|i| i.to_string()).collect(),
            folds: test
                .iter()
                .enumerate()
                .map(|(f, &t)| FoldReport {
                    selected: (0..target).collect(),
                    test_mse: Some(t),
                    val_mse: Some(t),
                    ..FoldReport::empty(f, vec![], vec![], FoldStatus::Ok)
                })
                .collect(),
            wall_clock_secs: 1.5,
        }
    }

    #[test]
    fn jump_is_largest_increase() {
        assert_eq!(max_loss_jump(&[3.0, 2.0, 2.5, 1.0, 1.7]), Some(0.7));
        assert_eq!(max_loss_jump(&[3.0, 2.0, 1.0]), Some(0.0));
        assert_eq!(max_loss_jump(&[1.0]), None);
    }

    #[test]
    fn emitted_reports_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report(1, 4, &[0.5, 0.6]), report(1, 2, &[0.7, 0.8])];
        emit_reports(&reports, dir.path()).unwrap();
        assert_eq!(load_reports(dir.path()).unwrap(), reports);
        let selected = fs::read_to_string(run_dir(dir.path(), 1, 4).join("selected.txt")).unwrap();
        assert_eq!(selected, "0 1 2 3\n0 1 2 3\n");
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 5);
        assert!(load_reports(&dir.path().join("seed1/M4")).is_err());
    }

    #[test]
    fn comparison_pairs_by_target_and_fold() {
        let a = vec![report(0, 3, &[0.1, 0.2, 0.3, 0.4, 0.5])];
        let b = vec![report(0, 3, &[0.2, 0.3, 0.4, 0.5, 0.6]), report(1, 3, &[0.4, 0.5, 0.6, 0.7, 0.8])];
        let c = compare(&a, &b).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].pairs, 5);
        assert!((c.rows[0].mean_b - 0.5).abs() < 1e-12);
        assert_eq!(c.rows[0].p_value, Some(1.0 / 32.0));
        assert!(c.render("a", "b").contains("p = 0.031250"));
    }

    #[test]
    fn timing_is_excluded_from_numerics() {
        let mut a = report(0, 3, &[0.1]);
        let b = a.clone();
        a.wall_clock_secs = 99.0;
        a.folds[0].wall_clock_secs = 3.0;
        assert_ne!(a, b);
        assert_eq!(a.without_timing(), b.without_timing());
    }
}
