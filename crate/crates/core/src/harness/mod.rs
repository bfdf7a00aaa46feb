//! Experiment runner: sequential warm-started targets, baselines, metrics,
//! paired statistics and reports.

mod config;
mod report;
mod runner;
mod stats;

pub use config::{Ablation, DataSource, ExperimentConfig, Method};
pub use report::{
    compare, emit_reports, load_reports, max_loss_jump, run_dir, Candidate, Comparison, ComparisonRow, FoldReport,
    FoldStatus, RunReport,
};
pub use runner::{
    best_of_five, evaluate_checkpoint, load_source, pick_best, prepare_folds, run_on_dataset, run_sequential,
    thread_count, PreparedFold, BEST_OF, THREADS_ENV,
};
pub use stats::{average_ranks, mean, std_dev, wilcoxon_one_sided, wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT, MIN_PAIRS};
