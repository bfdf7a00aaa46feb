//! Measurement datasets: ingestion, normalization, subject-wise folds and a
//! synthetic oversampled-signal generator.

mod dataset;
mod folds;
pub mod io;
mod normalize;
mod oracle;
mod synthetic;

pub use dataset::MeasurementDataset;
pub use folds::{make_folds, CvSplit};
pub use io::{load_dataset, save_dataset};
pub use normalize::{nearest_rank_percentile, normalize, NormalizationMode, NormalizationSpec};
pub use oracle::{exhaustive_subset_errors, subset_reconstruction_mse, SubsetError};
pub use synthetic::{generate_synthetic, RedundancyPlan, SyntheticSpec};
