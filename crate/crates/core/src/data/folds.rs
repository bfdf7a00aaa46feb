use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Disjoint subject partition for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

/// Fold `f` validates on subject `f` and tests on subject `f + 1` (cyclically);
/// all other subjects train.
pub fn make_folds(subjects: &[String], n_folds: usize) -> Result<Vec<CvSplit>> {
    let mut distinct: Vec<String> = Vec::new();
    for s in subjects {
        if !distinct.contains(s) {
            distinct.push(s.clone());
        }
    }
    let s = distinct.len();
    if s < 3 {
        return Err(Error::TooFewSubjects { needed: 3, found: s });
    }
    if n_folds == 0 || n_folds > s {
        return Err(Error::InvalidConfig(format!("{n_folds} folds requested for {s} subjects")));
    }
    Ok((0..n_folds)
        .map(|f| {
            let val = f;
            let test = (f + 1) % s;
            CvSplit {
                train_subjects: (0..s)
                    .filter(|&i| i != val && i != test)
                    .map(|i| distinct[i].clone())
                    .collect(),
                validation_subjects: vec![distinct[val].clone()],
                test_subjects: vec![distinct[test].clone()],
            }
        })
        .collect())
}
