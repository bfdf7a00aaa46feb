//! Least-squares subset oracle: how well a set of measurement columns linearly
//! reconstructs every column.

use nalgebra::DMatrix;

use crate::nn::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetError {
    pub subset: Vec<usize>,
    pub mse: f64,
}

/// Mean squared residual of the least-squares fit of all columns of `samples`
/// from the columns in `subset` (no intercept).
pub fn subset_reconstruction_mse(samples: &Matrix, subset: &[usize]) -> Result<f64> {
    let (n, m) = samples.shape();
    if subset.is_empty() {
        return Ok(samples.as_slice().iter().map(|v| v * v).sum::<f64>() / (n * m) as f64);
    }
    if let Some(&j) = subset.iter().find(|&&j| j >= m) {
        return Err(Error::InvalidConfig(format!("subset index {j} out of range for {m} measurements")));
    }
    let design = DMatrix::from_fn(n, subset.len(), |i, c| samples.get(i, subset[c]));
    let target = DMatrix::from_row_slice(n, m, samples.as_slice());
    let svd = design.clone().svd(true, true);
    let coefficients = svd
        .solve(&target, 1e-12)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let residual = design * coefficients - target;
    Ok(residual.norm_squared() / (n * m) as f64)
}

/// Every `k`-subset with its oracle error, best first (ties by subset order).
pub fn exhaustive_subset_errors(samples: &Matrix, k: usize) -> Result<Vec<SubsetError>> {
    let m = samples.cols();
    if k == 0 || k > m || m > 24 {
        return Err(Error::InvalidConfig(format!("exhaustive search over C({m}, {k}) refused")));
    }
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        out.push(SubsetError {
            subset: subset.clone(),
            mse: subset_reconstruction_mse(samples, &subset)?,
        });
        // Next combination in lexicographic order.
        let Some(i) = (0..k).rev().find(|&i| subset[i] < m - k + i) else {
            break;
        };
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    out.sort_by(|a, b| a.mse.total_cmp(&b.mse).then_with(|| a.subset.cmp(&b.subset)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_copy_has_zero_error() {
        let x = Matrix::from_fn(20, 3, |i, j| match j {
            0 => i as f64,
            1 => (i as f64).sin(),
            _ => 2.0 * i as f64,
        });
        assert!(subset_reconstruction_mse(&x, &[0, 1]).unwrap() < 1e-24);
        assert!(subset_reconstruction_mse(&x, &[0, 2]).unwrap() > 1e-3);
        assert!(subset_reconstruction_mse(&x, &[5]).is_err());
        let empty = subset_reconstruction_mse(&x, &[]).unwrap();
        let manual = x.as_slice().iter().map(|v| v * v).sum::<f64>() / 60.0;
        assert_eq!(empty, manual);
    }

    #[test]
    fn enumerates_all_combinations() {
        let x = Matrix::from_fn(10, 6, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let all = exhaustive_subset_errors(&x, 3).unwrap();
        assert_eq!(all.len(), 20);
        let mut subsets: Vec<_> = all.iter().map(|e| e.subset.clone()).collect();
        subsets.sort();
        subsets.dedup();
        assert_eq!(subsets.len(), 20);
        assert!(all.windows(2).all(|w| w[0].mse <= w[1].mse));
    }
}
