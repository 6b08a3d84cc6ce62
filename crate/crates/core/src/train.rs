//! Pieces shared by the two estimators' training loops.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardization {
    pub means: Vec<f64>,
    /// Constant columns get scale 1.
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &Matrix) -> Self {
        let stds = x
            .column_stds()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            means: x.column_means(),
            stds,
        }
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            means: alloc::vec![0.0; cols],
            stds: alloc::vec![1.0; cols],
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.means.len() {
            return Err(Error::shape(alloc::format!(
                "expected {} columns, got {}",
                self.means.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }
}

/// Outcome of one restart.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RestartRecord {
    pub index: usize,
    pub seed: u64,
    /// `None` when the restart diverged.
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
    pub steps: usize,
}

/// `count` row indices drawn uniformly with replacement from `0..rows`.
pub fn sample_with_replacement<R: RngCore + ?Sized>(rng: &mut R, rows: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng::index_below(rng, rows)).collect()
}

/// Consecutive evaluation chunks of `size` rows; leftover rows join the last chunk.
pub fn evaluation_chunks(rows: usize, size: usize) -> Vec<core::ops::Range<usize>> {
    let size = size.max(1);
    let count = (rows / size).max(1);
    (0..count)
        .map(|c| {
            let end = if c + 1 == count { rows } else { (c + 1) * size };
            c * size..end
        })
        .collect()
}

/// Index of the lowest validation loss; ties go to the earliest restart.
pub fn select_best(records: &[RestartRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = r.validation_loss {
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_all_rows() {
        assert_eq!(evaluation_chunks(1000, 200).len(), 5);
        let c = evaluation_chunks(1000, 300);
        assert_eq!(c, alloc::vec![0..300, 300..600, 600..1000]);
        assert_eq!(evaluation_chunks(50, 200), alloc::vec![0..50]);
    }

    #[test]
    fn best_restart_prefers_lowest_then_earliest() {
        let rec = |i, v| RestartRecord {
            index: i,
            seed: 0,
            train_loss: v,
            validation_loss: v,
            steps: 0,
        };
        let rs = [rec(0, Some(2.0)), rec(1, None), rec(2, Some(1.0)), rec(3, Some(1.0))];
        assert_eq!(select_best(&rs), Some(2));
        assert_eq!(select_best(&[rec(0, None)]), None);
    }

    #[test]
    fn standardization_handles_constant_columns() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let s = Standardization::fit(&x);
        let z = s.apply(&x).unwrap();
        assert_eq!(z.col(1), alloc::vec![0.0, 0.0]);
        assert!((z[(0, 0)] + z[(1, 0)]).abs() < 1e-15);
    }
}
