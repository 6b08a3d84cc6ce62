//! Identifiability checks: structural variability of a Jacobian support and
//! distributional variability of a Gaussian family across regimes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::{GaussianFamily, SupportMatrix};
use crate::error::{Error, Result};
use crate::matrix::{singular_values, Matrix};

/// Relative tolerance of the numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Witness {
    Structural {
        /// Measurement rows used for each latent.
        rows: Vec<Vec<usize>>,
        /// Intersection of the supports of those rows.
        intersections: Vec<Vec<usize>>,
    },
    Distributional {
        point: Vec<f64>,
        differences: Matrix,
        singular_values: Vec<f64>,
        rank: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionReport {
    pub satisfied: bool,
    /// One verdict per latent (structural checks only).
    pub per_latent: Vec<bool>,
    pub witness: Witness,
}

impl ConditionReport {
    pub fn rank(&self) -> Option<usize> {
        match self.witness {
            Witness::Distributional { rank, .. } => Some(rank),
            Witness::Structural { .. } => None,
        }
    }
}

/// For each latent, intersects the supports of every row that uses it.
///
/// Adding a row that contains `k` can only shrink the intersection while
/// keeping `k`, so the full row set attains the minimum over all subsets.
pub fn check_structural(f: &SupportMatrix) -> ConditionReport {
    let (m, n) = (f.measurements(), f.latents());
    let mut rows = Vec::with_capacity(n);
    let mut intersections = Vec::with_capacity(n);
    let mut per_latent = Vec::with_capacity(n);
    for k in 0..n {
        let c_k: Vec<usize> = (0..m).filter(|&i| f.get(i, k)).collect();
        let inter: Vec<usize> = (0..n).filter(|&l| c_k.iter().all(|&i| f.get(i, l))).collect();
        per_latent.push(inter == [k]);
        rows.push(c_k);
        intersections.push(inter);
    }
    ConditionReport {
        satisfied: per_latent.iter().all(|&v| v),
        per_latent,
        witness: Witness::Structural { rows, intersections },
    }
}

/// Exhaustive subset search; the oracle for [`check_structural`].
pub fn brute_force_structural(f: &SupportMatrix) -> Result<ConditionReport> {
    let (m, n) = (f.measurements(), f.latents());
    if m > 12 || n > 12 {
        return Err(Error::invalid(format!("brute force limited to 12x12 supports, got {m}x{n}")));
    }
    let row_mask: Vec<u32> = (0..m)
        .map(|i| (0..n).filter(|&k| f.get(i, k)).fold(0u32, |acc, k| acc | (1 << k)))
        .collect();
    let full = (1u32 << n) - 1;
    let mut rows = vec![Vec::new(); n];
    let mut intersections = vec![Vec::new(); n];
    let mut per_latent = vec![false; n];
    for subset in 1u32..(1 << m) {
        let inter = (0..m)
            .filter(|&i| subset & (1 << i) != 0)
            .fold(full, |acc, i| acc & row_mask[i]);
        if inter.count_ones() == 1 {
            let k = inter.trailing_zeros() as usize;
            if !per_latent[k] {
                per_latent[k] = true;
                rows[k] = (0..m).filter(|&i| subset & (1 << i) != 0).collect();
                intersections[k] = vec![k];
            }
        }
    }
    Ok(ConditionReport {
        satisfied: per_latent.iter().all(|&v| v),
        per_latent,
        witness: Witness::Structural { rows, intersections },
    })
}

/// First and second derivatives of each latent's log density in regime `u`.
fn score_vector(family: &GaussianFamily, u: usize, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut w = vec![0.0; 2 * n];
    for k in 0..n {
        let var = family.stds[u][k] * family.stds[u][k];
        w[k] = -(z[k] - family.means[u][k]) / var;
        w[n + k] = -1.0 / var;
    }
    w
}

/// Rank test on the `2n` score differences against regime 0, evaluated at `z`.
pub fn check_distributional(family: &GaussianFamily, z: &[f64]) -> Result<ConditionReport> {
    let n = family.latents();
    if family.regimes() != 2 * n + 1 {
        return Err(Error::invalid(format!(
            "need exactly {} regimes for {n} latents, got {}",
            2 * n + 1,
            family.regimes()
        )));
    }
    if z.len() != n {
        return Err(Error::shape(format!("evaluation point has {} entries, expected {n}", z.len())));
    }
    let base = score_vector(family, 0, z);
    let mut diff = Matrix::zeros(2 * n, 2 * n);
    for i in 1..=2 * n {
        let w = score_vector(family, i, z);
        for (dst, (a, b)) in diff.row_mut(i - 1).iter_mut().zip(w.iter().zip(&base)) {
            *dst = a - b;
        }
    }
    let sv = singular_values(&diff);
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        sv.iter().filter(|&&s| s > RANK_TOLERANCE * top).count()
    } else {
        0
    };
    Ok(ConditionReport {
        satisfied: rank == 2 * n,
        per_latent: Vec::new(),
        witness: Witness::Distributional {
            point: z.to_vec(),
            differences: diff,
            singular_values: sv,
            rank,
        },
    })
}

/// Worst case over several evaluation points: lowest rank, then smallest
/// relative gap between the last and first singular values.
pub fn check_distributional_at(family: &GaussianFamily, points: &[Vec<f64>]) -> Result<ConditionReport> {
    let mut worst: Option<(usize, f64, ConditionReport)> = None;
    for p in points {
        let rep = check_distributional(family, p)?;
        let (rank, gap) = match &rep.witness {
            Witness::Distributional { rank, singular_values, .. } => {
                let top = singular_values.first().copied().unwrap_or(0.0);
                let low = singular_values.last().copied().unwrap_or(0.0);
                (*rank, if top > 0.0 { low / top } else { 0.0 })
            }
            Witness::Structural { .. } => unreachable!(),
        };
        if worst.as_ref().map_or(true, |(r, g, _)| (rank, gap) < (*r, *g)) {
            worst = Some((rank, gap, rep));
        }
    }
    worst
        .map(|(_, _, r)| r)
        .ok_or_else(|| Error::invalid("need at least one evaluation point"))
}
