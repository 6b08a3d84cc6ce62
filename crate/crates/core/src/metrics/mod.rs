//! Correlations, matched mean correlation (MCC), k-means and run summaries.

mod assignment;
mod kmeans;

pub use assignment::{assignment_total, brute_force_assignment, hungarian, lexicographic_assignment};
pub use kmeans::{cluster_modes, init_one_per_class, kmeans_baseline, KMeansResult};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least two values"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance(String::from("first argument")));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance(String::from("second argument")));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub fn correlate(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            CorrelationMethod::Pearson => pearson(a, b),
            CorrelationMethod::Spearman => spearman(a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MccReport {
    pub score: f64,
    /// `permutation[k]` is the estimated column matched to true column `k`.
    pub permutation: Vec<usize>,
    /// `|corr(true_k, estimated_l)|` at `(k, l)`.
    pub abs_correlations: Matrix,
    pub method: CorrelationMethod,
}

/// Mean absolute correlation after optimal one-to-one matching of columns.
pub fn mcc(z: &Matrix, z_hat: &Matrix, method: CorrelationMethod) -> Result<MccReport> {
    if z.shape() != z_hat.shape() {
        return Err(Error::shape(format!(
            "true latents {:?} vs estimates {:?}",
            z.shape(),
            z_hat.shape()
        )));
    }
    let (rows, n) = z.shape();
    if rows < 2 || n == 0 {
        return Err(Error::invalid("MCC needs at least two rows and one column"));
    }
    let prepare = |m: &Matrix, what: &str| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|k| {
                let c = m.col(k);
                let c = match method {
                    CorrelationMethod::Pearson => c,
                    CorrelationMethod::Spearman => average_ranks(&c),
                };
                if c.iter().all(|&v| v == c[0]) {
                    return Err(Error::ZeroVariance(format!("{what} column {}", k + 1)));
                }
                Ok(c)
            })
            .collect()
    };
    let truth = prepare(z, "true latent")?;
    let est = prepare(z_hat, "estimated latent")?;
    let mut abs = Matrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            abs[(k, l)] = libm::fabs(pearson(&truth[k], &est[l])?);
        }
    }
    let permutation = lexicographic_assignment(&abs, 1e-12)?;
    let score = assignment_total(&abs, &permutation) / n as f64;
    Ok(MccReport {
        score,
        permutation,
        abs_correlations: abs,
        method,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn summarize_runs(values: &[f64]) -> Result<RunSummary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize zero runs"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("run values contain NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Ok(RunSummary {
        min: v[0],
        median,
        max: v[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, Stream};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b: Vec<f64> = a.iter().map(|x| -2.0 * x + 7.0).collect();
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        // cov = 1.5, var_a = 1, var_b = 7/3 (n - 1 scaling cancels)
        let want = 1.5 / (7.0f64 / 3.0).sqrt();
        let got = pearson(&a, &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - want).abs() < 1e-12 && (got - 0.98198).abs() < 1e-5);
        assert!(matches!(pearson(&a, &[2.0; 3]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn spearman_examples() {
        let a = [0.1, 0.5, 1.3, 2.0, 2.2];
        let e: Vec<f64> = a.iter().map(|x: &f64| x.exp()).collect();
        assert!((spearman(&a, &e).unwrap() - 1.0).abs() < 1e-15);
        let r: Vec<f64> = a.iter().rev().copied().collect();
        assert!((spearman(&a, &r).unwrap() + 1.0).abs() < 1e-15);
        // 1 - 6 * sum d^2 / (n (n^2 - 1)) = 1 - 12 / 60
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((s - 0.8).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    fn random_latents(rows: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = Stream::new(seed, 0);
        let data = (0..rows * n).map(|_| standard_normal(&mut rng)).collect();
        Matrix::from_vec(rows, n, data).unwrap()
    }

    #[test]
    fn mcc_identity_and_permutation() {
        let z = random_latents(500, 3, 1);
        let rep = mcc(&z, &z, CorrelationMethod::Pearson).unwrap();
        assert!((rep.score - 1.0).abs() < 1e-12);
        assert_eq!(rep.permutation, vec![0, 1, 2]);

        // Estimated column l holds true column perm_src[l], sign flipped for l = 1.
        let perm_src = [2, 0, 1];
        let mut zh = Matrix::zeros(500, 3);
        for r in 0..500 {
            for l in 0..3 {
                zh[(r, l)] = if l == 1 { -1.0 } else { 1.0 } * z[(r, perm_src[l])];
            }
        }
        let rep = mcc(&z, &zh, CorrelationMethod::Pearson).unwrap();
        assert!((rep.score - 1.0).abs() < 1e-12);
        assert_eq!(rep.permutation, vec![1, 2, 0]);
    }

    #[test]
    fn mcc_of_independent_noise_is_small() {
        let z = random_latents(10_000, 2, 2);
        let zh = random_latents(10_000, 2, 3);
        assert!(mcc(&z, &zh, CorrelationMethod::Pearson).unwrap().score < 0.05);
    }

    #[test]
    fn mcc_names_zero_variance_column() {
        let z = random_latents(10, 2, 4);
        let mut zh = random_latents(10, 2, 5);
        for r in 0..10 {
            zh[(r, 1)] = 3.0;
        }
        match mcc(&z, &zh, CorrelationMethod::Pearson) {
            Err(Error::ZeroVariance(msg)) => assert!(msg.contains("estimated latent column 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summaries() {
        let s = summarize_runs(&[0.98, 0.97, 0.98]).unwrap();
        assert_eq!((s.min, s.median, s.max), (0.97, 0.98, 0.98));
        let s = summarize_runs(&[0.4]).unwrap();
        assert_eq!((s.min, s.median, s.max), (0.4, 0.4, 0.4));
        assert_eq!(summarize_runs(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
        assert!(summarize_runs(&[]).is_err());
    }

    proptest! {
        #[test]
        fn mcc_invariances(
            seed in any::<u64>(),
            n in 1usize..5,
            slopes in proptest::collection::vec(prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], 4),
            shifts in proptest::collection::vec(-10.0f64..10.0, 4),
            rot in 0usize..4,
        ) {
            let z = random_latents(200, n, seed);
            let zh = random_latents(200, n, seed ^ 0xABCD);
            let mix = |m: &Matrix, monotone: bool| {
                let mut out = Matrix::zeros(200, n);
                for r in 0..200 {
                    for l in 0..n {
                        let v = m[(r, (l + rot) % n)];
                        let v = if monotone { v.powi(3) + v } else { v };
                        out[(r, l)] = slopes[l] * v + shifts[l];
                    }
                }
                out
            };
            let base = mcc(&z, &zh, CorrelationMethod::Pearson).unwrap().score;
            let moved = mcc(&z, &mix(&zh, false), CorrelationMethod::Pearson).unwrap().score;
            prop_assert!((base - moved).abs() < 1e-12);

            let base_s = mcc(&z, &zh, CorrelationMethod::Spearman).unwrap().score;
            let moved_s = mcc(&z, &mix(&zh, true), CorrelationMethod::Spearman).unwrap().score;
            prop_assert!((base_s - moved_s).abs() < 1e-12);
        }
    }
}
