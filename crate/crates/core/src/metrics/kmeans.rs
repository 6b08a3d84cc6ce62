use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after every assignment step, starting from the initial centroids.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(x: &Matrix, centroids: &Matrix, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (r, label) in labels.iter_mut().enumerate() {
        let row = x.row(r);
        let mut best = (0usize, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(row, centroids.row(c));
            // Strict comparison keeps the lowest index on ties.
            if d < best.1 {
                best = (c, d);
            }
        }
        *label = best.0;
        inertia += best.1;
    }
    inertia
}

/// Lloyd's algorithm from the given initial rows.
///
/// Empty clusters keep their previous centroid. Stops when no label changes
/// or after `max_iter` update steps.
pub fn kmeans_baseline(x: &Matrix, k: usize, init: &[usize], max_iter: usize) -> Result<KMeansResult> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= {n}, got {k}")));
    }
    if init.len() != k {
        return Err(Error::invalid(format!("expected {k} initial rows, got {}", init.len())));
    }
    if let Some(&bad) = init.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("initial row {bad} out of range")));
    }
    for (a, &i) in init.iter().enumerate() {
        if init[..a].contains(&i) {
            return Err(Error::invalid(format!("duplicate initial row {i}")));
        }
    }

    let mut centroids = x.select_rows(init);
    let mut labels = vec![usize::MAX; n];
    let mut inertia = vec![assign(x, &centroids, &mut labels)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        iterations += 1;
        let before = labels.clone();
        inertia.push(assign(x, &centroids, &mut labels));
        if labels == before {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        iterations,
        converged,
        inertia,
    })
}

/// One uniformly chosen row per distinct class value, classes in ascending order.
pub fn init_one_per_class<R: RngCore + ?Sized>(classes: &[f64], rng: &mut R) -> Vec<usize> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &c) in classes.iter().enumerate() {
        groups.entry(order_key(c)).or_default().push(i);
    }
    groups
        .values()
        .map(|rows| rows[rng::index_below(rng, rows.len())])
        .collect()
}

/// Maps each cluster to the most frequent class value among its members
/// (smallest value on ties). Clusters with no members map to `NaN`.
pub fn cluster_modes(labels: &[usize], classes: &[f64], k: usize) -> Vec<f64> {
    let mut counts: Vec<BTreeMap<u64, usize>> = vec![BTreeMap::new(); k];
    for (&l, &c) in labels.iter().zip(classes) {
        *counts[l].entry(order_key(c)).or_default() += 1;
    }
    counts
        .iter()
        .map(|m| {
            let mut best: Option<(u64, usize)> = None;
            for (&key, &cnt) in m {
                if best.map_or(true, |(_, b)| cnt > b) {
                    best = Some((key, cnt));
                }
            }
            best.map_or(f64::NAN, |(key, _)| from_order_key(key))
        })
        .collect()
}

/// Monotone bijection from finite `f64` to `u64` so values can key ordered maps.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, Stream};

    fn blobs() -> (Matrix, Vec<usize>) {
        let mut rng = Stream::new(8, 0);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..100 {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            rows.push([normal(&mut rng, centre, 0.5), normal(&mut rng, 0.0, 0.5)]);
            truth.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), truth)
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (x, truth) = blobs();
        let res = kmeans_baseline(&x, 2, &[0, 1], 100).unwrap();
        assert!(res.converged);
        assert_eq!(res.labels, truth);
        assert!(res.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn one_step_from_true_centroids_changes_nothing() {
        let (x, mut truth) = blobs();
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        rows.push(vec![-5.0, 0.0]);
        rows.push(vec![5.0, 0.0]);
        truth.extend([0, 1]);
        let x = Matrix::from_rows(&rows).unwrap();
        let res = kmeans_baseline(&x, 2, &[100, 101], 1).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        assert_eq!(res.labels, truth);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [3.0], [7.0]]).unwrap();
        let res = kmeans_baseline(&x, 4, &[3, 2, 1, 0], 10).unwrap();
        assert_eq!(res.labels, vec![3, 2, 1, 0]);
        assert_eq!(*res.inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn duplicate_init_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(kmeans_baseline(&x, 2, &[1, 1], 10).is_err());
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = Stream::new(77, 0);
        let rows: Vec<[f64; 3]> = (0..300)
            .map(|_| [normal(&mut rng, 0.0, 1.0), normal(&mut rng, 0.0, 1.0), normal(&mut rng, 0.0, 1.0)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let res = kmeans_baseline(&x, 7, &[0, 1, 2, 3, 4, 5, 6], 200).unwrap();
        assert!(res.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn modes_and_class_init() {
        let classes = [2.0, 2.0, 3.0, -1.0, 3.0, 3.0];
        let init = init_one_per_class(&classes, &mut Stream::new(1, 0));
        assert_eq!(init.len(), 3);
        assert_eq!(classes[init[0]], -1.0);
        assert_eq!(classes[init[1]], 2.0);
        assert_eq!(classes[init[2]], 3.0);
        let modes = cluster_modes(&[0, 0, 0, 1, 1, 0], &classes, 3);
        assert_eq!(modes[0], 2.0); // 2.0 and 3.0 tie at two each.
        assert_eq!(modes[1], -1.0);
        assert!(modes[2].is_nan());
    }
}
