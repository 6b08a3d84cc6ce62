use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Maximum-weight perfect matching on a square matrix.
///
/// Returns `assignment[row] = col`. Runs the O(n³) shortest augmenting path
/// variant of the Hungarian method on the negated weights.
pub fn hungarian(weights: &Matrix) -> Result<Vec<usize>> {
    let n = weights.rows();
    if weights.cols() != n {
        return Err(Error::shape("assignment needs a square weight matrix"));
    }
    if !weights.is_finite() {
        return Err(Error::invalid("assignment weights must be finite"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| -weights[(i, j)];

    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

pub fn assignment_total(weights: &Matrix, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| weights[(i, j)]).sum()
}

/// Optimal matching that is lexicographically smallest among all matchings
/// whose total is within `tol` of the optimum.
pub fn lexicographic_assignment(weights: &Matrix, tol: f64) -> Result<Vec<usize>> {
    let n = weights.rows();
    let best = assignment_total(weights, &hungarian(weights)?);
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut chosen = None;
        for col in 0..n {
            if fixed.contains(&col) {
                continue;
            }
            let mut trial = fixed.clone();
            trial.push(col);
            if completion_total(weights, &trial)? >= best - tol {
                chosen = Some(col);
                break;
            }
        }
        // The optimum's own column always qualifies, so this cannot fail.
        fixed.push(chosen.ok_or_else(|| Error::invalid("assignment tolerance too tight"))?);
    }
    Ok(fixed)
}

/// Best total when rows `0..prefix.len()` are pinned to `prefix`.
fn completion_total(weights: &Matrix, prefix: &[usize]) -> Result<f64> {
    let n = weights.rows();
    let pinned: f64 = prefix.iter().enumerate().map(|(i, &j)| weights[(i, j)]).sum();
    let rows: Vec<usize> = (prefix.len()..n).collect();
    let cols: Vec<usize> = (0..n).filter(|j| !prefix.contains(j)).collect();
    if rows.is_empty() {
        return Ok(pinned);
    }
    let mut sub = Matrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            sub[(a, b)] = weights[(i, j)];
        }
    }
    Ok(pinned + assignment_total(&sub, &hungarian(&sub)?))
}

/// Exhaustive search over all `n!` permutations (test oracle, `n <= 8`).
pub fn brute_force_assignment(weights: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = weights.rows();
    if weights.cols() != n {
        return Err(Error::shape("assignment needs a square weight matrix"));
    }
    if n > 8 {
        return Err(Error::invalid("brute-force assignment limited to n <= 8"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), assignment_total(weights, &perm));
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let total = assignment_total(weights, &perm);
            if total > best.1 {
                best = (perm.clone(), total);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform01, Stream};
    use proptest::prelude::*;

    #[test]
    fn small_known_problem() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]]).unwrap();
        // Outer product of an increasing vector: the diagonal wins (1 + 4 + 9).
        let a = hungarian(&w).unwrap();
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(assignment_total(&w, &a), 14.0);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let w = Matrix::filled(3, 3, 0.5);
        assert_eq!(lexicographic_assignment(&w, 1e-12).unwrap(), vec![0, 1, 2]);
        let w = Matrix::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        // Both cyclic shifts reach 3; [1, 2, 0] is the smaller one.
        assert_eq!(lexicographic_assignment(&w, 1e-12).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn hungarian_matches_brute_force_on_200_matrices() {
        let mut rng = Stream::new(2024, 0);
        for trial in 0..200 {
            let n = 1 + trial % 6;
            let data = (0..n * n).map(|_| uniform01(&mut rng)).collect();
            let w = Matrix::from_vec(n, n, data).unwrap();
            let fast = assignment_total(&w, &hungarian(&w).unwrap());
            let (_, slow) = brute_force_assignment(&w).unwrap();
            assert!((fast - slow).abs() < 1e-12, "n={n}: {fast} vs {slow}");
        }
    }

    proptest! {
        #[test]
        fn result_is_a_permutation(n in 1usize..7, seed in any::<u64>()) {
            let mut rng = Stream::new(seed, 0);
            let data = (0..n * n).map(|_| (uniform01(&mut rng) * 4.0).floor()).collect();
            let w = Matrix::from_vec(n, n, data).unwrap();
            let a = lexicographic_assignment(&w, 1e-9).unwrap();
            let mut seen = vec![false; n];
            for &j in &a { prop_assert!(!seen[j]); seen[j] = true; }
            let (_, best) = brute_force_assignment(&w).unwrap();
            prop_assert!((assignment_total(&w, &a) - best).abs() < 1e-9);
        }
    }
}
