//! Optimal one-to-one matching of discovered directions to reference
//! embeddings by absolute cosine, and the biased-subgroup detection rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cosine, norm, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("{discovered} discovered directions but {reference} references")]
    LengthMismatch { discovered: usize, reference: usize },
    #[error("{side} vector {index} is zero")]
    ZeroVector { side: &'static str, index: usize },
    #[error("{side} vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { side: &'static str, index: usize, expected: usize, found: usize },
    #[error("subgroup index {index} out of range 0..{n}")]
    IndexOutOfRange { index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `sigma[i]` is the reference matched to discovered direction `i`.
    pub sigma: Vec<usize>,
    pub total: f64,
    pub per_pair: Vec<f64>,
}

impl MatchResult {
    pub fn mean(&self) -> f64 {
        if self.sigma.is_empty() {
            0.0
        } else {
            self.total / self.sigma.len() as f64
        }
    }

    fn from_assignment(sim: &Matrix, sigma: Vec<usize>) -> Self {
        let per_pair: Vec<f64> = sigma.iter().enumerate().map(|(i, &j)| sim[(i, j)]).collect();
        let total = per_pair.iter().sum();
        Self { sigma, total, per_pair }
    }
}

/// Maximum-weight perfect matching on a square matrix (Kuhn–Munkres with
/// potentials, O(n³)). Returns `row → column`.
pub fn hungarian_max(weights: &Matrix) -> Vec<usize> {
    let n = weights.rows();
    assert_eq!(n, weights.cols(), "assignment matrix must be square");
    // 1-based arrays; column 0 is the virtual start.
    let cost = |i: usize, j: usize| -weights[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            sigma[p[j] - 1] = j - 1;
        }
    }
    sigma
}

/// Exhaustive search over all n! assignments (lexicographic order, first
/// maximum wins). Only sensible for small n; used as a cross-check.
pub fn brute_force_max(weights: &Matrix) -> Vec<usize> {
    let n = weights.rows();
    assert_eq!(n, weights.cols(), "assignment matrix must be square");
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| weights[(i, j)]).sum::<f64>();
    let mut best = perm.clone();
    let mut best_total = total(&perm);
    while next_permutation(&mut perm) {
        let t = total(&perm);
        if t > best_total {
            best_total = t;
            best.copy_from_slice(&perm);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Absolute-cosine similarity matrix, rows discovered, columns reference.
pub fn similarity(discovered: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Matrix, MatchError> {
    if discovered.len() != reference.len() {
        return Err(MatchError::LengthMismatch { discovered: discovered.len(), reference: reference.len() });
    }
    let d = discovered.first().map_or(0, Vec::len);
    for (side, list) in [("discovered", discovered), ("reference", reference)] {
        for (index, v) in list.iter().enumerate() {
            if v.len() != d {
                return Err(MatchError::DimensionMismatch { side, index, expected: d, found: v.len() });
            }
            if norm(v) < 1e-12 {
                return Err(MatchError::ZeroVector { side, index });
            }
        }
    }
    let g = discovered.len();
    let mut sim = Matrix::zeros(g, g);
    for (i, a) in discovered.iter().enumerate() {
        for (j, b) in reference.iter().enumerate() {
            sim[(i, j)] = cosine(a, b).abs();
        }
    }
    Ok(sim)
}

/// Solves the assignment on a precomputed similarity matrix.
pub fn match_similarity(sim: &Matrix, brute_force: bool) -> MatchResult {
    let sigma = if brute_force { brute_force_max(sim) } else { hungarian_max(sim) };
    MatchResult::from_assignment(sim, sigma)
}

pub fn match_directions(
    discovered: &[Vec<f64>],
    reference: &[Vec<f64>],
    brute_force: bool,
) -> Result<MatchResult, MatchError> {
    Ok(match_similarity(&similarity(discovered, reference)?, brute_force))
}

/// Fraction of reference-biased subgroups whose matched discovered direction
/// was flagged as biased. An empty reference set counts as fully detected.
pub fn detection_success(
    m: &MatchResult,
    discovered_biased: &[usize],
    reference_biased: &[usize],
) -> Result<f64, MatchError> {
    let n = m.sigma.len();
    for &index in discovered_biased.iter().chain(reference_biased) {
        if index >= n {
            return Err(MatchError::IndexOutOfRange { index, n });
        }
    }
    if reference_biased.is_empty() {
        return Ok(1.0);
    }
    let mut inverse = vec![0; n];
    for (i, &j) in m.sigma.iter().enumerate() {
        inverse[j] = i;
    }
    let hit = reference_biased.iter().filter(|&&j| discovered_biased.contains(&inverse[j])).count();
    Ok(hit as f64 / reference_biased.len() as f64)
}
