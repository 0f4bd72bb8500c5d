//! Scoring against a basis, pseudo-labels, and picking the worst subgroups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::SubgroupBasis;
use crate::linalg::{dot, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum SubgroupError {
    #[error("dimension mismatch: basis expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample {row} has no correctness flag")]
    MissingCorrectness { row: usize },
    #[error("no validation samples to estimate accuracies from")]
    EmptyValidation,
    #[error("k = {k} exceeds the number of subgroups ({n})")]
    InvalidK { k: usize, n: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
}

/// Subgroup scores `u`: centre, then alternately project onto `wᵢ` and
/// remove `uᵢαᵢ`, mirroring the training deflation.
pub fn score(basis: &SubgroupBasis, x: &[f64]) -> Result<Vec<f64>, SubgroupError> {
    let d = basis.x_center.len();
    if x.len() != d {
        return Err(SubgroupError::DimensionMismatch { expected: d, found: x.len() });
    }
    let mut r: Vec<f64> = x.iter().zip(&basis.x_center).map(|(a, c)| a - c).collect();
    let mut u = Vec::with_capacity(basis.components.len());
    for c in &basis.components {
        let ui = dot(&c.w, &r);
        for (rj, aj) in r.iter_mut().zip(&c.alpha) {
            *rj -= ui * aj;
        }
        u.push(ui);
    }
    Ok(u)
}

/// Scores for every row of `x` (N×n).
pub fn score_rows(basis: &SubgroupBasis, x: &Matrix) -> Result<Matrix, SubgroupError> {
    let n = basis.components.len();
    let mut data = Vec::with_capacity(x.rows() * n);
    for row in x.iter_rows() {
        data.extend(score(basis, row)?);
    }
    Ok(Matrix::from_vec(x.rows(), n, data).expect("n scores per row"))
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if *v > u[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(u: &[f64], tau: f64) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAssignment {
    pub scores: Vec<f64>,
    pub hard_label: usize,
    pub soft_label: Vec<f64>,
}

impl SubgroupAssignment {
    /// Builds an assignment from raw scores. The softmax runs on
    /// `u / (tau · scale)`; pass `scale = 1` for the plain `softmax(u/τ)`.
    pub fn from_scores(scores: Vec<f64>, tau: f64, scale: f64) -> Self {
        let t = if scale > 0.0 { tau * scale } else { tau };
        let soft_label = softmax(&scores, t);
        Self { hard_label: argmax(&scores), soft_label, scores }
    }
}

/// Assigns every row of `x`. Soft labels use the basis' score scale so `tau`
/// is dimensionless.
pub fn assign(basis: &SubgroupBasis, x: &Matrix, tau: f64) -> Result<Vec<SubgroupAssignment>, SubgroupError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SubgroupError::InvalidTemperature(tau));
    }
    x.iter_rows()
        .map(|row| Ok(SubgroupAssignment::from_scores(score(basis, row)?, tau, basis.score_scale)))
        .collect()
}

/// `⌊G/2⌋`: the subgroups below the per-class median.
pub fn default_k(g: usize) -> usize {
    g / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub class: u32,
    pub accuracies: Vec<f64>,
    pub counts: Vec<usize>,
    /// Ascending subgroup indices.
    pub biased: Vec<usize>,
    pub k: usize,
    /// Pseudo-subgroups that received no validation samples.
    pub empty: Vec<usize>,
}

/// Accuracy per pseudo-subgroup and the `k` worst (lower index on ties).
/// Empty subgroups score 1.0 and are never selected, so fewer than `k`
/// indices come back only when fewer than `k` subgroups are populated.
pub fn identify_biased(
    class: u32,
    labels: &[usize],
    correct: &[Option<bool>],
    n: usize,
    k: Option<usize>,
) -> Result<BiasReport, SubgroupError> {
    if labels.is_empty() {
        return Err(SubgroupError::EmptyValidation);
    }
    let k = k.unwrap_or_else(|| default_k(n));
    if k > n {
        return Err(SubgroupError::InvalidK { k, n });
    }
    let mut hits = vec![0usize; n];
    let mut counts = vec![0usize; n];
    for (row, (&l, c)) in labels.iter().zip(correct).enumerate() {
        let c = c.ok_or(SubgroupError::MissingCorrectness { row })?;
        counts[l] += 1;
        hits[l] += c as usize;
    }
    let accuracies: Vec<f64> =
        (0..n).map(|i| if counts[i] == 0 { 1.0 } else { hits[i] as f64 / counts[i] as f64 }).collect();
    let empty: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
    order.sort_by(|&a, &b| accuracies[a].total_cmp(&accuracies[b]).then(a.cmp(&b)));
    let mut biased: Vec<usize> = order.into_iter().take(k).collect();
    biased.sort_unstable();
    Ok(BiasReport { class, accuracies, counts, biased, k, empty })
}

/// Convenience for callers holding accuracies directly.
pub fn worst_k(accuracies: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..accuracies.len()).collect();
    order.sort_by(|&a, &b| accuracies[a].total_cmp(&accuracies[b]).then(a.cmp(&b)));
    let mut out: Vec<usize> = order.into_iter().take(k).collect();
    out.sort_unstable();
    out
}
