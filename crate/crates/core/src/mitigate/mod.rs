//! Bias mitigation: pool filtering (data side) and group-robust training of
//! a multinomial logistic classifier (model side).

mod heads;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::SubgroupBasis;
use crate::linalg::Matrix;
use crate::subgroup::{score_rows, SubgroupError};

pub use heads::{LinearHeads, LossAndGrad};
pub use train::{evaluate, train, GroupAccuracy, Metrics, StepTrace, TrainConfig, TrainMethod, Trained};

#[derive(Debug, Error, PartialEq)]
pub enum MitigateError {
    #[error("pool is empty")]
    EmptyPool,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("soft label for sample {row} is not on the simplex")]
    InvalidSoftLabel { row: usize },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Subgroup(#[from] SubgroupError),
}

/// Rows of `pool` ranked highest on any biased component. Each biased
/// subgroup contributes its top `⌈fraction·|pool|⌉`; the union is returned
/// rank by rank (then in `biased` order), without repeats.
pub fn filter_pool(
    basis: &SubgroupBasis,
    pool: &Matrix,
    biased: &[usize],
    fraction: f64,
) -> Result<Vec<usize>, MitigateError> {
    if pool.rows() == 0 {
        return Err(MitigateError::EmptyPool);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MitigateError::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if biased.is_empty() {
        return Err(MitigateError::InvalidArgument("no biased subgroups given".into()));
    }
    let n = basis.components.len();
    if let Some(&b) = biased.iter().find(|&&b| b >= n) {
        return Err(MitigateError::InvalidArgument(format!("biased subgroup {b} out of range 0..{n}")));
    }
    let scores = score_rows(basis, pool)?;
    let take = ((fraction * pool.rows() as f64).ceil() as usize).min(pool.rows());
    let ranked: Vec<Vec<usize>> = biased
        .iter()
        .map(|&b| {
            let mut idx: Vec<usize> = (0..pool.rows()).collect();
            idx.sort_by(|&i, &j| scores[(j, b)].total_cmp(&scores[(i, b)]).then(i.cmp(&j)));
            idx.truncate(take);
            idx
        })
        .collect();
    let mut seen = vec![false; pool.rows()];
    let mut out = Vec::new();
    for r in 0..take {
        for list in &ranked {
            let i = list[r];
            if !seen[i] {
                seen[i] = true;
                out.push(i);
            }
        }
    }
    Ok(out)
}

/// How a group's loss is estimated from soft memberships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupLossEstimate {
    /// `E[gₙℓ] / E[gₙ]`: membership-weighted mean loss. One-hot labels give
    /// exactly the per-group mean of hard group DRO.
    #[default]
    Conditional,
    /// `E[gₙℓ]`: the raw joint expectation.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub q: Vec<f64>,
    pub eta_q: f64,
}

impl GroupWeights {
    pub fn uniform(groups: usize, eta_q: f64) -> Self {
        Self { q: vec![1.0 / groups as f64; groups], eta_q }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Σₙ qₙ·(group loss estimate), with the updated q.
    pub robust_loss: f64,
    pub group_loss: Vec<f64>,
    /// Per-sample coefficients whose dot product with the losses is the
    /// robust loss; the training gradient uses them as sample weights.
    pub sample_weights: Vec<f64>,
}

/// One exponentiated-gradient step on q with soft memberships `g` (N×G):
/// `qₙ ← qₙ·exp(η·ĝlₙ)`, then renormalised onto the simplex.
pub fn soft_gdro_step(
    q: &mut GroupWeights,
    losses: &[f64],
    g: &Matrix,
    estimate: GroupLossEstimate,
) -> Result<StepOutput, MitigateError> {
    let n = losses.len();
    let groups = q.q.len();
    if g.rows() != n || g.cols() != groups {
        return Err(MitigateError::InvalidArgument(format!(
            "memberships are {}x{}, expected {n}x{groups}",
            g.rows(),
            g.cols()
        )));
    }
    let mut mass = vec![0.0; groups];
    let mut weighted = vec![0.0; groups];
    for (row, l) in g.iter_rows().zip(losses) {
        for k in 0..groups {
            mass[k] += row[k];
            weighted[k] += row[k] * l;
        }
    }
    let denom: Vec<f64> = match estimate {
        GroupLossEstimate::Conditional => mass.clone(),
        GroupLossEstimate::Joint => vec![n as f64; groups],
    };
    let group_loss: Vec<f64> =
        weighted.iter().zip(&denom).map(|(w, m)| if *m > 0.0 { w / m } else { 0.0 }).collect();
    let top = group_loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (qk, gl) in q.q.iter_mut().zip(&group_loss) {
        *qk *= (q.eta_q * (gl - top)).exp();
    }
    let s: f64 = q.q.iter().sum();
    q.q.iter_mut().for_each(|v| *v /= s);
    let coef: Vec<f64> = q.q.iter().zip(&denom).map(|(qk, m)| if *m > 0.0 { qk / m } else { 0.0 }).collect();
    let sample_weights: Vec<f64> =
        g.iter_rows().map(|row| row.iter().zip(&coef).map(|(a, b)| a * b).sum()).collect();
    let robust_loss = q.q.iter().zip(&group_loss).map(|(a, b)| a * b).sum();
    Ok(StepOutput { robust_loss, group_loss, sample_weights })
}

/// Classic group DRO with integer group ids: per-group mean loss drives the
/// same exponentiated update. Kept separate from the soft version on purpose.
pub fn hard_gdro_step(q: &mut GroupWeights, losses: &[f64], groups: &[usize]) -> Result<StepOutput, MitigateError> {
    let k = q.q.len();
    if groups.len() != losses.len() {
        return Err(MitigateError::InvalidArgument("one group id per loss required".into()));
    }
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (&gid, &l) in groups.iter().zip(losses) {
        if gid >= k {
            return Err(MitigateError::InvalidArgument(format!("group id {gid} out of range 0..{k}")));
        }
        count[gid] += 1;
        sum[gid] += l;
    }
    let mean: Vec<f64> = (0..k).map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 }).collect();
    let unnorm: Vec<f64> = q.q.iter().zip(&mean).map(|(qi, m)| qi * (q.eta_q * m).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    q.q = unnorm.into_iter().map(|v| v / z).collect();
    let sample_weights =
        groups.iter().map(|&gid| if count[gid] > 0 { q.q[gid] / count[gid] as f64 } else { 0.0 }).collect();
    let robust_loss = q.q.iter().zip(&mean).map(|(a, b)| a * b).sum();
    Ok(StepOutput { robust_loss, group_loss: mean, sample_weights })
}
