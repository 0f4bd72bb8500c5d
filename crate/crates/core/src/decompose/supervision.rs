use serde::{Deserialize, Serialize};

use super::DecomposeError;
use crate::linalg::Matrix;

/// One sample's state at the end of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub correct: bool,
    pub true_class_logit: f64,
    pub loss: f64,
}

/// Lays out dynamics as `[correct₁..ₜ, logit₁..ₜ, loss₁..ₜ]`, one row per sample.
pub fn build_supervision(
    records: &[Vec<EpochRecord>],
    t: usize,
    standardize: bool,
) -> Result<Matrix, DecomposeError> {
    let mut data = Vec::with_capacity(records.len() * 3 * t);
    for (sample, recs) in records.iter().enumerate() {
        if recs.len() != t {
            return Err(DecomposeError::InconsistentEpochCount { sample, found: recs.len(), expected: t });
        }
        data.extend(recs.iter().map(|r| if r.correct { 1.0 } else { 0.0 }));
        data.extend(recs.iter().map(|r| r.true_class_logit));
        data.extend(recs.iter().map(|r| r.loss));
    }
    let mut z = Matrix::from_vec(records.len(), 3 * t, data).expect("row-wise layout");
    if standardize {
        standardize_columns(&mut z);
    }
    Ok(z)
}

/// Z-scores every column with the population standard deviation. Columns
/// without variance become all zeros.
pub fn standardize_columns(z: &mut Matrix) {
    let means = z.col_means();
    let n = z.rows().max(1) as f64;
    let mut sd = vec![0.0; z.cols()];
    for row in z.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            sd[j] += (v - means[j]).powi(2);
        }
    }
    for (j, s) in sd.iter_mut().enumerate() {
        *s = (*s / n).sqrt();
        if *s <= 1e-12 * (1.0 + means[j].abs()) {
            *s = 0.0;
        }
    }
    for r in 0..z.rows() {
        for (j, v) in z.row_mut(r).iter_mut().enumerate() {
            *v = if sd[j] == 0.0 { 0.0 } else { (*v - means[j]) / sd[j] };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: bool, logit: f64, loss: f64) -> EpochRecord {
        EpochRecord { correct: c, true_class_logit: logit, loss }
    }

    #[test]
    fn plain_concatenation() {
        let z = build_supervision(&[vec![rec(true, 2.0, 0.1)], vec![rec(false, -1.0, 3.0)]], 1, false).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0, 0.1, 0.0, -1.0, 3.0]);
    }

    #[test]
    fn epoch_major_within_blocks() {
        let z = build_supervision(&[vec![rec(true, 1.0, 0.5), rec(false, 2.0, 0.7)]], 2, false).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 0.0, 1.0, 2.0, 0.5, 0.7]);
    }

    #[test]
    fn constant_column_becomes_zero() {
        let recs = vec![vec![rec(true, 2.0, 0.1)], vec![rec(true, -1.0, 3.0)], vec![rec(true, 0.5, 1.0)]];
        let z = build_supervision(&recs, 1, true).unwrap();
        assert!(z.col(0).iter().all(|&v| v == 0.0));
        let logit = z.col(1);
        let mean: f64 = logit.iter().sum::<f64>() / 3.0;
        let var: f64 = logit.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_epoch_is_rejected() {
        let recs = vec![vec![rec(true, 0.0, 0.1), rec(true, 0.0, 0.1)], vec![rec(false, 0.0, 1.0)]];
        assert!(matches!(
            build_supervision(&recs, 2, true),
            Err(DecomposeError::InconsistentEpochCount { sample: 1, found: 1, expected: 2 })
        ));
    }
}
